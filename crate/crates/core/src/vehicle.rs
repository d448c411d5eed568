//! Shared vehicle domain types, frame transforms and reference-path geometry.

use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

/// Magic-formula coefficients for one tire channel. Peak force is
/// `d_scale * mu * F_z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacejkaCoeffs {
    pub b: f64,
    pub c: f64,
    pub d_scale: f64,
    pub e: f64,
}

impl PacejkaCoeffs {
    pub const LATERAL: Self = Self { b: 9.0, c: 1.3, d_scale: 1.0, e: 0.97 };
    pub const LONGITUDINAL: Self = Self { b: 11.0, c: 1.65, d_scale: 1.0, e: 0.97 };

    fn validate(&self, channel: &'static str) -> Result<(), ParamError> {
        let ok = self.b > 0.0
            && self.c > 1.0
            && self.c <= 2.5
            && self.e <= 1.0
            && self.d_scale > 0.0
            && self.e.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ParamError::Tire(channel))
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("vehicle parameter `{0}` must be finite and strictly positive")]
    NotPositive(&'static str),
    #[error("road friction must lie in (0, 1.5], got {0}")]
    Friction(f64),
    #[error("{0} tire coefficients out of range (B > 0, 1 < C <= 2.5, E <= 1)")]
    Tire(&'static str),
}

/// Vehicle parameter set shared by the simulator, the bicycle models and
/// the controllers. Defaults describe a mid-size sedan.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleParams {
    pub mass: f64,
    pub l_f: f64,
    pub l_r: f64,
    /// Half-track.
    pub l_w: f64,
    /// Centre-of-gravity height.
    pub h: f64,
    pub r_eff: f64,
    pub i_x: f64,
    pub i_y: f64,
    pub i_z: f64,
    /// Spin inertia of a single wheel.
    pub i_w: f64,
    pub tire_lat: PacejkaCoeffs,
    pub tire_long: PacejkaCoeffs,
    pub mu: f64,
    pub g: f64,
    /// Aerodynamic drag area `C_d * A` (m^2).
    pub drag_area: f64,
    pub air_density: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1878.0,
            l_f: 1.384,
            l_r: 1.356,
            l_w: 0.781,
            h: 0.55,
            r_eff: 0.303,
            i_x: 700.0,
            i_y: 3500.0,
            i_z: 4045.0,
            i_w: 1.5,
            tire_lat: PacejkaCoeffs::LATERAL,
            tire_long: PacejkaCoeffs::LONGITUDINAL,
            mu: 1.0,
            g: 9.81,
            drag_area: 0.7,
            air_density: 1.2,
        }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let positive = [
            ("mass", self.mass),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("l_w", self.l_w),
            ("h", self.h),
            ("r_eff", self.r_eff),
            ("i_x", self.i_x),
            ("i_y", self.i_y),
            ("i_z", self.i_z),
            ("i_w", self.i_w),
            ("g", self.g),
            ("air_density", self.air_density),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ParamError::NotPositive(name));
            }
        }
        if !(self.drag_area.is_finite() && self.drag_area >= 0.0) {
            return Err(ParamError::NotPositive("drag_area"));
        }
        if !(self.mu > 0.0 && self.mu <= 1.5) {
            return Err(ParamError::Friction(self.mu));
        }
        self.tire_lat.validate("lateral")?;
        self.tire_long.validate("longitudinal")?;
        Ok(())
    }

    /// Static normal load on one front and one rear wheel.
    pub fn static_wheel_loads(&self) -> (f64, f64) {
        let weight = self.mass * self.g;
        let l = self.wheelbase();
        (0.5 * weight * self.l_r / l, 0.5 * weight * self.l_f / l)
    }
}

/// Planar pose of the centre of gravity. Heading is kept unwrapped.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BicycleState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl BicycleState {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self { x, y, psi }
    }
}

/// Speed and front steering command of the single-track models.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BicycleControl {
    pub v: f64,
    pub delta: f64,
}

impl BicycleControl {
    /// Steering actuator limit, matching the excitation range used for training data.
    pub const MAX_STEER: f64 = 0.5;

    pub fn new(v: f64, delta: f64) -> Self {
        Self { v, delta }
    }

    pub fn clamped(self, v_max: f64) -> Self {
        Self {
            v: self.v.clamp(0.0, v_max),
            delta: self.delta.clamp(-Self::MAX_STEER, Self::MAX_STEER),
        }
    }
}

/// Rotates an inertial-frame velocity into the body frame.
#[inline]
pub fn world_to_body(psi: f64, x_dot: f64, y_dot: f64) -> (f64, f64) {
    let (s, c) = psi.sin_cos();
    (y_dot * s + x_dot * c, y_dot * c - x_dot * s)
}

/// Inverse of [`world_to_body`].
#[inline]
pub fn body_to_world(psi: f64, vx: f64, vy: f64) -> (f64, f64) {
    let (s, c) = psi.sin_cos();
    (vx * c - vy * s, vx * s + vy * c)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_to_pi(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = angle.rem_euclid(two_pi);
    if a > PI {
        a -= two_pi;
    }
    // rem_euclid can return exactly 2*pi for tiny negative inputs
    if a <= -PI {
        a += two_pi;
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathSample {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub kappa: f64,
}

#[derive(Debug, Error)]
pub enum PathError {
    #[error("path has no samples")]
    Empty,
    #[error("sample {0}: arclength must be strictly increasing")]
    NonIncreasing(usize),
    #[error("sample {index}: spacing {spacing} m exceeds {max} m")]
    Spacing { index: usize, spacing: f64, max: f64 },
    #[error("sample {0}: heading jump larger than pi/2 (heading must be unwrapped)")]
    HeadingJump(usize),
    #[error("sample {0}: non-finite value")]
    NonFinite(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("desired speed must lie in [0, {MAX_DESIRED_SPEED}] m/s")]
    Speed,
}

/// Upper bound on a path's desired speed (m/s), far above anything the
/// vehicle can reach.
pub const MAX_DESIRED_SPEED: f64 = 100.0;

/// Maximum allowed spacing between consecutive path samples.
pub const MAX_PATH_SPACING: f64 = 0.5;
/// Spacing used when resampling analytic curves.
pub const PATH_RESOLUTION: f64 = 0.1;

const CHUNK: usize = 32;

/// Bounding circle of a run of consecutive samples, used to prune the
/// nearest-point search without losing exactness.
#[derive(Clone, Debug)]
struct Chunk {
    start: usize,
    end: usize,
    cx: f64,
    cy: f64,
    radius: f64,
}

/// Arclength-parameterised reference path plus the speed to drive it at.
#[derive(Clone, Debug)]
pub struct PathRef {
    samples: Vec<PathSample>,
    pub v_desired: f64,
    chunks: Vec<Chunk>,
}

impl PathRef {
    pub fn new(samples: Vec<PathSample>, v_desired: f64) -> Result<Self, PathError> {
        if samples.is_empty() {
            return Err(PathError::Empty);
        }
        if !(0.0..=MAX_DESIRED_SPEED).contains(&v_desired) {
            return Err(PathError::Speed);
        }
        for (i, p) in samples.iter().enumerate() {
            if ![p.s, p.x, p.y, p.psi, p.kappa].iter().all(|v| v.is_finite()) {
                return Err(PathError::NonFinite(i));
            }
            if i > 0 {
                let prev = &samples[i - 1];
                let ds = p.s - prev.s;
                if ds <= 0.0 {
                    return Err(PathError::NonIncreasing(i));
                }
                let spacing = (p.x - prev.x).hypot(p.y - prev.y);
                if ds > MAX_PATH_SPACING || spacing > MAX_PATH_SPACING {
                    return Err(PathError::Spacing { index: i, spacing: ds.max(spacing), max: MAX_PATH_SPACING });
                }
                if (p.psi - prev.psi).abs() > PI / 2.0 {
                    return Err(PathError::HeadingJump(i));
                }
            }
        }
        let chunks = build_chunks(&samples);
        Ok(Self { samples, v_desired, chunks })
    }

    /// Builds a path from a polyline, resampled every [`PATH_RESOLUTION`]
    /// metres. Heading is the unwrapped segment direction and curvature the
    /// finite-difference heading rate.
    pub fn from_polyline(points: &[(f64, f64)], v_desired: f64) -> Result<Self, PathError> {
        if points.len() < 2 {
            return Err(PathError::Empty);
        }
        let mut cum = vec![0.0];
        for w in points.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            cum.push(cum.last().unwrap() + d);
        }
        let total = *cum.last().unwrap();
        if total <= 0.0 {
            return Err(PathError::NonIncreasing(1));
        }
        let n = (total / PATH_RESOLUTION).ceil().max(1.0) as usize;
        let ds = total / n as f64;
        let mut pts = Vec::with_capacity(n + 1);
        let mut seg = 0;
        for i in 0..=n {
            let s = (i as f64 * ds).min(total);
            while seg + 2 < cum.len() && cum[seg + 1] < s {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
            let (a, b) = (points[seg], points[seg + 1]);
            pts.push((s, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
        let mut headings = Vec::with_capacity(pts.len());
        for i in 0..pts.len() {
            let (j0, j1) = if i + 1 < pts.len() { (i, i + 1) } else { (i - 1, i) };
            let raw = (pts[j1].2 - pts[j0].2).atan2(pts[j1].1 - pts[j0].1);
            let psi = match headings.last() {
                Some(&prev) => prev + wrap_to_pi(raw - prev),
                None => raw,
            };
            headings.push(psi);
        }
        let samples = (0..pts.len())
            .map(|i| {
                let (j0, j1) = if i + 1 < pts.len() { (i, i + 1) } else { (i.saturating_sub(1), i) };
                let kappa = if j1 > j0 { (headings[j1] - headings[j0]) / (pts[j1].0 - pts[j0].0) } else { 0.0 };
                PathSample { s: pts[i].0, x: pts[i].1, y: pts[i].2, psi: headings[i], kappa }
            })
            .collect();
        Self::new(samples, v_desired)
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, index: usize) -> &PathSample {
        &self.samples[index]
    }

    pub fn length(&self) -> f64 {
        self.samples.last().map_or(0.0, |p| p.s) - self.samples[0].s
    }

    /// Whether the first and last samples coincide (closed loop).
    pub fn is_closed(&self) -> bool {
        let (a, b) = (&self.samples[0], self.samples.last().unwrap());
        self.samples.len() > 2 && (a.x - b.x).hypot(a.y - b.y) < 0.01
    }

    /// Index of the sample with the largest arclength not exceeding `s`.
    pub fn index_at_s(&self, s: f64) -> usize {
        match self.samples.binary_search_by(|p| p.s.total_cmp(&s)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,x,y,psi,kappa\n");
        for p in &self.samples {
            let _ = writeln!(out, "{},{},{},{},{}", p.s, p.x, p.y, p.psi, p.kappa);
        }
        out
    }

    /// Parses the `s,x,y,psi,kappa` CSV format.
    pub fn from_csv(text: &str, v_desired: f64) -> Result<Self, PathError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim() == "s,x,y,psi,kappa" => {}
            Some((i, _)) => return Err(PathError::Parse { line: i + 1, msg: "expected header `s,x,y,psi,kappa`".into() }),
            None => return Err(PathError::Empty),
        }
        let mut samples = Vec::new();
        for (i, line) in lines {
            let vals = crate::csvutil::parse_f64_row(line, 5).map_err(|msg| PathError::Parse { line: i + 1, msg })?;
            samples.push(PathSample { s: vals[0], x: vals[1], y: vals[2], psi: vals[3], kappa: vals[4] });
        }
        Self::new(samples, v_desired)
    }
}

fn build_chunks(samples: &[PathSample]) -> Vec<Chunk> {
    samples
        .chunks(CHUNK)
        .enumerate()
        .map(|(ci, run)| {
            let n = run.len() as f64;
            let cx = run.iter().map(|p| p.x).sum::<f64>() / n;
            let cy = run.iter().map(|p| p.y).sum::<f64>() / n;
            let radius = run.iter().map(|p| (p.x - cx).hypot(p.y - cy)).fold(0.0, f64::max);
            Chunk { start: ci * CHUNK, end: ci * CHUNK + run.len(), cx, cy, radius: radius * (1.0 + 1e-12) + 1e-12 }
        })
        .collect()
}

/// Returns the index and arclength of the path sample closest to `(x, y)`.
///
/// The search starts from the chunk containing `hint` and prunes chunks
/// whose bounding circle cannot beat the best distance found so far, so the
/// result always equals an exhaustive scan. Ties go to the larger index.
pub fn nearest_path_point(path: &PathRef, x: f64, y: f64, hint: usize) -> (usize, f64) {
    let samples = &path.samples;
    let hint = hint.min(samples.len() - 1);
    let mut best = hint;
    let mut best_d2 = dist2(&samples[hint], x, y);
    let n_chunks = path.chunks.len();
    let first = hint / CHUNK;
    // visit chunks outward from the hint chunk
    for offset in 0..n_chunks {
        let mut any = false;
        if first + offset < n_chunks {
            scan_chunk(path, first + offset, x, y, &mut best, &mut best_d2);
            any = true;
        }
        if offset > 0 && offset <= first {
            scan_chunk(path, first - offset, x, y, &mut best, &mut best_d2);
            any = true;
        }
        if !any {
            break;
        }
    }
    (best, samples[best].s)
}

fn scan_chunk(path: &PathRef, ci: usize, x: f64, y: f64, best: &mut usize, best_d2: &mut f64) {
    let c = &path.chunks[ci];
    let lower = ((c.cx - x).hypot(c.cy - y) - c.radius).max(0.0);
    if lower * lower > *best_d2 * (1.0 + 1e-9) + 1e-18 {
        return;
    }
    for j in c.start..c.end {
        let d2 = dist2(&path.samples[j], x, y);
        if d2 < *best_d2 || (d2 == *best_d2 && j > *best) {
            *best_d2 = d2;
            *best = j;
        }
    }
}

#[inline]
fn dist2(p: &PathSample, x: f64, y: f64) -> f64 {
    let dx = p.x - x;
    let dy = p.y - y;
    dx * dx + dy * dy
}
