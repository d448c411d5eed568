//! Closed-loop benchmark: reference paths, the planner/controller/simulator
//! loop, cross-track metrics, comparison tables and SVG plots.

use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::lowctl::{lateral_control, longitudinal_control, PidState};
use crate::mppi::{HebmModel, KbmModel, MppiError, MppiParams, PlanLogRow, Planner, RolloutModel};
use crate::refsim::{FullControl, FullState, LogRow, RefSim, SimError, CONTROL_DT};
use crate::slipnet::{HistoryBuffer, NetworkWeights};
use crate::vehicle::{nearest_path_point, BicycleControl, BicycleState, PathError, PathRef, PathSample, VehicleParams};

/// Signed cross-track error: positive when the vehicle is to the left of
/// the reference sample's heading.
pub fn lateral_error(x: f64, y: f64, reference: &PathSample) -> f64 {
    (y - reference.y) * reference.psi.cos() - (x - reference.x) * reference.psi.sin()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Ccw,
    Cw,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Ccw => "CCW",
            Direction::Cw => "CW",
        }
    }
}

pub const OVAL_STRAIGHT: f64 = 60.0;
pub const OVAL_RADIUS: f64 = 35.0;

/// Stadium-shaped closed path. Counter-clockwise starts at the beginning of
/// the lower straight heading along +x; clockwise is its mirror image in y.
pub fn make_oval(straight: f64, radius: f64, direction: Direction, v_desired: f64) -> Result<PathRef, PathError> {
    if !(radius > 0.0) || !(straight >= 0.0) {
        return Err(PathError::Empty);
    }
    let a = straight;
    let arc = PI * radius;
    let total = 2.0 * a + 2.0 * arc;
    let n = (total / crate::vehicle::PATH_RESOLUTION).ceil() as usize;
    let mirror = if direction == Direction::Cw { -1.0 } else { 1.0 };
    let samples = (0..=n)
        .map(|i| {
            let s = if i == n { total } else { total * i as f64 / n as f64 };
            let (x, y, psi, kappa) = if s < a {
                (-a / 2.0 + s, -radius, 0.0, 0.0)
            } else if s < a + arc {
                let th = (s - a) / radius;
                (a / 2.0 + radius * th.sin(), -radius * th.cos(), th, 1.0 / radius)
            } else if s < 2.0 * a + arc {
                (a / 2.0 - (s - a - arc), radius, PI, 0.0)
            } else {
                let th = (s - 2.0 * a - arc) / radius;
                (-a / 2.0 - radius * th.sin(), radius * th.cos(), PI + th, 1.0 / radius)
            };
            PathSample { s, x, y: mirror * y, psi: mirror * psi, kappa: mirror * kappa }
        })
        .collect();
    PathRef::new(samples, v_desired)
}

/// Lane-change geometry along x: entry, transition, offset lane, return
/// transition, exit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaneChangeGeometry {
    pub entry: f64,
    pub transition: f64,
    pub offset_len: f64,
    pub exit: f64,
    pub offset: f64,
}

impl Default for LaneChangeGeometry {
    fn default() -> Self {
        Self { entry: 15.0, transition: 30.0, offset_len: 25.0, exit: 15.0, offset: 3.5 }
    }
}

impl LaneChangeGeometry {
    pub fn section_length(&self) -> f64 {
        self.entry + 2.0 * self.transition + self.offset_len + self.exit
    }

    /// Lateral offset and its first two derivatives at `x` from the start of
    /// the section.
    pub fn profile(&self, x: f64) -> (f64, f64, f64) {
        let t1 = self.entry;
        let t2 = t1 + self.transition + self.offset_len;
        let blend = |u: f64| {
            let w = PI / self.transition;
            let h = self.offset / 2.0;
            (h * (1.0 - (PI * u).cos()), h * w * (PI * u).sin(), h * w * w * (PI * u).cos())
        };
        if x <= t1 {
            (0.0, 0.0, 0.0)
        } else if x < t1 + self.transition {
            blend((x - t1) / self.transition)
        } else if x <= t2 {
            (self.offset, 0.0, 0.0)
        } else if x < t2 + self.transition {
            let (y, dy, ddy) = blend((x - t2) / self.transition);
            (self.offset - y, -dy, -ddy)
        } else {
            (0.0, 0.0, 0.0)
        }
    }
}

/// Lane-change centreline with a straight lead-in before the section and a
/// run-out after it. The section starts at `x = lead_in`.
pub fn make_lane_change(geometry: &LaneChangeGeometry, lead_in: f64, run_out: f64, v_desired: f64) -> Result<PathRef, PathError> {
    let dx = crate::vehicle::PATH_RESOLUTION;
    let total = lead_in + geometry.section_length() + run_out;
    let n = (total / dx).round() as usize;
    let slope = |x: f64| (1.0 + geometry.profile(x - lead_in).1.powi(2)).sqrt();
    let mut s = 0.0;
    let mut samples = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = i as f64 * dx;
        if i > 0 {
            // Simpson's rule over the step for the arclength
            let x0 = x - dx;
            s += dx / 6.0 * (slope(x0) + 4.0 * slope(x0 + dx / 2.0) + slope(x));
        }
        let (y, dy, ddy) = geometry.profile(x - lead_in);
        let kappa = ddy / (1.0 + dy * dy).powf(1.5);
        samples.push(PathSample { s, x, y, psi: dy.atan(), kappa });
    }
    PathRef::new(samples, v_desired)
}

/// When a closed-loop run stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EndCondition {
    /// Distance travelled by the vehicle (m).
    Distance(f64),
    /// Nearest-point arclength passed (m).
    PathS(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Oval(Direction),
    LaneChange,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub path: PathRef,
    pub v_desired: f64,
    pub start_speed: f64,
    pub end: EndCondition,
    /// Hard stop on simulated time (s).
    pub max_time: f64,
}

/// Lead-in before the lane-change section, long enough that the warm-up
/// period is spent on the straight.
pub fn lane_change_lead_in(v: f64) -> f64 {
    (2.5 * v).max(20.0)
}

/// Straight after the lane-change section so the planning horizon stays on
/// the path until the run ends.
pub const LANE_CHANGE_RUN_OUT: f64 = 40.0;

impl Scenario {
    /// Flying-start oval run over `distance` metres (one lap by default).
    pub fn oval(v_desired: f64, direction: Direction, distance: Option<f64>) -> Result<Self, PathError> {
        let path = make_oval(OVAL_STRAIGHT, OVAL_RADIUS, direction, v_desired)?;
        let distance = distance.unwrap_or(path.length());
        Ok(Self {
            name: format!("oval_{}_{}", direction.as_str().to_lowercase(), v_desired),
            kind: ScenarioKind::Oval(direction),
            path,
            v_desired,
            start_speed: v_desired,
            end: EndCondition::Distance(distance),
            max_time: 2.0 * distance / v_desired.max(1.0) + 5.0,
        })
    }

    /// Flying-start lane change.
    pub fn lane_change(v_desired: f64) -> Result<Self, PathError> {
        // the lead-in grows with speed, so check before allocating the path
        if !(0.0..=crate::vehicle::MAX_DESIRED_SPEED).contains(&v_desired) {
            return Err(PathError::Speed);
        }
        let geometry = LaneChangeGeometry::default();
        let lead_in = lane_change_lead_in(v_desired);
        let path = make_lane_change(&geometry, lead_in, LANE_CHANGE_RUN_OUT, v_desired)?;
        let end_s = path.sample(path.index_at_s(f64::MAX)).s - LANE_CHANGE_RUN_OUT;
        Ok(Self {
            name: format!("lane_change_{v_desired}"),
            kind: ScenarioKind::LaneChange,
            path,
            v_desired,
            start_speed: v_desired,
            end: EndCondition::PathS(end_s),
            max_time: 2.0 * end_s / v_desired.max(1.0) + 5.0,
        })
    }

    pub fn direction(&self) -> Option<Direction> {
        match self.kind {
            ScenarioKind::Oval(d) => Some(d),
            ScenarioKind::LaneChange => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlannerKind {
    Kbm,
    Hebm,
}

impl PlannerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlannerKind::Kbm => "KBM",
            PlannerKind::Hebm => "HEBM",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub mppi: MppiParams,
    /// Initial period excluded from the metrics (s).
    pub warmup: f64,
    /// Cross-track error that aborts a run (m).
    pub divergence_limit: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { mppi: MppiParams::desk(), warmup: 2.0, divergence_limit: 10.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub mae: f64,
    pub max_abs_error: f64,
    pub mean_v: f64,
    pub max_ay_g: f64,
    /// Cross-track error of every logged step after the warm-up.
    pub errors: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    Diverged,
    TimedOut,
}

impl RunOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunOutcome::Completed => "completed",
            RunOutcome::Diverged => "diverged",
            RunOutcome::TimedOut => "timed_out",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub log: Vec<LogRow>,
    pub plan_log: Vec<PlanLogRow>,
    pub outcome: RunOutcome,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("the HEBM planner needs network weights")]
    MissingWeights,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Planner(#[from] MppiError),
}

/// Cross-track metrics over the rows logged after `warmup` seconds.
pub fn metrics_from_log(log: &[LogRow], path: &PathRef, warmup: f64, g: f64) -> RunMetrics {
    let mut hint = 0;
    let mut m = RunMetrics::default();
    let mut sum_v = 0.0;
    for r in log.iter().filter(|r| r.t > warmup) {
        let (idx, _) = nearest_path_point(path, r.x, r.y, hint);
        hint = idx;
        let e = lateral_error(r.x, r.y, path.sample(idx));
        m.max_abs_error = m.max_abs_error.max(e.abs());
        m.max_ay_g = m.max_ay_g.max(r.ay.abs() / g);
        sum_v += r.v;
        m.errors.push(e);
    }
    if !m.errors.is_empty() {
        let n = m.errors.len() as f64;
        m.mae = m.errors.iter().map(|e| e.abs()).sum::<f64>() / n;
        m.mean_v = sum_v / n;
    }
    m
}

/// Runs the 20 Hz planner, 100 Hz controllers and 1 kHz simulator until
/// the scenario ends.
pub fn run_closed_loop(
    scenario: &Scenario,
    kind: PlannerKind,
    weights: Option<&NetworkWeights>,
    params: &VehicleParams,
    options: &RunOptions,
) -> Result<RunOutput, BenchError> {
    match kind {
        PlannerKind::Kbm => run_with(scenario, &KbmModel { params: params.clone() }, |_| (), params, options),
        PlannerKind::Hebm => {
            let weights = weights.ok_or(BenchError::MissingWeights)?;
            let model = HebmModel { params: params.clone(), weights };
            run_with(scenario, &model, |h| *h, params, options)
        }
    }
}

fn run_with<M: RolloutModel>(
    scenario: &Scenario,
    model: &M,
    context: impl Fn(&HistoryBuffer) -> M::Context,
    params: &VehicleParams,
    options: &RunOptions,
) -> Result<RunOutput, BenchError> {
    let path = &scenario.path;
    let start = path.sample(0);
    let v0 = scenario.start_speed;
    let mut sim = RefSim::new(params.clone(), FullState::straight(start.x, start.y, start.psi, v0, params));
    let mut history = HistoryBuffer::steady([v0, 0.0, 0.0], [v0, 0.0]);
    let mut planner = Planner::new(options.mppi.clone(), BicycleControl::new(v0, 0.0))?;
    let mut lon = PidState::longitudinal(CONTROL_DT);
    let mut lat = PidState::lateral(CONTROL_DT);
    let per_plan = options.mppi.controls_per_plan;

    let mut log = Vec::new();
    let mut plan_log = Vec::new();
    let mut controls = Vec::new();
    let mut hint = 0;
    let mut travelled = 0.0;
    let mut outcome = RunOutcome::TimedOut;
    let mut step = 0usize;
    while sim.t < scenario.max_time - 1e-9 {
        let pose = BicycleState::new(sim.state.x, sim.state.y, sim.state.psi);
        let finished = match scenario.end {
            EndCondition::Distance(d) => travelled >= d,
            EndCondition::PathS(s) => path.sample(nearest_path_point(path, pose.x, pose.y, hint).0).s >= s,
        };
        if finished {
            outcome = RunOutcome::Completed;
            break;
        }
        if step % per_plan == 0 {
            let ctx = context(&history);
            let out = planner.plan(model, pose, &ctx, path)?;
            plan_log.push(PlanLogRow {
                iter: planner.iteration - 1,
                t: sim.t,
                cost_min: out.cost_min,
                cost_mean: out.cost_mean,
                v_cmd0: out.controls[0].v,
                delta_cmd0: out.controls[0].delta,
            });
            controls = out.controls;
        }
        let u = controls[step % per_plan];
        let meas = sim.measure();
        let ctx = context(&history);
        let lateral = lateral_control(&mut lat, u.delta, u.v, pose, &ctx, model, path, hint);
        let (total, _) = longitudinal_control(&mut lon, u.v, meas.v, params);
        let command = FullControl::from_total(total, lateral.delta, params);
        sim.advance(&command)?;
        step += 1;

        let m = sim.measure();
        history.push_state([m.vx, m.vy, m.psi_dot]);
        history.push_control([m.v, command.delta]);
        travelled += 0.5 * (meas.v + m.v) * CONTROL_DT;
        let diag = sim.diagnostics(&command);
        let s = &sim.state;
        log.push(LogRow {
            t: sim.t,
            x: s.x,
            y: s.y,
            psi: s.psi,
            vx: m.vx,
            vy: m.vy,
            yaw_rate: m.psi_dot,
            v: m.v,
            delta_cmd: command.delta,
            torque: command.torque,
            alpha_f: diag.alpha_front(),
            alpha_r: diag.alpha_rear(),
            ay: diag.ay,
        });
        let (idx, _) = nearest_path_point(path, s.x, s.y, hint);
        hint = idx;
        if lateral_error(s.x, s.y, path.sample(idx)).abs() > options.divergence_limit {
            outcome = RunOutcome::Diverged;
            break;
        }
    }
    let metrics = metrics_from_log(&log, path, options.warmup, params.g);
    Ok(RunOutput { metrics, log, plan_log, outcome })
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub v_desired: f64,
    pub method: String,
    pub direction: String,
    pub mae: f64,
    pub max_err: f64,
    pub mean_v: f64,
    pub max_ay_g: f64,
    pub status: String,
}

impl ReportRow {
    pub fn new(scenario: &Scenario, kind: PlannerKind, output: &RunOutput) -> Self {
        Self {
            scenario: scenario.name.clone(),
            v_desired: scenario.v_desired,
            method: kind.as_str().into(),
            direction: scenario.direction().map_or("-", |d| d.as_str()).into(),
            mae: output.metrics.mae,
            max_err: output.metrics.max_abs_error,
            mean_v: output.metrics.mean_v,
            max_ay_g: output.metrics.max_ay_g,
            status: output.outcome.as_str().into(),
        }
    }
}

pub const REPORT_HEADER: &str = "scenario,v_desired,method,direction,mae,max_err,mean_v,max_ay_g,status";

/// Comparison table as CSV, rows in the given order.
pub fn compare_report(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario, r.v_desired, r.method, r.direction, r.mae, r.max_err, r.mean_v, r.max_ay_g, r.status
        );
    }
    out
}

/// The same table rounded for reading.
pub fn compare_report_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "| Scenario | V des (m/s) | Method | Dir | MAE (m) | Max err (m) | Mean V (m/s) | Max a_y (g) | Status |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.3} | {:.3} | {:.2} | {:.2} | {} |",
            r.scenario, r.v_desired, r.method, r.direction, r.mae, r.max_err, r.mean_v, r.max_ay_g, r.status
        );
    }
    out
}

pub fn parse_report(text: &str) -> Result<Vec<ReportRow>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next() != Some(REPORT_HEADER) {
        return Err(format!("expected header `{REPORT_HEADER}`"));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 9 {
                return Err(format!("row {}: expected 9 fields", i + 1));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| format!("row {}: bad number `{s}`", i + 1));
            Ok(ReportRow {
                scenario: f[0].into(),
                v_desired: num(f[1])?,
                method: f[2].into(),
                direction: f[3].into(),
                mae: num(f[4])?,
                max_err: num(f[5])?,
                mean_v: num(f[6])?,
                max_ay_g: num(f[7])?,
                status: f[8].into(),
            })
        })
        .collect()
}

/// Summary written next to a run's logs: enough to rebuild its report row
/// and to recompute the metrics from `log.csv` and `path.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub method: String,
    pub direction: String,
    pub v_desired: f64,
    pub warmup: f64,
    pub g: f64,
    pub status: String,
    pub mae: f64,
    pub max_err: f64,
    pub mean_v: f64,
    pub max_ay_g: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
}

const RECORD_KEYS: [&str; 11] =
    ["scenario", "method", "direction", "v_desired", "warmup", "g", "status", "mae", "max_err", "mean_v", "max_ay_g"];

impl RunRecord {
    pub fn new(scenario: &Scenario, kind: PlannerKind, output: &RunOutput, options: &RunOptions, params: &VehicleParams) -> Self {
        let row = ReportRow::new(scenario, kind, output);
        Self {
            scenario: row.scenario,
            method: row.method,
            direction: row.direction,
            v_desired: row.v_desired,
            warmup: options.warmup,
            g: params.g,
            status: row.status,
            mae: row.mae,
            max_err: row.max_err,
            mean_v: row.mean_v,
            max_ay_g: row.max_ay_g,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "scenario = {}\nmethod = {}\ndirection = {}\nv_desired = {}\nwarmup = {}\ng = {}\nstatus = {}\n\
             mae = {}\nmax_err = {}\nmean_v = {}\nmax_ay_g = {}\n",
            self.scenario,
            self.method,
            self.direction,
            self.v_desired,
            self.warmup,
            self.g,
            self.status,
            self.mae,
            self.max_err,
            self.mean_v,
            self.max_ay_g
        )
    }

    pub fn from_text(text: &str) -> Result<Self, RecordError> {
        let mut values: [Option<String>; 11] = Default::default();
        for (i, raw) in text.lines().enumerate() {
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (k, v) = l.split_once('=').ok_or(RecordError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            let slot = RECORD_KEYS
                .iter()
                .position(|key| *key == k)
                .ok_or_else(|| RecordError::UnknownKey { line: i + 1, key: k.into() })?;
            if values[slot].replace(v.to_string()).is_some() {
                return Err(RecordError::Duplicate(k.into()));
            }
        }
        let mut take = |i: usize| values[i].take().ok_or(RecordError::Missing(RECORD_KEYS[i]));
        let text_fields = [take(0)?, take(1)?, take(2)?];
        let mut nums = [0.0; 7];
        let mut status = String::new();
        for (j, i) in (3..11).enumerate() {
            let v = take(i)?;
            if i == 6 {
                status = v;
                continue;
            }
            let parsed: f64 = v.parse().map_err(|_| RecordError::BadValue { key: RECORD_KEYS[i].into(), value: v.clone() })?;
            if !parsed.is_finite() {
                return Err(RecordError::BadValue { key: RECORD_KEYS[i].into(), value: v });
            }
            nums[if i < 6 { j } else { j - 1 }] = parsed;
        }
        let [scenario, method, direction] = text_fields;
        Ok(Self {
            scenario,
            method,
            direction,
            v_desired: nums[0],
            warmup: nums[1],
            g: nums[2],
            status,
            mae: nums[3],
            max_err: nums[4],
            mean_v: nums[5],
            max_ay_g: nums[6],
        })
    }

    pub fn report_row(&self) -> ReportRow {
        ReportRow {
            scenario: self.scenario.clone(),
            v_desired: self.v_desired,
            method: self.method.clone(),
            direction: self.direction.clone(),
            mae: self.mae,
            max_err: self.max_err,
            mean_v: self.mean_v,
            max_ay_g: self.max_ay_g,
            status: self.status.clone(),
        }
    }

    /// Whether `metrics` equal the stored summary bit for bit.
    pub fn matches(&self, metrics: &RunMetrics) -> bool {
        self.mae == metrics.mae
            && self.max_err == metrics.max_abs_error
            && self.mean_v == metrics.mean_v
            && self.max_ay_g == metrics.max_ay_g
    }
}

const PALETTE: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

fn svg_frame(title: &str, w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(points: impl Iterator<Item = (f64, f64)>, color: &str, width: f64) -> String {
    let mut d = String::new();
    for (x, y) in points {
        let _ = write!(d, "{x:.2},{y:.2} ");
    }
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" points=\"{}\"/>\n", d.trim_end())
}

fn legend(labels: &[&str], x: f64) -> String {
    let mut out = String::new();
    for (i, l) in labels.iter().enumerate() {
        let y = 40.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{}\" stroke-width=\"2\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            x + 20.0,
            PALETTE[i % PALETTE.len()],
            x + 24.0,
            y + 4.0,
            escape(l)
        );
    }
    out
}

/// Reference path (grey) with one or more driven trajectories, equal axis
/// scaling.
pub fn svg_trajectory(title: &str, path: &PathRef, runs: &[(&str, &[LogRow])]) -> String {
    let (w, h, margin) = (800.0, 600.0, 40.0);
    let xs = path.samples().iter().map(|p| (p.x, p.y)).chain(runs.iter().flat_map(|(_, l)| l.iter().map(|r| (r.x, r.y))));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in xs {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let scale = ((w - 2.0 * margin) / (x1 - x0).max(1e-9)).min((h - 2.0 * margin) / (y1 - y0).max(1e-9));
    let tx = |x: f64| margin + (x - x0) * scale;
    let ty = |y: f64| h - margin - (y - y0) * scale;
    let mut out = svg_frame(title, w, h);
    out += &polyline(path.samples().iter().map(|p| (tx(p.x), ty(p.y))), "#999999", 3.0);
    for (i, (_, log)) in runs.iter().enumerate() {
        out += &polyline(log.iter().map(|r| (tx(r.x), ty(r.y))), PALETTE[i % PALETTE.len()], 1.2);
    }
    let labels: Vec<&str> = runs.iter().map(|(l, _)| *l).collect();
    out += &legend(&labels, w - 160.0);
    out += "</svg>\n";
    out
}

/// Line chart of one or more `(x, y)` series sharing axes.
pub fn svg_series(title: &str, x_label: &str, y_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let (w, h, margin) = (800.0, 400.0, 50.0);
    let pts = series.iter().flat_map(|(_, s)| s.iter().copied());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if y1 - y0 < 1e-12 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let tx = |x: f64| margin + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * margin);
    let ty = |y: f64| h - margin - (y - y0) / (y1 - y0) * (h - 2.0 * margin);
    let mut out = svg_frame(title, w, h);
    let _ = writeln!(
        out,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/><line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = margin,
        b = h - margin,
        r = w - margin
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{} [{x0:.3}, {x1:.3}]</text>",
        w / 2.0,
        h - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"12\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">{} [{y0:.3}, {y1:.3}]</text>",
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, (_, s)) in series.iter().enumerate() {
        out += &polyline(s.iter().map(|&(x, y)| (tx(x), ty(y))), PALETTE[i % PALETTE.len()], 1.2);
    }
    let labels: Vec<&str> = series.iter().map(|(l, _)| *l).collect();
    out += &legend(&labels, w - 160.0);
    out += "</svg>\n";
    out
}

/// Curvature against arclength.
pub fn svg_curvature(title: &str, path: &PathRef) -> String {
    svg_series(title, "s (m)", "curvature (1/m)", &[("kappa", path.samples().iter().map(|p| (p.s, p.kappa)).collect())])
}
