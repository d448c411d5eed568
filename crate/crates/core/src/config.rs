//! Plain-text `key = value` configuration covering every tunable of the
//! pipeline, with a dump of the effective values.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Pairs and triples are comma-separated. Unknown and repeated keys
//! are rejected.

use std::fmt;

use thiserror::Error;

use crate::bench::{Direction, RunOptions, Scenario, ScenarioKind};
use crate::datagen::ExcitationPolicy;
use crate::mppi::{EdgeMode, MppiParams, NoiseLaw};
use crate::slipnet::TrainingConfig;
use crate::vehicle::{PathError, VehicleParams, MAX_DESIRED_SPEED};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// A scenario and its desired speed, written `lane_change@20`,
/// `oval_ccw@14` or `oval_cw@14`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub v_desired: f64,
}

impl ScenarioSpec {
    pub fn parse(s: &str) -> Result<Self, String> {
        let (name, v) = s.trim().split_once('@').ok_or_else(|| format!("expected `name@speed`, got `{s}`"))?;
        let kind = parse_scenario_kind(name)?;
        let v_desired: f64 = v.trim().parse().map_err(|_| format!("bad speed `{v}`"))?;
        if !(0.0..=MAX_DESIRED_SPEED).contains(&v_desired) {
            return Err(format!("speed must lie in [0, {MAX_DESIRED_SPEED}] m/s, got `{v}`"));
        }
        Ok(Self { kind, v_desired })
    }

    /// Builds the scenario; `oval_distance <= 0` means one lap.
    pub fn build(&self, oval_distance: f64) -> Result<Scenario, PathError> {
        match self.kind {
            ScenarioKind::LaneChange => Scenario::lane_change(self.v_desired),
            ScenarioKind::Oval(d) => Scenario::oval(self.v_desired, d, (oval_distance > 0.0).then_some(oval_distance)),
        }
    }
}

pub fn parse_scenario_kind(name: &str) -> Result<ScenarioKind, String> {
    match name.trim() {
        "lane_change" => Ok(ScenarioKind::LaneChange),
        "oval_ccw" => Ok(ScenarioKind::Oval(Direction::Ccw)),
        "oval_cw" => Ok(ScenarioKind::Oval(Direction::Cw)),
        other => Err(format!("unknown scenario `{other}` (expected lane_change, oval_ccw or oval_cw)")),
    }
}

pub fn scenario_kind_name(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::LaneChange => "lane_change",
        ScenarioKind::Oval(Direction::Ccw) => "oval_ccw",
        ScenarioKind::Oval(Direction::Cw) => "oval_cw",
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", scenario_kind_name(self.kind), self.v_desired)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    /// Every random stream is derived from this value.
    pub seed: u64,
    pub output_dir: String,
    pub vehicle: VehicleParams,
    pub n_traj: usize,
    pub excitation: ExcitationPolicy,
    pub training: TrainingConfig,
    pub mppi: MppiParams,
    pub warmup: f64,
    pub divergence_limit: f64,
    /// Distance driven on oval scenarios; zero or less means one lap.
    pub oval_distance: f64,
    pub scenarios: Vec<ScenarioSpec>,
}

impl Default for Config {
    fn default() -> Self {
        let run = RunOptions::default();
        Self {
            seed: 0,
            output_dir: "out".into(),
            vehicle: VehicleParams::default(),
            n_traj: 500,
            excitation: ExcitationPolicy::default(),
            training: TrainingConfig::default(),
            mppi: run.mppi,
            warmup: run.warmup,
            divergence_limit: run.divergence_limit,
            oval_distance: 0.0,
            scenarios: vec![
                ScenarioSpec { kind: ScenarioKind::LaneChange, v_desired: 20.0 },
                ScenarioSpec { kind: ScenarioKind::Oval(Direction::Ccw), v_desired: 14.0 },
            ],
        }
    }
}

/// Stream tags for [`derive_seed`].
pub const SEED_DATASET: u64 = 1;
pub const SEED_TRAINING: u64 = 2;
pub const SEED_PLANNER: u64 = 3;

/// SplitMix64 finaliser over `seed` and a component tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

trait Field {
    fn render(&self) -> String;
    fn assign(&mut self, s: &str) -> Result<(), String>;
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("`{}` is not a valid number", s.trim()))
}

fn finite(v: f64) -> Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err("value must be finite".into())
    }
}

impl Field for f64 {
    fn render(&self) -> String {
        self.to_string()
    }
    fn assign(&mut self, s: &str) -> Result<(), String> {
        *self = finite(parse_num(s)?)?;
        Ok(())
    }
}

impl Field for usize {
    fn render(&self) -> String {
        self.to_string()
    }
    fn assign(&mut self, s: &str) -> Result<(), String> {
        *self = parse_num(s)?;
        Ok(())
    }
}

impl Field for u64 {
    fn render(&self) -> String {
        self.to_string()
    }
    fn assign(&mut self, s: &str) -> Result<(), String> {
        *self = parse_num(s)?;
        Ok(())
    }
}

impl Field for String {
    fn render(&self) -> String {
        self.clone()
    }
    fn assign(&mut self, s: &str) -> Result<(), String> {
        if s.is_empty() {
            return Err("value must not be empty".into());
        }
        *self = s.to_string();
        Ok(())
    }
}

fn parse_list(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v = s.split(',').map(|x| parse_num::<f64>(x).and_then(finite)).collect::<Result<Vec<_>, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers"));
    }
    Ok(v)
}

impl Field for (f64, f64) {
    fn render(&self) -> String {
        format!("{},{}", self.0, self.1)
    }
    fn assign(&mut self, s: &str) -> Result<(), String> {
        let v = parse_list(s, 2)?;
        *self = (v[0], v[1]);
        Ok(())
    }
}

impl<const N: usize> Field for [f64; N] {
    fn render(&self) -> String {
        self.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
    fn assign(&mut self, s: &str) -> Result<(), String> {
        self.copy_from_slice(&parse_list(s, N)?);
        Ok(())
    }
}

impl Field for NoiseLaw {
    fn render(&self) -> String {
        match self {
            NoiseLaw::Uniform => "uniform",
            NoiseLaw::TruncatedGaussian => "truncated_gaussian",
        }
        .into()
    }
    fn assign(&mut self, s: &str) -> Result<(), String> {
        *self = match s {
            "uniform" => NoiseLaw::Uniform,
            "truncated_gaussian" => NoiseLaw::TruncatedGaussian,
            _ => return Err("expected `uniform` or `truncated_gaussian`".into()),
        };
        Ok(())
    }
}

impl Field for EdgeMode {
    fn render(&self) -> String {
        match self {
            EdgeMode::Interp => "interp",
            EdgeMode::Mirror => "mirror",
        }
        .into()
    }
    fn assign(&mut self, s: &str) -> Result<(), String> {
        *self = match s {
            "interp" => EdgeMode::Interp,
            "mirror" => EdgeMode::Mirror,
            _ => return Err("expected `interp` or `mirror`".into()),
        };
        Ok(())
    }
}

impl Field for Vec<ScenarioSpec> {
    fn render(&self) -> String {
        self.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
    }
    fn assign(&mut self, s: &str) -> Result<(), String> {
        *self = s.split(',').map(ScenarioSpec::parse).collect::<Result<_, _>>()?;
        Ok(())
    }
}

impl Config {
    fn fields(&mut self) -> Vec<(&'static str, &mut dyn Field)> {
        let v = &mut self.vehicle;
        let x = &mut self.excitation;
        let t = &mut self.training;
        let m = &mut self.mppi;
        vec![
            ("seed", &mut self.seed),
            ("output_dir", &mut self.output_dir),
            ("vehicle.mass", &mut v.mass),
            ("vehicle.l_f", &mut v.l_f),
            ("vehicle.l_r", &mut v.l_r),
            ("vehicle.l_w", &mut v.l_w),
            ("vehicle.h", &mut v.h),
            ("vehicle.r_eff", &mut v.r_eff),
            ("vehicle.i_x", &mut v.i_x),
            ("vehicle.i_y", &mut v.i_y),
            ("vehicle.i_z", &mut v.i_z),
            ("vehicle.i_w", &mut v.i_w),
            ("vehicle.mu", &mut v.mu),
            ("vehicle.g", &mut v.g),
            ("vehicle.drag_area", &mut v.drag_area),
            ("vehicle.air_density", &mut v.air_density),
            ("vehicle.tire_lat.b", &mut v.tire_lat.b),
            ("vehicle.tire_lat.c", &mut v.tire_lat.c),
            ("vehicle.tire_lat.d_scale", &mut v.tire_lat.d_scale),
            ("vehicle.tire_lat.e", &mut v.tire_lat.e),
            ("vehicle.tire_long.b", &mut v.tire_long.b),
            ("vehicle.tire_long.c", &mut v.tire_long.c),
            ("vehicle.tire_long.d_scale", &mut v.tire_long.d_scale),
            ("vehicle.tire_long.e", &mut v.tire_long.e),
            ("datagen.n_traj", &mut self.n_traj),
            ("datagen.torque_low", &mut x.torque_low),
            ("datagen.torque_mid", &mut x.torque_mid),
            ("datagen.torque_high", &mut x.torque_high),
            ("datagen.band_edges", &mut x.band_edges),
            ("datagen.steer", &mut x.steer),
            ("datagen.hold", &mut x.hold),
            ("datagen.initial_speed", &mut x.initial_speed),
            ("train.batch_size", &mut t.batch_size),
            ("train.learning_rate", &mut t.learning_rate),
            ("train.loss_weights", &mut t.loss_weights),
            ("train.gamma", &mut t.gamma),
            ("train.epochs", &mut t.epochs),
            ("train.validation_fraction", &mut t.validation_fraction),
            ("mppi.lambda", &mut m.lambda),
            ("mppi.nu", &mut m.nu),
            ("mppi.samples", &mut m.samples),
            ("mppi.horizon", &mut m.horizon),
            ("mppi.dt", &mut m.dt),
            ("mppi.r", &mut m.r),
            ("mppi.q_z", &mut m.q_z),
            ("mppi.q_v", &mut m.q_v),
            ("mppi.noise_v", &mut m.noise_v),
            ("mppi.noise_delta", &mut m.noise_delta),
            ("mppi.noise_law", &mut m.noise_law),
            ("mppi.noise_hold", &mut m.noise_hold),
            ("mppi.sg_window", &mut m.sg_window),
            ("mppi.sg_order", &mut m.sg_order),
            ("mppi.sg_edge", &mut m.sg_edge),
            ("mppi.v_max", &mut m.v_max),
            ("mppi.delta_max", &mut m.delta_max),
            ("mppi.controls_per_plan", &mut m.controls_per_plan),
            ("run.warmup", &mut self.warmup),
            ("run.divergence_limit", &mut self.divergence_limit),
            ("run.oval_distance", &mut self.oval_distance),
            ("run.scenarios", &mut self.scenarios),
        ]
    }

    /// All recognised keys in dump order.
    pub fn keys() -> Vec<&'static str> {
        Config::default().fields().into_iter().map(|(k, _)| k).collect()
    }

    /// Sets one key without validating the whole configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_at(0, key, value)
    }

    fn set_at(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut fields = self.fields();
        let (_, field) = fields
            .iter_mut()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
        field.assign(value).map_err(|msg| ConfigError::BadValue { line, key: key.to_string(), msg })
    }

    /// Applies `key = value` lines on top of the defaults and validates.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Config::default();
        config.apply(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (key, value) = l.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            self.set_at(line, key, value)?;
            seen.push(key.into());
        }
        Ok(())
    }

    /// Every key with its effective value; parsing it back yields an equal
    /// configuration.
    pub fn to_text(&self) -> String {
        let mut copy = self.clone();
        let mut out = String::from("# effective configuration\n");
        for (k, f) in copy.fields() {
            out.push_str(&format!("{k} = {}\n", f.render()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if let Err(e) = self.vehicle.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.training.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.mppi.validate() {
            return invalid(e.to_string());
        }
        if self.n_traj == 0 {
            return invalid("datagen.n_traj must be at least 1".into());
        }
        let x = &self.excitation;
        for (name, (lo, hi)) in [
            ("torque_low", x.torque_low),
            ("torque_mid", x.torque_mid),
            ("torque_high", x.torque_high),
            ("band_edges", x.band_edges),
            ("steer", x.steer),
            ("hold", x.hold),
            ("initial_speed", x.initial_speed),
        ] {
            if lo > hi {
                return invalid(format!("datagen.{name} lower bound exceeds upper bound"));
            }
        }
        if !(x.hold.0 > 0.0) {
            return invalid("datagen.hold must be positive".into());
        }
        if !(self.warmup >= 0.0) || !(self.divergence_limit > 0.0) {
            return invalid("run.warmup must be non-negative and run.divergence_limit positive".into());
        }
        Ok(())
    }

    pub fn dataset_seed(&self) -> u64 {
        derive_seed(self.seed, SEED_DATASET)
    }

    /// Training settings with the derived shuffling seed.
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig { seed: derive_seed(self.seed, SEED_TRAINING), ..self.training.clone() }
    }

    /// Closed-loop settings with the derived planner seed.
    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            mppi: MppiParams { seed: derive_seed(self.seed, SEED_PLANNER), ..self.mppi.clone() },
            warmup: self.warmup,
            divergence_limit: self.divergence_limit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn edited_round_trip() {
        let text = "seed = 42\nmppi.samples = 64\nmppi.noise_law = truncated_gaussian\nmppi.sg_edge = mirror\n\
                    train.loss_weights = 0.1, 0.5, 0.4\ndatagen.steer = -0.3,0.3\nrun.scenarios = oval_cw@8,lane_change@12.5\n";
        let c = Config::parse(text).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.mppi.samples, 64);
        assert_eq!(c.mppi.noise_law, NoiseLaw::TruncatedGaussian);
        assert_eq!(c.training.loss_weights, [0.1, 0.5, 0.4]);
        assert_eq!(c.scenarios[1], ScenarioSpec { kind: ScenarioKind::LaneChange, v_desired: 12.5 });
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        // every key appears exactly once in the dump
        let dump = c.to_text();
        for k in Config::keys() {
            assert_eq!(dump.lines().filter(|l| l.split('=').next().unwrap().trim() == k).count(), 1, "{k}");
        }
    }

    #[test]
    fn rejections() {
        assert_eq!(Config::parse("bogus = 1"), Err(ConfigError::UnknownKey { line: 1, key: "bogus".into() }));
        assert_eq!(Config::parse("# c\n\nseed 4"), Err(ConfigError::Syntax { line: 3 }));
        assert!(matches!(Config::parse("seed = 1\nseed = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(Config::parse("mppi.lambda = x"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::parse("mppi.lambda = inf"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::parse("mppi.lambda = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::parse("run.scenarios = slalom@3"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::parse("datagen.hold = 1,0.5"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn seed_streams_differ() {
        let c = Config { seed: 9, ..Config::default() };
        let s = [c.dataset_seed(), c.training_config().seed, c.run_options().mppi.seed];
        assert!(s[0] != s[1] && s[1] != s[2] && s[0] != s[2]);
        assert_eq!(derive_seed(9, 1), c.dataset_seed());
    }
}
