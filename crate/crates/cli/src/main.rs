//! `hebm` command-line front end: dataset generation, training, closed-loop
//! runs, the HEBM-versus-KBM evaluation and report/plot emission.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 missing or
//! malformed data, 4 numerical divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hebm::bench::{
    compare_report, compare_report_markdown, metrics_from_log, run_closed_loop, svg_curvature, svg_series,
    svg_trajectory, BenchError, PlannerKind, ReportRow, RunRecord, Scenario,
};
use hebm::config::{parse_scenario_kind, Config, ConfigError, ScenarioSpec};
use hebm::datagen::{build_dataset, parse_metadata, params_fingerprint, sha256_hex, Dataset};
use hebm::mppi::plan_log_to_csv;
use hebm::refsim::{log_from_csv, log_to_csv};
use hebm::slipnet::{NetworkWeights, TrainError, Trainer};
use hebm::PathRef;

/// Largest tolerated share of regenerated trajectories in `datagen`.
const MAX_DIVERGENCE_RATE: f64 = 0.05;

#[derive(Parser)]
#[command(name = "hebm", version, about = "Learned-slip bicycle model, MPPI planning and a 9-DoF vehicle simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set mppi.samples=1024`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training dataset with the 9-DoF simulator.
    Datagen {
        #[arg(long)]
        n_traj: Option<usize>,
    },
    /// Train the slip network on a generated dataset.
    Train {
        /// Directory holding `dataset.csv` and `dataset.meta` (default: the output directory).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Drive one scenario in closed loop.
    Run {
        /// lane_change, oval_ccw or oval_cw.
        #[arg(long)]
        scenario: String,
        /// Desired speed (m/s).
        #[arg(long)]
        speed: f64,
        #[arg(long, value_enum, default_value = "hebm")]
        model: ModelArg,
        /// Network weights (default: `weights.bin` in the output directory).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Run every configured scenario with both planners and write the report.
    Eval {
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Rebuild the comparison table and plots from run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Kbm,
    Hebm,
}

impl From<ModelArg> for PlannerKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Kbm => PlannerKind::Kbm,
            ModelArg::Hebm => PlannerKind::Hebm,
        }
    }
}

enum Failure {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Divergence(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Divergence(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    String::from_utf8(read(path)?).map_err(|_| Failure::Data(format!("{} is not UTF-8 text", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_config(g: &Global) -> Result<Config, Failure> {
    let mut config = Config::default();
    if let Some(path) = &g.config {
        config.apply(&read_text(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    for o in &g.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        config.set(k.trim(), v.trim()).map_err(|e| {
            let detail = match e {
                ConfigError::UnknownKey { key, .. } => format!("unknown key `{key}`"),
                ConfigError::BadValue { msg, .. } => msg,
                other => other.to_string(),
            };
            Failure::Usage(format!("--set {o}: {detail}"))
        })?;
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(out) = &g.out {
        config.output_dir = out.display().to_string();
    }
    Ok(config)
}

fn finish_config(config: &Config) -> Outcome {
    config.validate().map_err(|e| Failure::Usage(e.to_string()))
}

fn load_dataset(dir: &Path, config: &Config) -> Result<Dataset, Failure> {
    let csv = read_text(&dir.join("dataset.csv"))?;
    let meta = parse_metadata(&read_text(&dir.join("dataset.meta"))?).map_err(|e| Failure::Data(e.to_string()))?;
    if sha256_hex(csv.as_bytes()) != meta.dataset_sha256 {
        return Err(Failure::Data("dataset.csv does not match the hash recorded in dataset.meta".into()));
    }
    if meta.params_hash != params_fingerprint(&config.vehicle) {
        eprintln!("warning: dataset was generated with different vehicle parameters");
    }
    let mut ds = Dataset::from_csv(&csv, meta.normalizer, meta.seed).map_err(|e| Failure::Data(e.to_string()))?;
    ds.divergences = meta.divergences;
    Ok(ds)
}

fn load_weights(path: &Path) -> Result<NetworkWeights, Failure> {
    NetworkWeights::from_bytes(&read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_datagen(config: &Config) -> Outcome {
    let out = Path::new(&config.output_dir);
    let ds = build_dataset(config.n_traj, &config.excitation, &config.vehicle, config.dataset_seed())
        .map_err(|e| Failure::Divergence(e.to_string()))?;
    let rate = ds.divergences as f64 / (ds.divergences + config.n_traj) as f64;
    if rate > MAX_DIVERGENCE_RATE {
        return Err(Failure::Divergence(format!(
            "{} of {} simulated trajectories diverged ({:.1}%, limit {:.0}%)",
            ds.divergences,
            ds.divergences + config.n_traj,
            100.0 * rate,
            100.0 * MAX_DIVERGENCE_RATE
        )));
    }
    let csv = ds.to_csv();
    write(&out.join("dataset.csv"), &csv)?;
    write(&out.join("dataset.meta"), ds.metadata(&config.vehicle, &csv))?;
    write(&out.join("datagen.config.txt"), config.to_text())?;
    println!("trajectories  {}", ds.trajectories.len());
    println!("windows       {}", ds.window_count());
    println!("regenerated   {}", ds.divergences);
    println!("|a_y| p99     {:.3} g", ds.ay_quantile_g(0.99, config.vehicle.g));
    println!("sha256        {}", sha256_hex(csv.as_bytes()));
    println!("written to    {}", out.display());
    Ok(())
}

fn cmd_train(config: &Config, data: Option<PathBuf>, resume: Option<PathBuf>) -> Outcome {
    let out = Path::new(&config.output_dir);
    let data = data.unwrap_or_else(|| out.to_path_buf());
    let ds = load_dataset(&data, config)?;
    let tc = config.training_config();
    if tc.learning_rate == 0.0 {
        eprintln!("warning: learning rate is 0, the weights will keep their initial values");
    }
    let mut trainer = Trainer::new(&ds, tc.clone(), config.vehicle.clone()).map_err(|e| match e {
        TrainError::DataInsufficient { windows, batch } => Failure::Data(format!(
            "only {windows} training windows for a batch of {batch}; generate more trajectories \
             (hebm datagen --n-traj N) or lower train.batch_size"
        )),
        TrainError::InvalidConfig(m) => Failure::Usage(m),
        other => Failure::Data(other.to_string()),
    })?;
    if let Some(path) = resume {
        trainer.resume(&read(&path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        println!("resumed at epoch {}", trainer.epoch());
    }
    write(&out.join("train.config.txt"), config.to_text())?;
    let report = trainer.report();
    println!("train windows {}  validation windows {}", report.train_windows, report.val_windows);
    println!("zero-slip validation loss {:.6}", report.zero_slip_val_loss);
    while trainer.epoch() < tc.epochs {
        let r = trainer.run_epoch();
        println!("epoch {:>3}  train {:.6}  val {:.6}", r.epoch, r.train_loss, r.val_loss);
        write(&out.join("checkpoint.bin"), trainer.checkpoint())?;
    }
    let (weights, report) = trainer.finish();
    write(&out.join("weights.bin"), weights.to_bytes())?;
    write(&out.join("training.csv"), report.to_csv())?;
    println!(
        "best epoch {} with validation loss {:.6} ({:.3} of zero-slip)",
        report.best_epoch,
        report.best_val_loss(),
        report.best_val_loss() / report.zero_slip_val_loss
    );
    Ok(())
}

fn run_one(config: &Config, scenario: &Scenario, kind: PlannerKind, weights: Option<&NetworkWeights>, dir: &Path) -> Result<ReportRow, Failure> {
    let options = config.run_options();
    let output = run_closed_loop(scenario, kind, weights, &config.vehicle, &options).map_err(|e| match e {
        BenchError::MissingWeights => Failure::Usage(e.to_string()),
        BenchError::Sim(_) => Failure::Divergence(e.to_string()),
        BenchError::Planner(_) => Failure::Data(e.to_string()),
    })?;
    let record = RunRecord::new(scenario, kind, &output, &options, &config.vehicle);
    write(&dir.join("log.csv"), log_to_csv(&output.log))?;
    write(&dir.join("plan.csv"), plan_log_to_csv(&output.plan_log))?;
    write(&dir.join("path.csv"), scenario.path.to_csv())?;
    write(&dir.join("run.txt"), record.to_text())?;
    write(&dir.join("config.txt"), config.to_text())?;
    let row = record.report_row();
    println!(
        "{} {} mae {:.4} m  max {:.4} m  mean V {:.3} m/s  max a_y {:.3} g  [{}]",
        row.scenario, row.method, row.mae, row.max_err, row.mean_v, row.max_ay_g, row.status
    );
    Ok(row)
}

fn run_dir(config: &Config, scenario: &Scenario, kind: PlannerKind) -> PathBuf {
    Path::new(&config.output_dir).join("runs").join(format!("{}_{}", scenario.name, kind.as_str().to_lowercase()))
}

fn cmd_run(config: &Config, scenario: &str, speed: f64, kind: PlannerKind, weights: Option<PathBuf>) -> Outcome {
    let kind_s = parse_scenario_kind(scenario).map_err(Failure::Usage)?;
    let spec = ScenarioSpec { kind: kind_s, v_desired: speed };
    let sc = spec.build(config.oval_distance).map_err(|e| Failure::Usage(e.to_string()))?;
    let w = match kind {
        PlannerKind::Hebm => {
            Some(load_weights(&weights.unwrap_or_else(|| Path::new(&config.output_dir).join("weights.bin")))?)
        }
        PlannerKind::Kbm => None,
    };
    let dir = run_dir(config, &sc, kind);
    run_one(config, &sc, kind, w.as_ref(), &dir)?;
    println!("written to {}", dir.display());
    Ok(())
}

fn cmd_eval(config: &Config, weights: Option<PathBuf>) -> Outcome {
    let w = load_weights(&weights.unwrap_or_else(|| Path::new(&config.output_dir).join("weights.bin")))?;
    let mut dirs = Vec::new();
    for spec in &config.scenarios {
        let sc = spec.build(config.oval_distance).map_err(|e| Failure::Usage(e.to_string()))?;
        for kind in [PlannerKind::Hebm, PlannerKind::Kbm] {
            let dir = run_dir(config, &sc, kind);
            run_one(config, &sc, kind, Some(&w), &dir)?;
            dirs.push(dir);
        }
    }
    cmd_report(config, &dirs)
}

fn cmd_report(config: &Config, runs: &[PathBuf]) -> Outcome {
    let mut rows = Vec::new();
    for dir in runs {
        let record = RunRecord::from_text(&read_text(&dir.join("run.txt"))?)
            .map_err(|e| Failure::Data(format!("{}: {e}", dir.join("run.txt").display())))?;
        let log = log_from_csv(&read_text(&dir.join("log.csv"))?).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
        let path = PathRef::from_csv(&read_text(&dir.join("path.csv"))?, record.v_desired)
            .map_err(|e| Failure::Data(format!("{}: {e}", dir.join("path.csv").display())))?;
        let metrics = metrics_from_log(&log, &path, record.warmup, record.g);
        if !record.matches(&metrics) {
            return Err(Failure::Data(format!("{}: metrics recomputed from log.csv differ from run.txt", dir.display())));
        }
        let label = format!("{} {}", record.method, record.scenario);
        write(&dir.join("trajectory.svg"), svg_trajectory(&label, &path, &[(&record.method, &log)]))?;
        write(&dir.join("curvature.svg"), svg_curvature(&format!("{} curvature", record.scenario), &path))?;
        let errors: Vec<(f64, f64)> =
            log.iter().filter(|r| r.t > record.warmup).map(|r| r.t).zip(metrics.errors.iter().copied()).collect();
        write(&dir.join("lateral_error.svg"), svg_series(&label, "t (s)", "lateral error (m)", &[(&record.method, errors)]))?;
        rows.push(record.report_row());
    }
    let out = Path::new(&config.output_dir);
    let csv = compare_report(&rows);
    write(&out.join("report.csv"), &csv)?;
    let md = compare_report_markdown(&rows);
    write(&out.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    let mut config = load_config(&cli.global)?;
    match &cli.command {
        Command::Datagen { n_traj: Some(n) } => config.n_traj = *n,
        Command::Train { epochs, lr, .. } => {
            if let Some(e) = epochs {
                config.training.epochs = *e;
            }
            if let Some(lr) = lr {
                config.training.learning_rate = *lr;
            }
        }
        _ => {}
    }
    finish_config(&config)?;
    if cli.global.dump_config {
        print!("{}", config.to_text());
        return Ok(());
    }
    match cli.command {
        Command::Datagen { .. } => cmd_datagen(&config),
        Command::Train { data, resume, .. } => cmd_train(&config, data, resume),
        Command::Run { scenario, speed, model, weights } => cmd_run(&config, &scenario, speed, model.into(), weights),
        Command::Eval { weights } => cmd_eval(&config, weights),
        Command::Report { runs } => cmd_report(&config, &runs),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
