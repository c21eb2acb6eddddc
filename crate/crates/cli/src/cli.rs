use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use helideck::calibration::{camera_file_json, recalibrate, MarkingObservation, RecalibrationGate};
use helideck::sim::{gen_dataset, read_dataset, NoiseModel, NoisePreset};
use helideck::tracker::{error_cdf, percentile, EvalSummary};
use helideck::yaw::train_with_progress;

use crate::config::{AppConfig, AppContext};
use crate::demo::{self, DemoRun};
use crate::service;

#[derive(Debug, Parser)]
#[command(name = "helideck", version, about = "Helicopter landing-area pose tracking and decision aid")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labeled train/test datasets.
    GenData(GenDataArgs),
    /// Train the yaw network and write a checkpoint.
    TrainYaw(TrainYawArgs),
    /// Print the accuracy/throughput table for a demo run.
    Eval(EvalArgs),
    /// Re-estimate camera extrinsics from deck-marking observations.
    Calibrate(CalibrateArgs),
    /// Run the approach headless and write per-frame results.
    Demo(DemoArgs),
    /// Stream the live scenario over websocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    None,
    Day,
    Dusk,
    Night,
}

impl NoiseArg {
    pub fn model(self) -> NoiseModel {
        match self {
            NoiseArg::None => NoiseModel::NONE,
            NoiseArg::Day => NoisePreset::Day.model(),
            NoiseArg::Dusk => NoisePreset::Dusk.model(),
            NoiseArg::Night => NoisePreset::Night.model(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Detector noise preset.
    #[arg(long, value_enum)]
    pub noise: Option<NoiseArg>,
    /// Sea state, 0 to 6.
    #[arg(long)]
    pub sea_state: Option<f64>,
    /// Camera recalibration cadence in frames; 0 disables.
    #[arg(long)]
    pub recalibrate_every: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 4000)]
    pub train: usize,
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    /// Output directory for train.jsonl and test.jsonl.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub noise: Option<NoiseArg>,
}

#[derive(Debug, Args)]
pub struct TrainYawArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "data/train.jsonl")]
    pub train: PathBuf,
    #[arg(long, default_value = "data/test.jsonl")]
    pub test: PathBuf,
    /// Checkpoint output path.
    #[arg(long, default_value = "yaw_checkpoint.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Also write the per-epoch training report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Evaluate an existing demo results file instead of running one.
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Also write the summary as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON array of {id, u, v} marking observations.
    #[arg(long)]
    pub observations: PathBuf,
    /// Camera file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_rms_px: Option<f64>,
    #[arg(long)]
    pub max_rotation_deg: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value = "demo.jsonl")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: std::net::IpAddr,
}

/// Parses `argv` (program name first) and runs it. Returns the process exit
/// code: 0 on success, 2 for usage errors, 1 for failures.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::GenData(a) => gen_data(&a, &mut out),
        Command::TrainYaw(a) => train_yaw(&a, &mut out),
        Command::Eval(a) => eval(&a, &mut out),
        Command::Calibrate(a) => calibrate(&a, &mut out),
        Command::Demo(a) => run_demo(&a, &mut out),
        Command::Serve(a) => {
            drop(out);
            serve(&a)
        }
    }
}

fn load_config(common: &Common) -> Result<AppConfig> {
    let mut config = AppConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.scenario.seed = seed;
        config.yaw.seed = seed;
    }
    Ok(config)
}

fn apply_scenario(config: &mut AppConfig, s: &ScenarioArgs) {
    if let Some(n) = s.noise {
        config.scenario.noise = n.model();
    }
    if let Some(v) = s.sea_state {
        config.scenario.sea_state = v;
    }
    if let Some(n) = s.recalibrate_every {
        config.tracker.recalibrate_every = n;
    }
}

pub fn gen_data(a: &GenDataArgs, out: &mut impl Write) -> Result<()> {
    let mut config = load_config(&a.common)?;
    if let Some(n) = a.noise {
        config.scenario.noise = n.model();
    }
    config.scenario.validate().context("invalid scenario config")?;
    let ctx = AppContext::load(&config)?;
    let paths = gen_dataset(&ctx.scenario, &ctx.scene, a.train, a.test, &a.out).context("dataset generation failed")?;
    writeln!(out, "wrote {} train records to {}", a.train, paths.train.display())?;
    writeln!(out, "wrote {} test records to {}", a.test, paths.test.display())?;
    Ok(())
}

pub fn train_yaw(a: &TrainYawArgs, out: &mut impl Write) -> Result<()> {
    let mut config = load_config(&a.common)?;
    if let Some(e) = a.epochs {
        config.yaw.epochs = e;
    }
    let ctx = AppContext::load(&config)?;
    let camera = &ctx.scene.camera;
    let train =
        read_dataset(&a.train).with_context(|| format!("cannot load {}", a.train.display()))?.yaw_samples(camera);
    let test = read_dataset(&a.test).with_context(|| format!("cannot load {}", a.test.display()))?.yaw_samples(camera);
    writeln!(out, "training on {} samples, testing on {}", train.len(), test.len())?;
    let start = Instant::now();
    let (checkpoint, report) = train_with_progress(&config.yaw, &train, &test, |log| {
        if (log.epoch + 1) % 10 == 0 {
            eprintln!("epoch {:>4}  loss {:.5}", log.epoch + 1, log.loss.total);
        }
    })
    .context("training failed")?;
    let elapsed = start.elapsed();
    write_file(&a.out, &checkpoint.to_json())?;
    if let Some(path) = &a.report {
        write_file(path, &serde_json::to_string_pretty(&report)?)?;
    }
    writeln!(out, "best epoch        {} of {}", report.best_epoch + 1, report.epochs.len())?;
    writeln!(out, "best train loss   {:.6}", report.best_loss)?;
    writeln!(out, "tau_rec           {:.6}", report.tau_rec)?;
    writeln!(out, "test yaw MAE      {:.4} rad", report.test_yaw_mae)?;
    writeln!(out, "test in-dist      {:.1}%", 100.0 * report.test_in_distribution)?;
    writeln!(out, "training time     {:.1} s", elapsed.as_secs_f64())?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

pub fn eval(a: &EvalArgs, out: &mut impl Write) -> Result<()> {
    let mut config = load_config(&a.common)?;
    apply_scenario(&mut config, &a.scenario);
    let ctx = AppContext::load(&config)?;
    let dla = ctx.tracker.dla;
    let envelope = (dla.tol_x, dla.tol_y, dla.tol_yaw);
    let (summary, timing) = match &a.results {
        Some(path) => {
            let (_, frames) = demo::read_demo(path)?;
            (demo::summarize(&frames, envelope), None)
        }
        None => {
            let run = demo::run_demo(&ctx, a.duration)?;
            (run.summary(envelope), Some(Timing::of(&run)))
        }
    };
    write!(out, "{}", format_table(&summary, envelope, timing.as_ref()))?;
    if let Some(path) = &a.json {
        write_file(path, &serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(())
}

pub fn calibrate(a: &CalibrateArgs, out: &mut impl Write) -> Result<()> {
    let config = load_config(&a.common)?;
    let ctx = AppContext::load(&config)?;
    let text = std::fs::read_to_string(&a.observations)
        .with_context(|| format!("cannot read {}", a.observations.display()))?;
    let observations: Vec<MarkingObservation> =
        serde_json::from_str(&text).with_context(|| format!("invalid observations in {}", a.observations.display()))?;
    let markings = ctx.scene.markings.associate(&observations)?;
    let mut gate: RecalibrationGate = ctx.tracker.gate;
    if let Some(v) = a.max_rms_px {
        gate.max_rms_px = v;
    }
    if let Some(v) = a.max_rotation_deg {
        gate.max_rotation_change_deg = v;
    }
    let camera = &ctx.scene.camera;
    let outcome =
        recalibrate(&markings, &camera.intrinsics, &camera.extrinsics, &gate).context("calibration failed")?;
    writeln!(out, "markings used     {}", markings.len())?;
    writeln!(out, "reprojection rms  {:.4} px", outcome.reprojection_rms)?;
    writeln!(out, "rotation change   {:.4} deg", outcome.rotation_change_deg)?;
    writeln!(out, "center change     {:.4} m", outcome.translation_change)?;
    if let Some(r) = &outcome.rejection {
        bail!("calibration rejected: {r}");
    }
    let mut updated = *camera;
    updated.extrinsics = outcome.extrinsics;
    write_file(&a.out, &camera_file_json(&updated))?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

pub fn run_demo(a: &DemoArgs, out: &mut impl Write) -> Result<()> {
    let mut config = load_config(&a.common)?;
    apply_scenario(&mut config, &a.scenario);
    let ctx = AppContext::load(&config)?;
    let run = demo::run_demo(&ctx, a.duration)?;
    demo::write_demo(&a.out, &run)?;
    let solved = run.frames.iter().filter(|f| f.pose.is_some()).count();
    writeln!(out, "frames            {}", run.frames.len())?;
    writeln!(out, "solved            {solved}")?;
    writeln!(out, "decision changes  {}", run.transitions())?;
    writeln!(out, "final decision    {:?}", run.frames.last().map(|f| f.decision))?;
    writeln!(out, "throughput        {:.0} frames/s", run.fps())?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let mut config = load_config(&a.common)?;
    apply_scenario(&mut config, &a.scenario);
    let ctx = AppContext::load(&config)?;
    let runtime = tokio::runtime::Runtime::new().context("cannot start runtime")?;
    runtime.block_on(async move {
        let handle = service::start(ctx, SocketAddr::new(a.bind, a.port)).await?;
        println!("serving on http://{}  (ws /stream, POST /command, GET /health)", handle.addr);
        tokio::signal::ctrl_c().await.context("signal handler failed")?;
        handle.shutdown().await
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Debug, Clone, Copy)]
pub struct Timing {
    pub fps: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl Timing {
    pub fn of(run: &DemoRun) -> Self {
        let n = run.latencies_ms.len().max(1) as f64;
        Self {
            fps: run.fps(),
            mean_ms: run.latencies_ms.iter().sum::<f64>() / n,
            p95_ms: percentile(&run.latencies_ms, 0.95),
        }
    }
}

const XY_CDF: [f64; 6] = [0.01, 0.02, 0.05, 0.1, 0.1524, 0.3];
const YAW_CDF: [f64; 6] = [0.005, 0.01, 0.05, 0.1, 0.25, 0.5];

/// The acceptance table printed by `eval`.
pub fn format_table(s: &EvalSummary, envelope: (f64, f64, f64), timing: Option<&Timing>) -> String {
    use std::fmt::Write as _;
    let mut t = String::new();
    let _ = writeln!(t, "{:<18} {:>10} {:>10} {:>10} {:>10}", "error", "mean", "p50", "p95", "max");
    for (name, a) in [("x [m]", &s.x), ("y [m]", &s.y), ("yaw [rad]", &s.yaw)] {
        let _ = writeln!(t, "{:<18} {:>10.6} {:>10.6} {:>10.6} {:>10.6}", name, a.mean, a.p50, a.p95, a.max);
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "{:<18} {}/{}", "frames solved", s.solved, s.frames);
    let _ = writeln!(
        t,
        "{:<18} {:.1}%  (x,y < {} m, yaw < {} rad)",
        "within envelope",
        100.0 * s.within_envelope,
        envelope.0.max(envelope.1),
        envelope.2
    );
    match s.net_yaw_mae {
        Some(m) => _ = writeln!(t, "{:<18} {m:.4} rad", "net yaw MAE"),
        None => _ = writeln!(t, "{:<18} n/a", "net yaw MAE"),
    }
    match timing {
        Some(tm) => {
            let _ = writeln!(t, "{:<18} {:.0} frames/s", "throughput", tm.fps);
            let _ = writeln!(t, "{:<18} mean {:.3} ms, p95 {:.3} ms", "latency", tm.mean_ms, tm.p95_ms);
        }
        None => _ = writeln!(t, "{:<18} n/a (results file)", "throughput"),
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "error CDF (fraction of solved frames at or below)");
    let xs: Vec<f64> = s.errors.iter().filter_map(|e| e.dx).collect();
    let ys: Vec<f64> = s.errors.iter().filter_map(|e| e.dy).collect();
    let yaws: Vec<f64> = s.errors.iter().filter_map(|e| e.dyaw).collect();
    let _ = write!(t, "{:<18}", "  x,y [m]");
    for &th in &XY_CDF {
        let _ = write!(t, " {th:>7}");
    }
    let _ = writeln!(t);
    for (name, v) in [("  x", &xs), ("  y", &ys)] {
        let _ = write!(t, "{name:<18}");
        for (_, f) in error_cdf(v, &XY_CDF) {
            let _ = write!(t, " {f:>7.3}");
        }
        let _ = writeln!(t);
    }
    let _ = write!(t, "{:<18}", "  yaw [rad]");
    for &th in &YAW_CDF {
        let _ = write!(t, " {th:>7}");
    }
    let _ = writeln!(t);
    let _ = write!(t, "{:<18}", "  yaw");
    for (_, f) in error_cdf(&yaws, &YAW_CDF) {
        let _ = write!(t, " {f:>7.3}");
    }
    let _ = writeln!(t);
    t
}
