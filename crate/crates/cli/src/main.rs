//! `filmctl`: run, synthesise, inspect and sweep film controllers.
//!
//! Exit codes: 0 stabilised (or success), 2 not stabilised or blown up,
//! 3 controller synthesis failed, 1 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use filmctl::io::{self, RunSummary};
use filmctl::sweep::run_sweep;
use filmctl::{matreq, run, synthesize, Config, Error, RunConfig, Verdict};
use num_complex::Complex64;

#[derive(Parser)]
#[command(name = "filmctl", version, about = "Feedback control of falling liquid films")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Burn-in, switch on the controller at t = 0, and classify the run.
    Simulate(Common),
    /// Synthesise a controller and write it as JSON.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Also write A, B, C and the gains as `# rows cols` text matrices.
        #[arg(long)]
        dump_matrices: bool,
    },
    /// Open-loop and closed-loop eigenvalues.
    Spectrum(Common),
    /// Success/failure tables over (Re, M, P).
    Sweep(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Sectioned `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// full-state, sof, luenberger (or none for an uncontrolled run).
    #[arg(long)]
    strategy: Option<String>,
    /// Reynolds number; a comma-separated list for `sweep`.
    #[arg(long)]
    re: Option<String>,
    /// Number of actuators; a list for `sweep`.
    #[arg(long)]
    m: Option<String>,
    /// Number of observers; a list for `sweep`.
    #[arg(long)]
    p: Option<String>,
    /// Run seed, or the master seed of a sweep.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "FILMCTL_OUT_DIR", default_value = "filmctl-out")]
    out_dir: PathBuf,
    /// Sweep worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated times at which profiles are written.
    #[arg(long, allow_hyphen_values = true)]
    snapshot_times: Option<String>,
    /// Any other setting, e.g. `--set run.burn_in=50`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

type Outcome = std::result::Result<u8, Failure>;

impl Common {
    fn load(&self, sweep: bool) -> Result<Config, Error> {
        let mut config = match &self.config {
            Some(path) => Config::load(path).map_err(|e| match e {
                Error::Io(io) => Error::Config {
                    path: path.display().to_string(),
                    line: 0,
                    message: io.to_string(),
                },
                other => other,
            })?,
            None => Config::default(),
        };
        let section = if sweep { "sweep" } else { "control" };
        if let Some(v) = &self.strategy {
            config.set(&format!("{section}.strategy"), v)?;
        }
        if let Some(v) = &self.re {
            config.set(if sweep { "sweep.reynolds" } else { "physics.reynolds" }, v)?;
        }
        if let Some(v) = &self.m {
            config.set(&format!("{section}.actuators"), v)?;
        }
        if let Some(v) = &self.p {
            config.set(&format!("{section}.observers"), v)?;
        }
        if let Some(v) = self.seed {
            config.set(if sweep { "sweep.master_seed" } else { "run.seed" }, &v.to_string())?;
        }
        if let Some(v) = self.workers {
            config.set("sweep.workers", &v.to_string())?;
        }
        if let Some(v) = &self.snapshot_times {
            config.set("run.snapshot_times", v)?;
        }
        for item in &self.set {
            let (key, value) = item.split_once('=').ok_or_else(|| Error::Config {
                path: "<command line>".into(),
                line: 0,
                message: format!("--set expects section.key=value, got `{item}`"),
            })?;
            config.set(key.trim(), value)?;
        }
        Ok(config)
    }

    fn out_dir(&self) -> Result<&Path, Error> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(&self.out_dir)
    }
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Stabilised => 0,
        Verdict::NotStabilised | Verdict::BlowUp => 2,
        Verdict::SynthesisFailed => 3,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn simulate(common: &Common) -> Outcome {
    let config = common.load(false)?.run_config()?;
    let dir = common.out_dir()?;
    let out = run(&config)?;
    let rec = &out.record;
    io::write_trajectory(dir.join("trajectory.dat"), rec, &config)?;
    for (i, snap) in out.snapshots.iter().enumerate() {
        io::write_snapshot(dir.join(format!("snapshot-{i:03}.dat")), snap)?;
    }
    if let Some(c) = &out.controller {
        fs::write(dir.join("controller.json"), c.to_json()? + "\n").map_err(Error::from)?;
    }
    let summary = RunSummary::new(rec, &config);
    summary.write(dir.join("summary.json"))?;
    println!(
        "verdict {}  final |h-1| {:.3e}  cost {:.6}  decay rate {}  linear rate {}",
        rec.verdict,
        rec.final_norm,
        rec.final_cost,
        fmt_opt(rec.decay.map(|d| d.rate)),
        fmt_opt(rec.linear_rate)
    );
    if let Some(fit) = rec.estimator_fit() {
        println!("estimator error decay rate {:.6} (r^2 {:.4})", fit.rate, fit.r_squared);
    }
    if let Some(msg) = &rec.message {
        println!("{msg}");
    }
    Ok(verdict_code(rec.verdict))
}

fn controller_strategy(config: &RunConfig) -> Result<filmctl::Strategy, Failure> {
    config.strategy.ok_or_else(|| Failure {
        code: 1,
        message: "this command needs a controller; set control.strategy".into(),
    })
}

fn synthesize_cmd(common: &Common, dump: bool) -> Outcome {
    let config = common.load(false)?.run_config()?;
    let strategy = controller_strategy(&config)?;
    let sys = config.linear_system()?;
    let dir = common.out_dir()?;
    if dump {
        io::write_matrix(dir.join("a.txt"), &sys.a)?;
        io::write_matrix(dir.join("b.txt"), &sys.b)?;
        io::write_matrix(dir.join("c.txt"), &sys.c)?;
    }
    let controller = match synthesize(&sys, strategy, &config.synthesis_options()) {
        Ok(c) => c,
        Err(e) => {
            return Err(Failure {
                code: 3,
                message: format!("synthesis failed: {e}"),
            })
        }
    };
    fs::write(dir.join("controller.json"), controller.to_json()? + "\n").map_err(Error::from)?;
    if dump {
        use filmctl::synth::ControlLaw;
        match &controller.law {
            ControlLaw::FullState { k } | ControlLaw::OutputFeedback { k } => io::write_matrix(dir.join("k.txt"), k)?,
            ControlLaw::Luenberger { k_tilde, l, .. } => {
                io::write_matrix(dir.join("k_tilde.txt"), k_tilde)?;
                io::write_matrix(dir.join("l.txt"), l)?;
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&controller.info).map_err(Error::from)?);
    Ok(0)
}

fn spectrum(common: &Common) -> Outcome {
    let config = common.load(false)?.run_config()?;
    let sys = config.linear_system()?;
    let dir = common.out_dir()?;
    let open = sys.eigenvalues();
    let unstable = sys.unstable_dimension();
    io::write_spectrum(dir.join("spectrum-open.dat"), "open-loop", &open, unstable)?;
    println!("open-loop: {unstable} unstable eigenvalues, abscissa {:.6}", max_re(&open));
    let Some(strategy) = config.strategy else {
        return Ok(0);
    };
    let controller = match synthesize(&sys, strategy, &config.synthesis_options()) {
        Ok(c) => c,
        Err(e) => {
            return Err(Failure {
                code: 3,
                message: format!("synthesis failed, only the open-loop spectrum was written: {e}"),
            })
        }
    };
    let closed = matreq::eigenvalues(&controller.closed_loop_matrix(&sys))?;
    let closed_unstable = closed.iter().filter(|l| l.re > 0.0).count();
    io::write_spectrum(dir.join("spectrum-closed.dat"), strategy.name(), &closed, closed_unstable)?;
    println!(
        "closed-loop ({strategy}): {closed_unstable} unstable eigenvalues, abscissa {:.6}",
        max_re(&closed)
    );
    Ok(0)
}

fn max_re(eig: &[Complex64]) -> f64 {
    eig.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

fn sweep(common: &Common) -> Outcome {
    let spec = common.load(true)?.sweep_spec()?;
    let dir = common.out_dir()?.to_path_buf();
    let result = run_sweep(&spec)?;
    let files = result.write(&dir)?;
    println!(
        "{} points: {} stabilised, {} failed, {} synthesis gaps",
        result.outcomes.len(),
        result.successes().len(),
        result.failures().len(),
        result.gaps().len()
    );
    for path in [&files.success, &files.failure, &files.gaps, &files.summary] {
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Synthesize { common, dump_matrices } => synthesize_cmd(common, *dump_matrices),
        Command::Spectrum(c) => spectrum(c),
        Command::Sweep(c) => sweep(c),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("filmctl: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
