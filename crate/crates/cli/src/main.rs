use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use contractive_core::bounds::{term_two, SamplerMode, SamplerSpec};
use contractive_core::data::{synthesize, Dataset, MotionKind, SynthSpec};
use contractive_core::eval::{certify, evaluate, rollouts_to_dataset};
use contractive_core::train::{Checkpoint, TrainConfig, Trainer};
use contractive_core::verify::run_all;
use contractive_core::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "contractive",
    version,
    about = "Train, roll out, evaluate and certify contractive imitation policies"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic demonstration dataset as CSV.
    GenData(GenData),
    /// Train a policy on a dataset CSV.
    Train(Train),
    /// Roll a trained policy out from given initial states.
    Rollout(Rollout),
    /// In-sample and out-of-sample losses of a trained policy.
    Eval(Eval),
    /// Out-of-sample loss certificate, or the term-two calculator.
    Bound(Bound),
    /// Run the built-in self-checks.
    Verify(Verify),
}

#[derive(Args)]
struct GenData {
    /// sine, s_curve or line.
    #[arg(long)]
    kind: MotionKind,
    /// Number of demonstrations.
    #[arg(long = "M", default_value_t = 3)]
    m: usize,
    /// Samples per demonstration.
    #[arg(long = "H", default_value_t = 100)]
    h: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Std of the mid-trajectory Gaussian perturbation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path, also rewritten every `checkpoint_every` epochs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Extra config entry, e.g. `--set latent_dim=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Continue from a checkpoint instead of initializing.
    #[arg(long, conflicts_with_all = ["config", "seed", "set", "lr"])]
    resume: Option<PathBuf>,
    /// JSON-lines training log [default: <out>.log.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct Rollout {
    #[arg(long)]
    ckpt: PathBuf,
    /// Comma-separated initial state in data units. Repeatable.
    #[arg(
        long,
        value_name = "CSV-LIST",
        required_unless_present = "from_data",
        allow_hyphen_values = true
    )]
    y0: Vec<String>,
    /// Use the initial states of this dataset.
    #[arg(long, value_name = "CSV", conflicts_with = "y0")]
    from_data: Option<PathBuf>,
    /// Output CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long, default_value_t = 0.1)]
    oos_radius_scale: f64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// hypersphere or region-uniform.
    #[arg(long, default_value_t = SamplerMode::Hypersphere)]
    sampler: SamplerMode,
}

impl SamplerArgs {
    fn spec(&self) -> SamplerSpec {
        SamplerSpec {
            mode: self.sampler,
            radius_scale: self.oos_radius_scale,
            seed: self.seed,
            count: self.samples,
        }
    }
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Write `<PREFIX>.in_sample.csv` and `<PREFIX>.oos.csv` rollouts.
    #[arg(long, value_name = "PREFIX")]
    trajectories: Option<PathBuf>,
}

#[derive(Args)]
struct Bound {
    #[arg(long, required_unless_present = "alpha")]
    ckpt: Option<PathBuf>,
    #[arg(long, required_unless_present = "alpha")]
    data: Option<PathBuf>,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Print every sample's observed loss and bound.
    #[arg(long)]
    per_sample: bool,
    /// Calculator mode: term two from α, R, γ, H and M.
    #[arg(long, requires_all = ["r", "gamma", "h", "m"], conflicts_with_all = ["ckpt", "data"])]
    alpha: Option<f64>,
    #[arg(long = "R", requires = "alpha")]
    r: Option<f64>,
    #[arg(long, requires = "alpha")]
    gamma: Option<f64>,
    #[arg(long = "H", requires = "alpha")]
    h: Option<usize>,
    #[arg(long = "M", requires = "alpha")]
    m: Option<usize>,
}

#[derive(Args)]
struct Verify {
    /// Perturb the assembled state matrix so the LMI suite must fail.
    #[arg(long)]
    break_lmi: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Bad command-line input detected after parsing.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// 1 for invalid input, 2 for anything that failed while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Invalid(_)
                | CoreError::Parse { .. }
                | CoreError::ShapeMismatch { .. }
                | CoreError::InvalidShape { .. }
                | CoreError::OutsideRegion { .. } => 1,
                _ => 2,
            };
        }
    }
    2
}

fn load_data(path: &Path) -> Result<Dataset<f64>> {
    Ok(Dataset::load_csv(path)?)
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::load(path)?)
}

fn gen_data(a: GenData) -> Result<()> {
    let ds = synthesize(&SynthSpec {
        kind: a.kind,
        demos: a.m,
        horizon: a.h,
        dim: a.dim,
        noise_std: a.noise,
        seed: a.seed,
    })?;
    ds.save_csv(&a.out)?;
    println!(
        "wrote {} demos of {} samples to {}",
        a.m,
        a.h,
        a.out.display()
    );
    Ok(())
}

fn train_config(a: &Train) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            TrainConfig::from_kv(&text).with_context(|| format!("in config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: Train) -> Result<()> {
    let ds = load_data(&a.data)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let mut ckpt = load_ckpt(p)?;
            if let Some(e) = a.epochs {
                ckpt.config.epochs = e;
            }
            Trainer::resume(ckpt, &ds)?
        }
        None => Trainer::new(train_config(&a)?, &ds)?,
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let file = if a.resume.is_some() {
        File::options().append(true).create(true).open(&log_path)
    } else {
        File::create(&log_path)
    };
    let mut log =
        BufWriter::new(file.with_context(|| format!("opening log {}", log_path.display()))?);
    let started = Instant::now();
    let ckpt_every = trainer.cfg.checkpoint_every;
    let out = a.out.clone();
    trainer.run(|rec, t| {
        writeln!(log, "{}", rec.to_json()).map_err(|e| CoreError::Io {
            path: log_path.clone(),
            err: e,
        })?;
        log::info!(
            "epoch {:>5}  loss {:.6}  gamma {:.4}  eig_min {:.3e}",
            rec.epoch,
            rec.loss,
            rec.gamma,
            rec.eig_min
        );
        if ckpt_every > 0 && rec.epoch % ckpt_every == 0 {
            t.checkpoint().save(&out)?;
        }
        Ok(())
    })?;
    log.flush()
        .with_context(|| format!("writing log {}", log_path.display()))?;
    let ckpt = trainer.checkpoint();
    ckpt.save(&a.out)?;
    println!(
        "trained {} epochs in {:.1}s: loss {:.6} (best {:.6}), gamma {:.4}, eig_min {:.3e}",
        ckpt.summary.epochs,
        started.elapsed().as_secs_f64(),
        ckpt.summary.final_loss,
        ckpt.summary.best_loss,
        ckpt.summary.gamma,
        ckpt.summary.eig_min
    );
    println!(
        "checkpoint {}\nlog        {}",
        a.out.display(),
        log_path.display()
    );
    Ok(())
}

fn parse_state(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("bad number `{}` in --y0 `{s}`", v.trim())))
        })
        .collect()
}

fn rollout(a: Rollout) -> Result<()> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let raw: Vec<Vec<f64>> = match &a.from_data {
        Some(p) => load_data(p)?.inits(),
        None => a.y0.iter().map(|s| parse_state(s)).collect::<Result<_>>()?,
    };
    for y in &raw {
        if y.len() != ckpt.state_dim {
            return Err(usage(format!(
                "initial state has {} coordinates, model expects {}",
                y.len(),
                ckpt.state_dim
            )));
        }
    }
    let inits: Vec<Vec<f64>> = raw.iter().map(|y| ckpt.norm.apply(y)).collect();
    let rollouts = ckpt.policy.rollout_batch(&inits, &ckpt.config.solver())?;
    let ds = rollouts_to_dataset(&ckpt, &rollouts, "rollout")?;
    match &a.out {
        Some(p) => {
            ds.save_csv(p)?;
            println!("wrote {} rollouts to {}", ds.len(), p.display());
        }
        None => print!("{}", ds.to_csv_string()),
    }
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let ds = load_data(&a.data)?;
    let report = evaluate(&ckpt, &ds, &a.sampler.spec())?;
    print!("{}", report.to_table());
    if let Some(prefix) = &a.trajectories {
        for (tag, set) in [("in_sample", &report.in_sample), ("oos", &report.oos)] {
            let mut p = prefix.clone().into_os_string();
            p.push(format!(".{tag}.csv"));
            let p = PathBuf::from(p);
            rollouts_to_dataset(&ckpt, &set.rollouts, tag)?.save_csv(&p)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn bound(a: Bound) -> Result<()> {
    if let Some(alpha) = a.alpha {
        let (r, gamma, h, m) = (a.r.unwrap(), a.gamma.unwrap(), a.h.unwrap(), a.m.unwrap());
        let t2 = term_two(alpha, r, gamma, h, m)?;
        println!("term_two {t2:.6}");
        return Ok(());
    }
    let (Some(ckpt), Some(data)) = (&a.ckpt, &a.data) else {
        return Err(usage(
            "bound needs --ckpt and --data, or the calculator flags",
        ));
    };
    let ckpt = load_ckpt(ckpt)?;
    let ds = load_data(data)?;
    let report = certify(&ckpt, &ds, &a.sampler.spec())?;
    print!("{}", report.to_text(a.per_sample));
    Ok(())
}

fn verify(a: Verify) -> Result<()> {
    let start = Instant::now();
    let outcomes = run_all(a.seed, a.break_lmi);
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "{}/{} suites passed in {:.1}s",
        outcomes.len() - failed,
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        anyhow::bail!("{failed} verification suite(s) failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let res = match cli.cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Rollout(a) => rollout(a),
        Command::Eval(a) => eval(a),
        Command::Bound(a) => bound(a),
        Command::Verify(a) => verify(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
