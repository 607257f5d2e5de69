use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lowrank_bandit::harness::{
    read_csv, read_sweep_csv, run_experiment, run_omega_sweep, series_from_sweep,
    series_from_traces, write_chart, write_outputs, ChartLabels, ExperimentConfig,
};
use lowrank_bandit::Error;

#[derive(Parser)]
#[command(
    name = "bandit-sim",
    version,
    about = "Simulate low-rank linear and generalized linear bandits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run independent repetitions of one configuration.
    Run(ExperimentArgs),
    /// Repeat an experiment over several omega_r values with t1 = floor(100 / omega_r).
    SweepOmega {
        /// Comma-separated omega_r values.
        #[arg(long, value_delimiter = ',', required = true)]
        omegas: Vec<f64>,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Plot mean regret with ±1 sd bands from one or more output directories.
    Chart {
        /// Directory holding traces.csv or sweep.csv; repeat to overlay.
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
    },
}

/// Every flag mirrors a config-file key and overrides it.
#[derive(Args)]
struct ExperimentArgs {
    /// key = value file read before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    d1: Option<String>,
    #[arg(long)]
    d2: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    #[arg(long = "omega-r")]
    omega_r: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    /// Integer, `auto` or `theorem4`.
    #[arg(long)]
    t1: Option<String>,
    #[arg(long)]
    arms: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// `identity` or `logistic`.
    #[arg(long)]
    link: Option<String>,
    /// Stage-1 step size, or `lipschitz`.
    #[arg(long)]
    step: Option<String>,
    /// LowLOC net resolution (default 1/horizon).
    #[arg(long)]
    eps: Option<String>,
    /// LowLOC radius schedule: lemma3, lemma7 or empirical.
    #[arg(long)]
    bt: Option<String>,
    #[arg(long = "net-cap")]
    net_cap: Option<String>,
    #[arg(long = "radius-scale")]
    radius_scale: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl ExperimentArgs {
    fn resolve(&self) -> lowrank_bandit::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("algo", &self.algo),
            ("d1", &self.d1),
            ("d2", &self.d2),
            ("rank", &self.rank),
            ("omega_r", &self.omega_r),
            ("sigma", &self.sigma),
            ("delta", &self.delta),
            ("horizon", &self.horizon),
            ("t1", &self.t1),
            ("arms", &self.arms),
            ("runs", &self.runs),
            ("seed", &self.seed),
            ("link", &self.link),
            ("step", &self.step),
            ("eps", &self.eps),
            ("bt", &self.bt),
            ("net_cap", &self.net_cap),
            ("radius_scale", &self.radius_scale),
            ("out", &self.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Infeasible(_)) => 3,
        _ => 1,
    }
}

fn run(exp: &ExperimentArgs) -> anyhow::Result<()> {
    let cfg = exp.resolve()?;
    let out = run_experiment(&cfg)?;
    let s = &out.summary;
    println!(
        "{}: {} runs, T = {}, cumulative regret {:.4} ± {:.4} ({:.1}s)",
        s.algo, s.runs, s.horizon, s.final_mean, s.final_sd, s.wall_seconds
    );
    if let Some(e) = s.subspace_error_mean {
        println!("mean subspace error {e:.4}");
    }
    if let Some(dir) = &cfg.out {
        write_outputs(dir, &out)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn sweep(omegas: &[f64], exp: &ExperimentArgs) -> anyhow::Result<()> {
    let mut cfg = exp.resolve()?;
    if exp.t1.is_none() && !has_key(exp.config.as_deref(), "t1")? {
        cfg.t1 = lowrank_bandit::harness::T1Spec::Auto;
    }
    let rows = run_omega_sweep(&cfg, omegas)?;
    println!("omega_r,t1,mean,sd");
    for r in &rows {
        println!("{},{},{:.4},{:.4}", r.omega_r, r.t1, r.mean, r.sd);
    }
    if let Some(dir) = &cfg.out {
        println!("wrote {}", dir.join("sweep.csv").display());
    }
    Ok(())
}

fn has_key(file: Option<&Path>, key: &str) -> anyhow::Result<bool> {
    let Some(path) = file else { return Ok(false) };
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().any(|l| {
        let l = l.split('#').next().unwrap_or("");
        l.split_once('=')
            .is_some_and(|(k, _)| k.trim().replace('-', "_") == key)
    }))
}

fn chart(inputs: &[PathBuf], out: &Path, title: &str) -> anyhow::Result<()> {
    let mut series = Vec::new();
    let mut sweeps = 0;
    for dir in inputs {
        let traces = dir.join("traces.csv");
        let sweep = dir.join("sweep.csv");
        if traces.exists() {
            series.extend(series_from_traces(&read_csv(&traces)?));
        } else if sweep.exists() {
            let label = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            series.push(series_from_sweep(&label, &read_sweep_csv(&sweep)?));
            sweeps += 1;
        } else {
            return Err(Error::Config(format!(
                "{} has neither traces.csv nor sweep.csv",
                dir.display()
            ))
            .into());
        }
    }
    if sweeps > 0 && sweeps < inputs.len() {
        return Err(Error::Config("cannot overlay sweeps and regret curves".into()).into());
    }
    let labels = if sweeps > 0 {
        ChartLabels::omega_sweep(title)
    } else {
        ChartLabels::regret_curve(title)
    };
    write_chart(out, &series, &labels)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(exp) => run(exp),
        Command::SweepOmega { omegas, exp } => sweep(omegas, exp),
        Command::Chart { inputs, out, title } => chart(inputs, out, title),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
