//! Independent runs of one configuration, in parallel, with summaries.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algo, ExperimentConfig, StepSpec};
use super::output::{write_csv, write_sweep_csv};
use crate::covering::{build_net_with, LowRankNet, NetConfig, NetStrategy};
use crate::error::{Error, Result};
use crate::lowloc::{lowloc_feasibility, lowloc_run, LowLocConfig};
use crate::lowoful::{lowestr_run, lowoful_oracle_run, oful_run, LowEstrConfig};
use crate::model::{make_diag_instance, sample_unit_arm_set, BanditInstance, LinkSpec};
use crate::recovery::{RecoveryReport, SolverConfig};
use crate::trace::RegretTrace;

/// Rounds at which summaries report cumulative regret (plus the horizon).
pub const CHECKPOINTS: [usize; 4] = [100, 500, 1000, 3000];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algo: String,
    pub runs: usize,
    pub horizon: usize,
    pub t1: Option<usize>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_mean: f64,
    pub final_sd: f64,
    /// Mean stage-1 subspace error, LowESTR only.
    pub subspace_error_mean: Option<f64>,
    /// Settings that produced the runs, without the output directory.
    pub config: Option<ExperimentConfig>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub traces: Vec<RegretTrace>,
    pub recoveries: Vec<RecoveryReport>,
    pub summary: RunSummary,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn summarize(algo: &str, traces: &[RegretTrace], horizon: usize) -> RunSummary {
    let mut ts: Vec<usize> = CHECKPOINTS
        .iter()
        .copied()
        .filter(|&t| t < horizon)
        .collect();
    ts.push(horizon);
    let checkpoints = ts
        .into_iter()
        .map(|t| {
            let vals: Vec<f64> = traces.iter().filter_map(|tr| tr.cumulative_at(t)).collect();
            let (mean, sd) = mean_sd(&vals);
            Checkpoint { t, mean, sd }
        })
        .collect::<Vec<_>>();
    let last = *checkpoints.last().expect("horizon checkpoint");
    RunSummary {
        algo: algo.to_string(),
        runs: traces.len(),
        horizon,
        t1: None,
        checkpoints,
        final_mean: last.mean,
        final_sd: last.sd,
        subspace_error_mean: None,
        config: None,
        wall_seconds: 0.0,
    }
}

pub fn build_instance(cfg: &ExperimentConfig) -> Result<BanditInstance> {
    Ok(make_diag_instance(cfg.d1, cfg.d2, cfg.rank, cfg.omega_r)?
        .with_sigma(cfg.sigma)?
        .with_link(LinkSpec::from_kind(cfg.link)))
}

/// LowLOC/LowGLOC agent settings derived from the experiment config.
pub fn lowloc_config(cfg: &ExperimentConfig) -> LowLocConfig {
    let mut c = match cfg.algo {
        Algo::Lowgloc => LowLocConfig::glm(
            cfg.horizon,
            cfg.delta,
            cfg.rank,
            LinkSpec::from_kind(cfg.link),
        ),
        _ => LowLocConfig::linear(cfg.horizon, cfg.delta, cfg.rank),
    };
    c.eps = cfg.eps;
    if let Some(bt) = cfg.bt {
        c.schedule = bt;
    }
    c.net = NetConfig {
        cap: cfg.net_cap,
        strategy: NetStrategy::FactorGrid,
    };
    c.radius_scale = cfg.radius_scale;
    c
}

fn lowestr_config(cfg: &ExperimentConfig, seed: u64) -> LowEstrConfig {
    let mut c = LowEstrConfig::new(
        cfg.horizon,
        cfg.resolved_t1(),
        cfg.rank,
        cfg.omega_r,
        cfg.sigma,
        cfg.delta,
        seed,
    );
    match cfg.step {
        StepSpec::Fixed(step) => {
            c.solver = SolverConfig {
                step,
                ..SolverConfig::default()
            }
        }
        StepSpec::Lipschitz => c.lipschitz_step = true,
    }
    c
}

/// Validates, checks LowLOC feasibility and builds the shared net if needed.
fn prepare(cfg: &ExperimentConfig) -> Result<Option<Arc<LowRankNet>>> {
    cfg.validate()?;
    match cfg.algo {
        Algo::Lowloc | Algo::Lowgloc => {
            let lc = lowloc_config(cfg);
            lowloc_feasibility(cfg.d1, cfg.d2, &lc)?;
            let net =
                build_net_with(cfg.d1, cfg.d2, cfg.rank, lc.eps_value(), &lc.net).map_err(|e| {
                    match e {
                        Error::NetCapExceeded { .. } => Error::Infeasible(e.to_string()),
                        e => e,
                    }
                })?;
            Ok(Some(Arc::new(net)))
        }
        _ => Ok(None),
    }
}

fn one_run(
    cfg: &ExperimentConfig,
    net: Option<&Arc<LowRankNet>>,
    run_id: usize,
) -> Result<(RegretTrace, Option<RecoveryReport>)> {
    let seed = cfg.seed.wrapping_add(run_id as u64);
    let instance = build_instance(cfg)?;
    let arms = sample_unit_arm_set(cfg.d1, cfg.d2, cfg.arms, seed)?;
    match cfg.algo {
        Algo::Oful => Ok((
            oful_run(
                &instance,
                &arms,
                cfg.horizon,
                1.0,
                1.0,
                cfg.delta,
                seed,
                run_id,
            )?,
            None,
        )),
        Algo::Lowoful => Ok((
            lowoful_oracle_run(&instance, &arms, cfg.horizon, cfg.delta, seed, run_id)?,
            None,
        )),
        Algo::Lowestr => {
            let out = lowestr_run(&instance, &arms, &lowestr_config(cfg, seed), run_id)?;
            Ok((out.trace, Some(out.recovery)))
        }
        Algo::Lowloc | Algo::Lowgloc => {
            let net = net.expect("net prepared for LowLOC").clone();
            Ok((
                lowloc_run(&instance, &arms, net, &lowloc_config(cfg), seed, run_id)?,
                None,
            ))
        }
    }
}

/// Runs `cfg.runs` independent runs with seeds `seed, seed + 1, …`.
///
/// Each run draws a fresh arm set and reward noise from its own seed, so results do not
/// depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let net = prepare(cfg)?;
    let results: Vec<(RegretTrace, Option<RecoveryReport>)> = (0..cfg.runs)
        .into_par_iter()
        .map(|i| one_run(cfg, net.as_ref(), i))
        .collect::<Result<_>>()?;
    let (traces, recs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let recoveries: Vec<RecoveryReport> = recs.into_iter().flatten().collect();
    let mut summary = summarize(cfg.algo.name(), &traces, cfg.horizon);
    if cfg.algo == Algo::Lowestr {
        summary.t1 = Some(cfg.resolved_t1());
        let errs: Vec<f64> = recoveries.iter().filter_map(|r| r.subspace_error).collect();
        if !errs.is_empty() {
            summary.subspace_error_mean = Some(mean_sd(&errs).0);
        }
    }
    summary.config = Some(ExperimentConfig {
        out: None,
        ..cfg.clone()
    });
    summary.wall_seconds = start.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        config: cfg.clone(),
        traces,
        recoveries,
        summary,
    })
}

/// Writes `traces.csv`, `summary.json` and `config.txt` into `dir`.
pub fn write_outputs(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join("traces.csv"), &out.traces)?;
    let summary = serde_json::to_string_pretty(&out.summary)?;
    let path = dir.join("summary.json");
    std::fs::write(&path, summary + "\n").map_err(|e| Error::io(&path, e))?;
    let path = dir.join("config.txt");
    let echo = ExperimentConfig {
        out: None,
        ..out.config.clone()
    };
    std::fs::write(&path, echo.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub omega_r: f64,
    pub t1: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Final cumulative regret of `base` at each `ω_r`, with `t1` resolved per point.
pub fn run_omega_sweep(base: &ExperimentConfig, omegas: &[f64]) -> Result<Vec<SweepRow>> {
    if omegas.is_empty() {
        return Err(Error::Config("sweep needs at least one omega".into()));
    }
    let mut rows = Vec::with_capacity(omegas.len());
    for &w in omegas {
        let mut cfg = base.clone();
        cfg.omega_r = w;
        cfg.out = None;
        let out = run_experiment(&cfg)?;
        rows.push(SweepRow {
            omega_r: w,
            t1: cfg.resolved_t1(),
            mean: out.summary.final_mean,
            sd: out.summary.final_sd,
        });
    }
    if let Some(dir) = &base.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    }
    Ok(rows)
}
