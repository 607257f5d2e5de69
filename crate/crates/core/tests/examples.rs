//! Worked examples that need more than one module or a Monte-Carlo oracle.

use std::sync::Arc;

use lowrank_bandit::confidence::ConversionState;
use lowrank_bandit::covering::{build_net, nearest_distance, sample_low_rank_unit, LowRankNet};
use lowrank_bandit::harness::{
    emit_chart, read_csv, read_sweep_csv, run_experiment, series_from_sweep, write_csv,
    write_outputs, Algo, ChartLabels, ExperimentConfig, SweepRow, T1Spec,
};
use lowrank_bandit::lowloc::{bt_lemma3, BtSchedule, LowLocAgent, LowLocConfig};
use lowrank_bandit::lowoful::{lowestr_run, LowEstrConfig, REWARD_STREAM};
use lowrank_bandit::model::{make_diag_instance, rng_for, sample_unit_arm_set};
use lowrank_bandit::recovery::{
    extract_subspace, rsc_check, solve_nuclear_ls, subspace_error, LambdaRule, RecoveryProblem,
    SolverConfig,
};
use lowrank_bandit::trace::RegretTrace;
use lowrank_bandit::{ArmMatrix, ArmSet};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(d1: usize, d2: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal))
}

#[test]
fn covering_2x2_rank1_at_eps_one() {
    let net = build_net(2, 2, 1, 1.0).unwrap();
    assert!(net.len() <= 59049);
    let mut rng = rng_for(3, 9);
    for _ in 0..1000 {
        let target = sample_low_rank_unit(2, 2, 1, &mut rng);
        assert!(nearest_distance(&net, &target).unwrap() <= 1.0);
    }
}

/// Points on the boundary of `{θ : (θ−c)ᵀV(θ−c) = β}` never beat the closed-form score.
#[test]
fn ucb_matches_boundary_sampling() {
    let mut rng = rng_for(21, 9);
    let mut conv = ConversionState::new(2, 2);
    for _ in 0..6 {
        let x = ArmMatrix::new(gaussian(2, 2, &mut rng).normalize()).unwrap();
        conv.ingest(&x, rng.random_range(-1.0..1.0)).unwrap();
    }
    let beta = 2.5;
    let set = conv.ellipsoid(beta).unwrap();
    let chol = set.shape().clone().cholesky().unwrap();
    let center = conv.theta_hat_vec().clone();
    for _ in 0..5 {
        let x = ArmMatrix::new(gaussian(2, 2, &mut rng).normalize()).unwrap();
        let exact = set.ucb_score(&x).unwrap();
        let xv = DVector::from_column_slice(x.vec());
        let mut best = f64::NEG_INFINITY;
        for _ in 0..100_000 {
            // θ = c + sqrt(β) L⁻ᵀ u with ‖u‖ = 1 lies on the boundary.
            let u = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let step = chol.l().transpose().solve_upper_triangular(&u).unwrap();
            let theta = &center + step * beta.sqrt();
            best = best.max(theta.dot(&xv));
        }
        assert!(best <= exact + 1e-6, "sample {best} above exact {exact}");
        assert!(
            best >= exact - 0.02,
            "sample {best} far below exact {exact}"
        );
    }
}

/// Brute force over arms × ellipsoid samples picks an arm with the agent's score.
#[test]
fn lowloc_selection_matches_sampling_oracle() {
    let inst = make_diag_instance(2, 2, 1, 0.5)
        .unwrap()
        .with_sigma(0.1)
        .unwrap();
    let arms = sample_unit_arm_set(2, 2, 5, 8).unwrap();
    let cfg = LowLocConfig::linear(50, 0.01, 1)
        .with_eps(0.5)
        .with_radius_scale(0.01);
    let mut agent = LowLocAgent::new(2, 2, cfg).unwrap();
    let mut rng = rng_for(8, REWARD_STREAM);
    for _ in 0..10 {
        let i = agent.select_arm(&arms).unwrap();
        let y = inst.pull(&arms.arms()[i], &mut rng).unwrap();
        agent.observe(&arms.arms()[i], y).unwrap();
    }
    let chosen = agent.select_arm(&arms).unwrap();
    let set = agent.conversion().ellipsoid(agent.radius()).unwrap();
    let chol = set.shape().clone().cholesky().unwrap();
    let center = agent.conversion().theta_hat_vec().clone();
    let mut best = (0, f64::NEG_INFINITY);
    let mut sample_rng = rng_for(8, 99);
    let thetas: Vec<DVector<f64>> = (0..100_000)
        .map(|_| {
            let u =
                DVector::from_fn(4, |_, _| sample_rng.sample::<f64, _>(StandardNormal)).normalize();
            &center
                + chol.l().transpose().solve_upper_triangular(&u).unwrap() * agent.radius().sqrt()
        })
        .collect();
    for (k, arm) in arms.arms().iter().enumerate() {
        let xv = DVector::from_column_slice(arm.vec());
        let m = thetas
            .iter()
            .map(|t| t.dot(&xv))
            .fold(f64::NEG_INFINITY, f64::max);
        if m > best.1 {
            best = (k, m);
        }
    }
    let chosen_score = set.ucb_score(&arms.arms()[chosen]).unwrap();
    assert!(
        (chosen_score - best.1).abs() <= 0.02,
        "agent {chosen_score} vs oracle {}",
        best.1
    );
}

#[test]
fn first_prediction_is_net_mean() {
    let net = Arc::new(build_net(2, 2, 1, 0.5).unwrap());
    let mut agent =
        LowLocAgent::with_net(net.clone(), LowLocConfig::linear(10, 0.01, 1).with_eps(0.5))
            .unwrap();
    let arms = sample_unit_arm_set(2, 2, 3, 1).unwrap();
    let i = agent.select_arm(&arms).unwrap();
    let x = &arms.arms()[i];
    agent.observe(x, 0.3).unwrap();
    let mean = net
        .iter_vecs()
        .map(|v| v.iter().zip(x.vec()).map(|(a, b)| a * b).sum::<f64>())
        .sum::<f64>()
        / net.len() as f64;
    assert!((agent.last_prediction().unwrap() - mean).abs() < 1e-12);
}

/// With the true parameter as the only expert and no noise, predictions are exact and
/// regret never exceeds twice the optimism width.
#[test]
fn singleton_net_tracks_truth_within_width() {
    let inst = make_diag_instance(2, 2, 1, 0.5)
        .unwrap()
        .with_sigma(0.0)
        .unwrap();
    let net = LowRankNet::from_elements(0.5, 1, std::slice::from_ref(inst.theta_star())).unwrap();
    let cfg = LowLocConfig::linear(100, 0.01, 1).with_eps(0.5);
    let mut agent = LowLocAgent::with_net(Arc::new(net), cfg).unwrap();
    let arms = sample_unit_arm_set(2, 2, 10, 4).unwrap();
    let mut rng = rng_for(4, REWARD_STREAM);
    for _ in 0..100 {
        let i = agent.select_arm(&arms).unwrap();
        let width = agent.pending_width().unwrap();
        let x = &arms.arms()[i];
        let y = inst.pull(x, &mut rng).unwrap();
        agent.observe(x, y).unwrap();
        assert!((agent.last_prediction().unwrap() - inst.score(x).unwrap()).abs() < 1e-12);
        assert!(inst.instant_regret(&arms, i).unwrap() <= 2.0 * width + 1e-12);
    }
}

#[test]
fn scripted_run_gram_matches_batch() {
    let inst = make_diag_instance(2, 2, 1, 0.5)
        .unwrap()
        .with_sigma(0.1)
        .unwrap();
    let arms = sample_unit_arm_set(2, 2, 6, 2).unwrap();
    let cfg = LowLocConfig::linear(10, 0.01, 1).with_eps(0.5);
    let mut agent = LowLocAgent::new(2, 2, cfg).unwrap();
    let mut rng = rng_for(2, REWARD_STREAM);
    let mut v = DMatrix::<f64>::identity(4, 4);
    for _ in 0..10 {
        let i = agent.select_arm(&arms).unwrap();
        let x = &arms.arms()[i];
        agent.observe(x, inst.pull(x, &mut rng).unwrap()).unwrap();
        let xv = DVector::from_column_slice(x.vec());
        v += &xv * xv.transpose();
    }
    assert!((agent.conversion().v() - v).abs().max() < 1e-12);
}

/// `ŷ_t` may not depend on `y_t`: feeding a different reward in the same round must
/// leave the prediction bit-identical.
#[test]
fn prediction_ignores_current_reward() {
    let inst = make_diag_instance(2, 2, 1, 0.5)
        .unwrap()
        .with_sigma(0.1)
        .unwrap();
    let arms = sample_unit_arm_set(2, 2, 6, 5).unwrap();
    let net = Arc::new(build_net(2, 2, 1, 0.5).unwrap());
    let cfg = LowLocConfig::linear(30, 0.01, 1).with_eps(0.5);
    let mut agent = LowLocAgent::with_net(net, cfg).unwrap();
    let mut rng = rng_for(5, REWARD_STREAM);
    for _ in 0..20 {
        let i = agent.select_arm(&arms).unwrap();
        let x = arms.arms()[i].clone();
        let y = inst.pull(&x, &mut rng).unwrap();
        let mut probe = agent.clone();
        probe.observe(&x, y + 1000.0).unwrap();
        agent.observe(&x, y).unwrap();
        assert_eq!(
            probe.last_prediction().unwrap().to_bits(),
            agent.last_prediction().unwrap().to_bits()
        );
    }
}

/// The realized forecaster regret stays below the explicit budget in most tiny runs.
#[test]
fn empirical_budget_below_lemma3() {
    let inst = make_diag_instance(2, 2, 1, 0.5)
        .unwrap()
        .with_sigma(0.1)
        .unwrap();
    let net = Arc::new(build_net(2, 2, 1, 0.5).unwrap());
    let (runs, horizon) = (40, 100);
    let mut ok = 0;
    for seed in 0..runs {
        let arms = sample_unit_arm_set(2, 2, 10, seed).unwrap();
        let cfg = LowLocConfig::linear(horizon, 0.01, 1)
            .with_eps(0.5)
            .with_schedule(BtSchedule::Empirical);
        let mut agent = LowLocAgent::with_net(net.clone(), cfg).unwrap();
        let mut rng = rng_for(seed, REWARD_STREAM);
        let mut below = true;
        for t in 1..=horizon {
            let i = agent.select_arm(&arms).unwrap();
            let x = &arms.arms()[i];
            agent.observe(x, inst.pull(x, &mut rng).unwrap()).unwrap();
            below &= agent.b_t() <= bt_lemma3(t, horizon, 0.01, 2, 2, 1, 0.5).unwrap();
        }
        ok += below as usize;
    }
    assert!(ok * 100 >= 95 * runs as usize, "{ok}/{runs}");
}

#[test]
fn recovery_objective_at_estimate_beats_truth() {
    let inst = make_diag_instance(5, 5, 1, 0.5)
        .unwrap()
        .with_sigma(0.01)
        .unwrap();
    let arms = sample_unit_arm_set(5, 5, 100, 12).unwrap();
    let mut explore = rng_for(12, 2);
    let mut noise = rng_for(12, REWARD_STREAM);
    let xs: Vec<ArmMatrix> = (0..200)
        .map(|_| arms.arms()[explore.random_range(0..100)].clone())
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| inst.pull(x, &mut noise).unwrap())
        .collect();
    let problem = RecoveryProblem::with_rule(&xs, &ys, LambdaRule::Experiment).unwrap();
    let out = solve_nuclear_ls(&problem, &SolverConfig::lipschitz(&problem)).unwrap();
    assert!(out.objective <= problem.objective(inst.theta_star()) + 1e-12);
    for w in out.objectives.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12));
    }
    let sub = extract_subspace(&out.theta, 1).unwrap();
    let bound = (&out.theta - inst.theta_star()).norm_squared() / 0.25;
    assert!(subspace_error(&sub, &inst).unwrap() <= bound + 1e-9);
}

#[test]
fn rsc_holds_with_many_samples() {
    let arms = sample_unit_arm_set(10, 10, 2000, 31).unwrap();
    let report = rsc_check(arms.arms(), 1000, 0.1, 10.0, 31).unwrap();
    assert_eq!(report.violations, 0, "min margin {}", report.min_margin);
}

/// No noise and the best direction available: stage-2 regret dies out.
#[test]
fn noiseless_lowestr_converges() {
    // The optimism bonus still carries sqrt(log det − 2 log δ) without noise, so each
    // poor arm needs a few hundred pulls before it drops out; keep the set small.
    let inst = make_diag_instance(3, 3, 1, 0.5)
        .unwrap()
        .with_sigma(0.0)
        .unwrap();
    let mut arms: Vec<ArmMatrix> = sample_unit_arm_set(3, 3, 5, 6).unwrap().arms().to_vec();
    arms.push(ArmMatrix::new(inst.theta_star() / inst.theta_star().norm()).unwrap());
    let arms = ArmSet::new(arms).unwrap();
    let horizon = 6000;
    let mut cfg = LowEstrConfig::new(horizon, 100, 1, 0.5, 0.0, 0.01, 6);
    cfg.lipschitz_step = true;
    let out = lowestr_run(&inst, &arms, &cfg, 0).unwrap();
    let first = out.trace.mean_instant(100, 200);
    let last = out.trace.mean_instant(horizon - 100, horizon);
    assert!(last < 0.1 * first, "first {first} last {last}");
}

#[test]
fn single_round_single_run() {
    let cfg = ExperimentConfig {
        algo: Algo::Oful,
        d1: 2,
        d2: 2,
        rank: 1,
        horizon: 1,
        runs: 1,
        arms: 3,
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.traces.len(), 1);
    assert_eq!(out.traces[0].len(), 1);
    assert_eq!(out.traces[0].cumulative[0], out.traces[0].instant[0]);
}

#[test]
fn csv_counts_and_summary_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    write_csv(&empty, &[]).unwrap();
    assert_eq!(
        std::fs::read_to_string(&empty).unwrap(),
        "algo,run_id,seed,t,instant_regret,cumulative_regret\n"
    );

    let mut one = RegretTrace::new("lowestr", 0, 9);
    one.push(0.123_456_789_012_345_68);
    let single = dir.path().join("single.csv");
    write_csv(&single, std::slice::from_ref(&one)).unwrap();
    assert_eq!(read_csv(&single).unwrap(), vec![one]);

    let cfg = ExperimentConfig {
        algo: Algo::Lowestr,
        d1: 3,
        d2: 3,
        rank: 1,
        horizon: 150,
        t1: T1Spec::Fixed(30),
        arms: 10,
        runs: 20,
        seed: 100,
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&cfg).unwrap();
    let outdir = dir.path().join("run");
    write_outputs(&outdir, &out).unwrap();
    let text = std::fs::read_to_string(outdir.join("traces.csv")).unwrap();
    assert_eq!(text.lines().count(), 20 * 150 + 1);
    let back = read_csv(&outdir.join("traces.csv")).unwrap();
    for tr in &back {
        assert!(tr.cumulative.windows(2).all(|w| w[1] >= w[0]));
    }
    for cp in &out.summary.checkpoints {
        let vals: Vec<f64> = back.iter().map(|t| t.cumulative[cp.t - 1]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd =
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
        assert!((mean - cp.mean).abs() < 1e-9 && (sd - cp.sd).abs() < 1e-9);
    }
}

#[test]
fn sweep_chart_band_vertices_are_mean_plus_minus_sd() {
    let rows = vec![
        SweepRow {
            omega_r: 0.1,
            t1: 1000,
            mean: 536.56,
            sd: 63.47,
        },
        SweepRow {
            omega_r: 0.3,
            t1: 333,
            mean: 553.97,
            sd: 72.23,
        },
        SweepRow {
            omega_r: 0.5,
            t1: 200,
            mean: 605.08,
            sd: 107.28,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    lowrank_bandit::harness::write_sweep_csv(&path, &rows).unwrap();
    let rows = read_sweep_csv(&path).unwrap();
    let svg = emit_chart(
        &[series_from_sweep("lowestr", &rows)],
        &ChartLabels::omega_sweep("sweep"),
    );
    let band = svg.lines().find(|l| l.contains("class=\"band\"")).unwrap();
    let points = band
        .split("points=\"")
        .nth(1)
        .unwrap()
        .split('"')
        .next()
        .unwrap();
    let pts: Vec<(f64, f64)> = points
        .split(' ')
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    assert_eq!(pts.len(), 2 * rows.len());
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(pts[k], (r.omega_r, r.mean + r.sd));
        assert_eq!(pts[2 * rows.len() - 1 - k], (r.omega_r, r.mean - r.sd));
    }

    let two = series_from_sweep("x", &rows[..2]);
    let svg = emit_chart(std::slice::from_ref(&two), &ChartLabels::omega_sweep(""));
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert_eq!(svg.matches("<polygon").count(), 1);
    assert_eq!(svg, emit_chart(&[two], &ChartLabels::omega_sweep("")));
}

#[test]
fn omega_sweep_t1_rule() {
    for (w, t1) in [(0.5, 200), (0.05, 2000), (0.1, 1000), (0.3, 333)] {
        assert_eq!(lowrank_bandit::harness::auto_t1(w), t1);
    }
}

/// Refining the net almost never moves the nearest element further away. The grids at
/// different resolutions are not nested, so a rare increase is possible.
#[test]
fn finer_nets_rarely_increase_distance() {
    let nets: Vec<LowRankNet> = [1.0, 0.5, 0.25]
        .iter()
        .map(|&e| build_net(2, 2, 1, e).unwrap())
        .collect();
    let mut rng = rng_for(1, 9);
    let mut increases = 0;
    let n = 2000;
    for _ in 0..n {
        let t = sample_low_rank_unit(2, 2, 1, &mut rng);
        let d: Vec<f64> = nets
            .iter()
            .map(|net| nearest_distance(net, &t).unwrap())
            .collect();
        assert!(d[2] <= 0.25 && d[1] <= 0.5 && d[0] <= 1.0);
        increases += d.windows(2).filter(|w| w[1] > w[0]).count();
    }
    assert!(increases * 1000 <= n, "{increases} increases");
}
