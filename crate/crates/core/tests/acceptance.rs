//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{array, Array1};
use rand::Rng;
use rayon::prelude::*;

use bandit_dopd::algorithm::{run_horizon, InitRule, Mode, Simulation, SimulationSpec};
use bandit_dopd::config::ConfigMap;
use bandit_dopd::estimator::{est_loss_subgrad, smoothed_value, within_norm_bound, BanditSample};
use bandit_dopd::geometry::{norm, sample_unit_sphere, FeasibleSet, Vector};
use bandit_dopd::harness::{sweep, AggregateRow, SweepParam, METRICS_FILE};
use bandit_dopd::metrics::{network_ccv, network_regret, solve_static_comparator, MetricsLog, SolverParams};
use bandit_dopd::network::{check_b_connectivity, GraphKind, GraphSpec, MixingMatrix, RoundGraph};
use bandit_dopd::problem::{
    estimate_bounds, CustomFamily, FnOracle, ProblemFamily, RegressionDims, RegressionFamily, RoundProblem,
    MIN_BOUND_SAMPLES,
};
use bandit_dopd::rng::{stream, Concern};
use bandit_dopd::schedules::{Schedule, StepRule, TriggerSchedule};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const DESK: RegressionDims = RegressionDims { n: 10, p: 4, q: 2, m: 2 };

fn desk_set() -> FeasibleSet {
    FeasibleSet::symmetric_box(5.0, DESK.p).unwrap()
}

fn theorem1_schedule() -> Schedule {
    Schedule::new(
        StepRule::Theorem1 { kappa: 0.5 },
        TriggerSchedule::Power { theta: 1.0 },
        desk_set().inner_radius(),
    )
    .unwrap()
}

fn theorem2_schedule(tau0: f64) -> Schedule {
    Schedule::paper_sec4(tau0, desk_set().inner_radius()).unwrap()
}

fn desk_spec(schedule: Schedule, mode: Mode, seed: u64) -> SimulationSpec {
    SimulationSpec {
        set: desk_set(),
        schedule,
        graph: GraphSpec::default(),
        mode,
        init: InitRule::Zero,
        seed,
        check_invariants: false,
        bounds: None,
    }
}

// 1
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let exe = env!("CARGO_BIN_EXE_bandit-dopd");
    let mut elapsed = Vec::new();
    for name in ["a", "b"] {
        let start = Instant::now();
        let status = Command::new(exe)
            .args(["run", "--preset", "desk", "--seed", "7", "--out"])
            .arg(tmp.path().join(name))
            .output()
            .map_err(|e| e.to_string())?;
        elapsed.push(start.elapsed());
        ensure(status.status.success(), || {
            format!("run {name} failed: {}", String::from_utf8_lossy(&status.stderr))
        })?;
    }
    let a = std::fs::read(tmp.path().join("a").join(METRICS_FILE)).map_err(|e| e.to_string())?;
    let b = std::fs::read(tmp.path().join("b").join(METRICS_FILE)).map_err(|e| e.to_string())?;
    ensure(a == b, || "CSV outputs differ".into())?;
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    ensure(lines == 2001, || format!("expected 2001 lines, got {lines}"))?;
    let slowest = elapsed.iter().max().copied().unwrap_or_default();
    ensure(slowest < Duration::from_secs(120), || format!("desk run took {slowest:?}"))?;
    Ok(format!("byte-identical metrics.csv ({} bytes), slowest desk run {slowest:.2?}", a.len()))
}

// 2
fn projection_oracle() -> Outcome {
    let h: f64 = 1e-2;
    let shrink = 0.8;
    let mut box_gap = 0.0f64;
    let mut value_gap = 0.0f64;
    let mut ball_point_gap = 0.0f64;
    let mut worst_expansion = f64::NEG_INFINITY;
    for p in 1..=3usize {
        for (is_ball, set) in [
            (false, FeasibleSet::symmetric_box(0.5, p).unwrap()),
            (true, FeasibleSet::centered_ball(0.5, p).unwrap()),
        ] {
            let k = (2.0 * 0.5 / h).round() as i64;
            let mut grid: Vec<f64> = Vec::new();
            let mut idx = vec![0i64; p];
            loop {
                let g = Vector::from_shape_fn(p, |d| -0.5 + idx[d] as f64 * h);
                if set.contains(shrink, &g, 0.0) {
                    grid.extend(g.iter());
                }
                let mut d = 0;
                while d < p {
                    idx[d] += 1;
                    if idx[d] <= k {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
                if d == p {
                    break;
                }
            }
            let mut rng = stream(100 + p as u64, 0, Concern::Init, 0);
            let queries: Vec<Vector> = (0..1000)
                .map(|_| Vector::from_shape_fn(p, |_| rng.random_range(-1.0..1.0)))
                .collect();
            let results: Vec<(f64, f64, bool)> = queries
                .par_iter()
                .map(|x| {
                    let proj = set.project(shrink, x).unwrap();
                    let (best, best_sq) = grid
                        .chunks_exact(p)
                        .map(|g| (g, g.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .unwrap();
                    let best = Vector::from(best.to_vec());
                    let dist = norm(&(&proj - x));
                    let idem = set.project(shrink, &proj).unwrap() == proj;
                    let optimal = dist <= best_sq.sqrt() + 1e-12;
                    (norm(&(&proj - &best)), best_sq.sqrt() - dist, idem && optimal)
                })
                .collect();
            for (gap, excess, ok) in &results {
                ensure(*ok, || format!("idempotence or optimality failed for {set:?}"))?;
                value_gap = value_gap.max(*excess);
                if is_ball {
                    ball_point_gap = ball_point_gap.max(*gap);
                } else {
                    box_gap = box_gap.max(*gap);
                }
            }
            for w in queries.windows(2) {
                let px = set.project(shrink, &w[0]).unwrap();
                let py = set.project(shrink, &w[1]).unwrap();
                worst_expansion = worst_expansion.max(norm(&(&px - &py)) - norm(&(&w[0] - &w[1])));
            }
        }
    }
    ensure(box_gap <= h, || format!("box projection is {box_gap:.3e} from the grid argmin"))?;
    ensure(value_gap <= h, || format!("grid argmin is {value_gap:.3e} closer than the projection"))?;
    ensure(worst_expansion <= 1e-12, || format!("expansion {worst_expansion:.3e}"))?;
    Ok(format!(
        "box point gap {box_gap:.2e}, distance gap {value_gap:.2e} (spacing {h}), ball point gap {ball_point_gap:.2e} (not gated), idempotent, max expansion {worst_expansion:.1e}"
    ))
}

// 3
fn estimator_unbiased() -> Outcome {
    let p = 3;
    let h = array![[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 1.5]];
    let c = array![0.3, -0.2, 0.1];
    let (h1, c1) = (h.clone(), c.clone());
    let oracle = FnOracle::new(p, 0, move |x: &Vector| 0.5 * x.dot(&h1.dot(x)) + c1.dot(x), |_| array![]);
    let grad = |x: &Vector| h.dot(x) + &c;
    let set = FeasibleSet::symmetric_box(1.0, p).unwrap();
    // ‖∇f‖ is convex, so its maximum over the box sits at a vertex
    let f2 = (0..1u32 << p)
        .map(|bits| {
            let v = Vector::from_shape_fn(p, |d| if bits >> d & 1 == 1 { 1.0 } else { -1.0 });
            norm(&grad(&v))
        })
        .fold(0.0, f64::max);
    let delta = 0.1;
    let n = 100_000;
    let mut rng = stream(33, 0, Concern::Direction, 0);
    let mut worst_z = 0.0f64;
    let mut norm_violations = 0;
    for k in 0..5 {
        let x = set.sample_uniform(&mut rng, 0.5);
        let mut sum = Vector::zeros(p);
        let mut sum_sq = Vector::zeros(p);
        for _ in 0..n {
            let u = sample_unit_sphere(&mut rng, p);
            let est = est_loss_subgrad(&BanditSample::observe(&oracle, &x, u, delta)).map_err(|e| e.to_string())?;
            if !within_norm_bound(&est, f2) {
                norm_violations += 1;
            }
            sum_sq += &est.mapv(|v| v * v);
            sum += &est;
        }
        let mean = &sum / n as f64;
        let var = (&sum_sq / n as f64 - mean.mapv(|v| v * v)) * (n as f64 / (n as f64 - 1.0));
        let se = var.mapv(|v| (v / n as f64).sqrt());
        let g = grad(&x);
        for d in 0..p {
            let z = (mean[d] - g[d]).abs() / se[d];
            worst_z = worst_z.max(z);
            ensure(z <= 3.0, || format!("point {k} coordinate {d}: |mean - grad| = {z:.2} SE"))?;
        }
    }
    ensure(norm_violations == 0, || format!("{norm_violations} samples exceed p F2"))?;
    Ok(format!("5 points x 1e5 samples, worst deviation {worst_z:.2} SE, norm bound p*F2 = {:.3} never exceeded", p as f64 * f2))
}

// 4
fn smoothed_sandwich() -> Outcome {
    let p = 3;
    let a = array![[1.0, -0.5, 0.2], [0.3, 0.8, -1.0], [-0.7, 0.1, 0.4], [0.2, 0.2, 0.9]];
    let b = array![0.1, -0.3, 0.5, 0.0];
    let f = |x: &Vector| (a.dot(x) - &b).mapv(f64::abs).sum();
    // subgradients are Aᵀ s with s ∈ [-1, 1]^q; the norm peaks at a sign vector
    let f2 = (0..1u32 << a.nrows())
        .map(|bits| {
            let s = Array1::from_shape_fn(a.nrows(), |d| if bits >> d & 1 == 1 { 1.0 } else { -1.0 });
            norm(&a.t().dot(&s))
        })
        .fold(0.0, f64::max);
    let delta = 0.2;
    let mut rng = stream(44, 0, Concern::Direction, 0);
    let set = FeasibleSet::symmetric_box(1.0, p).unwrap();
    let mut max_lift = 0.0f64;
    for k in 0..10 {
        let x = set.sample_uniform(&mut rng, 0.8);
        let mc = smoothed_value(f, &x, delta, 100_000, &mut rng);
        let fx = f(&x);
        ensure(fx <= mc.mean + 2.0 * mc.std_err, || {
            format!("point {k}: f = {fx} above smoothed {} ± {}", mc.mean, mc.std_err)
        })?;
        ensure(mc.mean <= fx + f2 * delta + 2.0 * mc.std_err, || {
            format!("point {k}: smoothed {} above f + F2 δ = {}", mc.mean, fx + f2 * delta)
        })?;
        max_lift = max_lift.max((mc.mean - fx) / (f2 * delta));
    }
    Ok(format!("10 points, f <= f_hat <= f + F2*delta; largest lift {max_lift:.3} of F2*delta"))
}

// 5
fn algorithm_invariants() -> Outcome {
    let family = RegressionFamily::new(DESK, 11).unwrap();
    let set = desk_set();
    let rounds: Vec<usize> = (1..=20).collect();
    let bounds = estimate_bounds(&family, &set, &rounds, MIN_BOUND_SAMPLES, 11).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for (name, schedule) in [("theorem1", theorem1_schedule()), ("theorem2", theorem2_schedule(4.0))] {
        let mut spec = desk_spec(schedule, Mode::Bandit, 11);
        spec.check_invariants = true;
        spec.bounds = Some(bounds);
        let (_, report) = run_horizon(&family, spec, 2000).map_err(|e| e.to_string())?;
        ensure(report.violations() == 0 && report.rounds_checked == 2000, || format!("{name}: {report:?}"))?;
        parts.push(format!(
            "{name}: 0 violations over {} rounds (max ||beta q|| {:.3} vs bound {:.1})",
            report.rounds_checked, report.max_scaled_dual, bounds.dual_bound
        ));
    }
    Ok(parts.join("; "))
}

// 6
fn mixing_connectivity() -> Outcome {
    let mut worst = 0.0f64;
    let mut windows = 0;
    for n in [10usize, 100] {
        let spec = GraphSpec::default();
        let graphs: Vec<RoundGraph> = (1..=400).map(|t| spec.round_graph(21, t, n)).collect();
        for g in &graphs {
            let w = MixingMatrix::from_graph(g).map_err(|e| e.to_string())?;
            worst = worst.max(w.stochasticity_deviation());
        }
        let mut rng = stream(21, 0, Concern::Graph, 0);
        for _ in 0..100 {
            let start = rng.random_range(0..graphs.len() - 3);
            ensure(check_b_connectivity(&graphs[start..start + 4]), || {
                format!("n = {n}: window starting at round {} not strongly connected", start + 1)
            })?;
            windows += 1;
        }
    }
    ensure(worst <= 1e-12, || format!("stochasticity deviation {worst:.2e}"))?;
    Ok(format!(
        "800 matrices (n = 10, 100), max row/column-sum deviation {worst:.1e}; {windows} windows strongly connected"
    ))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// (regret/T, CCV/T) at each horizon, per schedule
type Trend = [[(f64, f64); 4]; 2];

// 7
fn sublinearity() -> Outcome {
    let horizons = [500usize, 1000, 2000, 4000];
    let tmax = *horizons.last().unwrap();
    let per_seed: Vec<Result<Trend, String>> = SEEDS
        .par_iter()
        .map(|&seed| {
            let family = RegressionFamily::new(DESK, seed).unwrap();
            let problems: Vec<RoundProblem> = (1..=tmax).map(|t| family.round(t)).collect();
            let mut comparators = Vec::new();
            for &t in &horizons {
                let c = solve_static_comparator(&problems[..t], &desk_set(), &SolverParams::default())
                    .map_err(|e| e.to_string())?;
                if c.max_violation > 1e-6 || c.unconverged > 0 {
                    return Err(format!("seed {seed} T {t}: comparator residual {:.2e}", c.max_violation));
                }
                comparators.push(c);
            }
            let mut out = [[(0.0, 0.0); 4]; 2];
            for (s, schedule) in [theorem1_schedule(), theorem2_schedule(1.0)].into_iter().enumerate() {
                let (log, _): (MetricsLog, _) =
                    run_horizon(&family, desk_spec(schedule, Mode::Bandit, seed), tmax).map_err(|e| e.to_string())?;
                for (k, &t) in horizons.iter().enumerate() {
                    let regret = network_regret(&log, &comparators[k], t).map_err(|e| e.to_string())?;
                    let ccv = network_ccv(&log, t).map_err(|e| e.to_string())?;
                    out[s][k] = (regret / t as f64, ccv / t as f64);
                }
            }
            Ok(out)
        })
        .collect();
    let per_seed: Vec<[[(f64, f64); 4]; 2]> = per_seed.into_iter().collect::<Result<_, _>>()?;
    let mut parts = Vec::new();
    for (s, name) in ["theorem1", "theorem2"].iter().enumerate() {
        let mean = |k: usize, pick: fn(&(f64, f64)) -> f64| {
            per_seed.iter().map(|r| pick(&r[s][k])).sum::<f64>() / SEEDS.len() as f64
        };
        let regret: Vec<f64> = (0..4).map(|k| mean(k, |v| v.0)).collect();
        let ccv: Vec<f64> = (0..4).map(|k| mean(k, |v| v.1)).collect();
        ensure(strictly_decreasing(&regret), || format!("{name}: regret/T {regret:.4?}"))?;
        ensure(strictly_decreasing(&ccv), || format!("{name}: CCV/T {ccv:.4?}"))?;
        parts.push(format!("{name} regret/T {regret:.3?} CCV/T {ccv:.3?}"));
    }
    Ok(parts.join("; "))
}

fn desk_sweep(root: &Path, values: &[f64], extra: &[(&str, &str)]) -> Result<Vec<AggregateRow>, String> {
    let mut base = ConfigMap::from_preset("desk").map_err(|e| e.to_string())?;
    for (k, v) in extra {
        base.set(k, v).map_err(|e| e.to_string())?;
    }
    sweep(&base, SweepParam::Tau0, values, &SEEDS, root).map_err(|e| e.to_string())
}

/// Non-decreasing except for at most one adjacent drop of at most 2%.
fn nearly_nondecreasing(v: &[f64]) -> bool {
    let drops: Vec<f64> = v
        .windows(2)
        .filter(|w| w[1] < w[0])
        .map(|w| (w[0] - w[1]) / w[0].abs())
        .collect();
    drops.len() <= 1 && drops.iter().all(|&d| d <= 0.02)
}

// 8
fn tau0_sweep() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rows = desk_sweep(tmp.path(), &[0.0, 4.0, 8.0], &[])?;
    let triggers: Vec<f64> = rows.iter().map(|r| r.mean_total_triggers).collect();
    let loss: Vec<f64> = rows.iter().map(|r| r.mean_final_avg_cum_loss).collect();
    let ccv: Vec<f64> = rows.iter().map(|r| r.mean_final_avg_cum_ccv).collect();
    ensure(strictly_decreasing(&triggers), || format!("triggers {triggers:?}"))?;
    ensure(nearly_nondecreasing(&loss), || format!("loss {loss:.3?}"))?;
    ensure(nearly_nondecreasing(&ccv), || format!("CCV {ccv:.3?}"))?;
    Ok(format!("tau0 0/4/8: triggers {triggers:.1?}, avg cum loss {loss:.2?}, avg cum CCV {ccv:.2?}"))
}

// 9
fn full_info_baseline() -> Outcome {
    let mut means = Vec::new();
    for mode in [Mode::Bandit, Mode::FullInfo] {
        let total: f64 = SEEDS
            .iter()
            .map(|&seed| {
                let family = RegressionFamily::new(DESK, seed).unwrap();
                let (log, _) = run_horizon(&family, desk_spec(theorem2_schedule(0.0), mode, seed), 2000).unwrap();
                log.last().unwrap().cum_loss
            })
            .sum();
        means.push(total / SEEDS.len() as f64);
    }
    ensure(means[0] >= means[1], || format!("bandit {} < full-info {}", means[0], means[1]))?;
    Ok(format!("tau0 = 0: bandit avg cum loss {:.2} >= full-info {:.2}", means[0], means[1]))
}

// 10
fn consensus() -> Outcome {
    let n = 10;
    let family = CustomFamily::zero(n, DESK.p);
    let mut spec = desk_spec(theorem2_schedule(0.0), Mode::Bandit, 5);
    spec.init = InitRule::Uniform;
    spec.graph = GraphSpec {
        kind: GraphKind::Paper4Quarters,
        ..GraphSpec::default()
    };
    let mut sim = Simulation::new(&family, spec).map_err(|e| e.to_string())?;
    let initial = sim.disagreement();
    for t in 1..=500 {
        if sim.disagreement() < 1e-6 {
            return Ok(format!("disagreement {initial:.3} -> below 1e-6 at round {t}"));
        }
        sim.step(&family.round(t)).map_err(|e| e.to_string())?;
    }
    Err(format!("disagreement still {:.3e} after 500 rounds", sim.disagreement()))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("determinism", determinism),
        ("projection oracle", projection_oracle),
        ("estimator unbiasedness", estimator_unbiased),
        ("smoothed sandwich", smoothed_sandwich),
        ("algorithm invariants", algorithm_invariants),
        ("mixing and connectivity", mixing_connectivity),
        ("sublinearity trends", sublinearity),
        ("tau0 sweep ordering", tau0_sweep),
        ("full-information baseline", full_info_baseline),
        ("consensus sanity", consensus),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
