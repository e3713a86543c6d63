//! Experiment orchestration: single runs, parameter sweeps and their
//! aggregate tables.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::algorithm::{run_horizon, InvariantReport, SimulationSpec};
use crate::config::{ConfigEcho, ConfigMap, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    emit_csv, network_ccv, network_regret, path_length, solve_dynamic_comparator, solve_static_comparator,
    ComparatorSequence, MetricsLog, SolverParams,
};
use crate::problem::{estimate_bounds, ProblemBounds, ProblemFamily, RegressionFamily, RoundProblem, MIN_BOUND_SAMPLES};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
/// Rounds sampled for the debug-mode problem constants.
pub const BOUND_ROUNDS: usize = 20;

/// Process exit code for an error: 2 configuration, 3 assumption check,
/// 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 4,
        Error::Connectivity { .. } | Error::Contract(_) => 3,
        Error::Parameter(_) | Error::Dimension { .. } | Error::Config { .. } | Error::MissingSubgradient(_) => 2,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparatorSummary {
    pub final_regret: f64,
    pub max_violation: f64,
    pub unconverged: usize,
    pub path_length: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mode: &'static str,
    pub n: usize,
    pub horizon: usize,
    pub final_avg_cum_loss: f64,
    pub final_avg_cum_ccv: f64,
    pub total_triggers: usize,
    pub static_comparator: Option<ComparatorSummary>,
    pub dynamic_comparator: Option<ComparatorSummary>,
    pub invariants: Option<InvariantReport>,
    pub bounds: Option<ProblemBounds>,
    pub config: ConfigEcho,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub log: MetricsLog,
    pub summary: RunSummary,
    pub static_comparator: Option<ComparatorSequence>,
    pub dynamic_comparator: Option<ComparatorSequence>,
}

fn comparator_summary(log: &MetricsLog, c: &ComparatorSequence, horizon: usize) -> Result<ComparatorSummary> {
    Ok(ComparatorSummary {
        final_regret: network_regret(log, c, horizon)?,
        max_violation: c.max_violation,
        unconverged: c.unconverged,
        path_length: path_length(&c.points),
    })
}

pub fn simulation_spec(cfg: &RunConfig, bounds: Option<ProblemBounds>) -> SimulationSpec {
    SimulationSpec {
        set: cfg.set,
        schedule: cfg.schedule,
        graph: cfg.graph,
        mode: cfg.mode,
        init: cfg.init,
        seed: cfg.seed,
        check_invariants: cfg.debug_invariants,
        bounds,
    }
}

/// Runs one configuration and writes `metrics.csv` and `summary.json` into
/// its output directory. Invariant violations in debug mode are reported
/// after the files are written.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    let family = RegressionFamily::new(cfg.dims, cfg.seed)?;
    let bounds = if cfg.debug_invariants {
        let rounds: Vec<usize> = (1..=cfg.horizon.min(BOUND_ROUNDS)).collect();
        Some(estimate_bounds(&family, &cfg.set, &rounds, MIN_BOUND_SAMPLES, cfg.seed)?)
    } else {
        None
    };
    let (log, report) = run_horizon(&family, simulation_spec(cfg, bounds), cfg.horizon)?;

    let (static_cmp, dynamic_cmp) = if cfg.compute_static_comparator || cfg.compute_dynamic_comparator {
        let problems: Vec<RoundProblem> = (1..=cfg.horizon).into_par_iter().map(|t| family.round(t)).collect();
        let params = SolverParams::default();
        let st = cfg
            .compute_static_comparator
            .then(|| solve_static_comparator(&problems, &cfg.set, &params))
            .transpose()?;
        let dy = cfg
            .compute_dynamic_comparator
            .then(|| solve_dynamic_comparator(&problems, &cfg.set, &params))
            .transpose()?;
        (st, dy)
    } else {
        (None, None)
    };

    let last = *log.last().expect("horizon is at least one round");
    let summary = RunSummary {
        seed: cfg.seed,
        mode: cfg.mode.name(),
        n: cfg.dims.n,
        horizon: cfg.horizon,
        final_avg_cum_loss: last.cum_loss,
        final_avg_cum_ccv: network_ccv(&log, cfg.horizon)?,
        total_triggers: last.cum_triggers,
        static_comparator: static_cmp
            .as_ref()
            .map(|c| comparator_summary(&log, c, cfg.horizon))
            .transpose()?,
        dynamic_comparator: dynamic_cmp
            .as_ref()
            .map(|c| comparator_summary(&log, c, cfg.horizon))
            .transpose()?,
        invariants: cfg.debug_invariants.then(|| report.clone()),
        bounds,
        config: cfg.echo(),
    };

    fs::create_dir_all(&cfg.out)?;
    emit_csv(&cfg.out.join(METRICS_FILE), &log, static_cmp.as_ref(), dynamic_cmp.as_ref())?;
    let json = serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?;
    fs::write(cfg.out.join(SUMMARY_FILE), json + "\n")?;

    if cfg.debug_invariants && report.violations() > 0 {
        return Err(Error::Contract(format!(
            "{} invariant violations over {} checked rounds: {report:?}",
            report.violations(),
            report.rounds_checked
        )));
    }
    Ok(RunOutcome {
        log,
        summary,
        static_comparator: static_cmp,
        dynamic_comparator: dynamic_cmp,
    })
}

/// Parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Tau0,
    Theta,
    C,
    Kappa,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tau0" => Ok(SweepParam::Tau0),
            "theta" => Ok(SweepParam::Theta),
            "c" => Ok(SweepParam::C),
            "kappa" => Ok(SweepParam::Kappa),
            other => Err(Error::config("param", format!("expected tau0, theta, c or kappa, got `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau0 => "tau0",
            SweepParam::Theta => "theta",
            SweepParam::C => "c",
            SweepParam::Kappa => "kappa",
        }
    }

    /// Key the value is written to, given the base configuration.
    fn key(self, base: &ConfigMap) -> Result<&'static str> {
        let resolved = base.resolved()?;
        let need = |key: &str, want: &str| -> Result<()> {
            if resolved[key] == want {
                Ok(())
            } else {
                Err(Error::config(
                    key,
                    format!("sweeping {} needs {key} = {want}, got {}", self.name(), resolved[key]),
                ))
            }
        };
        match self {
            SweepParam::Tau0 => need("trigger", "scaled_power").map(|_| "trigger.tau0"),
            SweepParam::C => need("trigger", "geometric").map(|_| "trigger.c"),
            SweepParam::Kappa => need("schedule.family", "theorem1").map(|_| "schedule.kappa"),
            SweepParam::Theta => match resolved["trigger"].as_str() {
                "power" => Ok("trigger.theta"),
                "scaled_power" => Ok("trigger.theta3"),
                other => Err(Error::config(
                    "trigger",
                    format!("sweeping theta needs a power or scaled_power trigger, got {other}"),
                )),
            },
        }
    }
}

/// One finished sweep run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    pub dir: PathBuf,
}

pub fn run_dir(root: &Path, param: SweepParam, value: f64, seed: u64) -> PathBuf {
    root.join(format!("{}-{value}", param.name())).join(format!("seed-{seed}"))
}

/// Runs every `(value, seed)` pair in parallel under `root` and writes the
/// aggregate table computed from the per-run CSVs.
pub fn sweep(base: &ConfigMap, param: SweepParam, values: &[f64], seeds: &[u64], root: &Path) -> Result<Vec<AggregateRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value and one seed"));
    }
    let key = param.key(base)?;
    let mut jobs = Vec::new();
    for &value in values {
        for &seed in seeds {
            let mut map = base.clone();
            map.set(key, &value.to_string())?;
            map.set("seed", &seed.to_string())?;
            let dir = run_dir(root, param, value, seed);
            map.set("out", dir.to_str().ok_or_else(|| Error::config("out", "path is not UTF-8"))?)?;
            jobs.push((RunConfig::from_map(&map)?, SweepRun { value, seed, dir }));
        }
    }
    let runs: Vec<SweepRun> = jobs
        .into_par_iter()
        .map(|(cfg, run)| run_experiment(&cfg).map(|_| run))
        .collect::<Result<_>>()?;
    let rows = aggregate(&runs)?;
    write_aggregate(&root.join(AGGREGATE_FILE), param, &rows)?;
    Ok(rows)
}

/// Last row of a metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalRow {
    pub t: usize,
    pub avg_cum_loss: f64,
    pub avg_cum_loss_per_t: f64,
    pub avg_cum_ccv: f64,
    pub avg_cum_ccv_per_t: f64,
    pub cum_triggers: usize,
}

pub fn read_final_row(path: &Path) -> Result<FinalRow> {
    let text = fs::read_to_string(path)?;
    let bad = |msg: &str| Error::Contract(format!("{}: {msg}", path.display()));
    let line = text.lines().skip(1).last().ok_or_else(|| bad("no data rows"))?;
    let cells: Vec<&str> = line.split(',').collect();
    if cells.len() < 6 {
        return Err(bad("short row"));
    }
    let num = |k: usize| -> Result<f64> { cells[k].parse().map_err(|_| bad("unparsable number")) };
    Ok(FinalRow {
        t: cells[0].parse().map_err(|_| bad("unparsable round"))?,
        avg_cum_loss: num(1)?,
        avg_cum_loss_per_t: num(2)?,
        avg_cum_ccv: num(3)?,
        avg_cum_ccv_per_t: num(4)?,
        cum_triggers: cells[5].parse().map_err(|_| bad("unparsable trigger count"))?,
    })
}

/// Per-value means over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub value: f64,
    pub runs: usize,
    pub mean_final_avg_cum_loss: f64,
    pub mean_final_avg_cum_loss_per_t: f64,
    pub mean_final_avg_cum_ccv: f64,
    pub mean_final_avg_cum_ccv_per_t: f64,
    pub mean_total_triggers: f64,
}

/// Means per value, in first-appearance order, read back from each run's CSV.
pub fn aggregate(runs: &[SweepRun]) -> Result<Vec<AggregateRow>> {
    let mut rows: Vec<(f64, Vec<FinalRow>)> = Vec::new();
    for run in runs {
        let fin = read_final_row(&run.dir.join(METRICS_FILE))?;
        match rows.iter_mut().find(|(v, _)| *v == run.value) {
            Some((_, list)) => list.push(fin),
            None => rows.push((run.value, vec![fin])),
        }
    }
    Ok(rows
        .into_iter()
        .map(|(value, list)| {
            let k = list.len() as f64;
            let mean = |f: &dyn Fn(&FinalRow) -> f64| list.iter().map(f).sum::<f64>() / k;
            AggregateRow {
                value,
                runs: list.len(),
                mean_final_avg_cum_loss: mean(&|r| r.avg_cum_loss),
                mean_final_avg_cum_loss_per_t: mean(&|r| r.avg_cum_loss_per_t),
                mean_final_avg_cum_ccv: mean(&|r| r.avg_cum_ccv),
                mean_final_avg_cum_ccv_per_t: mean(&|r| r.avg_cum_ccv_per_t),
                mean_total_triggers: mean(&|r| r.cum_triggers as f64),
            }
        })
        .collect())
}

pub fn write_aggregate(path: &Path, param: SweepParam, rows: &[AggregateRow]) -> Result<()> {
    let mut text = format!(
        "{},runs,mean_final_avg_cum_loss,mean_final_avg_cum_loss_per_t,mean_final_avg_cum_ccv,mean_final_avg_cum_ccv_per_t,mean_total_triggers\n",
        param.name()
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}\n",
            r.value,
            r.runs,
            r.mean_final_avg_cum_loss,
            r.mean_final_avg_cum_loss_per_t,
            r.mean_final_avg_cum_ccv,
            r.mean_final_avg_cum_ccv_per_t,
            r.mean_total_triggers
        ));
    }
    fs::write(path, text)?;
    Ok(())
}
