//! Network regret, cumulative constraint violation, trigger telemetry and
//! the per-round CSV log.

mod comparator;

pub use comparator::{
    solve_dynamic_comparator, solve_round, solve_static_comparator, ComparatorKind, ComparatorSequence, SolveReport, SolverParams,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithm::AgentState;
use crate::error::{check_dim, Error, Result};
use crate::geometry::{norm, Vector};
use crate::problem::RoundProblem;

/// One round of the log. Averages are over agents; every agent's decision is
/// charged the global loss `f_t = (1/n) Σ_j f_{j,t}` and the stacked
/// violation `‖[g_t]_+‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub t: usize,
    /// `(1/n) Σ_i f_t(x_{i,t})`
    pub avg_loss: f64,
    /// `(1/n) Σ_i ‖[g_t(x_{i,t})]_+‖`
    pub avg_violation: f64,
    /// broadcasts that produced `x̂_{·,t}`
    pub triggers: usize,
    pub cum_loss: f64,
    pub cum_ccv: f64,
    pub cum_triggers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    n: usize,
    rows: Vec<RoundRow>,
    /// `Σ_s f_s(x_{i,s})` per agent
    agent_cum_loss: Vec<f64>,
    /// `Σ_s ‖[g_s(x_{i,s})]_+‖` per agent
    agent_cum_ccv: Vec<f64>,
}

impl MetricsLog {
    pub fn new(n: usize) -> Self {
        MetricsLog {
            n,
            rows: Vec::new(),
            agent_cum_loss: vec![0.0; n],
            agent_cum_ccv: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[RoundRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&RoundRow> {
        self.rows.last()
    }

    pub fn agent_cum_loss(&self) -> &[f64] {
        &self.agent_cum_loss
    }

    pub fn agent_cum_ccv(&self) -> &[f64] {
        &self.agent_cum_ccv
    }

    /// Appends round `len() + 1`, evaluating every agent's round oracle at
    /// every agent's decision.
    pub fn record(&mut self, problem: &RoundProblem, states: &[AgentState], triggers: usize) -> Result<()> {
        let decisions: Vec<&Vector> = states.iter().map(|s| &s.x).collect();
        self.record_decisions(problem, &decisions, triggers)
    }

    pub fn record_decisions(&mut self, problem: &RoundProblem, decisions: &[&Vector], triggers: usize) -> Result<()> {
        check_dim("decisions in metrics log", self.n, decisions.len())?;
        let per_agent: Vec<(f64, f64)> = decisions
            .par_iter()
            .map(|x| (problem.global_loss(x), problem.global_violation(x)))
            .collect();
        let n = self.n as f64;
        let (mut loss, mut ccv) = (0.0, 0.0);
        for (i, (l, v)) in per_agent.into_iter().enumerate() {
            self.agent_cum_loss[i] += l;
            self.agent_cum_ccv[i] += v;
            loss += l;
            ccv += v;
        }
        let (avg_loss, avg_violation) = (loss / n, ccv / n);
        let (cum_loss, cum_ccv, cum_triggers) = self
            .rows
            .last()
            .map_or((0.0, 0.0, 0), |r| (r.cum_loss, r.cum_ccv, r.cum_triggers));
        self.rows.push(RoundRow {
            t: self.rows.len() + 1,
            avg_loss,
            avg_violation,
            triggers,
            cum_loss: cum_loss + avg_loss,
            cum_ccv: cum_ccv + avg_violation,
            cum_triggers: cum_triggers + triggers,
        });
        Ok(())
    }

    fn row(&self, horizon: usize) -> Result<&RoundRow> {
        if horizon == 0 || horizon > self.rows.len() {
            return Err(Error::Dimension {
                what: "rounds in metrics log",
                expected: horizon,
                found: self.rows.len(),
            });
        }
        Ok(&self.rows[horizon - 1])
    }
}

/// `(1/n) Σ_i Σ_{t≤T} f_t(x_{i,t}) − Σ_{t≤T} f_t(y_t)`
pub fn network_regret(log: &MetricsLog, comparator: &ComparatorSequence, horizon: usize) -> Result<f64> {
    let row = log.row(horizon)?;
    if comparator.round_losses.len() < horizon {
        return Err(Error::Dimension {
            what: "comparator length",
            expected: horizon,
            found: comparator.round_losses.len(),
        });
    }
    let reference: f64 = comparator.round_losses[..horizon].iter().sum();
    Ok(row.cum_loss - reference)
}

/// `(1/n) Σ_i Σ_{t≤T} ‖[g_t(x_{i,t})]_+‖`
pub fn network_ccv(log: &MetricsLog, horizon: usize) -> Result<f64> {
    Ok(log.row(horizon)?.cum_ccv)
}

/// `Σ_t ‖y_{t+1} − y_t‖`
pub fn path_length(points: &[Vector]) -> f64 {
    points.windows(2).map(|w| norm(&(&w[1] - &w[0]))).sum()
}

pub const CSV_HEADER: &str =
    "t,avg_cum_loss,avg_cum_loss_per_t,avg_cum_ccv,avg_cum_ccv_per_t,cum_triggers,regret_static,regret_dynamic";

fn fmt_num(v: f64) -> String {
    format!("{v:.15e}")
}

/// Writes one row per round. Comparator columns are left empty when the
/// corresponding comparator is absent.
pub fn write_csv<W: Write>(
    out: &mut W,
    log: &MetricsLog,
    static_cmp: Option<&ComparatorSequence>,
    dynamic_cmp: Option<&ComparatorSequence>,
) -> Result<()> {
    for c in [static_cmp, dynamic_cmp].into_iter().flatten() {
        if c.round_losses.len() < log.len() {
            return Err(Error::Dimension {
                what: "comparator length",
                expected: log.len(),
                found: c.round_losses.len(),
            });
        }
    }
    writeln!(out, "{CSV_HEADER}")?;
    let (mut ref_static, mut ref_dynamic) = (0.0, 0.0);
    for row in log.rows() {
        let tf = row.t as f64;
        let mut cells = vec![
            row.t.to_string(),
            fmt_num(row.cum_loss),
            fmt_num(row.cum_loss / tf),
            fmt_num(row.cum_ccv),
            fmt_num(row.cum_ccv / tf),
            row.cum_triggers.to_string(),
        ];
        for (c, acc) in [(static_cmp, &mut ref_static), (dynamic_cmp, &mut ref_dynamic)] {
            cells.push(match c {
                Some(c) => {
                    *acc += c.round_losses[row.t - 1];
                    fmt_num(row.cum_loss - *acc)
                }
                None => String::new(),
            });
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn emit_csv(
    path: &Path,
    log: &MetricsLog,
    static_cmp: Option<&ComparatorSequence>,
    dynamic_cmp: Option<&ComparatorSequence>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(&mut w, log, static_cmp, dynamic_cmp)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{FnOracle, LocalOracle};
    use ndarray::array;
    use std::sync::Arc;

    fn round(oracles: Vec<FnOracle>) -> RoundProblem {
        RoundProblem::new(1, oracles.into_iter().map(|o| Arc::new(o) as Arc<dyn LocalOracle>).collect())
    }

    fn sequence(round_losses: Vec<f64>) -> ComparatorSequence {
        ComparatorSequence {
            kind: ComparatorKind::Dynamic,
            points: vec![array![0.0]; round_losses.len()],
            round_losses,
            max_violation: 0.0,
            unconverged: 0,
        }
    }

    #[test]
    fn regret_single_agent_square() {
        let p = round(vec![FnOracle::new(1, 0, |x| x[0] * x[0], |_| array![])]);
        let mut log = MetricsLog::new(1);
        log.record_decisions(&p, &[&array![1.0]], 1).unwrap();
        let cmp = sequence(vec![p.global_loss(&array![0.0])]);
        assert_eq!(network_regret(&log, &cmp, 1).unwrap(), 1.0);
    }

    #[test]
    fn regret_against_own_decisions_is_zero() {
        let mut log = MetricsLog::new(1);
        let mut losses = Vec::new();
        for t in 1..=5 {
            let c = t as f64;
            let p = round(vec![FnOracle::new(1, 0, move |x| (x[0] - c).powi(2), |_| array![])]);
            let x = array![0.3 * c];
            log.record_decisions(&p, &[&x], 1).unwrap();
            losses.push(p.global_loss(&x));
        }
        assert_eq!(network_regret(&log, &sequence(losses), 5).unwrap(), 0.0);
    }

    #[test]
    fn opposite_losses_cancel() {
        let p = round(vec![
            FnOracle::new(1, 0, |x| x[0], |_| array![]),
            FnOracle::new(1, 0, |x| -x[0], |_| array![]),
        ]);
        let mut log = MetricsLog::new(2);
        log.record_decisions(&p, &[&array![3.0], &array![-7.0]], 2).unwrap();
        assert_eq!(network_regret(&log, &sequence(vec![0.0]), 1).unwrap(), 0.0);
    }

    #[test]
    fn regret_length_errors() {
        let p = round(vec![FnOracle::new(1, 0, |x| x[0], |_| array![])]);
        let mut log = MetricsLog::new(1);
        log.record_decisions(&p, &[&array![1.0]], 1).unwrap();
        log.record_decisions(&p, &[&array![1.0]], 0).unwrap();
        assert!(network_regret(&log, &sequence(vec![0.0]), 2).is_err());
        assert!(network_regret(&log, &sequence(vec![0.0; 3]), 3).is_err());
        assert!(network_ccv(&log, 0).is_err());
    }

    #[test]
    fn ccv_examples() {
        let feasible = round(vec![FnOracle::new(1, 1, |_| 0.0, |x| array![x[0] - 10.0])]);
        let mut log = MetricsLog::new(1);
        for _ in 0..3 {
            log.record_decisions(&feasible, &[&array![1.0]], 0).unwrap();
        }
        assert_eq!(network_ccv(&log, 3).unwrap(), 0.0);

        // g = (x − 1, −x) at x = 2 → [g]_+ = (1, 0)
        let p = round(vec![FnOracle::new(1, 2, |_| 0.0, |x| array![x[0] - 1.0, -x[0]])]);
        let mut log = MetricsLog::new(1);
        log.record_decisions(&p, &[&array![2.0]], 1).unwrap();
        assert_eq!(network_ccv(&log, 1).unwrap(), 1.0);

        // stacking across agents before the norm: (3, 4) → 5
        let p = round(vec![
            FnOracle::new(1, 1, |_| 0.0, |x| array![3.0 * x[0]]),
            FnOracle::new(1, 1, |_| 0.0, |x| array![4.0 * x[0]]),
        ]);
        let mut log = MetricsLog::new(2);
        log.record_decisions(&p, &[&array![1.0], &array![1.0]], 2).unwrap();
        assert_eq!(network_ccv(&log, 1).unwrap(), 5.0);
    }

    #[test]
    fn path_length_examples() {
        assert_eq!(path_length(&vec![array![1.0, 2.0]; 4]), 0.0);
        assert_eq!(path_length(&[array![0.0, 0.0], array![3.0, 4.0]]), 5.0);
        assert_eq!(path_length(&[array![1.0]]), 0.0);
    }

    fn small_log(rounds: usize) -> MetricsLog {
        let p = round(vec![
            FnOracle::new(1, 1, |x| (x[0] - 0.3).powi(2), |x| array![x[0] - 0.5]),
            FnOracle::new(1, 1, |x| x[0].abs(), |x| array![-x[0]]),
        ]);
        let mut log = MetricsLog::new(2);
        for t in 0..rounds {
            let a = array![0.1 * t as f64];
            let b = array![1.0 - 0.2 * t as f64];
            log.record_decisions(&p, &[&a, &b], if t == 0 { 2 } else { t % 2 }).unwrap();
        }
        log
    }

    #[test]
    fn csv_shape_and_columns() {
        let log = small_log(3);
        let mut buf = Vec::new();
        write_csv(&mut buf, &log, None, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CSV_HEADER);
        for line in &lines[1..] {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 8);
            assert_eq!(cells[6], "");
            assert_eq!(cells[7], "");
            let t: f64 = cells[0].parse().unwrap();
            let cum: f64 = cells[1].parse().unwrap();
            let per: f64 = cells[2].parse().unwrap();
            assert!((per - cum / t).abs() <= 1e-12 * cum.abs().max(1.0));
            let ccv: f64 = cells[3].parse().unwrap();
            let ccv_per: f64 = cells[4].parse().unwrap();
            assert!((ccv_per - ccv / t).abs() <= 1e-12 * ccv.abs().max(1.0));
        }
        assert_eq!(lines[3].split(',').nth(5), Some("3"));
    }

    #[test]
    fn csv_comparator_columns() {
        let log = small_log(3);
        let cmp = sequence(vec![0.5, 0.25, 0.125]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &log, Some(&cmp), Some(&cmp)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
        let want = network_regret(&log, &cmp, 3).unwrap();
        let got: f64 = last[6].parse().unwrap();
        assert!((got - want).abs() < 1e-12);
        assert_eq!(last[6], last[7]);

        let short = sequence(vec![0.5]);
        assert!(write_csv(&mut Vec::new(), &log, Some(&short), None).is_err());
    }

    #[test]
    fn csv_values_keep_sixteen_significant_digits() {
        assert_eq!(fmt_num(1.0 / 3.0), "3.333333333333333e-1");
        assert_eq!(fmt_num(0.0), "0.000000000000000e0");
    }

    #[test]
    fn cumulative_series_are_monotone() {
        let log = small_log(10);
        for w in log.rows().windows(2) {
            assert!(w[1].cum_ccv >= w[0].cum_ccv);
            assert!(w[1].cum_triggers >= w[0].cum_triggers);
        }
        let total: f64 = log.agent_cum_loss().iter().sum::<f64>() / 2.0;
        assert!((total - log.last().unwrap().cum_loss).abs() < 1e-12);
    }
}
