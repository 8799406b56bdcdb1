//! Monte Carlo performance metrics.
//!
//! For estimates `t_1..t_R` of a truth `tau`: `Bias = mean(t) - tau`,
//! `empSE` uses divisor `R - 1`, `RMSE = sqrt(mean((t - tau)^2))` uses
//! divisor `R`, so `RMSE^2 = Bias^2 + empSE^2 (R - 1) / R`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimand::Estimand;
use crate::estimators::EstimatorKind;

use super::run::ReplicationRecord;

pub const ORACLE: &str = "oracle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// `siw`, `eiw`, `sdr`, `edr` or `oracle`.
    pub estimator: String,
    pub estimand: Estimand,
    pub corrected: bool,
    pub replications: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub emp_se: f64,
    pub rmse: f64,
    pub rel_rmse: f64,
    pub rel_emp_se: f64,
    /// Enriched rows only: `100 (empSE(IPSW) - empSE(enriched)) / empSE(IPSW)`.
    pub pct_gain: Option<f64>,
    pub coverage: Option<f64>,
    pub mean_se: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub bias: f64,
    pub emp_se: f64,
    pub rmse: f64,
}

pub fn moments(estimates: &[f64], truth: f64) -> Result<Moments> {
    let r = estimates.len();
    if r < 2 {
        return Err(Error::InvalidArgument(format!(
            "metrics need at least two replications, got {r}"
        )));
    }
    let rf = r as f64;
    let mean = estimates.iter().sum::<f64>() / rf;
    let var = estimates.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (rf - 1.0);
    let mse = estimates.iter().map(|t| (t - truth).powi(2)).sum::<f64>() / rf;
    Ok(Moments {
        mean,
        bias: mean - truth,
        emp_se: var.sqrt(),
        rmse: mse.sqrt(),
    })
}

pub fn pct_gain(emp_se_ipsw: f64, emp_se_enriched: f64) -> f64 {
    100.0 * (emp_se_ipsw - emp_se_enriched) / emp_se_ipsw
}

type CellKey = (Estimand, EstimatorKind, bool);

/// Metrics per (estimator, estimand, corrected) cell plus one oracle row per
/// estimand. Rows are ordered by estimand, then oracle, then estimator and
/// correction.
pub fn summarize(records: &[ReplicationRecord], truths: &BTreeMap<Estimand, f64>) -> Result<Vec<MetricsRow>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no replication records to summarize".into()));
    }
    let mut cells: BTreeMap<CellKey, Vec<(f64, f64, f64, f64)>> = BTreeMap::new();
    let mut oracle: BTreeMap<Estimand, Vec<f64>> = BTreeMap::new();
    for r in records {
        for c in &r.cells {
            cells
                .entry((c.estimand, c.estimator, c.corrected))
                .or_default()
                .push((c.tau_hat, c.se, c.ci_lower, c.ci_upper));
        }
        for &(e, v) in &r.oracle {
            oracle.entry(e).or_default().push(v);
        }
    }
    let truth = |e: Estimand| {
        truths
            .get(&e)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no true value for {e}")))
    };
    let mut oracle_m = BTreeMap::new();
    for (&e, v) in &oracle {
        oracle_m.insert(e, moments(v, truth(e)?)?);
    }
    let mut emp: BTreeMap<CellKey, f64> = BTreeMap::new();
    let mut rows = Vec::new();
    for (&e, m) in &oracle_m {
        rows.push(MetricsRow {
            estimator: ORACLE.into(),
            estimand: e,
            corrected: false,
            replications: oracle[&e].len(),
            truth: truth(e)?,
            mean_estimate: m.mean,
            bias: m.bias,
            emp_se: m.emp_se,
            rmse: m.rmse,
            rel_rmse: 1.0,
            rel_emp_se: 1.0,
            pct_gain: None,
            coverage: None,
            mean_se: None,
        });
    }
    let mut cell_rows = Vec::new();
    for (&(e, kind, corrected), v) in &cells {
        let tau = truth(e)?;
        let est: Vec<f64> = v.iter().map(|x| x.0).collect();
        let m = moments(&est, tau)?;
        let o = oracle_m
            .get(&e)
            .ok_or_else(|| Error::InvalidArgument(format!("no oracle estimates for {e}")))?;
        let covered = v.iter().filter(|x| x.2 <= tau && tau <= x.3).count();
        emp.insert((e, kind, corrected), m.emp_se);
        cell_rows.push(MetricsRow {
            estimator: kind.name().into(),
            estimand: e,
            corrected,
            replications: v.len(),
            truth: tau,
            mean_estimate: m.mean,
            bias: m.bias,
            emp_se: m.emp_se,
            rmse: m.rmse,
            rel_rmse: m.rmse / o.rmse,
            rel_emp_se: m.emp_se / o.emp_se,
            pct_gain: None,
            coverage: Some(covered as f64 / v.len() as f64),
            mean_se: Some(v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64),
        });
    }
    for row in &mut cell_rows {
        let kind: EstimatorKind = row.estimator.parse()?;
        if kind.is_enriched() {
            if let Some(&base) = emp.get(&(row.estimand, kind.ipsw_counterpart(), row.corrected)) {
                row.pct_gain = Some(pct_gain(base, row.emp_se));
            }
        }
    }
    rows.extend(cell_rows);
    rows.sort_by(|a, b| {
        (a.estimand, a.estimator != ORACLE, &a.estimator, a.corrected)
            .cmp(&(b.estimand, b.estimator != ORACLE, &b.estimator, b.corrected))
    });
    Ok(rows)
}

/// Looks up a metrics row.
pub fn find<'a>(
    rows: &'a [MetricsRow],
    estimator: &str,
    estimand: Estimand,
    corrected: bool,
) -> Option<&'a MetricsRow> {
    rows.iter()
        .find(|r| r.estimator == estimator && r.estimand == estimand && r.corrected == corrected)
}
