//! CSV and markdown output of simulation results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;

use crate::error::Result;
use crate::estimand::Estimand;
use crate::format::{sig17, sig17_opt};

use super::metrics::{MetricsRow, ORACLE};
use super::run::{ScenarioConfig, ScenarioRun};

/// Metrics of one finished scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub failed: usize,
    pub metrics: Vec<MetricsRow>,
}

impl ScenarioReport {
    pub fn new(run: &ScenarioRun, truths: &BTreeMap<Estimand, f64>) -> Result<Self> {
        Ok(Self {
            config: run.config.clone(),
            failed: run.failures.len(),
            metrics: super::metrics::summarize(&run.records, truths)?,
        })
    }
}

const SCENARIO_HEADER: [&str; 11] = [
    "scenario",
    "scheme",
    "ods",
    "m",
    "n",
    "n_multiplier",
    "v_obs",
    "ps_omit_w",
    "outcome_omit_w",
    "jackknife",
    "extended",
];

fn scenario_fields(c: &ScenarioConfig) -> Vec<String> {
    vec![
        c.label(),
        c.scheme.to_string(),
        c.ods.to_string(),
        c.m.to_string(),
        c.n().to_string(),
        c.n_multiplier.to_string(),
        c.v_obs.to_string(),
        c.ps_omit_w.to_string(),
        c.outcome_omit_w.to_string(),
        c.jackknife.map(|d| d.to_string()).unwrap_or_default(),
        c.extended().to_string(),
    ]
}

/// One row per scenario and metrics cell.
pub fn write_metrics_csv<W: io::Write>(out: W, reports: &[ScenarioReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = SCENARIO_HEADER.to_vec();
    header.extend([
        "failed",
        "estimator",
        "estimand",
        "corrected",
        "replications",
        "truth",
        "mean_estimate",
        "bias",
        "emp_se",
        "rmse",
        "rel_rmse",
        "rel_emp_se",
        "pct_gain",
        "coverage",
        "mean_se",
    ]);
    w.write_record(&header)?;
    for rep in reports {
        let base = scenario_fields(&rep.config);
        for r in &rep.metrics {
            let mut rec = base.clone();
            rec.extend([
                rep.failed.to_string(),
                r.estimator.clone(),
                r.estimand.to_string(),
                r.corrected.to_string(),
                r.replications.to_string(),
                sig17(r.truth),
                sig17(r.mean_estimate),
                sig17(r.bias),
                sig17(r.emp_se),
                sig17(r.rmse),
                sig17(r.rel_rmse),
                sig17(r.rel_emp_se),
                sig17_opt(r.pct_gain),
                sig17_opt(r.coverage),
                sig17_opt(r.mean_se),
            ]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Every per-replication estimate, long format.
pub fn write_records_csv<W: io::Write>(out: W, runs: &[ScenarioRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "rep",
        "phase2_size",
        "estimator",
        "estimand",
        "corrected",
        "tau_hat",
        "se",
        "ci_lower",
        "ci_upper",
    ])?;
    for run in runs {
        let label = run.config.label();
        for r in &run.records {
            let head = [label.clone(), r.rep.to_string(), r.phase2_size.to_string()];
            for &(e, v) in &r.oracle {
                let mut rec = head.to_vec();
                rec.extend([ORACLE.into(), e.to_string(), "false".into(), sig17(v)]);
                rec.extend([String::new(), String::new(), String::new()]);
                w.write_record(&rec)?;
            }
            for c in &r.cells {
                let mut rec = head.to_vec();
                rec.extend([
                    c.estimator.to_string(),
                    c.estimand.to_string(),
                    c.corrected.to_string(),
                    sig17(c.tau_hat),
                    sig17(c.se),
                    sig17(c.ci_lower),
                    sig17(c.ci_upper),
                ]);
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Bias, empirical SE and RMSE against `m`, one series per scenario family
/// and estimator.
pub fn write_by_m_csv<W: io::Write>(out: W, reports: &[ScenarioReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scheme", "ods", "n_multiplier", "v_obs", "ps_omit_w", "outcome_omit_w", "estimand",
        "estimator", "corrected", "m", "bias", "emp_se", "rmse",
    ])?;
    for rep in reports {
        let c = &rep.config;
        for r in &rep.metrics {
            w.write_record([
                c.scheme.to_string(),
                c.ods.to_string(),
                c.n_multiplier.to_string(),
                c.v_obs.to_string(),
                c.ps_omit_w.to_string(),
                c.outcome_omit_w.to_string(),
                r.estimand.to_string(),
                r.estimator.clone(),
                r.corrected.to_string(),
                c.m.to_string(),
                sig17(r.bias),
                sig17(r.emp_se),
                sig17(r.rmse),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_coverage_csv<W: io::Write>(out: W, reports: &[ScenarioReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario", "m", "estimand", "estimator", "corrected", "coverage", "mean_se", "emp_se",
    ])?;
    for rep in reports {
        for r in rep.metrics.iter().filter(|r| r.coverage.is_some()) {
            w.write_record([
                rep.config.label(),
                rep.config.m.to_string(),
                r.estimand.to_string(),
                r.estimator.clone(),
                r.corrected.to_string(),
                sig17_opt(r.coverage),
                sig17_opt(r.mean_se),
                sig17(r.emp_se),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Percentage gain of each enriched estimator over its IPSW counterpart
/// against the phase-1 covariate.
pub fn write_gain_by_vobs_csv<W: io::Write>(out: W, reports: &[ScenarioReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scheme", "ods", "m", "n_multiplier", "estimand", "estimator", "corrected", "v_obs",
        "pct_gain",
    ])?;
    for rep in reports {
        let c = &rep.config;
        for r in &rep.metrics {
            if let Some(g) = r.pct_gain {
                w.write_record([
                    c.scheme.to_string(),
                    c.ods.to_string(),
                    c.m.to_string(),
                    c.n_multiplier.to_string(),
                    r.estimand.to_string(),
                    r.estimator.clone(),
                    r.corrected.to_string(),
                    c.v_obs.to_string(),
                    sig17(g),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Markdown tables, one per (scheme, ODS, multiplier, estimand, corrected)
/// family. Columns are phase-2 sizes; each `V_obs` and estimator contributes
/// relative RMSE, relative empirical SE and bias x 100.
pub fn markdown_tables(reports: &[ScenarioReport]) -> String {
    type Family = (String, bool, usize, bool, bool, Estimand, bool);
    let mut families: BTreeMap<Family, Vec<(&ScenarioConfig, &MetricsRow)>> = BTreeMap::new();
    for rep in reports {
        let c = &rep.config;
        for r in rep.metrics.iter().filter(|r| r.estimator != ORACLE) {
            families
                .entry((
                    c.scheme.to_string(),
                    c.ods,
                    c.n_multiplier,
                    c.ps_omit_w,
                    c.outcome_omit_w,
                    r.estimand,
                    r.corrected,
                ))
                .or_default()
                .push((c, r));
        }
    }
    let mut s = String::new();
    for ((scheme, ods, mult, ps, om, estimand, corrected), cells) in &families {
        let ms: BTreeSet<usize> = cells.iter().map(|(c, _)| c.m).collect();
        let mut title = format!(
            "## {} {}, {scheme}, n = {mult}m",
            estimand.name(),
            if *ods { "ODS" } else { "non-ODS" }
        );
        if *corrected {
            title.push_str(", jackknife corrected");
        }
        if *ps {
            title.push_str(", propensity without W");
        }
        if *om {
            title.push_str(", outcome without W");
        }
        let _ = writeln!(s, "{title}\n");
        let _ = write!(s, "| V_obs | estimator | metric |");
        for m in &ms {
            let _ = write!(s, " m = {m} |");
        }
        let _ = write!(s, "\n|---|---|---|");
        for _ in &ms {
            let _ = write!(s, "---:|");
        }
        s.push('\n');
        let mut rows: BTreeMap<(usize, String), BTreeMap<usize, &MetricsRow>> = BTreeMap::new();
        for (c, r) in cells {
            rows.entry((c.v_obs, r.estimator.clone())).or_default().insert(c.m, r);
        }
        for ((v, est), by_m) in &rows {
            let metrics: [(&str, fn(&MetricsRow) -> f64, usize); 3] = [
                ("rel RMSE", |r| r.rel_rmse, 3),
                ("rel empSE", |r| r.rel_emp_se, 3),
                ("bias x 100", |r| 100.0 * r.bias, 2),
            ];
            for (name, f, digits) in metrics {
                let _ = write!(s, "| V{v} | {} | {name} |", est.to_uppercase());
                for m in &ms {
                    match by_m.get(m) {
                        Some(r) => {
                            let _ = write!(s, " {:.*} |", digits, f(r));
                        }
                        None => s.push_str(" |"),
                    }
                }
                s.push('\n');
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorKind;
    use crate::simstudy::run::{CellRecord, ReplicationRecord};
    use crate::twophase::SchemeKind;

    fn run() -> ScenarioRun {
        let cfg = ScenarioConfig::new(200, 4, SchemeKind::Poisson, true, 1);
        let records = (0..3)
            .map(|rep| ReplicationRecord {
                rep,
                phase2_size: 200,
                oracle: vec![(Estimand::Ate, 0.3 + 0.01 * rep as f64)],
                cells: [EstimatorKind::Siw, EstimatorKind::Eiw]
                    .into_iter()
                    .map(|k| CellRecord {
                        estimator: k,
                        estimand: Estimand::Ate,
                        corrected: false,
                        tau_hat: 0.3 + 0.02 * rep as f64,
                        se: 0.05,
                        ci_lower: 0.2,
                        ci_upper: 0.4,
                    })
                    .collect(),
            })
            .collect();
        ScenarioRun { config: cfg, records, failures: vec![] }
    }

    #[test]
    fn writes_consistent_outputs() {
        let run = run();
        let rep = ScenarioReport::new(&run, &[(Estimand::Ate, 0.31)].into()).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, std::slice::from_ref(&rep)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains(",oracle,"));

        let mut buf = Vec::new();
        write_records_csv(&mut buf, std::slice::from_ref(&run)).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 3);

        let md = markdown_tables(&[rep]);
        assert!(md.contains("| V1 | EIW | rel RMSE |"));
        assert!(md.contains("m = 200"));
    }

    #[test]
    fn csv_numbers_round_trip() {
        let rep = ScenarioReport::new(&run(), &[(Estimand::Ate, 0.31)].into()).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, std::slice::from_ref(&rep)).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let hdr = rdr.headers().unwrap().clone();
        let col = hdr.iter().position(|h| h == "bias").unwrap();
        let parsed: Vec<f64> = rdr.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
        let orig: Vec<f64> = rep.metrics.iter().map(|r| r.bias).collect();
        assert_eq!(parsed, orig);
    }
}
