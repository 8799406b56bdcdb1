use std::io::Write;

use anyhow::Context;
use serde::Serialize;
use serde_json::value::RawValue;

use wate_core::dataset::{build_strata, load_observations, validate, ObservationTable, Schema, StratumIndex};
use wate_core::estimators::{estimate_from_predictions, fit_nuisances, ModelSpec, Predictions};
use wate_core::exec::Execution;
use wate_core::format::sig17;
use wate_core::inference::{normal_critical_value, variance, VarianceMethod};
use wate_core::jackknife::{jackknife_correct_many, partition_stratified};
use wate_core::nuisance::FitOptions;
use wate_core::twophase::format_key;

use crate::args::{EstimateArgs, Format};
use crate::output::{num, open_input, open_output, user_error, write_json};

#[derive(Debug, Clone)]
struct Row {
    estimand: String,
    estimator: String,
    method: VarianceMethod,
    tau_hat: f64,
    se: f64,
    ci_lower: f64,
    ci_upper: f64,
    corrected: Option<f64>,
}

#[derive(Serialize)]
struct JsonRow {
    estimand: String,
    estimator: String,
    variance_method: &'static str,
    tau_hat: Box<RawValue>,
    se: Box<RawValue>,
    ci_lower: Box<RawValue>,
    ci_upper: Box<RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    corrected: Option<JsonCorrected>,
}

#[derive(Serialize)]
struct JsonCorrected {
    tau_hat: Box<RawValue>,
    ci_lower: Box<RawValue>,
    ci_upper: Box<RawValue>,
}

#[derive(Serialize)]
struct JsonStratum {
    key: String,
    n: usize,
    m: usize,
    q: Box<RawValue>,
}

#[derive(Serialize)]
struct JsonReport {
    n: usize,
    phase2: usize,
    level: Box<RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    jackknife_groups: Option<usize>,
    nuisance_converged: bool,
    clamped_propensities: usize,
    strata: Vec<JsonStratum>,
    results: Vec<JsonRow>,
}

fn models(args: &EstimateArgs) -> ModelSpec {
    let all: Vec<String> = args.columns.v.iter().chain(&args.columns.w).cloned().collect();
    ModelSpec {
        propensity: args.ps_covariates.clone().unwrap_or_else(|| all.clone()),
        outcome: args.outcome_covariates.clone().unwrap_or(all),
    }
}

fn load(args: &EstimateArgs) -> anyhow::Result<ObservationTable> {
    let c = &args.columns;
    let schema = Schema {
        delta: c.delta.clone(),
        q: c.q.clone(),
        treatment: c.treatment.clone(),
        outcome: c.outcome.clone(),
        v: c.v.clone(),
        w: c.w.clone(),
    };
    let table = load_observations(open_input(&args.input)?, &schema)
        .with_context(|| format!("loading {}", args.input.display()))?;
    let report = validate(&table, &args.strata);
    for w in &report.warnings {
        log::warn!("{w}");
    }
    for n in &report.notes {
        log::info!("{n}");
    }
    if !report.is_clean() {
        return Err(user_error(format!("invalid input:\n  {}", report.violations.join("\n  "))));
    }
    Ok(table)
}

fn point_estimates(
    table: &ObservationTable,
    strata: &StratumIndex,
    args: &EstimateArgs,
    spec: &ModelSpec,
) -> wate_core::Result<Vec<f64>> {
    let bundle = fit_nuisances(table, spec, &FitOptions::default())?;
    let pred = Predictions::from_bundle(table, &bundle)?;
    let mut out = Vec::new();
    for &est in &args.estimand {
        for &kind in &args.estimator {
            out.push(estimate_from_predictions(table, &pred, est, kind, Some(strata))?.tau_hat);
        }
    }
    Ok(out)
}

pub fn run(args: &EstimateArgs) -> anyhow::Result<()> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(user_error(format!("--level {} must lie in (0, 1)", args.level)));
    }
    if args.jackknife.is_some() && args.seed.is_none() {
        return Err(user_error("--jackknife needs --seed"));
    }
    let table = load(args)?;
    let spec = models(args);
    let strata = build_strata(&table, &args.strata)?;
    let bundle = fit_nuisances(&table, &spec, &FitOptions::default())?;
    if !bundle.all_converged() {
        log::warn!("a nuisance model did not converge");
    }
    let pred = Predictions::from_bundle(&table, &bundle)?;

    let mut rows = Vec::new();
    for &est in &args.estimand {
        for &kind in &args.estimator {
            let res = estimate_from_predictions(&table, &pred, est, kind, Some(&strata))?;
            let method = args.variance.unwrap_or(VarianceMethod::default_for(kind));
            let v = variance(method, &table, &bundle, &res, Some(&strata), args.level)?;
            rows.push(Row {
                estimand: est.to_string(),
                estimator: kind.to_string(),
                method,
                tau_hat: res.tau_hat,
                se: v.se,
                ci_lower: v.ci_lower,
                ci_upper: v.ci_upper,
                corrected: None,
            });
        }
    }
    if let (Some(d), Some(seed)) = (args.jackknife, args.seed) {
        let plan = partition_stratified(table.delta(), d, seed)?;
        let jk = jackknife_correct_many(
            |t| {
                let s = build_strata(t, &args.strata)?;
                point_estimates(t, &s, args, &spec)
            },
            &table,
            &plan,
            Execution::Sequential,
        )?;
        for (r, c) in rows.iter_mut().zip(jk.corrected) {
            r.corrected = Some(c);
        }
    }

    let z = normal_critical_value(args.level)?;
    match args.format {
        Format::Json => {
            let report = JsonReport {
                n: table.n(),
                phase2: table.phase2_count(),
                level: num(args.level),
                jackknife_groups: args.jackknife,
                nuisance_converged: bundle.all_converged(),
                clamped_propensities: pred.clamped,
                strata: (0..strata.k())
                    .map(|k| JsonStratum {
                        key: format_key(&strata.keys[k]),
                        n: strata.counts[k],
                        m: strata.phase2_counts[k],
                        q: num(strata.q[k]),
                    })
                    .collect(),
                results: rows
                    .iter()
                    .map(|r| JsonRow {
                        estimand: r.estimand.clone(),
                        estimator: r.estimator.clone(),
                        variance_method: r.method.name(),
                        tau_hat: num(r.tau_hat),
                        se: num(r.se),
                        ci_lower: num(r.ci_lower),
                        ci_upper: num(r.ci_upper),
                        corrected: r.corrected.map(|c| JsonCorrected {
                            tau_hat: num(c),
                            ci_lower: num(c - z * r.se),
                            ci_upper: num(c + z * r.se),
                        }),
                    })
                    .collect(),
            };
            write_json(args.out.as_deref(), &report)?;
        }
        Format::Csv => {
            let mut out = open_output(args.out.as_deref())?;
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record([
                "estimand", "estimator", "variance_method", "tau_hat", "se", "ci_lower", "ci_upper",
                "corrected_tau_hat", "corrected_ci_lower", "corrected_ci_upper",
            ])?;
            for r in &rows {
                let corr = |f: fn(f64, f64) -> f64| r.corrected.map(|c| sig17(f(c, z * r.se))).unwrap_or_default();
                w.write_record([
                    r.estimand.clone(),
                    r.estimator.clone(),
                    r.method.name().to_string(),
                    sig17(r.tau_hat),
                    sig17(r.se),
                    sig17(r.ci_lower),
                    sig17(r.ci_upper),
                    corr(|c, _| c),
                    corr(|c, h| c - h),
                    corr(|c, h| c + h),
                ])?;
            }
            w.flush()?;
            drop(w);
            out.flush()?;
        }
        Format::Md => {
            let mut out = open_output(args.out.as_deref())?;
            let pct = 100.0 * args.level;
            writeln!(out, "| estimand | estimator | estimate | SE | {pct}% CI | corrected |")?;
            writeln!(out, "|---|---|---:|---:|---|---:|")?;
            for r in &rows {
                writeln!(
                    out,
                    "| {} | {} | {:.4} | {:.4} | ({:.4}, {:.4}) | {} |",
                    r.estimand.to_uppercase(),
                    r.estimator.to_uppercase(),
                    r.tau_hat,
                    r.se,
                    r.ci_lower,
                    r.ci_upper,
                    r.corrected.map(|c| format!("{c:.4}")).unwrap_or_default()
                )?;
            }
            out.flush()?;
        }
    }
    Ok(())
}
