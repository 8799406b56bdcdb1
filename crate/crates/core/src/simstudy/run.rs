//! Scenario configuration and replication loop.

use ordered_float::OrderedFloat;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_strata, ObservationTable, Schema, StratumIndex, StratumKey};
use crate::error::{Error, Result};
use crate::estimand::Estimand;
use crate::estimators::{
    estimate_from_predictions, fit_nuisances, EstimatorKind, ModelSpec, Predictions,
};
use crate::exec::{map_indexed, Execution};
use crate::inference::{normal_critical_value, variance, VarianceMethod};
use crate::jackknife::{jackknife_correct_many, partition_stratified};
use crate::nuisance::FitOptions;
use crate::twophase::{equal_allocation, poisson_sample, srswor_sample, QByStratum, SchemeKind};

use super::dgp::{
    generate_population_with, oracle_estimate, stratum_columns, v_name, DgpParams,
    ReferenceSummary, Unit, NUM_V,
};

pub const STANDARD_M: [usize; 4] = [200, 500, 1000, 2000];
pub const STANDARD_MULTIPLIERS: [usize; 2] = [4, 10];

/// Failed replications above this share abort the scenario.
pub const MAX_FAILURE_SHARE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub m: usize,
    pub n_multiplier: usize,
    pub scheme: SchemeKind,
    pub ods: bool,
    /// Index `j` of the phase-1 covariate `V_j`, 1 to 8.
    pub v_obs: usize,
    #[serde(default = "all_estimands")]
    pub estimands: Vec<Estimand>,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<EstimatorKind>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub jackknife: Option<usize>,
    #[serde(default = "default_reference_n")]
    pub reference_n: usize,
    #[serde(default = "default_reference_seed")]
    pub reference_seed: u64,
    /// Drop `W` from the propensity model.
    #[serde(default)]
    pub ps_omit_w: bool,
    /// Drop `W` from the outcome models.
    #[serde(default)]
    pub outcome_omit_w: bool,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn all_estimands() -> Vec<Estimand> {
    Estimand::ALL.to_vec()
}

fn all_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}

pub fn default_reference_n() -> usize {
    10_000_000
}

pub fn default_reference_seed() -> u64 {
    20_250_101
}

fn default_level() -> f64 {
    0.95
}

impl ScenarioConfig {
    /// A scenario with the default estimand, estimator and reference settings.
    pub fn new(m: usize, n_multiplier: usize, scheme: SchemeKind, ods: bool, v_obs: usize) -> Self {
        Self {
            name: None,
            m,
            n_multiplier,
            scheme,
            ods,
            v_obs,
            estimands: all_estimands(),
            estimators: all_estimators(),
            replications: 1000,
            seed: 1,
            jackknife: None,
            reference_n: default_reference_n(),
            reference_seed: default_reference_seed(),
            ps_omit_w: false,
            outcome_omit_w: false,
            level: default_level(),
        }
    }

    pub fn n(&self) -> usize {
        self.m * self.n_multiplier
    }

    /// True when the scenario lies outside the published grid.
    pub fn extended(&self) -> bool {
        !STANDARD_M.contains(&self.m)
            || !STANDARD_MULTIPLIERS.contains(&self.n_multiplier)
            || self.ps_omit_w
            || self.outcome_omit_w
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "{}-{}-m{}-n{}m-v{}",
                self.scheme,
                if self.ods { "ods" } else { "nonods" },
                self.m,
                self.n_multiplier,
                self.v_obs
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(1..=NUM_V).contains(&self.v_obs) {
            return bad(format!("v_obs must be in 1..=8, got {}", self.v_obs));
        }
        if self.m == 0 || self.n_multiplier == 0 {
            return bad("m and n_multiplier must be positive".into());
        }
        if self.replications < 2 {
            return bad("at least two replications are needed".into());
        }
        if self.estimands.is_empty() || self.estimators.is_empty() {
            return bad("scenario needs at least one estimand and one estimator".into());
        }
        if self.jackknife.is_some_and(|d| d < 2) {
            return bad("jackknife D must be at least 2".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("confidence level {} outside (0, 1)", self.level));
        }
        Ok(())
    }

    /// Working models: `V1..V8` and `W`, minus `W` where requested.
    pub fn models(&self) -> ModelSpec {
        let with = |omit_w: bool| {
            let mut c: Vec<String> = (1..=NUM_V).map(v_name).collect();
            if !omit_w {
                c.push("W".into());
            }
            c
        };
        ModelSpec {
            propensity: with(self.ps_omit_w),
            outcome: with(self.outcome_omit_w),
        }
    }

    pub fn key_columns(&self) -> Vec<String> {
        stratum_columns(self.v_obs, self.ods)
    }
}

/// Seeds of one replication, drawn from stream `rep` of a generator seeded
/// with the scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicationSeeds {
    pub population: u64,
    pub sampling: u64,
    pub jackknife: u64,
}

pub fn replication_seeds(base: u64, rep: usize) -> ReplicationSeeds {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(rep as u64);
    ReplicationSeeds {
        population: rng.next_u64(),
        sampling: rng.next_u64(),
        jackknife: rng.next_u64(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub estimator: EstimatorKind,
    pub estimand: Estimand,
    pub corrected: bool,
    pub tau_hat: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub phase2_size: usize,
    pub oracle: Vec<(Estimand, f64)>,
    pub cells: Vec<CellRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub records: Vec<ReplicationRecord>,
    /// `(replication, message)` of dropped replications.
    pub failures: Vec<(usize, String)>,
}

/// Observation table of a simulated two-phase sample: `V_obs` is always
/// observed, the remaining `V`s and `W` only in phase 2, and `Y` in phase 1
/// only under outcome-dependent sampling.
pub fn phase_two_table(
    units: &[Unit],
    v_obs: usize,
    ods: bool,
    delta: Vec<bool>,
    q: Vec<f64>,
) -> Result<ObservationTable> {
    let others: Vec<usize> = (1..=NUM_V).filter(|&j| j != v_obs).collect();
    let mut w_names: Vec<String> = others.iter().map(|&j| v_name(j)).collect();
    w_names.push("W".into());
    let schema = Schema {
        delta: "delta".into(),
        q: "q".into(),
        treatment: "a".into(),
        outcome: "y".into(),
        v: vec![v_name(v_obs)],
        w: w_names,
    };
    let seen = |i: usize| delta[i];
    let mut w_cols: Vec<Vec<Option<f64>>> = others
        .iter()
        .map(|&j| {
            units
                .iter()
                .enumerate()
                .map(|(i, u)| seen(i).then(|| f64::from(u.v[j - 1])))
                .collect()
        })
        .collect();
    w_cols.push(
        units
            .iter()
            .enumerate()
            .map(|(i, u)| seen(i).then_some(u.w))
            .collect(),
    );
    ObservationTable::from_columns(
        schema,
        units.iter().map(|u| u.a).collect(),
        units
            .iter()
            .enumerate()
            .map(|(i, u)| (ods || seen(i)).then(|| f64::from(u.y())))
            .collect(),
        vec![units.iter().map(|u| f64::from(u.v[v_obs - 1])).collect()],
        w_cols,
        delta,
        q,
    )
}

fn unit_keys(units: &[Unit], v_obs: usize, ods: bool) -> Vec<StratumKey> {
    units
        .iter()
        .map(|u| {
            let mut k = vec![
                OrderedFloat(f64::from(u.a)),
                OrderedFloat(f64::from(u.v[v_obs - 1])),
            ];
            if ods {
                k.push(OrderedFloat(f64::from(u.y())));
            }
            k
        })
        .collect()
}

/// Point estimates for every (estimand, estimator) cell, in config order.
fn point_estimates(
    table: &ObservationTable,
    strata: &StratumIndex,
    cfg: &ScenarioConfig,
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    let bundle = fit_nuisances(table, &cfg.models(), opts)?;
    let pred = Predictions::from_bundle(table, &bundle)?;
    let mut out = Vec::with_capacity(cfg.estimands.len() * cfg.estimators.len());
    for &est in &cfg.estimands {
        for &kind in &cfg.estimators {
            out.push(estimate_from_predictions(table, &pred, est, kind, Some(strata))?.tau_hat);
        }
    }
    Ok(out)
}

/// One replication: population, phase-2 draw, estimates with standard errors,
/// optional jackknife correction and the oracle estimator.
pub fn run_replication(
    cfg: &ScenarioConfig,
    params: &DgpParams,
    poisson_q: Option<&QByStratum>,
    rep: usize,
) -> Result<ReplicationRecord> {
    let seeds = replication_seeds(cfg.seed, rep);
    let units = generate_population_with(params, cfg.n(), seeds.population, Execution::Sequential);
    let keys = unit_keys(&units, cfg.v_obs, cfg.ods);
    let index = StratumIndex::from_keys(cfg.key_columns(), &keys);
    let (delta, q) = match cfg.scheme {
        SchemeKind::Poisson => {
            let q = poisson_q.ok_or_else(|| {
                Error::InvalidArgument("Poisson sampling needs stratum probabilities".into())
            })?;
            poisson_sample(&index, q, seeds.sampling)?
        }
        SchemeKind::Srswor => srswor_sample(&index, &equal_allocation(&index, cfg.m), seeds.sampling)?,
    };
    let table = phase_two_table(&units, cfg.v_obs, cfg.ods, delta, q)?;
    let strata = build_strata(&table, &cfg.key_columns())?;
    let opts = FitOptions::default();
    let bundle = fit_nuisances(&table, &cfg.models(), &opts)?;
    let pred = Predictions::from_bundle(&table, &bundle)?;

    let z = normal_critical_value(cfg.level)?;
    let mut cells = Vec::new();
    for &est in &cfg.estimands {
        for &kind in &cfg.estimators {
            let res = estimate_from_predictions(&table, &pred, est, kind, Some(&strata))?;
            let method = VarianceMethod::default_for(kind);
            let v = variance(method, &table, &bundle, &res, Some(&strata), cfg.level)?;
            cells.push(CellRecord {
                estimator: kind,
                estimand: est,
                corrected: false,
                tau_hat: res.tau_hat,
                se: v.se,
                ci_lower: v.ci_lower,
                ci_upper: v.ci_upper,
            });
        }
    }
    if let Some(d) = cfg.jackknife {
        let plan = partition_stratified(table.delta(), d, seeds.jackknife)?;
        let key_cols = cfg.key_columns();
        let jk = jackknife_correct_many(
            |t| {
                let s = build_strata(t, &key_cols)?;
                point_estimates(t, &s, cfg, &opts)
            },
            &table,
            &plan,
            Execution::Sequential,
        )?;
        let originals = cells.clone();
        for (c, corrected) in originals.iter().zip(jk.corrected) {
            // The interval keeps the standard error of the original estimator.
            cells.push(CellRecord {
                corrected: true,
                tau_hat: corrected,
                ci_lower: corrected - z * c.se,
                ci_upper: corrected + z * c.se,
                ..c.clone()
            });
        }
    }
    Ok(ReplicationRecord {
        rep,
        phase2_size: table.phase2_count(),
        oracle: cfg
            .estimands
            .iter()
            .map(|&e| (e, oracle_estimate(&units, e)))
            .collect(),
        cells,
    })
}

/// Runs all replications of a scenario. Failed replications are dropped and
/// counted; more than 1% failures is an error.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    params: &DgpParams,
    reference: &ReferenceSummary,
    exec: Execution,
) -> Result<ScenarioRun> {
    cfg.validate()?;
    let poisson_q = match cfg.scheme {
        SchemeKind::Poisson => Some(reference.poisson_probabilities(cfg.v_obs, cfg.ods, cfg.m, cfg.n())?),
        SchemeKind::Srswor => None,
    };
    let outcomes = map_indexed(exec, cfg.replications, |rep| {
        run_replication(cfg, params, poisson_q.as_ref(), rep)
    });
    let mut records = Vec::with_capacity(cfg.replications);
    let mut failures = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => records.push(r),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    if !failures.is_empty() {
        log::warn!(
            "{}: {} of {} replications failed; first: {}",
            cfg.label(),
            failures.len(),
            cfg.replications,
            failures[0].1
        );
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * cfg.replications as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: cfg.replications,
            first: failures[0].1.clone(),
        });
    }
    Ok(ScenarioRun {
        config: cfg.clone(),
        records,
        failures,
    })
}
