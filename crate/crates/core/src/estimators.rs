//! Point estimators of the WATE under two-phase sampling.
//!
//! * `Siw` / `Sdr` weight the full-data IPTW or doubly robust estimating
//!   function by `delta / q`.
//! * `Eiw` / `Edr` add `(1 - delta / q) g(S)`, where `g` is the saturated
//!   (stratum-mean) regression of the same integrand on `S`.
//!
//! All four are evaluated through their closed ratio forms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{ObservationTable, StratumIndex};
use crate::error::{Error, Result};
use crate::estimand::Estimand;
use crate::nuisance::{
    clamp_propensities, fit_weighted_logistic, predict_probability, Design, FitOptions, FittedGlm,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Siw,
    Eiw,
    Sdr,
    Edr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Siw,
        EstimatorKind::Eiw,
        EstimatorKind::Sdr,
        EstimatorKind::Edr,
    ];

    pub fn is_enriched(self) -> bool {
        matches!(self, EstimatorKind::Eiw | EstimatorKind::Edr)
    }

    pub fn is_doubly_robust(self) -> bool {
        matches!(self, EstimatorKind::Sdr | EstimatorKind::Edr)
    }

    /// The non-enriched estimator built on the same full-data estimating function.
    pub fn ipsw_counterpart(self) -> EstimatorKind {
        match self {
            EstimatorKind::Eiw => EstimatorKind::Siw,
            EstimatorKind::Edr => EstimatorKind::Sdr,
            other => other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Siw => "siw",
            EstimatorKind::Eiw => "eiw",
            EstimatorKind::Sdr => "sdr",
            EstimatorKind::Edr => "edr",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "siw" => Ok(EstimatorKind::Siw),
            "eiw" => Ok(EstimatorKind::Eiw),
            "sdr" => Ok(EstimatorKind::Sdr),
            "edr" => Ok(EstimatorKind::Edr),
            other => Err(Error::InvalidArgument(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Propensity and outcome models fitted on the same table.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceBundle {
    pub ps: FittedGlm,
    pub out1: FittedGlm,
    pub out0: FittedGlm,
}

impl NuisanceBundle {
    pub fn all_converged(&self) -> bool {
        self.ps.converged && self.out1.converged && self.out0.converged
    }
}

/// Covariate lists of the working models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub propensity: Vec<String>,
    pub outcome: Vec<String>,
}

fn outcome_vector(table: &ObservationTable, rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .map(|&i| table.outcome()[i].expect("phase-2 outcome checked at construction"))
        .collect()
}

fn inverse_q(table: &ObservationTable, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| 1.0 / table.q()[i]).collect()
}

/// Fits the propensity model on phase-2 rows and one outcome model per arm,
/// all weighted by `delta / q`.
pub fn fit_propensity(
    table: &ObservationTable,
    covariates: &[String],
    opts: &FitOptions,
) -> Result<FittedGlm> {
    let rows = table.phase2_rows();
    let design = Design::from_table(table, &rows, covariates)?;
    let a: Vec<f64> = rows.iter().map(|&i| f64::from(table.treatment()[i])).collect();
    let mask = vec![true; rows.len()];
    fit_weighted_logistic(&design, &a, &inverse_q(table, &rows), &mask, opts)
}

pub fn fit_outcome_models(
    table: &ObservationTable,
    covariates: &[String],
    opts: &FitOptions,
) -> Result<(FittedGlm, FittedGlm)> {
    let rows = table.phase2_rows();
    let design = Design::from_table(table, &rows, covariates)?;
    let y = outcome_vector(table, &rows);
    let weights = inverse_q(table, &rows);
    let arm = |a: u8| -> Vec<bool> { rows.iter().map(|&i| table.treatment()[i] == a).collect() };
    let out1 = fit_weighted_logistic(&design, &y, &weights, &arm(1), opts)?;
    let out0 = fit_weighted_logistic(&design, &y, &weights, &arm(0), opts)?;
    Ok((out1, out0))
}

pub fn fit_nuisances(
    table: &ObservationTable,
    models: &ModelSpec,
    opts: &FitOptions,
) -> Result<NuisanceBundle> {
    let ps = fit_propensity(table, &models.propensity, opts)?;
    let (out1, out0) = fit_outcome_models(table, &models.outcome, opts)?;
    Ok(NuisanceBundle { ps, out1, out0 })
}

/// Fitted nuisance values on the phase-2 rows, shared by all estimands.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Phase-2 row indices into the table.
    pub rows: Vec<usize>,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub inv_q: Vec<f64>,
    /// Clamped propensity `e_1`.
    pub e: Vec<f64>,
    pub mu1: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
    pub clamped: usize,
    /// Number of phase-1 rows.
    pub n: usize,
}

impl Predictions {
    pub fn new(
        table: &ObservationTable,
        ps: &FittedGlm,
        outcome: Option<(&FittedGlm, &FittedGlm)>,
    ) -> Result<Self> {
        let rows = table.phase2_rows();
        let xe = Design::from_table(table, &rows, ps.covariates())?;
        let mut e = predict_probability(ps, &xe.matrix)?;
        let clamped = clamp_propensities(&mut e);
        let (mu1, mu0) = match outcome {
            Some((m1, m0)) => {
                let xm = Design::from_table(table, &rows, m1.covariates())?;
                let mu1 = predict_probability(m1, &xm.matrix)?;
                let xm0 = if m0.covariates() == m1.covariates() {
                    xm
                } else {
                    Design::from_table(table, &rows, m0.covariates())?
                };
                (Some(mu1), Some(predict_probability(m0, &xm0.matrix)?))
            }
            None => (None, None),
        };
        Ok(Self {
            a: rows.iter().map(|&i| table.treatment()[i]).collect(),
            y: outcome_vector(table, &rows),
            inv_q: inverse_q(table, &rows),
            rows,
            e,
            mu1,
            mu0,
            clamped,
            n: table.n(),
        })
    }

    pub fn from_bundle(table: &ObservationTable, bundle: &NuisanceBundle) -> Result<Self> {
        Self::new(table, &bundle.ps, Some((&bundle.out1, &bundle.out0)))
    }
}

/// Per phase-2 row quantities behind an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct RowQuantities {
    pub rows: Vec<usize>,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub inv_q: Vec<f64>,
    pub e: Vec<f64>,
    pub mu1: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
    pub w: Vec<f64>,
    pub wdot: Vec<f64>,
    /// `mu1 - mu0`, when outcome models are present.
    pub tau: Option<Vec<f64>>,
}

impl RowQuantities {
    fn new(pred: &Predictions, estimand: Estimand) -> Self {
        let (w, wdot) = pred.e.iter().map(|&e| estimand.weight_unchecked(e)).unzip();
        let tau = match (&pred.mu1, &pred.mu0) {
            (Some(m1), Some(m0)) => Some(m1.iter().zip(m0).map(|(a, b)| a - b).collect()),
            _ => None,
        };
        Self {
            rows: pred.rows.clone(),
            a: pred.a.clone(),
            y: pred.y.clone(),
            inv_q: pred.inv_q.clone(),
            e: pred.e.clone(),
            mu1: pred.mu1.clone(),
            mu0: pred.mu0.clone(),
            w,
            wdot,
            tau,
        }
    }

    /// Doubly robust numerator and denominator integrands per row.
    pub fn dr_integrands(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (Some(mu1), Some(mu0), Some(tau)) = (&self.mu1, &self.mu0, &self.tau) else {
            return Err(Error::InvalidArgument(
                "doubly robust estimators need fitted outcome models".into(),
            ));
        };
        let m = self.rows.len();
        let mut num = Vec::with_capacity(m);
        let mut den = Vec::with_capacity(m);
        for i in 0..m {
            let e = self.e[i];
            let resid = if self.a[i] == 1 {
                (self.y[i] - mu1[i]) / e
            } else {
                -(self.y[i] - mu0[i]) / (1.0 - e)
            };
            let d = self.w[i] + self.wdot[i] * (f64::from(self.a[i]) - e);
            num.push(self.w[i] * resid + d * tau[i]);
            den.push(d);
        }
        Ok((num, den))
    }

    /// IPTW integrands `1{A=a} w / e_a` for the given arm.
    pub fn iptw_weights(&self, arm: u8) -> Vec<f64> {
        (0..self.rows.len())
            .map(|i| {
                if self.a[i] != arm {
                    0.0
                } else if arm == 1 {
                    self.w[i] / self.e[i]
                } else {
                    self.w[i] / (1.0 - self.e[i])
                }
            })
            .collect()
    }

    /// `sum_i (delta_i/q_i) w_i / sum_i delta_i/q_i`.
    pub fn weight_normalizer(&self) -> f64 {
        let s: f64 = self.inv_q.iter().sum();
        self.w.iter().zip(&self.inv_q).map(|(w, iq)| w * iq).sum::<f64>() / s
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub clamped: usize,
    pub empty_strata: Vec<usize>,
    pub nuisance_converged: bool,
    pub phase1_rows: usize,
    pub phase2_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub estimand: Estimand,
    pub estimator: EstimatorKind,
    pub tau_hat: f64,
    pub mu1_hat: Option<f64>,
    pub mu0_hat: Option<f64>,
    pub per_row: RowQuantities,
    /// Saturated stratum means `g(k)` of each augmented integrand (empty for
    /// non-enriched estimators).
    pub stratum_means: Vec<(String, Vec<f64>)>,
    pub diagnostics: Diagnostics,
}

/// Mean of `values` (aligned with phase-2 `rows`) within each stratum.
pub fn stratum_conditional_means(
    values: &[f64],
    rows: &[usize],
    strata: &StratumIndex,
) -> Result<Vec<f64>> {
    if values.len() != rows.len() {
        return Err(Error::InvalidArgument("values and rows differ in length".into()));
    }
    let k = strata.k();
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (&i, &v) in rows.iter().zip(values) {
        let l = strata.labels[i];
        sum[l] += v;
        count[l] += 1;
    }
    (0..k)
        .map(|l| {
            if count[l] == 0 {
                Err(Error::EmptyPhase2Stratum {
                    stratum: l,
                    phase1_count: strata.counts[l],
                })
            } else {
                Ok(sum[l] / count[l] as f64)
            }
        })
        .collect()
}

/// Per stratum `sum_{i in k} (1 - delta_i / q_i)`; multiplies `g(k)` in the
/// augmentation term.
pub fn augmentation_factors(table: &ObservationTable, strata: &StratumIndex) -> Vec<f64> {
    let mut f: Vec<f64> = strata.counts.iter().map(|&c| c as f64).collect();
    for (i, &l) in strata.labels.iter().enumerate() {
        if table.delta()[i] {
            f[l] -= 1.0 / table.q()[i];
        }
    }
    f
}

fn weighted_sum(values: &[f64], inv_q: &[f64]) -> f64 {
    values.iter().zip(inv_q).map(|(v, w)| v * w).sum()
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den == 0.0 || !den.is_finite() {
        return Err(Error::ZeroDenominator(what.into()));
    }
    let r = num / den;
    if !r.is_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(r)
}

/// Enrichment context: stratum index plus augmentation factors.
struct Enrichment<'a> {
    strata: &'a StratumIndex,
    factors: Vec<f64>,
}

impl Enrichment<'_> {
    fn augment(&self, values: &[f64], rows: &[usize]) -> Result<(f64, Vec<f64>)> {
        let g = stratum_conditional_means(values, rows, self.strata)?;
        let aug = g.iter().zip(&self.factors).map(|(g, f)| g * f).sum();
        Ok((aug, g))
    }
}

fn check_strata(table: &ObservationTable, strata: &StratumIndex) -> Result<()> {
    if strata.labels.len() != table.n() {
        return Err(Error::InvalidArgument(
            "stratum index was built on a different table".into(),
        ));
    }
    Ok(())
}

fn iptw_from(
    rq: RowQuantities,
    estimand: Estimand,
    enrich: Option<&Enrichment<'_>>,
    diagnostics: Diagnostics,
) -> Result<EstimateResult> {
    let mut mu = [0.0; 2];
    let mut stratum_means = Vec::new();
    for arm in [1u8, 0u8] {
        let den_i = rq.iptw_weights(arm);
        let num_i: Vec<f64> = den_i.iter().zip(&rq.y).map(|(d, y)| d * y).collect();
        let mut num = weighted_sum(&num_i, &rq.inv_q);
        let mut den = weighted_sum(&den_i, &rq.inv_q);
        if let Some(en) = enrich {
            let (an, gn) = en.augment(&num_i, &rq.rows)?;
            let (ad, gd) = en.augment(&den_i, &rq.rows)?;
            num += an;
            den += ad;
            stratum_means.push((format!("iptw_num_{arm}"), gn));
            stratum_means.push((format!("iptw_den_{arm}"), gd));
        }
        mu[usize::from(arm)] = ratio(num, den, &format!("IPTW mean of arm {arm}"))?;
    }
    Ok(EstimateResult {
        estimand,
        estimator: if enrich.is_some() {
            EstimatorKind::Eiw
        } else {
            EstimatorKind::Siw
        },
        tau_hat: mu[1] - mu[0],
        mu1_hat: Some(mu[1]),
        mu0_hat: Some(mu[0]),
        per_row: rq,
        stratum_means,
        diagnostics,
    })
}

fn dr_from(
    rq: RowQuantities,
    estimand: Estimand,
    enrich: Option<&Enrichment<'_>>,
    diagnostics: Diagnostics,
) -> Result<EstimateResult> {
    let (num_i, den_i) = rq.dr_integrands()?;
    let mut num = weighted_sum(&num_i, &rq.inv_q);
    let mut den = weighted_sum(&den_i, &rq.inv_q);
    let mut stratum_means = Vec::new();
    if let Some(en) = enrich {
        let (an, gn) = en.augment(&num_i, &rq.rows)?;
        let (ad, gd) = en.augment(&den_i, &rq.rows)?;
        num += an;
        den += ad;
        stratum_means.push(("dr_num".to_string(), gn));
        stratum_means.push(("dr_den".to_string(), gd));
    }
    let tau_hat = ratio(num, den, "doubly robust ratio")?;
    Ok(EstimateResult {
        estimand,
        estimator: if enrich.is_some() {
            EstimatorKind::Edr
        } else {
            EstimatorKind::Sdr
        },
        tau_hat,
        mu1_hat: None,
        mu0_hat: None,
        per_row: rq,
        stratum_means,
        diagnostics,
    })
}

fn diagnostics_for(pred: &Predictions, converged: bool) -> Diagnostics {
    Diagnostics {
        clamped: pred.clamped,
        empty_strata: Vec::new(),
        nuisance_converged: converged,
        phase1_rows: pred.n,
        phase2_rows: pred.rows.len(),
    }
}

/// Evaluates any of the four estimators from precomputed predictions. `strata`
/// is required for the enriched estimators and ignored otherwise.
pub fn estimate_from_predictions(
    table: &ObservationTable,
    pred: &Predictions,
    estimand: Estimand,
    kind: EstimatorKind,
    strata: Option<&StratumIndex>,
) -> Result<EstimateResult> {
    let rq = RowQuantities::new(pred, estimand);
    let mut diagnostics = diagnostics_for(pred, true);
    let enrichment = if kind.is_enriched() {
        let strata = strata.ok_or_else(|| {
            Error::InvalidArgument(format!("{kind} needs a stratum index"))
        })?;
        check_strata(table, strata)?;
        diagnostics.empty_strata = (0..strata.k())
            .filter(|&k| strata.counts[k] > 0 && strata.phase2_counts[k] == 0)
            .collect();
        Some(Enrichment {
            strata,
            factors: augmentation_factors(table, strata),
        })
    } else {
        None
    };
    if kind.is_doubly_robust() {
        dr_from(rq, estimand, enrichment.as_ref(), diagnostics)
    } else {
        iptw_from(rq, estimand, enrichment.as_ref(), diagnostics)
    }
}

pub fn estimate_siw(
    table: &ObservationTable,
    ps: &FittedGlm,
    estimand: Estimand,
) -> Result<EstimateResult> {
    let pred = Predictions::new(table, ps, None)?;
    let mut r = estimate_from_predictions(table, &pred, estimand, EstimatorKind::Siw, None)?;
    r.diagnostics.nuisance_converged = ps.converged;
    Ok(r)
}

pub fn estimate_eiw(
    table: &ObservationTable,
    ps: &FittedGlm,
    estimand: Estimand,
    strata: &StratumIndex,
) -> Result<EstimateResult> {
    let pred = Predictions::new(table, ps, None)?;
    let mut r =
        estimate_from_predictions(table, &pred, estimand, EstimatorKind::Eiw, Some(strata))?;
    r.diagnostics.nuisance_converged = ps.converged;
    Ok(r)
}

pub fn estimate_sdr(
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    estimand: Estimand,
) -> Result<EstimateResult> {
    let pred = Predictions::from_bundle(table, bundle)?;
    let mut r = estimate_from_predictions(table, &pred, estimand, EstimatorKind::Sdr, None)?;
    r.diagnostics.nuisance_converged = bundle.all_converged();
    Ok(r)
}

pub fn estimate_edr(
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    estimand: Estimand,
    strata: &StratumIndex,
) -> Result<EstimateResult> {
    let pred = Predictions::from_bundle(table, bundle)?;
    let mut r =
        estimate_from_predictions(table, &pred, estimand, EstimatorKind::Edr, Some(strata))?;
    r.diagnostics.nuisance_converged = bundle.all_converged();
    Ok(r)
}

/// Dispatches on `kind`. Outcome predictions are kept on the result even for
/// the weighting estimators so that an EIF variance can be formed for them.
pub fn estimate(
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    estimand: Estimand,
    kind: EstimatorKind,
    strata: Option<&StratumIndex>,
) -> Result<EstimateResult> {
    let pred = Predictions::from_bundle(table, bundle)?;
    let mut r = estimate_from_predictions(table, &pred, estimand, kind, strata)?;
    r.diagnostics.nuisance_converged = if kind.is_doubly_robust() {
        bundle.all_converged()
    } else {
        bundle.ps.converged
    };
    Ok(r)
}
