//! Influence functions and variance estimates.
//!
//! Two routes are offered:
//!
//! * `Eif`: plug-in efficient influence function of the full-data doubly
//!   robust estimating function, lifted to the observed data either by
//!   `delta / q` weighting (non-enriched estimators) or by
//!   `g(S) + delta (phi - g(S)) / q` (enriched estimators).
//! * `Sandwich`: stacked M-estimation over the target parameter and the
//!   nuisance coefficients, `IF = -J11^{-1} {main - sum_j J1j Jjj^{-1} score_j}`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{ObservationTable, StratumIndex};
use crate::error::{Error, Result};
use crate::estimand::Estimand;
use crate::estimators::{
    augmentation_factors, stratum_conditional_means, EstimateResult, EstimatorKind, NuisanceBundle,
};
use crate::nuisance::{expit, score_and_hessian, Design, PROPENSITY_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMethod {
    Eif,
    Sandwich,
}

impl VarianceMethod {
    /// EIF for the doubly robust estimators, sandwich for the weighting ones.
    pub fn default_for(kind: EstimatorKind) -> Self {
        if kind.is_doubly_robust() {
            VarianceMethod::Eif
        } else {
            VarianceMethod::Sandwich
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::Eif => "eif",
            VarianceMethod::Sandwich => "sandwich",
        }
    }
}

impl fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eif" => Ok(VarianceMethod::Eif),
            "sandwich" => Ok(VarianceMethod::Sandwich),
            other => Err(Error::InvalidArgument(format!("unknown variance method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfluenceKind {
    /// Full-data EIF on the phase-2 rows.
    Full,
    /// Observed-data EIF for enriched estimators, all phase-1 rows.
    Observed,
    /// `delta / q` times the full-data EIF, all phase-1 rows.
    IpswWeighted,
    /// Stacked M-estimation influence function, all phase-1 rows.
    Sandwich,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceVector {
    pub kind: InfluenceKind,
    /// Table rows the values belong to.
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub method: VarianceMethod,
    /// Sample variance (divisor `n - 1`) of the influence values.
    pub variance_of_if: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub n: usize,
}

/// Two-sided standard normal critical value for `level`.
pub fn normal_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {level} outside (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Weighted mean of `w` over phase-2 rows with weights `1/q`.
pub fn weight_normalizer(est: &EstimateResult) -> f64 {
    est.per_row.weight_normalizer()
}

/// Plug-in full-data EIF `C^{-1} [w {resid + tau_i - tau} + w' (tau_i - tau)(A - e)]`
/// on the phase-2 rows, with `C` held fixed at `c_w`.
pub fn eif_full(est: &EstimateResult, c_w: f64) -> Result<InfluenceVector> {
    if !(c_w > 0.0) || !c_w.is_finite() {
        return Err(Error::InvalidArgument(format!("weight normalizer {c_w} must be positive")));
    }
    let (num, den) = est.per_row.dr_integrands()?;
    let values = num
        .iter()
        .zip(&den)
        .map(|(n, d)| (n - est.tau_hat * d) / c_w)
        .collect();
    Ok(InfluenceVector {
        kind: InfluenceKind::Full,
        rows: est.per_row.rows.clone(),
        values,
    })
}

fn check_full(phi: &InfluenceVector) -> Result<()> {
    if phi.kind != InfluenceKind::Full {
        return Err(Error::InvalidArgument("expected a full-data influence vector".into()));
    }
    Ok(())
}

/// `delta / q * phi_F` on all phase-1 rows.
pub fn eif_ipsw(phi: &InfluenceVector, table: &ObservationTable) -> Result<InfluenceVector> {
    check_full(phi)?;
    let mut values = vec![0.0; table.n()];
    for (&i, &v) in phi.rows.iter().zip(&phi.values) {
        values[i] = v / table.q()[i];
    }
    Ok(InfluenceVector {
        kind: InfluenceKind::IpswWeighted,
        rows: (0..table.n()).collect(),
        values,
    })
}

/// `g(S) + delta (phi_F - g(S)) / q` on all phase-1 rows.
pub fn eif_observed(
    phi: &InfluenceVector,
    table: &ObservationTable,
    strata: &StratumIndex,
) -> Result<InfluenceVector> {
    check_full(phi)?;
    let g = stratum_conditional_means(&phi.values, &phi.rows, strata)?;
    let mut values: Vec<f64> = strata.labels.iter().map(|&k| g[k]).collect();
    for (&i, &v) in phi.rows.iter().zip(&phi.values) {
        let gk = g[strata.labels[i]];
        values[i] = gk + (v - gk) / table.q()[i];
    }
    Ok(InfluenceVector {
        kind: InfluenceKind::Observed,
        rows: (0..table.n()).collect(),
        values,
    })
}

/// EIF-based influence vector appropriate for the estimator kind.
pub fn eif_for(
    est: &EstimateResult,
    table: &ObservationTable,
    strata: Option<&StratumIndex>,
) -> Result<InfluenceVector> {
    let phi = eif_full(est, weight_normalizer(est))?;
    if est.estimator.is_enriched() {
        let strata = strata
            .ok_or_else(|| Error::InvalidArgument("enriched EIF needs a stratum index".into()))?;
        eif_observed(&phi, table, strata)
    } else {
        eif_ipsw(&phi, table)
    }
}

/// Sample variance of the influence values and a Wald interval around
/// `estimate`.
pub fn variance_from_influence(
    values: &[f64],
    estimate: f64,
    level: f64,
    method: VarianceMethod,
) -> Result<VarianceReport> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two influence values".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !var.is_finite() {
        return Err(Error::NonFinite("influence function variance".into()));
    }
    let se = (var / n as f64).sqrt();
    let z = normal_critical_value(level)?;
    Ok(VarianceReport {
        method,
        variance_of_if: var,
        se,
        ci_lower: estimate - z * se,
        ci_upper: estimate + z * se,
        level,
        n,
    })
}

pub fn variance_eif(
    est: &EstimateResult,
    table: &ObservationTable,
    strata: Option<&StratumIndex>,
    level: f64,
) -> Result<VarianceReport> {
    let phi = eif_for(est, table, strata)?;
    variance_from_influence(&phi.values, est.tau_hat, level, VarianceMethod::Eif)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichOptions {
    /// When false the nuisance coefficients are treated as known and the
    /// correction terms are dropped.
    pub nuisance_estimated: bool,
    /// Relative central-difference step for the propensity block.
    pub fd_step: f64,
}

impl Default for SandwichOptions {
    fn default() -> Self {
        Self {
            nuisance_estimated: true,
            fd_step: 1e-6,
        }
    }
}

/// Phase-2 data of the stacked estimating equations, evaluable at arbitrary
/// parameter values.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub estimand: Estimand,
    pub kind: EstimatorKind,
    pub rows: Vec<usize>,
    pub xe: DMatrix<f64>,
    pub xm: DMatrix<f64>,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub inv_q: Vec<f64>,
    /// Weight of each phase-2 row in the main equation: `1/q`, plus the
    /// augmentation share `(n_k - sum_k 1/q) / m_k` for enriched estimators.
    pub omega: Vec<f64>,
    /// Stratum label of every phase-1 row (enriched only).
    pub labels: Option<Vec<usize>>,
    pub n: usize,
    pub alpha: DVector<f64>,
    pub beta1: DVector<f64>,
    pub beta0: DVector<f64>,
    pub theta: DVector<f64>,
}

impl StackedSystem {
    pub fn new(
        table: &ObservationTable,
        bundle: &NuisanceBundle,
        est: &EstimateResult,
        strata: Option<&StratumIndex>,
    ) -> Result<Self> {
        let rows = table.phase2_rows();
        let xe = Design::from_table(table, &rows, bundle.ps.covariates())?.matrix;
        let xm = Design::from_table(table, &rows, bundle.out1.covariates())?.matrix;
        if bundle.out0.covariates() != bundle.out1.covariates() {
            return Err(Error::InvalidArgument(
                "sandwich variance needs both outcome models on the same covariates".into(),
            ));
        }
        let inv_q: Vec<f64> = rows.iter().map(|&i| 1.0 / table.q()[i]).collect();
        let (omega, labels) = if est.estimator.is_enriched() {
            let strata = strata.ok_or_else(|| {
                Error::InvalidArgument("enriched sandwich needs a stratum index".into())
            })?;
            if strata.labels.len() != table.n() {
                return Err(Error::InvalidArgument(
                    "stratum index was built on a different table".into(),
                ));
            }
            let factors = augmentation_factors(table, strata);
            let omega = rows
                .iter()
                .zip(&inv_q)
                .map(|(&i, iq)| {
                    let k = strata.labels[i];
                    iq + factors[k] / strata.phase2_counts[k] as f64
                })
                .collect();
            (omega, Some(strata.labels.clone()))
        } else {
            (inv_q.clone(), None)
        };
        let theta = if est.estimator.is_doubly_robust() {
            DVector::from_vec(vec![est.tau_hat])
        } else {
            DVector::from_vec(vec![
                est.mu1_hat.expect("weighting estimators report arm means"),
                est.mu0_hat.expect("weighting estimators report arm means"),
                est.tau_hat,
            ])
        };
        Ok(Self {
            estimand: est.estimand,
            kind: est.estimator,
            a: rows.iter().map(|&i| table.treatment()[i]).collect(),
            y: rows
                .iter()
                .map(|&i| table.outcome()[i].expect("phase-2 outcome"))
                .collect(),
            rows,
            xe,
            xm,
            inv_q,
            omega,
            labels,
            n: table.n(),
            alpha: bundle.ps.coefficients.clone(),
            beta1: bundle.out1.coefficients.clone(),
            beta0: bundle.out0.coefficients.clone(),
            theta,
        })
    }

    pub fn theta_dim(&self) -> usize {
        self.theta.len()
    }

    /// Index of `tau` within `theta`.
    pub fn tau_index(&self) -> usize {
        self.theta.len() - 1
    }

    fn propensity(&self, alpha: &DVector<f64>) -> Vec<f64> {
        (&self.xe * alpha)
            .iter()
            .map(|&eta| expit(eta).clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP))
            .collect()
    }

    /// Full-data estimating function per phase-2 row (one column per row).
    pub fn psi(
        &self,
        theta: &DVector<f64>,
        alpha: &DVector<f64>,
        beta1: &DVector<f64>,
        beta0: &DVector<f64>,
    ) -> DMatrix<f64> {
        let e = self.propensity(alpha);
        let m = self.rows.len();
        let d = self.theta_dim();
        let mut out = DMatrix::zeros(d, m);
        if self.kind.is_doubly_robust() {
            let mu1 = &self.xm * beta1;
            let mu0 = &self.xm * beta0;
            for i in 0..m {
                let (w, wd) = self.estimand.weight_unchecked(e[i]);
                let (m1, m0) = (expit(mu1[i]), expit(mu0[i]));
                let resid = if self.a[i] == 1 {
                    (self.y[i] - m1) / e[i]
                } else {
                    -(self.y[i] - m0) / (1.0 - e[i])
                };
                let dd = w + wd * (f64::from(self.a[i]) - e[i]);
                out[(0, i)] = w * resid + dd * (m1 - m0 - theta[0]);
            }
        } else {
            for i in 0..m {
                let (w, _) = self.estimand.weight_unchecked(e[i]);
                if self.a[i] == 1 {
                    out[(0, i)] = w / e[i] * (self.y[i] - theta[0]);
                } else {
                    out[(1, i)] = w / (1.0 - e[i]) * (self.y[i] - theta[1]);
                }
                out[(2, i)] = theta[0] - theta[1] - theta[2];
            }
        }
        out
    }

    /// `(1/n) sum_i omega_i psi_i`.
    pub fn main_equation(
        &self,
        theta: &DVector<f64>,
        alpha: &DVector<f64>,
        beta1: &DVector<f64>,
        beta0: &DVector<f64>,
    ) -> DVector<f64> {
        let psi = self.psi(theta, alpha, beta1, beta0);
        psi * DVector::from_column_slice(&self.omega) / self.n as f64
    }

    fn j11(&self) -> DMatrix<f64> {
        let e = self.propensity(&self.alpha);
        let n = self.n as f64;
        let m = self.rows.len();
        if self.kind.is_doubly_robust() {
            let s: f64 = (0..m)
                .map(|i| {
                    let (w, wd) = self.estimand.weight_unchecked(e[i]);
                    self.omega[i] * (w + wd * (f64::from(self.a[i]) - e[i]))
                })
                .sum();
            DMatrix::from_element(1, 1, -s / n)
        } else {
            let mut j = DMatrix::zeros(3, 3);
            let total: f64 = self.omega.iter().sum::<f64>() / n;
            for i in 0..m {
                let (w, _) = self.estimand.weight_unchecked(e[i]);
                if self.a[i] == 1 {
                    j[(0, 0)] -= self.omega[i] * w / e[i] / n;
                } else {
                    j[(1, 1)] -= self.omega[i] * w / (1.0 - e[i]) / n;
                }
            }
            j[(2, 0)] = total;
            j[(2, 1)] = -total;
            j[(2, 2)] = -total;
            j
        }
    }

    fn j12(&self, step: f64) -> DMatrix<f64> {
        let p = self.alpha.len();
        let mut j = DMatrix::zeros(self.theta_dim(), p);
        for c in 0..p {
            let h = step * (1.0 + self.alpha[c].abs());
            let mut up = self.alpha.clone();
            up[c] += h;
            let mut dn = self.alpha.clone();
            dn[c] -= h;
            let diff = self.main_equation(&self.theta, &up, &self.beta1, &self.beta0)
                - self.main_equation(&self.theta, &dn, &self.beta1, &self.beta0);
            j.set_column(c, &(diff / (2.0 * h)));
        }
        j
    }

    /// Analytic derivatives of the doubly robust main equation with respect
    /// to the treated and control outcome coefficients.
    fn j13_j14(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = self.xm.ncols();
        let mut j13 = DMatrix::zeros(1, p);
        let mut j14 = DMatrix::zeros(1, p);
        if !self.kind.is_doubly_robust() {
            return (DMatrix::zeros(3, p), DMatrix::zeros(3, p));
        }
        let e = self.propensity(&self.alpha);
        let eta1 = &self.xm * &self.beta1;
        let eta0 = &self.xm * &self.beta0;
        let n = self.n as f64;
        for i in 0..self.rows.len() {
            let (w, wd) = self.estimand.weight_unchecked(e[i]);
            let dd = w + wd * (f64::from(self.a[i]) - e[i]);
            let (m1, m0) = (expit(eta1[i]), expit(eta0[i]));
            let treated = self.a[i] == 1;
            let c1 = if treated { -w / e[i] } else { 0.0 } + dd;
            let c0 = if treated { 0.0 } else { w / (1.0 - e[i]) } - dd;
            let f1 = self.omega[i] * c1 * m1 * (1.0 - m1) / n;
            let f0 = self.omega[i] * c0 * m0 * (1.0 - m0) / n;
            for c in 0..p {
                j13[(0, c)] += f1 * self.xm[(i, c)];
                j14[(0, c)] += f0 * self.xm[(i, c)];
            }
        }
        (j13, j14)
    }

    fn arm_weights(&self, arm: Option<u8>) -> Vec<f64> {
        self.inv_q
            .iter()
            .zip(&self.a)
            .map(|(&iq, &a)| match arm {
                Some(t) if a != t => 0.0,
                _ => iq,
            })
            .collect()
    }

    /// Nuisance Jacobian blocks `J22`, `J33`, `J44`: Hessians of the weighted
    /// log-likelihoods divided by `n`.
    fn nuisance_blocks(&self) -> Result<[DMatrix<f64>; 3]> {
        let n = self.n as f64;
        let a: Vec<f64> = self.a.iter().map(|&v| f64::from(v)).collect();
        let (_, h22) = score_and_hessian(&self.xe, &a, &self.arm_weights(None), &self.alpha)?;
        let (_, h33) = score_and_hessian(&self.xm, &self.y, &self.arm_weights(Some(1)), &self.beta1)?;
        let (_, h44) = score_and_hessian(&self.xm, &self.y, &self.arm_weights(Some(0)), &self.beta0)?;
        Ok([h22 / n, h33 / n, h44 / n])
    }

    pub fn jacobian_blocks(&self, opts: &SandwichOptions) -> Result<JacobianBlocks> {
        let (j13, j14) = self.j13_j14();
        let [j22, j33, j44] = self.nuisance_blocks()?;
        Ok(JacobianBlocks {
            j11: self.j11(),
            j12: self.j12(opts.fd_step),
            j13,
            j14,
            j22,
            j33,
            j44,
        })
    }

    /// Per phase-2 row nuisance scores `x (A - e)`, `1{A=1} x (Y - mu1)`,
    /// `1{A=0} x (Y - mu0)` (one column per row, unweighted).
    pub fn nuisance_scores(
        &self,
        alpha: &DVector<f64>,
        beta1: &DVector<f64>,
        beta0: &DVector<f64>,
    ) -> [DMatrix<f64>; 3] {
        let m = self.rows.len();
        let eta_e = &self.xe * alpha;
        let eta1 = &self.xm * beta1;
        let eta0 = &self.xm * beta0;
        let mut ue = DMatrix::zeros(self.xe.ncols(), m);
        let mut u1 = DMatrix::zeros(self.xm.ncols(), m);
        let mut u0 = DMatrix::zeros(self.xm.ncols(), m);
        for i in 0..m {
            let a = f64::from(self.a[i]);
            let re = a - expit(eta_e[i]);
            for c in 0..self.xe.ncols() {
                ue[(c, i)] = self.xe[(i, c)] * re;
            }
            let (col, r) = if self.a[i] == 1 {
                (&mut u1, self.y[i] - expit(eta1[i]))
            } else {
                (&mut u0, self.y[i] - expit(eta0[i]))
            };
            for c in 0..self.xm.ncols() {
                col[(c, i)] = self.xm[(i, c)] * r;
            }
        }
        [ue, u1, u0]
    }

    /// Influence values of `tau` on all phase-1 rows.
    pub fn influence(&self, opts: &SandwichOptions) -> Result<Vec<f64>> {
        let blocks = self.jacobian_blocks(opts)?;
        let psi = self.psi(&self.theta, &self.alpha, &self.beta1, &self.beta0);
        let d = self.theta_dim();
        let m = self.rows.len();

        // main_i on phase-2 rows; the stratum mean of psi on every row when enriched.
        let mut main = DMatrix::<f64>::zeros(d, self.n);
        if let Some(labels) = &self.labels {
            let k = labels.iter().max().map_or(0, |&v| v + 1);
            let mut sums = DMatrix::<f64>::zeros(d, k);
            let mut counts = vec![0usize; k];
            for i in 0..m {
                let l = labels[self.rows[i]];
                let mut col = sums.column_mut(l);
                col += psi.column(i);
                counts[l] += 1;
            }
            for (l, &c) in counts.iter().enumerate() {
                if c == 0 {
                    return Err(Error::EmptyPhase2Stratum {
                        stratum: l,
                        phase1_count: labels.iter().filter(|&&v| v == l).count(),
                    });
                }
                let mut col = sums.column_mut(l);
                col /= c as f64;
            }
            for (r, &l) in labels.iter().enumerate() {
                main.set_column(r, &sums.column(l));
            }
            for i in 0..m {
                let r = self.rows[i];
                let g = main.column(r).clone_owned();
                main.set_column(r, &(&g + (psi.column(i) - &g) * self.inv_q[i]));
            }
        } else {
            for i in 0..m {
                main.set_column(self.rows[i], &(psi.column(i) * self.inv_q[i]));
            }
        }

        if opts.nuisance_estimated {
            let [ue, u1, u0] = self.nuisance_scores(&self.alpha, &self.beta1, &self.beta0);
            let k_e = solve_right(&blocks.j12, &blocks.j22, "propensity Jacobian")?;
            let mut corr = &k_e * ue;
            if self.kind.is_doubly_robust() {
                let k1 = solve_right(&blocks.j13, &blocks.j33, "treated outcome Jacobian")?;
                let k0 = solve_right(&blocks.j14, &blocks.j44, "control outcome Jacobian")?;
                corr += &k1 * u1 + &k0 * u0;
            }
            for i in 0..m {
                let r = self.rows[i];
                let updated = main.column(r) - corr.column(i) * self.inv_q[i];
                main.set_column(r, &updated);
            }
        }

        let j11_inv = blocks
            .j11
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("target parameter Jacobian".into()))?;
        let t = self.tau_index();
        let row = -j11_inv.row(t).clone_owned();
        let values: Vec<f64> = (row * main).iter().copied().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sandwich influence function".into()));
        }
        Ok(values)
    }
}

/// `A B^{-1}` via a solve with `B'`.
fn solve_right(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let lu = b.transpose().lu();
    lu.solve(&a.transpose())
        .map(|x| x.transpose())
        .ok_or_else(|| Error::Singular(what.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub j11: DMatrix<f64>,
    pub j12: DMatrix<f64>,
    pub j13: DMatrix<f64>,
    pub j14: DMatrix<f64>,
    pub j22: DMatrix<f64>,
    pub j33: DMatrix<f64>,
    pub j44: DMatrix<f64>,
}

/// Sandwich influence vector of `tau` on all phase-1 rows.
pub fn sandwich_influence(
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    est: &EstimateResult,
    strata: Option<&StratumIndex>,
    opts: &SandwichOptions,
) -> Result<InfluenceVector> {
    let sys = StackedSystem::new(table, bundle, est, strata)?;
    Ok(InfluenceVector {
        kind: InfluenceKind::Sandwich,
        rows: (0..table.n()).collect(),
        values: sys.influence(opts)?,
    })
}

pub fn variance_sandwich(
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    est: &EstimateResult,
    strata: Option<&StratumIndex>,
    opts: &SandwichOptions,
    level: f64,
) -> Result<VarianceReport> {
    let inf = sandwich_influence(table, bundle, est, strata, opts)?;
    variance_from_influence(&inf.values, est.tau_hat, level, VarianceMethod::Sandwich)
}

/// Influence vector by the requested route.
pub fn influence_for(
    method: VarianceMethod,
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    est: &EstimateResult,
    strata: Option<&StratumIndex>,
) -> Result<InfluenceVector> {
    match method {
        VarianceMethod::Eif => eif_for(est, table, strata),
        VarianceMethod::Sandwich => {
            sandwich_influence(table, bundle, est, strata, &SandwichOptions::default())
        }
    }
}

pub fn variance(
    method: VarianceMethod,
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    est: &EstimateResult,
    strata: Option<&StratumIndex>,
    level: f64,
) -> Result<VarianceReport> {
    let inf = influence_for(method, table, bundle, est, strata)?;
    variance_from_influence(&inf.values, est.tau_hat, level, method)
}
