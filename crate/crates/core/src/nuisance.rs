//! Sampling-weighted logistic regression for the propensity score and the
//! arm-specific outcome regressions.
//!
//! Fitting solves the weighted score equation `sum_i w_i x_i (y_i - expit(x_i'b)) = 0`
//! by Newton-Raphson with step halving. When the information matrix is badly
//! conditioned a small ridge is added before solving.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::ObservationTable;
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(intercept)";

/// Propensity predictions used by the estimators are clamped to this band.
pub const PROPENSITY_CLAMP: f64 = 1e-6;

#[inline]
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let z = eta.exp();
        z / (1.0 + z)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + exp(eta))` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Design matrix with an intercept in the first column.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl Design {
    /// Builds `[1, x_1, ..., x_p]` for the given rows. Every requested cell must
    /// be observed.
    pub fn from_table(
        table: &ObservationTable,
        rows: &[usize],
        covariates: &[String],
    ) -> Result<Self> {
        let cols = covariates
            .iter()
            .map(|c| {
                table
                    .column(c)
                    .ok_or_else(|| Error::Schema(format!("model covariate '{c}' not found")))
            })
            .collect::<Result<Vec<_>>>()?;
        let p = covariates.len() + 1;
        let mut matrix = DMatrix::<f64>::zeros(rows.len(), p);
        for (r, &i) in rows.iter().enumerate() {
            matrix[(r, 0)] = 1.0;
            for (j, col) in cols.iter().enumerate() {
                matrix[(r, j + 1)] = col.get(i).ok_or_else(|| {
                    Error::Invariant(format!(
                        "covariate '{}' missing at row {} used for model fitting",
                        covariates[j],
                        i + 1
                    ))
                })?;
            }
        }
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(covariates.iter().cloned());
        Ok(Self { names, matrix })
    }

    /// Wraps a raw matrix whose first column is assumed to be the intercept.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let names = (0..matrix.ncols())
            .map(|j| if j == 0 { INTERCEPT.to_string() } else { format!("x{j}") })
            .collect();
        Self { names, matrix }
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub ridge: f64,
    pub condition_limit: f64,
    pub divergence_norm: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
            max_halvings: 30,
            ridge: 1e-8,
            condition_limit: 1e12,
            divergence_norm: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedGlm {
    pub coefficients: DVector<f64>,
    pub design_columns: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub final_score_norm: f64,
    /// Effective per-row weight (zero for masked-out rows).
    pub weights_used: Vec<f64>,
}

impl FittedGlm {
    /// Model with fixed coefficients, e.g. a known propensity score.
    pub fn fixed(design_columns: Vec<String>, coefficients: DVector<f64>) -> Self {
        Self {
            coefficients,
            design_columns,
            converged: true,
            iterations: 0,
            final_score_norm: 0.0,
            weights_used: Vec::new(),
        }
    }

    /// Covariate names without the intercept.
    pub fn covariates(&self) -> &[String] {
        &self.design_columns[1..]
    }
}

fn linear_predictor(x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    x * beta
}

/// Weighted Bernoulli log-likelihood.
pub fn log_likelihood(x: &DMatrix<f64>, y: &[f64], weights: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = linear_predictor(x, beta);
    eta.iter()
        .zip(y)
        .zip(weights)
        .filter(|(_, &w)| w != 0.0)
        .map(|((&e, &yi), &w)| w * (yi * e - softplus(e)))
        .sum()
}

/// Weighted score `sum w x (y - p)` and Hessian `-sum w p (1-p) x x'` at `beta`.
pub fn score_and_hessian(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    beta: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = x.shape();
    if y.len() != n || weights.len() != n || beta.len() != p {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: x is {n}x{p}, y {}, weights {}, beta {}",
            y.len(),
            weights.len(),
            beta.len()
        )));
    }
    let eta = linear_predictor(x, beta);
    let mut score = DVector::<f64>::zeros(p);
    let mut hess = DMatrix::<f64>::zeros(p, p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let pi = expit(eta[i]);
        let r = w * (y[i] - pi);
        let c = w * pi * (1.0 - pi);
        for j in 0..p {
            row[j] = x[(i, j)];
        }
        for j in 0..p {
            score[j] += r * row[j];
            let cj = c * row[j];
            for k in 0..=j {
                hess[(j, k)] -= cj * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            hess[(k, j)] = hess[(j, k)];
        }
    }
    Ok((score, hess))
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn newton_direction(
    info: DMatrix<f64>,
    score: &DVector<f64>,
    opts: &FitOptions,
) -> Result<DVector<f64>> {
    let p = info.nrows();
    let eig = SymmetricEigen::new(info.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut info = info;
    if !(lo > 0.0) || hi / lo > opts.condition_limit {
        info += DMatrix::<f64>::identity(p, p) * opts.ridge;
    }
    let chol = info
        .cholesky()
        .ok_or_else(|| Error::Singular("logistic information matrix".into()))?;
    Ok(chol.solve(score))
}

/// Fits a logistic regression by weighted maximum likelihood. Rows with
/// `mask[i] == false` are ignored.
pub fn fit_weighted_logistic(
    design: &Design,
    y: &[f64],
    weights: &[f64],
    mask: &[bool],
    opts: &FitOptions,
) -> Result<FittedGlm> {
    let x = &design.matrix;
    let (n, p) = x.shape();
    if y.len() != n || weights.len() != n || mask.len() != n {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {n} design rows, {} responses, {} weights, {} mask entries",
            y.len(),
            weights.len(),
            mask.len()
        )));
    }
    let w: Vec<f64> = weights
        .iter()
        .zip(mask)
        .map(|(&wi, &m)| if m { wi } else { 0.0 })
        .collect();
    if w.iter().any(|&wi| !(wi >= 0.0) || !wi.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    if let Some(i) = (0..n).find(|&i| w[i] > 0.0 && y[i] != 0.0 && y[i] != 1.0) {
        return Err(Error::InvalidArgument(format!(
            "logistic response at design row {i} is {}, expected 0 or 1",
            y[i]
        )));
    }
    let has = |v: f64| (0..n).any(|i| w[i] > 0.0 && y[i] == v);
    if !has(0.0) || !has(1.0) {
        return Err(Error::InvalidArgument(
            "logistic fit needs both responses 0 and 1 among positively weighted rows".into(),
        ));
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut ll = log_likelihood(x, y, &w, &beta);
    let mut iterations = 0;
    let mut converged = false;
    let mut score_norm;
    loop {
        let (score, hess) = score_and_hessian(x, y, &w, &beta)?;
        score_norm = max_abs(&score);
        if score_norm < opts.tolerance {
            converged = true;
            // One extra Newton step; the score criterion is absolute, so a fit
            // with small total weight would otherwise stop short of full precision.
            if let Ok(direction) = newton_direction(-hess, &score, opts) {
                let cand = &beta + direction;
                let (s_c, _) = score_and_hessian(x, y, &w, &cand)?;
                if max_abs(&s_c) <= score_norm {
                    score_norm = max_abs(&s_c);
                    beta = cand;
                }
            }
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;
        let direction = newton_direction(-hess, &score, opts)?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &beta + &direction * step;
            let ll_c = log_likelihood(x, y, &w, &cand);
            if ll_c.is_finite() && ll_c >= ll - 1e-12 * (1.0 + ll.abs()) {
                accepted = Some((cand, ll_c));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, ll_c)) = accepted else {
            log::debug!("step halving exhausted at iteration {iterations}");
            break;
        };
        beta = cand;
        ll = ll_c;
        let norm = beta.norm();
        if !norm.is_finite() || norm > opts.divergence_norm {
            return Err(Error::Separation { norm });
        }
    }
    let eta = linear_predictor(x, &beta);
    if (0..n).all(|i| w[i] == 0.0 || (y[i] - expit(eta[i])).abs() < 1e-6) {
        return Err(Error::Separation { norm: beta.norm() });
    }
    if !converged {
        log::warn!(
            "logistic fit did not converge after {iterations} iterations (max |score| = {score_norm:.3e})"
        );
    }
    Ok(FittedGlm {
        coefficients: beta,
        design_columns: design.names.clone(),
        converged,
        iterations,
        final_score_norm: score_norm,
        weights_used: w,
    })
}

/// `expit(x b)` per row, kept strictly inside (0, 1).
pub fn predict_probability(model: &FittedGlm, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.coefficients.len() {
        return Err(Error::InvalidArgument(format!(
            "design has {} columns but the model has {} coefficients",
            x.ncols(),
            model.coefficients.len()
        )));
    }
    const HI: f64 = 1.0 - f64::EPSILON / 2.0;
    Ok(linear_predictor(x, &model.coefficients)
        .iter()
        .map(|&e| expit(e).clamp(f64::MIN_POSITIVE, HI))
        .collect())
}

/// Clamps propensities to `[c, 1 - c]`, returning how many were moved.
pub fn clamp_propensities(e: &mut [f64]) -> usize {
    let mut count = 0;
    for v in e.iter_mut() {
        let c = v.clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP);
        if c != *v {
            count += 1;
            *v = c;
        }
    }
    if count > 0 {
        log::warn!("{count} propensity predictions clamped to [{PROPENSITY_CLAMP}, 1 - {PROPENSITY_CLAMP}]");
    }
    count
}
