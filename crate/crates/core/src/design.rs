//! Phase-2 sampling designs over a discrete stratifier `S`.
//!
//! With shares `p_k` and a per-stratum cost `c_k`, minimizing
//! `sum_k p_k c_k / q_k` subject to `sum_k p_k q_k = qbar` gives
//! `q_k = qbar sqrt(c_k) / sum_j p_j sqrt(c_j)` and the optimal value
//! `(sum_k p_k sqrt(c_k))^2 / qbar`. The enriched estimators use
//! `c_k = sigma_k^2` (Neyman allocation), the IPSW estimators
//! `c_k = sigma_k^2 + xi_k^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimand::Estimand;

const SHARE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignInput {
    pub p: Vec<f64>,
    /// Conditional standard deviations of the full-data EIF within strata.
    pub sigma: Vec<f64>,
    /// Conditional means of the full-data EIF within strata.
    pub xi: Option<Vec<f64>>,
    pub qbar: f64,
    /// Weight normalizer `C_w`. When given, the objective is also reported
    /// for the EIF scaled by `1 / C_w`.
    pub c_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutput {
    pub q: Vec<f64>,
    /// Optimal value `(sum_k p_k sqrt(c_k))^2 / qbar` in the units of the inputs.
    pub objective: f64,
    /// The same objective divided by `C_w^2`, if `C_w` was supplied.
    pub objective_normalized: Option<f64>,
    pub feasible: bool,
    pub max_q: f64,
}

impl DesignInput {
    fn check(&self) -> Result<()> {
        let k = self.p.len();
        if k == 0 {
            return Err(Error::InvalidArgument("design needs at least one stratum".into()));
        }
        if self.sigma.len() != k || self.xi.as_ref().is_some_and(|x| x.len() != k) {
            return Err(Error::InvalidArgument(
                "p, sigma and xi must have one entry per stratum".into(),
            ));
        }
        if self.p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("stratum shares must be nonnegative".into()));
        }
        let total: f64 = self.p.iter().sum();
        if (total - 1.0).abs() > SHARE_TOL {
            return Err(Error::InvalidArgument(format!("stratum shares sum to {total}, not 1")));
        }
        if self.sigma.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("sigma must be finite and nonnegative".into()));
        }
        if let Some(xi) = &self.xi {
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("xi must be finite".into()));
            }
        }
        if !(self.qbar > 0.0 && self.qbar < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "overall sampling fraction {} outside (0, 1)",
                self.qbar
            )));
        }
        if let Some(c) = self.c_w {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidArgument(format!("C_w = {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Square-root cost allocation shared by both optimal designs.
fn allocate(input: &DesignInput, root_cost: &[f64]) -> Result<DesignOutput> {
    let s: f64 = input.p.iter().zip(root_cost).map(|(p, r)| p * r).sum();
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(
            "all stratum costs are zero on strata with positive share".into(),
        ));
    }
    let q: Vec<f64> = root_cost.iter().map(|r| input.qbar * r / s).collect();
    let max_q = q.iter().cloned().fold(0.0, f64::max);
    let feasible = max_q <= 1.0;
    if !feasible {
        log::warn!("optimal allocation is infeasible: max q_k = {max_q} > 1");
    }
    let objective = s * s / input.qbar;
    Ok(DesignOutput {
        objective_normalized: input.c_w.map(|c| objective / (c * c)),
        q,
        objective,
        feasible,
        max_q,
    })
}

pub fn neyman_allocation(input: &DesignInput) -> Result<DesignOutput> {
    input.check()?;
    allocate(input, &input.sigma)
}

pub fn ipsw_allocation(input: &DesignInput) -> Result<DesignOutput> {
    input.check()?;
    let xi = input
        .xi
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("IPSW-optimal design needs xi".into()))?;
    let root: Vec<f64> = input
        .sigma
        .iter()
        .zip(xi)
        .map(|(s, x)| (s * s + x * x).sqrt())
        .collect();
    allocate(input, &root)
}

/// `sum_k p_k c_k / q_k` for an arbitrary allocation.
pub fn design_objective(p: &[f64], cost: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(cost).zip(q).map(|((p, c), q)| p * c / q).sum()
}

/// Unnormalized simplified design scores `w(e_k) / sqrt(e_k (1 - e_k))`.
pub fn simple_design_probability(estimand: Estimand, e_by_stratum: &[f64]) -> Result<Vec<f64>> {
    e_by_stratum
        .iter()
        .map(|&e| {
            let (w, _) = estimand.weight_and_derivative(e)?;
            Ok(w / (e * (1.0 - e)).sqrt())
        })
        .collect()
}

/// Rescales scores to `q_k = qbar s_k / sum_j p_j s_j`.
pub fn normalize_to_budget(scores: &[f64], p: &[f64], qbar: f64) -> Result<Vec<f64>> {
    if scores.len() != p.len() {
        return Err(Error::InvalidArgument("scores and shares differ in length".into()));
    }
    let s: f64 = scores.iter().zip(p).map(|(a, b)| a * b).sum();
    if !(s > 0.0) {
        return Err(Error::InvalidArgument("scores have zero weighted sum".into()));
    }
    Ok(scores.iter().map(|v| qbar * v / s).collect())
}

/// Per-stratum share, mean and variance (divisor `n_k`) of `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumMoments {
    pub p: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn stratum_moments(phi: &[f64], labels: &[usize], k: usize) -> Result<StratumMoments> {
    if phi.len() != labels.len() || phi.is_empty() {
        return Err(Error::InvalidArgument("phi and labels must be nonempty and aligned".into()));
    }
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k];
    for (&v, &l) in phi.iter().zip(labels) {
        if l >= k {
            return Err(Error::InvalidArgument(format!("stratum label {l} out of range")));
        }
        count[l] += 1;
        sum[l] += v;
    }
    if let Some(l) = count.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("stratum {l} is empty")));
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let mut var = vec![0.0; k];
    for (&v, &l) in phi.iter().zip(labels) {
        var[l] += (v - mean[l]).powi(2);
    }
    for (v, &c) in var.iter_mut().zip(&count) {
        *v /= c as f64;
    }
    let n = phi.len() as f64;
    Ok(StratumMoments {
        p: count.iter().map(|&c| c as f64 / n).collect(),
        mean,
        var,
    })
}

/// Plug-in efficiency bound by both decompositions:
/// `Var(phi) + E[(1/q - 1) Var(phi|S)]` and `Var(E[phi|S]) + E[Var(phi|S) / q]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBound {
    pub total_form: f64,
    pub conditional_form: f64,
}

impl EfficiencyBound {
    pub fn value(&self) -> f64 {
        self.conditional_form
    }
}

fn check_q(q: &[f64], k: usize) -> Result<()> {
    if q.len() != k {
        return Err(Error::InvalidArgument("need one q per stratum".into()));
    }
    if q.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::InvalidArgument("q must lie in (0, 1]".into()));
    }
    Ok(())
}

pub fn efficiency_bound(phi: &[f64], labels: &[usize], q_by_stratum: &[f64]) -> Result<EfficiencyBound> {
    let k = q_by_stratum.len();
    check_q(q_by_stratum, k)?;
    let m = stratum_moments(phi, labels, k)?;
    let n = phi.len() as f64;
    let mean = phi.iter().sum::<f64>() / n;
    let var = phi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut total_form = var;
    let mut between = 0.0;
    let mut within = 0.0;
    for j in 0..k {
        total_form += m.p[j] * (1.0 / q_by_stratum[j] - 1.0) * m.var[j];
        between += m.p[j] * (m.mean[j] - mean).powi(2);
        within += m.p[j] * m.var[j] / q_by_stratum[j];
    }
    Ok(EfficiencyBound {
        total_form,
        conditional_form: between + within,
    })
}

/// Plug-in `G = E[(1/q(S) - 1) E[phi|S]^2]`, the asymptotic variance reduction
/// of an enriched estimator over its IPSW counterpart.
pub fn enrichment_gain(phi: &[f64], labels: &[usize], q_by_stratum: &[f64]) -> Result<f64> {
    let k = q_by_stratum.len();
    check_q(q_by_stratum, k)?;
    let m = stratum_moments(phi, labels, k)?;
    Ok((0..k)
        .map(|j| m.p[j] * (1.0 / q_by_stratum[j] - 1.0) * m.mean[j].powi(2))
        .sum())
}
