mod common;

use nalgebra::{DMatrix, DVector};
use wate_core::estimand::Estimand;
use wate_core::estimators::{estimate, fit_nuisances, EstimateResult, EstimatorKind, NuisanceBundle};
use wate_core::inference::{
    eif_for, eif_full, sandwich_influence, variance_eif, variance_sandwich, weight_normalizer,
    SandwichOptions, StackedSystem,
};
use wate_core::nuisance::{expit, FitOptions};
use wate_core::dataset::ObservationTable;

struct Row {
    x: [f64; 3],
    a: f64,
    y: f64,
    q: f64,
    delta: bool,
    stratum: usize,
}

fn rows(t: &ObservationTable) -> Vec<Row> {
    let strata = common::strata(t);
    let x1 = t.column("x1").unwrap();
    let x2 = t.column("x2").unwrap();
    (0..t.n())
        .map(|i| Row {
            x: [1.0, x1.get(i).unwrap(), x2.get(i).unwrap_or(f64::NAN)],
            a: f64::from(t.treatment()[i]),
            y: t.outcome()[i].unwrap(),
            q: t.q()[i],
            delta: t.delta()[i],
            stratum: strata.labels[i],
        })
        .collect()
}

fn dot(x: &[f64; 3], b: &[f64]) -> f64 {
    x.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn weight(est: Estimand, e: f64) -> (f64, f64) {
    match est {
        Estimand::Ate => (1.0, 0.0),
        Estimand::Att => (e, 1.0),
        Estimand::Atc => (1.0 - e, -1.0),
        Estimand::Ato => (e * (1.0 - e), 1.0 - 2.0 * e),
    }
}

/// Full-data estimating function of the target block, written out directly.
fn psi_target(kind: EstimatorKind, est: Estimand, r: &Row, eta: &[f64]) -> Vec<f64> {
    let dr = kind.is_doubly_robust();
    let d = if dr { 1 } else { 3 };
    let alpha = &eta[d..d + 3];
    let e = expit(dot(&r.x, alpha));
    let (w, wd) = weight(est, e);
    if dr {
        let m1 = expit(dot(&r.x, &eta[4..7]));
        let m0 = expit(dot(&r.x, &eta[7..10]));
        let aug = r.a * (r.y - m1) / e - (1.0 - r.a) * (r.y - m0) / (1.0 - e);
        vec![w * aug + (w + wd * (r.a - e)) * (m1 - m0 - eta[0])]
    } else {
        vec![
            r.a * w / e * (r.y - eta[0]),
            (1.0 - r.a) * w / (1.0 - e) * (r.y - eta[1]),
            eta[0] - eta[1] - eta[2],
        ]
    }
}

/// Per-row stacked estimating function `g_i(eta)` for every phase-1 row.
fn stacked(kind: EstimatorKind, est: Estimand, data: &[Row], eta: &[f64]) -> Vec<Vec<f64>> {
    let dr = kind.is_doubly_robust();
    let d = if dr { 1 } else { 3 };
    let k = data.iter().map(|r| r.stratum).max().unwrap() + 1;
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0.0; k];
    let psi: Vec<Option<Vec<f64>>> = data
        .iter()
        .map(|r| r.delta.then(|| psi_target(kind, est, r, eta)))
        .collect();
    for (r, p) in data.iter().zip(&psi) {
        if let Some(p) = p {
            for j in 0..d {
                sums[r.stratum][j] += p[j];
            }
            counts[r.stratum] += 1.0;
        }
    }
    data.iter()
        .zip(&psi)
        .map(|(r, p)| {
            let s = if r.delta { 1.0 / r.q } else { 0.0 };
            let mut g: Vec<f64> = (0..d)
                .map(|j| {
                    let main = p.as_ref().map_or(0.0, |p| s * p[j]);
                    if kind.is_enriched() {
                        main + (1.0 - s) * sums[r.stratum][j] / counts[r.stratum]
                    } else {
                        main
                    }
                })
                .collect();
            let x = r.x;
            let alpha = &eta[d..d + 3];
            for c in 0..3 {
                g.push(if r.delta { s * x[c] * (r.a - expit(dot(&x, alpha))) } else { 0.0 });
            }
            if dr {
                for (arm, off) in [(1.0, 4), (0.0, 7)] {
                    for c in 0..3 {
                        let v = if r.delta && r.a == arm {
                            s * x[c] * (r.y - expit(dot(&x, &eta[off..off + 3])))
                        } else {
                            0.0
                        };
                        g.push(v);
                    }
                }
            }
            g
        })
        .collect()
}

fn mean_stacked(kind: EstimatorKind, est: Estimand, data: &[Row], eta: &[f64]) -> DVector<f64> {
    let g = stacked(kind, est, data, eta);
    let p = g[0].len();
    let mut out = DVector::zeros(p);
    for gi in &g {
        out += DVector::from_column_slice(gi);
    }
    out / data.len() as f64
}

/// Influence function of tau through the full stacked Jacobian, obtained by
/// finite differences and inverted as a whole.
fn oracle_influence(
    kind: EstimatorKind,
    est: Estimand,
    t: &ObservationTable,
    res: &EstimateResult,
    bundle: &NuisanceBundle,
) -> Vec<f64> {
    let data = rows(t);
    let mut eta: Vec<f64> = if kind.is_doubly_robust() {
        vec![res.tau_hat]
    } else {
        vec![res.mu1_hat.unwrap(), res.mu0_hat.unwrap(), res.tau_hat]
    };
    eta.extend(bundle.ps.coefficients.iter());
    if kind.is_doubly_robust() {
        eta.extend(bundle.out1.coefficients.iter());
        eta.extend(bundle.out0.coefficients.iter());
    }
    let p = eta.len();
    let mut jac = DMatrix::zeros(p, p);
    for c in 0..p {
        let h = 1e-5 * (1.0 + eta[c].abs());
        let mut up = eta.clone();
        up[c] += h;
        let mut dn = eta.clone();
        dn[c] -= h;
        let col = (mean_stacked(kind, est, &data, &up) - mean_stacked(kind, est, &data, &dn)) / (2.0 * h);
        jac.set_column(c, &col);
    }
    let lu = jac.lu();
    let tau = if kind.is_doubly_robust() { 0 } else { 2 };
    stacked(kind, est, &data, &eta)
        .into_iter()
        .map(|g| -lu.solve(&DVector::from_vec(g)).unwrap()[tau])
        .collect()
}

fn fitted(t: &ObservationTable) -> NuisanceBundle {
    fit_nuisances(t, &common::models(), &FitOptions::default()).unwrap()
}

#[test]
fn sandwich_matches_full_stacked_oracle() {
    let t = common::two_phase(800, 11, false);
    let strata = common::strata(&t);
    let bundle = fitted(&t);
    for kind in EstimatorKind::ALL {
        for est in [Estimand::Ate, Estimand::Att, Estimand::Ato] {
            let res = estimate(&t, &bundle, est, kind, Some(&strata)).unwrap();
            let got = sandwich_influence(&t, &bundle, &res, Some(&strata), &SandwichOptions::default())
                .unwrap()
                .values;
            let want = oracle_influence(kind, est, &t, &res, &bundle);
            let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let worst = got
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-6 * scale, "{kind} {est}: max deviation {worst}");
        }
    }
}

#[test]
fn full_data_aipw_matches_analytic_m_estimation() {
    let t = common::two_phase(1500, 5, true);
    let bundle = fitted(&t);
    let res = estimate(&t, &bundle, Estimand::Ate, EstimatorKind::Sdr, None).unwrap();
    let got = variance_sandwich(&t, &bundle, &res, None, &SandwichOptions::default(), 0.95).unwrap();

    let data = rows(&t);
    let n = data.len() as f64;
    let al: Vec<f64> = bundle.ps.coefficients.iter().copied().collect();
    let b1: Vec<f64> = bundle.out1.coefficients.iter().copied().collect();
    let b0: Vec<f64> = bundle.out0.coefficients.iter().copied().collect();
    let tau = res.tau_hat;
    // Parameter order: tau, alpha, beta1, beta0.
    let mut jac = DMatrix::<f64>::zeros(10, 10);
    let mut g = Vec::new();
    for r in &data {
        let e = expit(dot(&r.x, &al));
        let m1 = expit(dot(&r.x, &b1));
        let m0 = expit(dot(&r.x, &b0));
        let psi = r.a * (r.y - m1) / e - (1.0 - r.a) * (r.y - m0) / (1.0 - e) + m1 - m0 - tau;
        let mut gi = vec![psi];
        jac[(0, 0)] -= 1.0 / n;
        for c in 0..3 {
            let x = r.x[c];
            jac[(0, 1 + c)] += (-r.a * (r.y - m1) * (1.0 - e) / e - (1.0 - r.a) * (r.y - m0) * e / (1.0 - e)) * x / n;
            jac[(0, 4 + c)] += (1.0 - r.a / e) * m1 * (1.0 - m1) * x / n;
            jac[(0, 7 + c)] -= (1.0 - (1.0 - r.a) / (1.0 - e)) * m0 * (1.0 - m0) * x / n;
            for d in 0..3 {
                jac[(1 + c, 1 + d)] -= e * (1.0 - e) * x * r.x[d] / n;
                jac[(4 + c, 4 + d)] -= r.a * m1 * (1.0 - m1) * x * r.x[d] / n;
                jac[(7 + c, 7 + d)] -= (1.0 - r.a) * m0 * (1.0 - m0) * x * r.x[d] / n;
            }
        }
        gi.extend(r.x.iter().map(|x| x * (r.a - e)));
        gi.extend(r.x.iter().map(|x| r.a * x * (r.y - m1)));
        gi.extend(r.x.iter().map(|x| (1.0 - r.a) * x * (r.y - m0)));
        g.push(gi);
    }
    let lu = jac.lu();
    let inf: Vec<f64> = g
        .into_iter()
        .map(|gi| -lu.solve(&DVector::from_vec(gi)).unwrap()[0])
        .collect();
    let mean = inf.iter().sum::<f64>() / n;
    let var = inf.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(
        ((got.variance_of_if - var) / var).abs() < 1e-8,
        "{} vs {var}",
        got.variance_of_if
    );
}

#[test]
fn analytic_jacobian_blocks_match_finite_differences() {
    let t = common::two_phase(700, 3, false);
    let strata = common::strata(&t);
    let bundle = fitted(&t);
    for kind in [EstimatorKind::Sdr, EstimatorKind::Edr, EstimatorKind::Eiw] {
        let res = estimate(&t, &bundle, Estimand::Att, kind, Some(&strata)).unwrap();
        let sys = StackedSystem::new(&t, &bundle, &res, Some(&strata)).unwrap();
        let blocks = sys.jacobian_blocks(&SandwichOptions::default()).unwrap();
        let h = 1e-6;
        let d = sys.theta_dim();
        for c in 0..d {
            let mut up = sys.theta.clone();
            up[c] += h;
            let mut dn = sys.theta.clone();
            dn[c] -= h;
            let fd = (sys.main_equation(&up, &sys.alpha, &sys.beta1, &sys.beta0)
                - sys.main_equation(&dn, &sys.alpha, &sys.beta1, &sys.beta0))
                / (2.0 * h);
            assert!((fd - blocks.j11.column(c)).amax() < 1e-7, "{kind} J11");
        }
        if kind.is_doubly_robust() {
            for c in 0..sys.beta1.len() {
                let mut up = sys.beta1.clone();
                up[c] += h;
                let mut dn = sys.beta1.clone();
                dn[c] -= h;
                let fd = (sys.main_equation(&sys.theta, &sys.alpha, &up, &sys.beta0)
                    - sys.main_equation(&sys.theta, &sys.alpha, &dn, &sys.beta0))
                    / (2.0 * h);
                assert!((fd - blocks.j13.column(c)).amax() < 1e-7, "{kind} J13");
                let mut up = sys.beta0.clone();
                up[c] += h;
                let mut dn = sys.beta0.clone();
                dn[c] -= h;
                let fd = (sys.main_equation(&sys.theta, &sys.alpha, &sys.beta1, &up)
                    - sys.main_equation(&sys.theta, &sys.alpha, &sys.beta1, &dn))
                    / (2.0 * h);
                assert!((fd - blocks.j14.column(c)).amax() < 1e-7, "{kind} J14");
            }
        }
        // J22: derivative of the mean weighted propensity score.
        let n = t.n() as f64;
        let score = |alpha: &DVector<f64>| -> DVector<f64> {
            let [ue, _, _] = sys.nuisance_scores(alpha, &sys.beta1, &sys.beta0);
            ue * DVector::from_column_slice(&sys.inv_q) / n
        };
        for c in 0..sys.alpha.len() {
            let mut up = sys.alpha.clone();
            up[c] += h;
            let mut dn = sys.alpha.clone();
            dn[c] -= h;
            let fd = (score(&up) - score(&dn)) / (2.0 * h);
            assert!((fd - blocks.j22.column(c)).amax() < 1e-7, "{kind} J22");
        }
    }
}

#[test]
fn estimated_propensity_changes_the_iptw_sandwich() {
    let t = common::two_phase(2000, 21, false);
    let bundle = fitted(&t);
    let res = estimate(&t, &bundle, Estimand::Ate, EstimatorKind::Siw, None).unwrap();
    let fixed = SandwichOptions {
        nuisance_estimated: false,
        ..SandwichOptions::default()
    };
    let v_fixed = variance_sandwich(&t, &bundle, &res, None, &fixed, 0.95).unwrap();
    let v_est = variance_sandwich(&t, &bundle, &res, None, &SandwichOptions::default(), 0.95).unwrap();
    let rel = (v_fixed.variance_of_if - v_est.variance_of_if).abs() / v_est.variance_of_if;
    assert!(rel > 1e-3, "relative difference {rel}");
}

#[test]
fn dr_sandwich_close_to_eif_under_correct_models() {
    let t = common::two_phase(10_000, 8, false);
    let strata = common::strata(&t);
    let bundle = fitted(&t);
    for kind in [EstimatorKind::Sdr, EstimatorKind::Edr] {
        let res = estimate(&t, &bundle, Estimand::Ate, kind, Some(&strata)).unwrap();
        let eif = variance_eif(&res, &t, Some(&strata), 0.95).unwrap();
        let sw = variance_sandwich(&t, &bundle, &res, Some(&strata), &SandwichOptions::default(), 0.95)
            .unwrap();
        let rel = (sw.variance_of_if - eif.variance_of_if).abs() / eif.variance_of_if;
        assert!(rel < 0.10, "{kind}: sandwich {} vs eif {}", sw.variance_of_if, eif.variance_of_if);
    }
}

#[test]
fn eif_is_centered_at_the_estimate() {
    let t = common::two_phase(1200, 4, false);
    let strata = common::strata(&t);
    let bundle = fitted(&t);
    for est in Estimand::ALL {
        let sdr = estimate(&t, &bundle, est, EstimatorKind::Sdr, None).unwrap();
        let phi = eif_full(&sdr, weight_normalizer(&sdr)).unwrap();
        let weighted: f64 = phi.rows.iter().zip(&phi.values).map(|(&i, v)| v / t.q()[i]).sum();
        let scale: f64 = phi.values.iter().map(|v| v.abs()).sum();
        assert!(weighted.abs() < 1e-12 * scale, "{est}: {weighted}");

        let edr = estimate(&t, &bundle, est, EstimatorKind::Edr, Some(&strata)).unwrap();
        let obs = eif_for(&edr, &t, Some(&strata)).unwrap();
        let total: f64 = obs.values.iter().sum();
        let scale: f64 = obs.values.iter().map(|v| v.abs()).sum();
        assert!(total.abs() < 1e-12 * scale, "{est}: {total}");
    }
}

#[test]
fn observed_eif_reduces_to_full_data_eif_without_subsampling() {
    let t = common::two_phase(500, 9, true);
    let strata = common::strata(&t);
    let bundle = fitted(&t);
    let res = estimate(&t, &bundle, Estimand::Ato, EstimatorKind::Edr, Some(&strata)).unwrap();
    let phi = eif_full(&res, weight_normalizer(&res)).unwrap();
    let obs = eif_for(&res, &t, Some(&strata)).unwrap();
    for (a, b) in phi.values.iter().zip(&obs.values) {
        assert!((a - b).abs() < 1e-12);
    }
}
