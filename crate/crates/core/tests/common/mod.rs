#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wate_core::dataset::{build_strata, ObservationTable, Schema, StratumIndex};
use wate_core::estimators::ModelSpec;
use wate_core::nuisance::expit;

pub fn schema() -> Schema {
    Schema {
        delta: "delta".into(),
        q: "q".into(),
        treatment: "a".into(),
        outcome: "y".into(),
        v: vec!["x1".into()],
        w: vec!["x2".into()],
    }
}

pub fn models() -> ModelSpec {
    ModelSpec {
        propensity: vec!["x1".into(), "x2".into()],
        outcome: vec!["x1".into(), "x2".into()],
    }
}

pub fn ods_keys() -> Vec<String> {
    vec!["a".into(), "x1".into(), "y".into()]
}

/// Small two-phase sample with a binary stratifier `x1`, a continuous
/// expensive covariate `x2` and outcome-dependent Poisson sampling.
/// `all_sampled` gives `delta = 1`, `q = 1`.
pub fn two_phase(n: usize, seed: u64, all_sampled: bool) -> ObservationTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for _ in 0..n {
        let v = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let w: f64 = rng.sample(StandardNormal);
        let treated = rng.random::<f64>() < expit(-0.3 + 0.5 * v + 0.6 * w);
        let p = if treated {
            expit(0.2 + 0.4 * v + 0.7 * w)
        } else {
            expit(-0.4 + 0.3 * v + 0.5 * w)
        };
        let yi = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let qi = if all_sampled {
            1.0
        } else if treated {
            0.6
        } else if yi == 1.0 {
            0.7
        } else {
            0.3
        };
        let d = rng.random::<f64>() < qi;
        a.push(u8::from(treated));
        y.push(Some(yi));
        x1.push(v);
        x2.push(if d { Some(w) } else { None });
        delta.push(d);
        q.push(qi);
    }
    ObservationTable::from_columns(schema(), a, y, vec![x1], vec![x2], delta, q).unwrap()
}

pub fn strata(t: &ObservationTable) -> StratumIndex {
    build_strata(t, &ods_keys()).unwrap()
}
