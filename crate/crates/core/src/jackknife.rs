//! Delete-d jackknife bias correction.
//!
//! Rows are split into `D` groups, stratified by sampling phase. Each
//! replicate drops one group and re-runs the whole estimator, nuisance fits
//! included. The corrected estimate is `D theta - (D - 1) mean_g theta_(-g)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};

pub const DEFAULT_GROUPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JackknifePlan {
    pub d: usize,
    pub group_of: Vec<usize>,
    pub seed: u64,
    pub stratified_by_phase: bool,
}

impl JackknifePlan {
    /// Row indices kept when group `g` is deleted.
    pub fn kept_rows(&self, g: usize) -> Vec<usize> {
        (0..self.group_of.len()).filter(|&i| self.group_of[i] != g).collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.d];
        for &g in &self.group_of {
            s[g] += 1;
        }
        s
    }
}

/// Permutes each phase with a seeded shuffle and deals rows round-robin into
/// `d` groups. Dealing of the second phase continues where the first stopped,
/// so group sizes stay balanced overall as well as within each phase.
pub fn partition_stratified(delta: &[bool], d: usize, seed: u64) -> Result<JackknifePlan> {
    let n = delta.len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!("jackknife needs D >= 2, got {d}")));
    }
    let phase2: Vec<usize> = (0..n).filter(|&i| delta[i]).collect();
    let phase1: Vec<usize> = (0..n).filter(|&i| !delta[i]).collect();
    let limit = match (phase2.is_empty(), phase1.is_empty()) {
        (false, false) => phase2.len().min(phase1.len()),
        _ => n,
    };
    if d > limit {
        return Err(Error::InvalidArgument(format!(
            "jackknife D = {d} exceeds the smaller phase size {limit}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut group_of = vec![0; n];
    let mut next = 0;
    for mut rows in [phase2, phase1] {
        rows.shuffle(&mut rng);
        for i in rows {
            group_of[i] = next;
            next = (next + 1) % d;
        }
    }
    Ok(JackknifePlan {
        d,
        group_of,
        seed,
        stratified_by_phase: true,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeResult {
    pub full: Vec<f64>,
    pub corrected: Vec<f64>,
    /// `replicates[g]` holds the estimates with group `g` removed.
    pub replicates: Vec<Vec<f64>>,
}

/// Vector-valued form: every component of `estimate_fn` is corrected with the
/// same replicate tables.
pub fn jackknife_correct_many<F>(
    estimate_fn: F,
    table: &ObservationTable,
    plan: &JackknifePlan,
    exec: Execution,
) -> Result<JackknifeResult>
where
    F: Fn(&ObservationTable) -> Result<Vec<f64>> + Sync + Send,
{
    if plan.group_of.len() != table.n() {
        return Err(Error::InvalidArgument(
            "jackknife plan was built for a different table".into(),
        ));
    }
    let full = estimate_fn(table)?;
    let replicates = map_indexed(exec, plan.d, |g| {
        let sub = table.subset(&plan.kept_rows(g));
        estimate_fn(&sub).map_err(|e| Error::Replicate {
            group: g,
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    if let Some(g) = replicates.iter().position(|r| r.len() != full.len()) {
        return Err(Error::Replicate {
            group: g,
            source: Box::new(Error::InvalidArgument(
                "replicate returned a different number of estimates".into(),
            )),
        });
    }
    let d = plan.d as f64;
    let corrected = (0..full.len())
        .map(|j| {
            let mean = replicates.iter().map(|r| r[j]).sum::<f64>() / d;
            d * full[j] - (d - 1.0) * mean
        })
        .collect();
    Ok(JackknifeResult {
        full,
        corrected,
        replicates,
    })
}

/// Returns `(corrected, replicates)`.
pub fn jackknife_correct<F>(
    estimate_fn: F,
    table: &ObservationTable,
    plan: &JackknifePlan,
    exec: Execution,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&ObservationTable) -> Result<f64> + Sync + Send,
{
    let r = jackknife_correct_many(|t| estimate_fn(t).map(|v| vec![v]), table, plan, exec)?;
    Ok((r.corrected[0], r.replicates.into_iter().map(|v| v[0]).collect()))
}
