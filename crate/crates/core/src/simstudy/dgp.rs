//! Data-generating process of the simulation study and large-sample truths.

use std::collections::BTreeMap;

use ordered_float::OrderedFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::StratumIndex;
use crate::error::{Error, Result};
use crate::estimand::Estimand;
use crate::exec::{map_indexed, Execution};
use crate::nuisance::expit;
use crate::twophase::{reference_probabilities, QByStratum};

pub const NUM_V: usize = 8;

/// Rows per RNG stream. Chunk `c` draws from stream `c`, so a population is
/// the same whether its chunks are generated sequentially or in parallel.
pub const CHUNK_ROWS: usize = 1 << 16;

/// `intercept + sum_j v_j V_j + w W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearIndex {
    pub intercept: f64,
    pub v: [f64; NUM_V],
    pub w: f64,
}

impl LinearIndex {
    fn on(intercept: f64, vs: &[usize], coef: f64, w: f64) -> Self {
        let mut v = [0.0; NUM_V];
        for &j in vs {
            v[j - 1] = coef;
        }
        Self { intercept, v, w }
    }

    #[inline]
    pub fn eval(&self, v: &[u8; NUM_V], w: f64) -> f64 {
        let mut s = self.intercept + self.w * w;
        for j in 0..NUM_V {
            if v[j] == 1 {
                s += self.v[j];
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub v_prob: f64,
    /// Mean of `W`; its `w` coefficient is ignored.
    pub w_mean: LinearIndex,
    pub w_sd: f64,
    pub treatment: LinearIndex,
    pub outcome1: LinearIndex,
    pub outcome0: LinearIndex,
    /// Sets `Y0 := Y1`, so every effect is exactly zero.
    pub null_effect: bool,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            v_prob: 0.5,
            w_mean: LinearIndex::on(-1.0, &[1, 3, 4, 7], 0.5, 0.0),
            w_sd: 0.25,
            treatment: LinearIndex::on(-2.10, &[1, 2, 4, 6], 0.5, 1.0),
            outcome1: LinearIndex::on(-0.59, &[1, 2, 3, 5], 0.5, 1.5),
            outcome0: LinearIndex::on(-1.41, &[], 0.0, 1.0),
            null_effect: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub v: [u8; NUM_V],
    pub w: f64,
    /// True propensity score.
    pub e: f64,
    pub a: u8,
    pub y1: u8,
    pub y0: u8,
}

impl Unit {
    #[inline]
    pub fn y(&self) -> u8 {
        if self.a == 1 {
            self.y1
        } else {
            self.y0
        }
    }
}

#[inline]
fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

fn draw_unit(params: &DgpParams, rng: &mut ChaCha8Rng) -> Unit {
    let mut v = [0u8; NUM_V];
    for slot in &mut v {
        *slot = bernoulli(rng, params.v_prob);
    }
    let eps: f64 = rng.sample(StandardNormal);
    let w = params.w_mean.eval(&v, 0.0) + params.w_sd * eps;
    let e = expit(params.treatment.eval(&v, w));
    let a = bernoulli(rng, e);
    let y1 = bernoulli(rng, expit(params.outcome1.eval(&v, w)));
    let y0 = bernoulli(rng, expit(params.outcome0.eval(&v, w)));
    Unit {
        v,
        w,
        e,
        a,
        y1,
        y0: if params.null_effect { y1 } else { y0 },
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn chunk_len(n: usize, chunk: usize) -> usize {
    CHUNK_ROWS.min(n - chunk * CHUNK_ROWS)
}

fn chunk_count(n: usize) -> usize {
    n.div_ceil(CHUNK_ROWS)
}

pub fn generate_population_with(
    params: &DgpParams,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Vec<Unit> {
    map_indexed(exec, chunk_count(n), |c| {
        let mut rng = chunk_rng(seed, c);
        (0..chunk_len(n, c)).map(|_| draw_unit(params, &mut rng)).collect::<Vec<_>>()
    })
    .concat()
}

/// `n` units from the default process.
pub fn generate_population(n: usize, seed: u64) -> Vec<Unit> {
    generate_population_with(&DgpParams::default(), n, seed, Execution::Sequential)
}

/// Stratum code `4 a + 2 v + y` of a unit for covariate `V_j` (1-based).
#[inline]
pub fn ods_code(u: &Unit, j: usize) -> usize {
    4 * usize::from(u.a) + 2 * usize::from(u.v[j - 1]) + usize::from(u.y())
}

/// Weighted plug-in effect `sum w(e)(Y1 - Y0) / sum w(e)` using true `e`.
pub fn population_effect(units: &[Unit], estimand: Estimand) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for u in units {
        let (w, _) = estimand.weight_unchecked(u.e);
        num += w * (f64::from(u.y1) - f64::from(u.y0));
        den += w;
    }
    num / den
}

/// Full-data estimator with the true propensity and both potential outcomes
/// on every phase-1 unit: `sum (w + w'(A - e))(Y1 - Y0) / sum (w + w'(A - e))`.
pub fn oracle_estimate(units: &[Unit], estimand: Estimand) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for u in units {
        let (w, wd) = estimand.weight_unchecked(u.e);
        let d = w + wd * (f64::from(u.a) - u.e);
        num += d * (f64::from(u.y1) - f64::from(u.y0));
        den += d;
    }
    num / den
}

#[derive(Debug, Clone, PartialEq)]
struct ChunkStats {
    n: u64,
    treated: u64,
    num: [f64; 4],
    den: [f64; 4],
    counts: [[u64; 8]; NUM_V],
}

impl ChunkStats {
    fn of(units: &[Unit]) -> Self {
        let mut s = ChunkStats {
            n: units.len() as u64,
            treated: 0,
            num: [0.0; 4],
            den: [0.0; 4],
            counts: [[0; 8]; NUM_V],
        };
        for u in units {
            s.treated += u64::from(u.a);
            let diff = f64::from(u.y1) - f64::from(u.y0);
            for (k, est) in Estimand::ALL.iter().enumerate() {
                let (w, _) = est.weight_unchecked(u.e);
                s.num[k] += w * diff;
                s.den[k] += w;
            }
            for j in 1..=NUM_V {
                s.counts[j - 1][ods_code(u, j)] += 1;
            }
        }
        s
    }

    fn add(&mut self, o: &ChunkStats) {
        self.n += o.n;
        self.treated += o.treated;
        for k in 0..4 {
            self.num[k] += o.num[k];
            self.den[k] += o.den[k];
        }
        for j in 0..NUM_V {
            for c in 0..8 {
                self.counts[j][c] += o.counts[j][c];
            }
        }
    }
}

/// Large reference sample reduced to what the study needs: the true effects,
/// the treatment prevalence and the `(A, V_j, Y)` cell counts that define the
/// Poisson sampling probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub n: usize,
    pub seed: u64,
    pub truths: BTreeMap<Estimand, f64>,
    pub prevalence: f64,
    /// `counts[j - 1][4 a + 2 v + y]` for covariate `V_j`.
    pub counts: Vec<[u64; 8]>,
}

impl ReferenceSummary {
    pub fn compute(params: &DgpParams, n: usize, seed: u64, exec: Execution) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("reference size must be positive".into()));
        }
        let parts = map_indexed(exec, chunk_count(n), |c| {
            let mut rng = chunk_rng(seed, c);
            let units: Vec<Unit> = (0..chunk_len(n, c)).map(|_| draw_unit(params, &mut rng)).collect();
            ChunkStats::of(&units)
        });
        let mut total = parts[0].clone();
        for p in &parts[1..] {
            total.add(p);
        }
        let truths = Estimand::ALL
            .iter()
            .enumerate()
            .map(|(k, &est)| (est, total.num[k] / total.den[k]))
            .collect();
        Ok(Self {
            n,
            seed,
            truths,
            prevalence: total.treated as f64 / n as f64,
            counts: total.counts.to_vec(),
        })
    }

    pub fn truth(&self, estimand: Estimand) -> f64 {
        self.truths[&estimand]
    }

    /// Stratum index over `S = (A, V_j, Y)` (ODS) or `(A, V_j)` carrying the
    /// reference shares. Rows are not materialized.
    pub fn strata(&self, v_obs: usize, ods: bool) -> Result<StratumIndex> {
        if !(1..=NUM_V).contains(&v_obs) {
            return Err(Error::InvalidArgument(format!("V_obs must be in 1..=8, got {v_obs}")));
        }
        let cells = &self.counts[v_obs - 1];
        let mut keys = Vec::new();
        let mut counts = Vec::new();
        for a in 0..2u8 {
            for v in 0..2u8 {
                let base = 4 * usize::from(a) + 2 * usize::from(v);
                let key = |y: Option<u8>| {
                    let mut k = vec![OrderedFloat(f64::from(a)), OrderedFloat(f64::from(v))];
                    if let Some(y) = y {
                        k.push(OrderedFloat(f64::from(y)));
                    }
                    k
                };
                if ods {
                    for y in 0..2u8 {
                        keys.push(key(Some(y)));
                        counts.push(cells[base + usize::from(y)] as usize);
                    }
                } else {
                    keys.push(key(None));
                    counts.push((cells[base] + cells[base + 1]) as usize);
                }
            }
        }
        let n = self.n as f64;
        Ok(StratumIndex {
            key_columns: stratum_columns(v_obs, ods),
            shares: counts.iter().map(|&c| c as f64 / n).collect(),
            phase2_counts: vec![0; keys.len()],
            keys,
            labels: Vec::new(),
            counts,
            q: Vec::new(),
        })
    }

    /// Poisson probabilities giving `m / K` expected phase-2 units per
    /// stratum in a phase-1 sample of size `n`.
    pub fn poisson_probabilities(&self, v_obs: usize, ods: bool, m: usize, n: usize) -> Result<QByStratum> {
        reference_probabilities(&self.strata(v_obs, ods)?, m, n)
    }
}

pub fn v_name(j: usize) -> String {
    format!("V{j}")
}

/// Key columns of `S`: `a`, `V_obs` and, under outcome-dependent sampling, `y`.
pub fn stratum_columns(v_obs: usize, ods: bool) -> Vec<String> {
    let mut cols = vec!["a".to_string(), v_name(v_obs)];
    if ods {
        cols.push("y".into());
    }
    cols
}

/// Population truths from a reference sample of the default process.
pub fn true_values(reference_n: usize, seed: u64) -> Result<BTreeMap<Estimand, f64>> {
    Ok(ReferenceSummary::compute(&DgpParams::default(), reference_n, seed, Execution::default())?.truths)
}
