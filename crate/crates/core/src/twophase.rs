//! Phase-2 samplers: stratified Poisson (Bernoulli) sampling with known
//! `q(S)` and stratified simple random sampling without replacement.
//!
//! Draws come from ChaCha8 streams keyed by `(seed, scheme[, stratum key])`
//! and positioned by row index, so the sample does not depend on iteration
//! order or thread count.

use std::collections::BTreeMap;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{StratumIndex, StratumKey};
use crate::error::{Error, Result};

const POISSON_STREAM: u64 = 0x5051_4f49_5353_4f4e;
const SRSWOR_STREAM: u64 = 0x5352_5357_4f52_0000;

pub type QByStratum = BTreeMap<StratumKey, f64>;
pub type MByStratum = BTreeMap<StratumKey, usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Poisson,
    Srswor,
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(SchemeKind::Poisson),
            "srswor" => Ok(SchemeKind::Srswor),
            other => Err(Error::InvalidArgument(format!("unknown sampling scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeKind::Poisson => "poisson",
            SchemeKind::Srswor => "srswor",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingScheme {
    Poisson { q_by_stratum: QByStratum, seed: u64 },
    Srswor { m_by_stratum: MByStratum, seed: u64 },
}

impl SamplingScheme {
    pub fn kind(&self) -> SchemeKind {
        match self {
            SamplingScheme::Poisson { .. } => SchemeKind::Poisson,
            SamplingScheme::Srswor { .. } => SchemeKind::Srswor,
        }
    }

    pub fn draw(&self, strata: &StratumIndex) -> Result<(Vec<bool>, Vec<f64>)> {
        match self {
            SamplingScheme::Poisson { q_by_stratum, seed } => {
                poisson_sample(strata, q_by_stratum, *seed)
            }
            SamplingScheme::Srswor { m_by_stratum, seed } => {
                srswor_sample(strata, m_by_stratum, *seed)
            }
        }
    }
}

/// Uniform on [0, 1) from the top 53 bits.
#[inline]
fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic 64-bit digest of a stratum key.
fn key_digest(key: &StratumKey) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in key {
        let mut z = h ^ v.0.to_bits();
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

fn per_stratum<T: Copy>(strata: &StratumIndex, map: &BTreeMap<StratumKey, T>, what: &str) -> Result<Vec<T>> {
    strata
        .keys
        .iter()
        .map(|k| {
            map.get(k).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("no {what} for stratum {}", format_key(k)))
            })
        })
        .collect()
}

pub fn format_key(key: &StratumKey) -> String {
    let parts: Vec<String> = key.iter().map(|v| v.0.to_string()).collect();
    format!("({})", parts.join(", "))
}

/// Independent Bernoulli(q_k) inclusion for each row.
pub fn poisson_sample(
    strata: &StratumIndex,
    q_by_stratum: &QByStratum,
    seed: u64,
) -> Result<(Vec<bool>, Vec<f64>)> {
    let qk = per_stratum(strata, q_by_stratum, "sampling probability")?;
    if let Some(q) = qk.iter().find(|&&q| !(q > 0.0 && q <= 1.0)) {
        return Err(Error::InvalidArgument(format!("sampling probability {q} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POISSON_STREAM);
    // Word position 2 i holds the draw of row i.
    let q: Vec<f64> = strata.labels.iter().map(|&l| qk[l]).collect();
    let delta = q.iter().map(|&qi| unit(rng.next_u64()) < qi).collect();
    Ok((delta, q))
}

/// Exactly `m_k` rows per stratum, uniformly without replacement; `q = m_k / n_k`.
pub fn srswor_sample(
    strata: &StratumIndex,
    m_by_stratum: &MByStratum,
    seed: u64,
) -> Result<(Vec<bool>, Vec<f64>)> {
    let mk = per_stratum(strata, m_by_stratum, "phase-2 size")?;
    let members = strata.members();
    let n = strata.labels.len();
    let mut delta = vec![false; n];
    let mut q = vec![0.0; n];
    for (l, rows) in members.iter().enumerate() {
        let (m, nk) = (mk[l], rows.len());
        if m > nk {
            return Err(Error::InvalidArgument(format!(
                "stratum {} asks for {m} rows but has {nk}",
                format_key(&strata.keys[l])
            )));
        }
        if m == 0 {
            return Err(Error::InvalidArgument(format!(
                "stratum {} would get q = 0",
                format_key(&strata.keys[l])
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SRSWOR_STREAM ^ key_digest(&strata.keys[l]));
        for i in rand::seq::index::sample(&mut rng, nk, m) {
            delta[rows[i]] = true;
        }
        let qk = m as f64 / nk as f64;
        for &r in rows {
            q[r] = qk;
        }
    }
    Ok((delta, q))
}

/// `q_k = min(1, (m / K) / (n p_k))` with `p_k` taken from a reference index.
pub fn reference_probabilities(reference: &StratumIndex, m: usize, n: usize) -> Result<QByStratum> {
    let k = reference.k();
    if k == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty reference or phase-1 size".into()));
    }
    let mut out = QByStratum::new();
    for (l, key) in reference.keys.iter().enumerate() {
        let p = reference.shares[l];
        if !(p > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reference stratum {} is empty",
                format_key(key)
            )));
        }
        let raw = (m as f64 / k as f64) / (n as f64 * p);
        if raw > 1.0 {
            log::warn!(
                "sampling probability for stratum {} capped at 1 (uncapped {raw:.4})",
                format_key(key)
            );
        }
        out.insert(key.clone(), raw.min(1.0));
    }
    Ok(out)
}

/// Equal allocation of `m_total` over the strata of `strata`: `floor(m / K)`
/// each, the remainder one by one in key order, each capped at `n_k`.
pub fn equal_allocation(strata: &StratumIndex, m_total: usize) -> MByStratum {
    let k = strata.k();
    let base = m_total / k.max(1);
    let rem = m_total - base * k;
    strata
        .keys
        .iter()
        .enumerate()
        .map(|(l, key)| {
            let want = base + usize::from(l < rem);
            (key.clone(), want.min(strata.counts[l]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ordered_float::OrderedFloat;

    fn index(labels: &[f64]) -> StratumIndex {
        let keys: Vec<StratumKey> = labels.iter().map(|&v| vec![OrderedFloat(v)]).collect();
        StratumIndex::from_keys(vec!["s".into()], &keys)
    }

    fn key(v: f64) -> StratumKey {
        vec![OrderedFloat(v)]
    }

    #[test]
    fn poisson_all_in() {
        let idx = index(&[0.0, 1.0, 0.0, 1.0]);
        let q: QByStratum = [(key(0.0), 1.0), (key(1.0), 1.0)].into();
        let (d, qq) = poisson_sample(&idx, &q, 1).unwrap();
        assert!(d.iter().all(|&x| x));
        assert_eq!(qq, vec![1.0; 4]);
    }

    #[test]
    fn poisson_fraction_and_determinism() {
        let n = 1_000_000;
        let idx = index(&vec![0.0; n]);
        let q: QByStratum = [(key(0.0), 0.5)].into();
        let (d, _) = poisson_sample(&idx, &q, 42).unwrap();
        let frac = d.iter().filter(|&&x| x).count() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.002, "{frac}");
        assert_eq!(d, poisson_sample(&idx, &q, 42).unwrap().0);
        assert_ne!(d, poisson_sample(&idx, &q, 43).unwrap().0);
    }

    #[test]
    fn missing_probability_is_an_error() {
        let idx = index(&[0.0, 1.0]);
        let q: QByStratum = [(key(0.0), 0.5)].into();
        assert!(poisson_sample(&idx, &q, 0).is_err());
    }

    #[test]
    fn poisson_horvitz_thompson_unbiased() {
        let labels: Vec<f64> = (0..60).map(|i| (i % 3) as f64).collect();
        let idx = index(&labels);
        let q: QByStratum = [(key(0.0), 0.2), (key(1.0), 0.5), (key(2.0), 0.9)].into();
        let f = |s: f64| 1.0 + 2.0 * s * s;
        let target: f64 = labels.iter().map(|&s| f(s)).sum();
        let reps = 10_000;
        let totals: Vec<f64> = (0..reps)
            .map(|r| {
                let (d, qq) = poisson_sample(&idx, &q, r).unwrap();
                (0..labels.len())
                    .filter(|&i| d[i])
                    .map(|i| f(labels[i]) / qq[i])
                    .sum()
            })
            .collect();
        let mean = totals.iter().sum::<f64>() / reps as f64;
        let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((mean - target).abs() < 3.0 * (var / reps as f64).sqrt(), "{mean} vs {target}");
    }

    #[test]
    fn srswor_exact_counts() {
        let idx = index(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let m: MByStratum = [(key(0.0), 2), (key(1.0), 2)].into();
        let (d, q) = srswor_sample(&idx, &m, 5).unwrap();
        assert_eq!(d[..4].iter().filter(|&&x| x).count(), 2);
        assert!(d[4] && d[5]);
        assert_eq!(q, vec![0.5, 0.5, 0.5, 0.5, 1.0, 1.0]);
        assert_eq!(d, srswor_sample(&idx, &m, 5).unwrap().0);

        let too_many: MByStratum = [(key(0.0), 5), (key(1.0), 2)].into();
        assert!(srswor_sample(&idx, &too_many, 5).is_err());
    }

    #[test]
    fn srswor_inclusion_frequencies() {
        let labels = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let idx = index(&labels);
        let m: MByStratum = [(key(0.0), 2), (key(1.0), 1)].into();
        let reps = 10_000u64;
        let mut hits = vec![0u32; labels.len()];
        for s in 0..reps {
            let (d, _) = srswor_sample(&idx, &m, s).unwrap();
            for (h, x) in hits.iter_mut().zip(d) {
                *h += u32::from(x);
            }
        }
        for (i, &h) in hits.iter().enumerate() {
            let p = if labels[i] == 0.0 { 0.4 } else { 1.0 / 3.0 };
            let sd = (p * (1.0 - p) / reps as f64).sqrt();
            let freq = f64::from(h) / reps as f64;
            assert!((freq - p).abs() < 3.0 * sd, "row {i}: {freq} vs {p}");
        }
    }

    #[test]
    fn srswor_draws_do_not_depend_on_other_strata() {
        // Adding a stratum must not change the draws within existing ones.
        let a = index(&[0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let b = index(&[0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 1.0]);
        let m: MByStratum = [(key(0.0), 2), (key(1.0), 1), (key(2.0), 1)].into();
        let (da, _) = srswor_sample(&a, &m, 7).unwrap();
        let (db, _) = srswor_sample(&b, &m, 7).unwrap();
        assert_eq!(da[..], db[..7]);
    }

    #[test]
    fn reference_probability_examples() {
        let idx = index(&[0.0, 1.0, 2.0, 3.0]);
        let q = reference_probabilities(&idx, 100, 1000).unwrap();
        assert!(q.values().all(|&v| (v - 0.1).abs() < 1e-15));

        let mut labels = vec![0.0; 4];
        labels.extend([1.0; 3]);
        labels.extend([2.0; 2]);
        labels.push(3.0);
        let idx = index(&labels);
        let q: Vec<f64> = reference_probabilities(&idx, 100, 1000).unwrap().into_values().collect();
        let want = [0.0625, 25.0 / 300.0, 0.125, 0.25];
        for (a, b) in q.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{q:?}");
        }

        let q = reference_probabilities(&idx, 100, 200).unwrap();
        assert_eq!(q[&key(3.0)], 1.0);
    }

    #[test]
    fn equal_allocation_remainder_in_key_order() {
        let idx = index(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let m = equal_allocation(&idx, 5);
        assert_eq!(m.values().copied().collect::<Vec<_>>(), vec![2, 2, 1]);
        let m = equal_allocation(&idx, 8);
        assert_eq!(m.values().copied().collect::<Vec<_>>(), vec![3, 3, 1]);
    }
}
