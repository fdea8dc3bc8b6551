//! Rank statistics of uniformly random matrices over F_l.
//!
//! Kernel dimension always means the right kernel of an r×s matrix acting on
//! column vectors of length s.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::fl::{FlMatrix, Modulus};
use crate::rng::{seeded_rng, stream_rng};
use crate::{Error, Result};

/// Largest number of completions enumerated by [`QMethod::Exhaustive`].
pub const MAX_EXHAUSTIVE_COMPLETIONS: u64 = 100_000_000;
/// Draws per independent RNG stream in the samplers.
pub const SAMPLE_CHUNK: u64 = 4096;

fn pow_big(l: Modulus, e: u64) -> BigUint {
    BigUint::from(l.get()).pow(e as u32)
}

fn ratio(num: BigUint, den: BigUint) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Number of r×s matrices over F_l of rank ρ.
pub fn rank_count(r: usize, s: usize, l: Modulus, rho: usize) -> BigUint {
    if rho > r.min(s) {
        return BigUint::zero();
    }
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..rho as u64 {
        let li = pow_big(l, i);
        num *= (pow_big(l, r as u64) - &li) * (pow_big(l, s as u64) - &li);
        den *= pow_big(l, rho as u64) - li;
    }
    num / den
}

/// `P(r, s, l, j)`: probability that a uniform r×s matrix has kernel
/// dimension j.
pub fn p_rsj(r: usize, s: usize, l: Modulus, j: usize) -> BigRational {
    if j > s {
        return BigRational::zero();
    }
    ratio(rank_count(r, s, l, s - j), pow_big(l, (r * s) as u64))
}

/// `P(j | n)`: probability that a uniform n×(n+1) matrix has rank n - j.
pub fn p_cond(j: usize, n: usize, l: Modulus) -> Result<BigRational> {
    if j > n {
        return Err(Error::Precondition(format!("P(j | n) needs j <= n, got j = {j}, n = {n}")));
    }
    Ok(ratio(rank_count(n, n + 1, l, n - j), pow_big(l, (n * (n + 1)) as u64)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RankDistribution {
    pub r: usize,
    pub s: usize,
    pub l: u32,
    /// Kernel dimension → exact probability.
    #[serde(skip)]
    pub probs: BTreeMap<usize, BigRational>,
}

impl RankDistribution {
    pub fn new(r: usize, s: usize, l: Modulus) -> Self {
        let lo = s.saturating_sub(r);
        let probs = (lo..=s).map(|j| (j, p_rsj(r, s, l, j))).collect();
        RankDistribution { r, s, l: l.get(), probs }
    }

    pub fn prob(&self, j: usize) -> BigRational {
        self.probs.get(&j).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn total(&self) -> BigRational {
        self.probs.values().fold(BigRational::zero(), |acc, p| acc + p)
    }
}

/// `η_n(l) = ∏_{i=1}^n (1 - l^{-i})`.
pub fn eta(n: u32, l: Modulus) -> f64 {
    let lf = l.get() as f64;
    (1..=n).map(|i| 1.0 - lf.powi(-(i as i32))).product()
}

/// `η_∞(l)`; the factors past i = 200 equal 1 in double precision.
pub fn eta_infinity(l: Modulus) -> f64 {
    eta(200, l)
}

/// `lim_s P(s, s-1, l, j) = η_∞(l) / (l^{j(j+1)} η_j(l) η_{j+1}(l))`.
pub fn limit_rank_defect_prob(l: Modulus, j: u32) -> f64 {
    let lf = l.get() as f64;
    eta_infinity(l) / (lf.powi((j * (j + 1)) as i32) * eta(j, l) * eta(j + 1, l))
}

/// Kernel dimension of one uniform r×s draw.
pub fn sample_rank(r: usize, s: usize, l: Modulus, seed: u64) -> usize {
    let mut rng = seeded_rng(seed);
    s - FlMatrix::random(l, r, s, &mut rng).rank()
}

/// Histogram of kernel dimensions over `draws` uniform r×s matrices. Draws
/// are split into fixed chunks with one RNG stream each, so the result does
/// not depend on the thread count.
pub fn sample_kernel_dims(r: usize, s: usize, l: Modulus, seed: u64, draws: u64) -> BTreeMap<usize, u64> {
    sample_chunks(seed, draws, |rng, n, hist: &mut BTreeMap<usize, u64>| {
        for _ in 0..n {
            *hist.entry(s - FlMatrix::random(l, r, s, rng).rank()).or_insert(0) += 1;
        }
    })
}

fn sample_chunks<F>(seed: u64, draws: u64, body: F) -> BTreeMap<usize, u64>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng, u64, &mut BTreeMap<usize, u64>) + Sync,
{
    let chunks = draws.div_ceil(SAMPLE_CHUNK);
    let parts: Vec<BTreeMap<usize, u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c);
            let n = SAMPLE_CHUNK.min(draws - c * SAMPLE_CHUNK);
            let mut hist = BTreeMap::new();
            body(&mut rng, n, &mut hist);
            hist
        })
        .collect();
    let mut total = BTreeMap::new();
    for h in parts {
        for (k, v) in h {
            *total.entry(k).or_insert(0) += v;
        }
    }
    total
}

/// A k×k block pinned in the top-left corner of an r×s matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PinnedModel {
    pub r: usize,
    pub s: usize,
    pub pinned: FlMatrix,
}

impl PinnedModel {
    pub fn new(r: usize, s: usize, pinned: FlMatrix) -> Result<Self> {
        let k = pinned.rows();
        if pinned.cols() != k || k > r.min(s) {
            return Err(Error::Dimension(format!("pinned block {}×{} in a {r}×{s} matrix", k, pinned.cols())));
        }
        Ok(PinnedModel { r, s, pinned })
    }

    pub fn k(&self) -> usize {
        self.pinned.rows()
    }

    pub fn modulus(&self) -> Modulus {
        self.pinned.modulus()
    }

    fn free_entries(&self) -> u64 {
        (self.r * self.s - self.k() * self.k()) as u64
    }

    /// Fills every non-pinned entry from `fill`, row-major.
    fn complete(&self, mut fill: impl FnMut() -> u8) -> FlMatrix {
        let k = self.k();
        let mut a = FlMatrix::zeros(self.modulus(), self.r, self.s);
        for i in 0..self.r {
            for j in 0..self.s {
                let v = if i < k && j < k { self.pinned.get(i, j) } else { fill() };
                a.set(i, j, v);
            }
        }
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum QMethod {
    /// Every completion of the free entries.
    Exhaustive,
    /// Every completion of the first k columns; the remaining columns are
    /// counted in closed form, since modulo the span of the first k columns
    /// they form a uniform matrix.
    ColumnSplit,
    Sampled {
        draws: u64,
        seed: u64,
    },
}

/// `Q(r, s, l, M, j)`, exact or with a 3σ confidence radius.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QEstimate {
    pub value: f64,
    #[serde(skip)]
    pub exact: Option<BigRational>,
    pub radius: f64,
}

/// Kernel-dimension distribution of a uniform completion of the model.
pub fn q_pinned_distribution(model: &PinnedModel, method: QMethod) -> Result<BTreeMap<usize, QEstimate>> {
    let l = model.modulus();
    let (r, s, k) = (model.r, model.s, model.k());
    let lu = l.get() as u64;
    let exact_from_counts = |counts: BTreeMap<usize, BigRational>| {
        (0..=s)
            .map(|j| {
                let p = counts.get(&j).cloned().unwrap_or_else(BigRational::zero);
                (j, QEstimate { value: p.to_f64().unwrap_or(0.0), exact: Some(p), radius: 0.0 })
            })
            .collect()
    };
    match method {
        QMethod::Exhaustive => {
            let total = lu
                .checked_pow(model.free_entries() as u32)
                .filter(|&t| t <= MAX_EXHAUSTIVE_COMPLETIONS)
                .ok_or_else(|| Error::SizeLimit(format!("l^{} completions", model.free_entries())))?;
            let hist = (0..total)
                .into_par_iter()
                .fold(BTreeMap::new, |mut h: BTreeMap<usize, u64>, mut idx| {
                    let a = model.complete(|| {
                        let d = (idx % lu) as u8;
                        idx /= lu;
                        d
                    });
                    *h.entry(s - a.rank()).or_insert(0) += 1;
                    h
                })
                .reduce(BTreeMap::new, merge_counts);
            let den = BigUint::from(total);
            Ok(exact_from_counts(hist.into_iter().map(|(j, c)| (j, ratio(BigUint::from(c), den.clone()))).collect()))
        }
        QMethod::ColumnSplit => {
            let free = ((r - k) * k) as u32;
            let total = lu
                .checked_pow(free)
                .filter(|&t| t <= MAX_EXHAUSTIVE_COMPLETIONS)
                .ok_or_else(|| Error::SizeLimit(format!("l^{free} column completions")))?;
            // Rank of the first k columns over all completions.
            let by_rank = (0..total)
                .into_par_iter()
                .fold(BTreeMap::new, |mut h: BTreeMap<usize, u64>, mut idx| {
                    let mut c = FlMatrix::zeros(l, r, k);
                    for i in 0..r {
                        for j in 0..k {
                            let v = if i < k {
                                model.pinned.get(i, j)
                            } else {
                                let d = (idx % lu) as u8;
                                idx /= lu;
                                d
                            };
                            c.set(i, j, v);
                        }
                    }
                    *h.entry(c.rank()).or_insert(0) += 1;
                    h
                })
                .reduce(BTreeMap::new, merge_counts);
            let mut counts: BTreeMap<usize, BigRational> = BTreeMap::new();
            let den = BigUint::from(total);
            for (u, c) in by_rank {
                let weight = ratio(BigUint::from(c), den.clone());
                let (rows, cols) = (r - u, s - k);
                for rho in 0..=rows.min(cols) {
                    let p = ratio(rank_count(rows, cols, l, rho), pow_big(l, (rows * cols) as u64));
                    *counts.entry(s - u - rho).or_insert_with(BigRational::zero) += &weight * p;
                }
            }
            Ok(exact_from_counts(counts))
        }
        QMethod::Sampled { draws, seed } => {
            if draws == 0 {
                return Err(Error::Precondition("sampling needs at least one draw".into()));
            }
            let hist = sample_chunks(seed, draws, |rng, n, h| {
                for _ in 0..n {
                    let a = model.complete(|| rng.gen_range(0..lu as u8));
                    *h.entry(s - a.rank()).or_insert(0) += 1;
                }
            });
            let n = draws as f64;
            Ok((0..=s)
                .map(|j| {
                    let p = *hist.get(&j).unwrap_or(&0) as f64 / n;
                    let var = (p * (1.0 - p)).max(1.0 / n) / n;
                    (j, QEstimate { value: p, exact: None, radius: 3.0 * var.sqrt() })
                })
                .collect())
        }
    }
}

fn merge_counts(mut a: BTreeMap<usize, u64>, b: BTreeMap<usize, u64>) -> BTreeMap<usize, u64> {
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

pub fn q_pinned_prob(model: &PinnedModel, j: usize, method: QMethod) -> Result<QEstimate> {
    let mut dist = q_pinned_distribution(model, method)?;
    Ok(dist.remove(&j).unwrap_or(QEstimate { value: 0.0, exact: Some(BigRational::zero()), radius: 0.0 }))
}

/// Largest `|P(r, r-1, l, j) - Q(r, r-1, l, M, j)|` over all pinned k×k
/// blocks M and all j, against the bound `2k · l^{2k - r}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub r: usize,
    pub k: usize,
    pub l: u32,
    pub method: QMethod,
    pub bound: f64,
    pub max_gap: f64,
    /// Confidence radius attached to `max_gap` (0 when exact).
    pub radius: f64,
    /// Index of the worst block, its entries read row-major in base l.
    pub worst_block: u64,
    pub worst_j: usize,
    pub blocks_checked: u64,
}

impl GapReport {
    pub fn within_bound(&self) -> bool {
        self.max_gap <= self.bound + self.radius
    }
}

pub fn rm_gap_check(r: usize, k: usize, l: Modulus, method: QMethod) -> Result<GapReport> {
    if r < 2 * k || r < 1 {
        return Err(Error::Precondition(format!("need r >= 2k and r >= 1, got r = {r}, k = {k}")));
    }
    let s = r - 1;
    let lu = l.get() as u64;
    let blocks = lu.pow((k * k) as u32);
    let bound = 2.0 * k as f64 * (l.get() as f64).powi(2 * k as i32 - r as i32);
    let p: Vec<BigRational> = (0..=s).map(|j| p_rsj(r, s, l, j)).collect();
    let mut report = GapReport {
        r,
        k,
        l: l.get(),
        method,
        bound,
        max_gap: 0.0,
        radius: 0.0,
        worst_block: 0,
        worst_j: 0,
        blocks_checked: blocks,
    };
    for b in 0..blocks {
        let mut idx = b;
        let mut m = FlMatrix::zeros(l, k, k);
        for i in 0..k {
            for j in 0..k {
                m.set(i, j, (idx % lu) as u8);
                idx /= lu;
            }
        }
        let method = match method {
            QMethod::Sampled { draws, seed } => {
                QMethod::Sampled { draws, seed: seed ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) }
            }
            other => other,
        };
        let q = q_pinned_distribution(&PinnedModel::new(r, s, m)?, method)?;
        for (j, pj) in p.iter().enumerate() {
            let est = &q[&j];
            let gap = match &est.exact {
                Some(exact) => (pj - exact).abs().to_f64().unwrap_or(f64::INFINITY),
                None => (pj.to_f64().unwrap_or(0.0) - est.value).abs(),
            };
            if gap > report.max_gap {
                report.max_gap = gap;
                report.radius = est.radius;
                report.worst_block = b;
                report.worst_j = j;
            }
        }
    }
    Ok(report)
}
