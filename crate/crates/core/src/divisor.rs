//! Squarefree integers whose prime divisors are all 0 or 1 mod l, the
//! spacing and regularity predicates on their prime divisors, Ramanujan's
//! integral `I_r(u)` and the Poisson order-statistics model.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::consts::EULER_MASCHERONI;
use statrs::function::gamma::gamma;

use crate::fl::Modulus;
use crate::primes::sieve;
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Draws per seeded stream in [`poisson_order_stat_sim`].
pub const SIM_CHUNK: u64 = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SquarefreeSample {
    /// `p_1 < … < p_r`.
    pub primes: Vec<u64>,
    pub value: u64,
    pub bound: u64,
}

impl SquarefreeSample {
    pub fn new(mut primes: Vec<u64>, bound: u64, l: Modulus) -> Result<Self> {
        primes.sort_unstable();
        let lu = l.get() as u64;
        if primes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Precondition("primes must be distinct".into()));
        }
        if let Some(&p) = primes.iter().find(|&&p| !crate::primes::is_prime(p) || (p % lu > 1)) {
            return Err(Error::Precondition(format!("{p} is not a prime congruent to 0 or 1 mod {lu}")));
        }
        let value = primes
            .iter()
            .try_fold(1u64, |acc, &p| acc.checked_mul(p))
            .filter(|&v| v <= bound)
            .ok_or_else(|| Error::Precondition(format!("product exceeds {bound}")))?;
        Ok(SquarefreeSample { primes, value, bound })
    }

    pub fn r(&self) -> usize {
        self.primes.len()
    }
}

/// Primes up to `bound` that are 0 or 1 mod l.
fn admissible(bound: u64, l: u64) -> Vec<u64> {
    sieve(bound).into_iter().filter(|&p| p == l || p % l == 1).collect()
}

/// `S_r(N, l)` in increasing order of value.
pub fn enumerate_s_r(n: u64, r: usize, l: Modulus) -> Vec<SquarefreeSample> {
    if r == 0 || n < 3 {
        return Vec::new();
    }
    let lu = l.get() as u64;
    let smallest: Vec<u64> = admissible(200.max(n.min(1 << 20)), lu);
    // The largest prime factor is at most N / (product of the r - 1 smallest).
    let Some(floor) = smallest.iter().take(r - 1).try_fold(1u64, |acc, &p| acc.checked_mul(p)) else {
        return Vec::new();
    };
    if smallest.len() < r - 1 || floor > n {
        return Vec::new();
    }
    let primes = admissible(n / floor, lu);

    fn extend(
        primes: &[u64],
        start: usize,
        prod: u64,
        left: usize,
        n: u64,
        acc: &mut Vec<u64>,
        out: &mut Vec<Vec<u64>>,
    ) {
        if left == 0 {
            out.push(acc.clone());
            return;
        }
        for k in start..primes.len() {
            // Remaining factors are at least primes[k] each.
            match primes[k].checked_pow(left as u32).and_then(|m| prod.checked_mul(m)) {
                Some(m) if m <= n => {}
                _ => break,
            }
            acc.push(primes[k]);
            extend(primes, k + 1, prod * primes[k], left - 1, n, acc, out);
            acc.pop();
        }
    }

    let mut all: Vec<SquarefreeSample> = (0..primes.len())
        .into_par_iter()
        .flat_map_iter(|first| {
            let mut out = Vec::new();
            let p = primes[first];
            if p.checked_pow(r as u32).is_some_and(|m| m <= n) || r == 1 {
                let mut acc = vec![p];
                extend(&primes, first + 1, p, r - 1, n, &mut acc, &mut out);
            }
            out.into_iter().map(move |ps| {
                let value = ps.iter().product();
                SquarefreeSample { primes: ps, value, bound: n }
            })
        })
        .collect();
    all.sort_unstable_by_key(|s| s.value);
    all
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpacingConfig {
    pub d1: f64,
    pub spacing_factor: f64,
}

impl SpacingConfig {
    /// Desk-scale factor used when none is given.
    pub const DEFAULT_FACTOR: f64 = 10.0;

    pub fn new(d1: f64, spacing_factor: f64) -> Result<Self> {
        if !(d1 >= 100.0) || !(spacing_factor >= 1.0) {
            return Err(Error::Precondition("need D_1 >= 100 and spacing factor >= 1".into()));
        }
        Ok(SpacingConfig { d1, spacing_factor })
    }

    /// The factor `l^200`.
    pub fn literal(d1: f64, l: Modulus) -> Result<Self> {
        Self::new(d1, (l.get() as f64).powi(200))
    }
}

/// For all `i < r` with `p_i > D_1`: `factor·D_1 < factor·p_i < p_{i+1}`.
pub fn is_comfortably_spaced(n: &SquarefreeSample, cfg: &SpacingConfig) -> bool {
    n.primes.windows(2).all(|w| {
        let (p, q) = (w[0] as f64, w[1] as f64);
        p <= cfg.d1 || (cfg.spacing_factor * cfg.d1 < cfg.spacing_factor * p && cfg.spacing_factor * p < q)
    })
}

/// Which indices the regularity inequality ranges over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RegularityRange {
    /// `i <= floor(r/3)`.
    LowerThird,
    /// `i <= r`, as in the order-statistics model.
    All,
}

impl RegularityRange {
    pub fn last_index(self, r: usize) -> usize {
        match self {
            RegularityRange::LowerThird => r / 3,
            RegularityRange::All => r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegularityConfig {
    pub c0: f64,
    pub bound: f64,
    pub range: RegularityRange,
}

impl RegularityConfig {
    pub fn new(c0: f64, bound: f64, range: RegularityRange) -> Result<Self> {
        if !(c0 > 1.0) {
            return Err(Error::Precondition("need C_0 > 1".into()));
        }
        if !(bound >= std::f64::consts::E.exp()) {
            return Err(Error::Precondition("need N >= e^e".into()));
        }
        Ok(RegularityConfig { c0, bound, range })
    }
}

/// `C_0^{1/5} max(i, C_0)^{4/5}`.
pub fn regularity_tolerance(i: usize, c0: f64) -> f64 {
    c0.powf(0.2) * (i as f64).max(c0).powf(0.8)
}

/// `|i - r·loglog p_i / loglog N| < C_0^{1/5} max(i, C_0)^{4/5}` over the
/// configured index range.
pub fn is_regular(n: &SquarefreeSample, cfg: &RegularityConfig) -> Result<bool> {
    if let Some(&p) = n.primes.iter().find(|&&p| (p as f64) <= std::f64::consts::E) {
        return Err(Error::Precondition(format!("log log {p} is undefined or negative")));
    }
    let r = n.r();
    let lln = cfg.bound.ln().ln();
    Ok((1..=cfg.range.last_index(r)).all(|i| {
        let x = r as f64 * (n.primes[i - 1] as f64).ln().ln() / lln;
        (i as f64 - x).abs() < regularity_tolerance(i, cfg.c0)
    }))
}

/// One line of the divisor-statistics table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivisorTrendRow {
    pub n: u64,
    pub r: usize,
    pub l: u32,
    pub d1: f64,
    pub factor: f64,
    pub frac_not_spaced: f64,
    pub c0: f64,
    pub frac_not_regular: f64,
    pub samples: usize,
}

pub const DIVISOR_TREND_CSV_HEADER: &str = "N,r,l,D_1,factor,frac_not_spaced,C_0,frac_not_regular";

impl DivisorTrendRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.n, self.r, self.l, self.d1, self.factor, self.frac_not_spaced, self.c0, self.frac_not_regular
        )
    }
}

/// Non-spaced and non-regular fractions of `S_r(N, l)` over the grid
/// `rs × d1s × c0s`.
pub fn divisor_trend_table(
    n: u64,
    l: Modulus,
    rs: &[usize],
    d1s: &[f64],
    factor: f64,
    c0s: &[f64],
    range: RegularityRange,
) -> Result<Vec<DivisorTrendRow>> {
    let mut rows = Vec::new();
    for &r in rs {
        let samples = enumerate_s_r(n, r, l);
        let total = samples.len().max(1) as f64;
        for &d1 in d1s {
            let spacing = SpacingConfig::new(d1, factor)?;
            let not_spaced = samples.par_iter().filter(|s| !is_comfortably_spaced(s, &spacing)).count();
            for &c0 in c0s {
                let reg = RegularityConfig::new(c0, n as f64, range)?;
                let not_regular =
                    samples.par_iter().map(|s| is_regular(s, &reg).map(|ok| !ok as usize)).sum::<Result<usize>>()?;
                rows.push(DivisorTrendRow {
                    n,
                    r,
                    l: l.get(),
                    d1,
                    factor,
                    frac_not_spaced: not_spaced as f64 / total,
                    c0,
                    frac_not_regular: not_regular as f64 / total,
                    samples: samples.len(),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntegralEstimate {
    pub value: f64,
    /// `|T(h/2) - T(h)|` from one step halving.
    pub error: f64,
}

/// `I_r(u)` from `I_r(u) = ∫_r^u (r/t) I_{r-1}(t - 1) dt`, `I_0 = 1`.
///
/// Each level is integrated on the grid `t_j = u - j·h`, so `t - 1` stays on
/// the grid when `1/h` is an integer. Full cells use the trapezoid rule with
/// the Euler–Maclaurin endpoint term, the cell containing the lower limit
/// uses Simpson's rule. The value is the run at `grid_step / 2`.
pub fn ramanujan_i(r: usize, u: f64, grid_step: f64) -> Result<IntegralEstimate> {
    if !(u >= 0.0) {
        return Err(Error::Precondition("u must be nonnegative".into()));
    }
    let m = (1.0 / grid_step).round();
    if !(m >= 2.0) || (m * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition("1/grid_step must be an integer >= 2".into()));
    }
    let coarse = grid_recursion(r, u, m as usize);
    let fine = grid_recursion(r, u, 2 * m as usize);
    Ok(IntegralEstimate { value: fine, error: (fine - coarse).abs() })
}

/// `dg/dt` at `t_j`; the grid runs downward in t.
fn grid_derivative(g: &[f64], j: usize, h: f64) -> f64 {
    let top = g.len() - 1;
    if j == 0 {
        (3.0 * g[0] - 4.0 * g[1] + g[2]) / (2.0 * h)
    } else if j == top {
        (-3.0 * g[top] + 4.0 * g[top - 1] - g[top - 2]) / (2.0 * h)
    } else {
        (g[j - 1] - g[j + 1]) / (2.0 * h)
    }
}

fn grid_recursion(r: usize, u: f64, m: usize) -> f64 {
    if u < r as f64 {
        return 0.0;
    }
    if r == 0 {
        return 1.0;
    }
    let h = 1.0 / m as f64;
    let points = (u / h + 1e-9).floor() as usize + 1;
    let t = |j: usize| u - j as f64 * h;
    // prev[j] = I_{k-1}(t_j).
    let mut prev = vec![1.0; points];
    for k in 1..=r {
        let kf = k as f64;
        // t_top is the last grid point at or above the lower limit k.
        let top = ((u - kf) / h + 1e-9).floor() as usize;
        let g: Vec<f64> = (0..=top).map(|j| kf / t(j) * prev.get(j + m).copied().unwrap_or(0.0)).collect();
        let delta = (t(top) - kf).max(0.0);
        let mid = kf + delta / 2.0;
        let (g_lo, v_mid) = if k == 1 {
            (1.0, 1.0)
        } else {
            // Quadratic through the three grid values of I_{k-1} nearest mid - 1.
            let i0 = top + m;
            let xs = [t(i0), t(i0 - 1), t(i0 - 2)];
            let ys = [prev[i0], prev[i0 - 1], prev[i0 - 2]];
            let x = mid - 1.0;
            let v = (0..3)
                .map(|a| {
                    let w: f64 = (0..3).filter(|&b| b != a).map(|b| (x - xs[b]) / (xs[a] - xs[b])).product();
                    w * ys[a]
                })
                .sum();
            (0.0, v)
        };
        let partial = delta / 6.0 * (g_lo + 4.0 * kf / mid * v_mid + g[top]);
        let mut cur = vec![0.0; points];
        cur[top] = partial;
        let correct = top >= 2;
        let d_top = if correct { grid_derivative(&g, top, h) } else { 0.0 };
        let mut trap = 0.0;
        for j in (0..top).rev() {
            trap += h / 2.0 * (g[j + 1] + g[j]);
            let end = if correct { h * h / 12.0 * (grid_derivative(&g, j, h) - d_top) } else { 0.0 };
            cur[j] = partial + trap - end;
        }
        prev = cur;
    }
    prev[0]
}

/// `e^{-γα} / Γ(1 + α) · (log u)^r` with `α = r / log u`.
pub fn ramanujan_approx(r: usize, u: f64) -> Result<f64> {
    if !(u >= 3.0) {
        return Err(Error::Precondition("need u >= 3".into()));
    }
    if r == 0 {
        return Ok(1.0);
    }
    let lu = u.ln();
    let alpha = r as f64 / lu;
    Ok((-EULER_MASCHERONI * alpha).exp() / gamma(1.0 + alpha) * lu.powi(r as i32))
}

/// `(α + 1)(log u)^r (log log u)^3 / log u`, the shape of the error term.
pub fn ramanujan_error_scale(r: usize, u: f64) -> f64 {
    let lu = u.ln();
    (r as f64 / lu + 1.0) * lu.powi(r as i32) * lu.ln().powi(3) / lu
}

/// Whether sorted points `u_(1) ≤ … ≤ u_(r)` in (0, L) satisfy
/// `|i - r u_(i)/L| < C_0^{1/5} max(i, C_0)^{4/5}` for `i` in the range.
pub fn order_stats_regular(sorted: &[f64], big_l: f64, c0: f64, range: RegularityRange) -> bool {
    let r = sorted.len();
    (1..=range.last_index(r)).all(|i| {
        let x = r as f64 * sorted[i - 1] / big_l;
        (i as f64 - x).abs() < regularity_tolerance(i, c0)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoissonSimReport {
    pub r: usize,
    pub big_l: f64,
    pub trials: u64,
    pub c0s: Vec<f64>,
    pub failures: Vec<u64>,
}

impl PoissonSimReport {
    pub fn rates(&self) -> Vec<f64> {
        self.failures.iter().map(|&f| f as f64 / self.trials as f64).collect()
    }
}

/// Failure frequencies of C_0-regularity for r uniforms on (0, L), one per
/// entry of `c0s`, all evaluated on the same draws. Draw chunks come from
/// independent seeded streams, so the result does not depend on threading.
pub fn poisson_order_stat_sim(
    r: usize,
    big_l: f64,
    trials: u64,
    c0s: &[f64],
    seed: u64,
    range: RegularityRange,
) -> Result<PoissonSimReport> {
    if !(big_l > 2.0) || trials == 0 || r == 0 {
        return Err(Error::Precondition("need L > 2, r >= 1 and trials >= 1".into()));
    }
    let chunks = trials.div_ceil(SIM_CHUNK);
    let per_chunk: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c);
            let n = SIM_CHUNK.min(trials - c * SIM_CHUNK);
            let mut fails = vec![0u64; c0s.len()];
            let mut xs = vec![0.0; r];
            for _ in 0..n {
                for x in xs.iter_mut() {
                    *x = rng.gen::<f64>() * big_l;
                }
                xs.sort_unstable_by(f64::total_cmp);
                for (f, &c0) in fails.iter_mut().zip(c0s) {
                    if !order_stats_regular(&xs, big_l, c0, range) {
                        *f += 1;
                    }
                }
            }
            fails
        })
        .collect();
    let failures = (0..c0s.len()).map(|k| per_chunk.iter().map(|f| f[k]).sum()).collect();
    Ok(PoissonSimReport { r, big_l, trials, c0s: c0s.to_vec(), failures })
}
