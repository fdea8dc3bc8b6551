//! Finite modules over R = Z_l[ζ_l], written `A = ⊕ R/π^{λ_j}` with
//! `π = 1 - ζ_l`.
//!
//! Elements of `R/π^m` are polynomials in `x = ζ_l` of degree `< l - 1`
//! with coefficients mod `l^c`, `c = ceil(m/(l-1)) + 1`; since
//! `l = π^{l-1}·unit` that modulus sits strictly below `π^m`. Every element
//! has a unique π-adic digit expansion `Σ d_i π^i` with `d_i ∈ [0, l)`, which
//! is the canonical form used for equality, indexing and enumeration.
//!
//! `rk_{π^k} A` is read as `dim π^{k-1}(A[π^k])`. The other bracketing,
//! `(π^{k-1}A)[π^k]`, is not monotone in `k` and does not determine `A`.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;
use serde::Serialize;

use crate::fl::{FlMatrix, FlScalar, Modulus};
use crate::matrix_model::{eta, eta_infinity, p_cond};
use crate::{Error, Result};

/// Largest module enumerated exhaustively.
pub const MAX_ENUMERATED_ORDER: u64 = 100_000;
/// Largest number of homomorphisms scanned by [`brute_force_aut_count`].
pub const MAX_ENUMERATED_MAPS: u64 = 1 << 31;
pub const DEFAULT_TAIL_CUT: u32 = 64;

/// Non-increasing positive parts; the empty partition is the zero module.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Partition {
    parts: Vec<u32>,
}

impl Partition {
    pub fn new(parts: Vec<u32>) -> Result<Self> {
        if parts.iter().any(|&p| p == 0) {
            return Err(Error::Precondition("partition parts must be positive".into()));
        }
        if parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Precondition("partition parts must be non-increasing".into()));
        }
        Ok(Partition { parts })
    }

    pub fn from_unsorted(mut parts: Vec<u32>) -> Result<Self> {
        parts.sort_unstable_by(|a, b| b.cmp(a));
        Self::new(parts)
    }

    pub fn empty() -> Self {
        Partition { parts: Vec::new() }
    }

    pub fn parts(&self) -> &[u32] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn size(&self) -> u32 {
        self.parts.iter().sum()
    }

    pub fn largest(&self) -> u32 {
        self.parts.first().copied().unwrap_or(0)
    }

    /// `(rk_{π} A, rk_{π²} A, …)` up to the largest part.
    pub fn rank_sequence(&self) -> Vec<usize> {
        (1..=self.largest()).map(|k| rank_k(self, k)).collect()
    }

    /// Inverse of [`Partition::rank_sequence`].
    pub fn from_rank_sequence(ranks: &[usize]) -> Result<Self> {
        if ranks.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Precondition("rank sequence must be non-increasing".into()));
        }
        let mut parts = Vec::new();
        for (k, &r) in ranks.iter().enumerate() {
            let next = ranks.get(k + 1).copied().unwrap_or(0);
            parts.extend(std::iter::repeat(k as u32 + 1).take(r - next));
        }
        Self::from_unsorted(parts)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.parts.iter().map(u32::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Partitions with at most `max_size` total and parts `<= max_part`,
/// ordered by size, then reverse-lexicographically.
pub fn partitions_bounded(max_size: u32, max_part: u32) -> Vec<Partition> {
    fn go(remaining: u32, max_part: u32, stack: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if remaining == 0 {
            out.push(stack.clone());
            return;
        }
        for p in (1..=max_part.min(remaining)).rev() {
            stack.push(p);
            go(remaining - p, p, stack, out);
            stack.pop();
        }
    }
    let mut out = Vec::new();
    for n in 0..=max_size {
        let mut level = Vec::new();
        go(n, max_part, &mut Vec::new(), &mut level);
        out.extend(level.into_iter().map(|parts| Partition { parts }));
    }
    out
}

/// `dim π^{k-1}(A[π^k]) = #{j : λ_j >= k}`.
pub fn rank_k(lambda: &Partition, k: u32) -> usize {
    assert!(k >= 1, "rank_k needs k >= 1");
    lambda.parts.iter().filter(|&&p| p >= k).count()
}

/// `|A| = l^{Σλ_j}`.
pub fn module_order(lambda: &Partition, l: Modulus) -> Result<u64> {
    (l.get() as u64).checked_pow(lambda.size()).ok_or_else(|| Error::Overflow(format!("|A| for {lambda} at l = {l}")))
}

/// Closed-form `|Aut_R(A)|` for a module over a DVR with residue field F_l.
pub fn aut_count(lambda: &Partition, l: Modulus) -> BigUint {
    // Parts in increasing order e_1 <= … <= e_n; d_k / c_k are the last /
    // first positions holding the value e_k (1-based).
    let e: Vec<u32> = lambda.parts.iter().rev().copied().collect();
    let n = e.len() as u32;
    let q = BigUint::from(l.get());
    let d: Vec<u32> = e.iter().map(|&v| e.iter().rposition(|&w| w == v).unwrap() as u32 + 1).collect();
    let c: Vec<u32> = e.iter().map(|&v| e.iter().position(|&w| w == v).unwrap() as u32 + 1).collect();
    let mut total = BigUint::one();
    for k in 0..e.len() {
        total *= q.pow(d[k]) - q.pow(k as u32);
    }
    for j in 0..e.len() {
        total *= q.pow(e[j] * (n - d[j]));
        total *= q.pow((e[j] - 1) * (n - c[j] + 1));
    }
    total
}

/// Counts automorphisms by scanning every homomorphism `A → A`.
///
/// A homomorphism is a choice of image `y_j ∈ A[π^{λ_j}]` for each standard
/// generator; it is bijective iff it is injective on the socle `A[π]`, i.e.
/// iff the socle images `π^{λ_j - 1} y_j` are F_l-independent.
pub fn brute_force_aut_count(lambda: &Partition, l: Modulus) -> Result<u64> {
    let order = module_order(lambda, l)?;
    if order > MAX_ENUMERATED_ORDER {
        return Err(Error::SizeLimit(format!("|A| = {order} exceeds {MAX_ENUMERATED_ORDER}")));
    }
    let parts = lambda.parts();
    let s = parts.len();
    if s == 0 {
        return Ok(1);
    }
    let lu = l.get() as u64;
    // Candidate images of generator j: for each coordinate i, min(λ_i, λ_j)
    // free digits, the lowest of which feeds the socle when λ_i >= λ_j.
    let widths: Vec<Vec<u32>> = (0..s).map(|j| (0..s).map(|i| parts[i].min(parts[j])).collect()).collect();
    let per_gen: Vec<u64> = widths.iter().map(|w| lu.pow(w.iter().sum())).collect();
    let total = per_gen
        .iter()
        .try_fold(1u64, |acc, &c| acc.checked_mul(c))
        .filter(|&t| t <= MAX_ENUMERATED_MAPS)
        .ok_or_else(|| Error::SizeLimit(format!("too many homomorphisms for {lambda}")))?;
    let count = (0..total)
        .into_par_iter()
        .filter(|&idx| {
            let mut idx = idx;
            let mut socle = FlMatrix::zeros(l, s, s);
            for j in 0..s {
                let mut image = idx % per_gen[j];
                idx /= per_gen[j];
                for i in 0..s {
                    let low = (image % lu) as u8;
                    image /= lu.pow(widths[j][i]);
                    if parts[i] >= parts[j] {
                        socle.set(i, j, low);
                    }
                }
            }
            socle.rank() == s
        })
        .count();
    Ok(count as u64)
}

/// An element of `R/π^m`.
#[derive(Clone, Debug)]
pub struct TruncatedCyclotomic {
    coeffs: Vec<u64>,
    level: u32,
    precision: u32,
    l: Modulus,
}

impl TruncatedCyclotomic {
    fn precision_for(level: u32, l: Modulus) -> u32 {
        level.div_ceil(l.get() - 1) + 1
    }

    fn big_modulus(&self) -> u64 {
        (self.l.get() as u64).pow(self.precision)
    }

    /// From x-basis coefficients (degree `< l - 1`).
    pub fn new(coeffs: &[i64], level: u32, l: Modulus) -> Result<Self> {
        let n = l.get() as usize - 1;
        if coeffs.len() > n {
            return Err(Error::Dimension(format!("{} coefficients, at most {n} allowed", coeffs.len())));
        }
        let precision = Self::precision_for(level, l);
        let big = (l.get() as u64)
            .checked_pow(precision)
            .filter(|&b| b < 1 << 62)
            .ok_or_else(|| Error::Overflow(format!("R/π^{level} at l = {l}")))?;
        let mut c = vec![0u64; n];
        for (slot, &v) in c.iter_mut().zip(coeffs) {
            *slot = v.rem_euclid(big as i64) as u64;
        }
        Ok(TruncatedCyclotomic { coeffs: c, level, precision, l })
    }

    pub fn zero(level: u32, l: Modulus) -> Self {
        Self::new(&[], level, l).expect("level within range")
    }

    pub fn one(level: u32, l: Modulus) -> Self {
        Self::new(&[1], level, l).expect("level within range")
    }

    /// `π = 1 - x`.
    pub fn pi(level: u32, l: Modulus) -> Self {
        Self::new(&[1, -1], level, l).expect("level within range")
    }

    /// `Σ d_i π^i`; digits past the level are ignored.
    pub fn from_digits(digits: &[u8], level: u32, l: Modulus) -> Self {
        let pi = Self::pi(level, l);
        let mut acc = Self::zero(level, l);
        for &d in digits.iter().take(level as usize).rev() {
            acc = acc.mul(&pi);
            acc.coeffs[0] = (acc.coeffs[0] + d as u64) % acc.big_modulus();
        }
        acc
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn modulus(&self) -> Modulus {
        self.l
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    /// The first `level` π-adic digits.
    pub fn digits(&self) -> Vec<u8> {
        let lu = self.l.get() as u64;
        let big = self.big_modulus();
        let n = self.coeffs.len();
        let mut e = self.coeffs.clone();
        let mut out = Vec::with_capacity(self.level as usize);
        for _ in 0..self.level {
            let sum = e.iter().fold(0u64, |a, &b| (a + b) % big);
            let d = sum % lu;
            out.push(d as u8);
            e[0] = (e[0] + big - d) % big;
            let u = ((sum + big - d) % big) / lu;
            // e = (x - 1)·Q + l·u and l = (1 - x)·Ψ, so e/π = -Q + u·Ψ with
            // Ψ = Σ_i (l - 1 - i) x^i.
            let mut q = vec![0u64; n];
            for i in (1..n).rev() {
                let above = if i + 1 < n { q[i] } else { 0 };
                q[i - 1] = (e[i] + above) % big;
            }
            for i in 0..n {
                let psi = (lu - 1 - i as u64) % big;
                e[i] = (big - q[i] + mulmod(u, psi, big)) % big;
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.digits().iter().all(|&d| d == 0)
    }

    /// π-adic valuation, `level` for zero.
    pub fn valuation(&self) -> u32 {
        self.digits().iter().position(|&d| d != 0).map_or(self.level, |v| v as u32)
    }

    /// Canonical representative at another level.
    pub fn at_level(&self, level: u32) -> Self {
        Self::from_digits(&self.digits(), level, self.l)
    }

    fn check_compatible(&self, rhs: &Self) {
        assert!(self.l == rhs.l && self.level == rhs.level, "mixing R/π^m of different shapes");
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.check_compatible(rhs);
        let big = self.big_modulus();
        let coeffs = self.coeffs.iter().zip(&rhs.coeffs).map(|(&a, &b)| (a + b) % big).collect();
        TruncatedCyclotomic { coeffs, ..self.clone() }
    }

    pub fn neg(&self) -> Self {
        let big = self.big_modulus();
        let coeffs = self.coeffs.iter().map(|&a| (big - a) % big).collect();
        TruncatedCyclotomic { coeffs, ..self.clone() }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.add(&rhs.neg())
    }

    pub fn scale(&self, c: i64) -> Self {
        let big = self.big_modulus();
        let c = c.rem_euclid(big as i64) as u64;
        let coeffs = self.coeffs.iter().map(|&a| mulmod(a, c, big)).collect();
        TruncatedCyclotomic { coeffs, ..self.clone() }
    }

    /// Product mod `x^l - 1`, then `x^{l-1} = -(1 + … + x^{l-2})`.
    pub fn mul(&self, rhs: &Self) -> Self {
        self.check_compatible(rhs);
        let big = self.big_modulus();
        let lu = self.l.get() as usize;
        let n = lu - 1;
        let mut prod = vec![0u64; lu];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0 {
                continue;
            }
            for (j, &b) in rhs.coeffs.iter().enumerate() {
                let slot = &mut prod[(i + j) % lu];
                *slot = (*slot + mulmod(a, b, big)) % big;
            }
        }
        let top = prod[n];
        let coeffs = prod[..n].iter().map(|&c| (c + big - top) % big).collect();
        TruncatedCyclotomic { coeffs, ..self.clone() }
    }

    pub fn mul_pi_pow(&self, k: u32) -> Self {
        let pi = Self::pi(self.level, self.l);
        (0..k).fold(self.clone(), |acc, _| acc.mul(&pi))
    }
}

fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

impl PartialEq for TruncatedCyclotomic {
    fn eq(&self, other: &Self) -> bool {
        self.l == other.l && self.level == other.level && self.digits() == other.digits()
    }
}

impl Eq for TruncatedCyclotomic {}

/// An element of `A = ⊕ R/π^{λ_j}`, coordinate `j` at level `λ_j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleElement {
    partition: Partition,
    coords: Vec<TruncatedCyclotomic>,
}

/// An element of `A^∨ = Hom_R(A, K/R)`, written in the coordinates of the
/// self-duality `ψ(a) = Σ_j ψ_j a_j π^{-λ_j}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualElement(pub ModuleElement);

impl ModuleElement {
    pub fn new(partition: &Partition, coords: Vec<TruncatedCyclotomic>) -> Result<Self> {
        if coords.len() != partition.len() {
            return Err(Error::Dimension(format!("{} coordinates for {partition}", coords.len())));
        }
        let coords = coords.iter().zip(partition.parts()).map(|(c, &p)| c.at_level(p)).collect();
        Ok(ModuleElement { partition: partition.clone(), coords })
    }

    pub fn zero(partition: &Partition, l: Modulus) -> Self {
        let coords = partition.parts().iter().map(|&p| TruncatedCyclotomic::zero(p, l)).collect();
        ModuleElement { partition: partition.clone(), coords }
    }

    /// The `j`-th standard generator.
    pub fn generator(partition: &Partition, j: usize, l: Modulus) -> Self {
        let mut e = Self::zero(partition, l);
        e.coords[j] = TruncatedCyclotomic::one(partition.parts()[j], l);
        e
    }

    /// Element whose π-adic digits, coordinate by coordinate and low digit
    /// first, are the base-l digits of `index`.
    pub fn from_index(partition: &Partition, mut index: u64, l: Modulus) -> Self {
        let lu = l.get() as u64;
        let coords = partition
            .parts()
            .iter()
            .map(|&p| {
                let digits: Vec<u8> = (0..p)
                    .map(|_| {
                        let d = (index % lu) as u8;
                        index /= lu;
                        d
                    })
                    .collect();
                TruncatedCyclotomic::from_digits(&digits, p, l)
            })
            .collect();
        ModuleElement { partition: partition.clone(), coords }
    }

    pub fn index(&self) -> u64 {
        let lu = self.modulus().get() as u64;
        let mut idx = 0u64;
        let mut place = 1u64;
        for c in &self.coords {
            for d in c.digits() {
                idx += d as u64 * place;
                place *= lu;
            }
        }
        idx
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn coords(&self) -> &[TruncatedCyclotomic] {
        &self.coords
    }

    fn modulus(&self) -> Modulus {
        self.coords.first().map_or(Modulus::of(3), |c| c.modulus())
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(TruncatedCyclotomic::is_zero)
    }

    pub fn add(&self, rhs: &Self) -> Self {
        let coords = self.coords.iter().zip(&rhs.coords).map(|(a, b)| a.add(b)).collect();
        ModuleElement { partition: self.partition.clone(), coords }
    }

    pub fn scale(&self, c: i64) -> Self {
        let coords = self.coords.iter().map(|a| a.scale(c)).collect();
        ModuleElement { partition: self.partition.clone(), coords }
    }

    pub fn mul_pi_pow(&self, k: u32) -> Self {
        let coords = self.coords.iter().map(|a| a.mul_pi_pow(k)).collect();
        ModuleElement { partition: self.partition.clone(), coords }
    }

    /// Whether `self ∈ π^{k-1}(A[π^k])`, decided by computing `π·self` and
    /// the π-divisibility of each coordinate.
    pub fn in_layer(&self, k: u32) -> bool {
        assert!(k >= 1);
        self.mul_pi_pow(1).is_zero() && self.coords.iter().all(|c| c.valuation() >= (k - 1).min(c.level()))
    }
}

impl DualElement {
    pub fn from_index(partition: &Partition, index: u64, l: Modulus) -> Self {
        DualElement(ModuleElement::from_index(partition, index, l))
    }

    pub fn generator(partition: &Partition, j: usize, l: Modulus) -> Self {
        DualElement(ModuleElement::generator(partition, j, l))
    }

    pub fn index(&self) -> u64 {
        self.0.index()
    }

    pub fn mul_pi_pow(&self, k: u32) -> Self {
        DualElement(self.0.mul_pi_pow(k))
    }

    pub fn in_layer(&self, k: u32) -> bool {
        self.0.in_layer(k)
    }

    /// `ψ(a)` as the digits of `π^Λ ψ(a) ∈ R/π^Λ`, `Λ = max λ_j`.
    pub fn evaluate(&self, a: &ModuleElement) -> Vec<u8> {
        let lambda = &a.partition;
        let top = lambda.largest();
        let Some(l) = a.coords.first().map(|c| c.modulus()) else {
            return Vec::new();
        };
        let mut acc = TruncatedCyclotomic::zero(top, l);
        for ((psi, x), &p) in self.0.coords.iter().zip(&a.coords).zip(lambda.parts()) {
            let term = psi.at_level(top).mul(&x.at_level(top)).mul_pi_pow(top - p);
            acc = acc.add(&term);
        }
        acc.digits()
    }

    /// Every `ψ` with `π^{k-1} ψ = self`.
    pub fn lifts(&self, k: u32) -> Vec<DualElement> {
        let partition = &self.0.partition;
        let Some(l) = self.0.coords.first().map(|c| c.modulus()) else {
            return vec![self.clone()];
        };
        let lu = l.get() as u64;
        let shift = k - 1;
        let free: Vec<u32> = partition.parts().iter().map(|&p| p.min(shift)).collect();
        let count = lu.pow(free.iter().sum());
        (0..count)
            .map(|mut idx| {
                let coords = self
                    .0
                    .coords
                    .iter()
                    .zip(partition.parts())
                    .zip(&free)
                    .map(|((c, &p), &f)| {
                        let chi = c.digits();
                        let mut digits: Vec<u8> = chi.iter().skip(shift as usize).copied().collect();
                        digits.extend((0..f).map(|_| {
                            let d = (idx % lu) as u8;
                            idx /= lu;
                            d
                        }));
                        TruncatedCyclotomic::from_digits(&digits, p, l)
                    })
                    .collect();
                DualElement(ModuleElement { partition: partition.clone(), coords })
            })
            .collect()
    }
}

/// `Art_k(A)(a, χ) = ψ(a)` for any lift `π^{k-1}ψ = χ`, read in F_l through
/// `d ↦ d/π`.
pub fn artin_pairing(lambda: &Partition, k: u32, a: &ModuleElement, chi: &DualElement) -> Result<FlScalar> {
    if k == 0 {
        return Err(Error::Precondition("Art_k needs k >= 1".into()));
    }
    if a.partition() != lambda || chi.0.partition() != lambda {
        return Err(Error::Dimension("element of a different module".into()));
    }
    if !a.in_layer(k) {
        return Err(Error::Precondition(format!("a is not in π^{}(A[π^{k}])", k - 1)));
    }
    if !chi.in_layer(k) {
        return Err(Error::Precondition(format!("χ is not in π^{}(A^∨[π^{k}])", k - 1)));
    }
    let l = a.coords.first().map_or(Modulus::of(3), |c| c.modulus());
    let psi = chi.lifts(k).swap_remove(0);
    pairing_value(&psi, a, l)
}

/// `ψ(a)` for `ψ(a) ∈ (1/π)R/R`, as an element of F_l.
pub fn pairing_value(psi: &DualElement, a: &ModuleElement, l: Modulus) -> Result<FlScalar> {
    let digits = psi.evaluate(a);
    let Some((&last, lower)) = digits.split_last() else {
        return Ok(FlScalar::zero(l));
    };
    if lower.iter().any(|&d| d != 0) {
        return Err(Error::Precondition("ψ(a) is not killed by π".into()));
    }
    Ok(FlScalar::new(last as i64, l))
}

/// Exhaustively computed kernels of `Art_k` next to the subspaces
/// `π^k A[π^{k+1}]` and `π^k A^∨[π^{k+1}]`; all sets are sorted element
/// indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PairingKernels {
    pub layer: Vec<u64>,
    pub dual_layer: Vec<u64>,
    pub left_kernel: Vec<u64>,
    pub right_kernel: Vec<u64>,
    pub predicted_left: Vec<u64>,
    pub predicted_right: Vec<u64>,
}

impl PairingKernels {
    pub fn left_matches(&self) -> bool {
        self.left_kernel == self.predicted_left
    }

    pub fn right_matches(&self) -> bool {
        self.right_kernel == self.predicted_right
    }

    /// Both kernels equal their predictions and the induced pairing on the
    /// quotients is perfect (equal sizes on both sides).
    pub fn matches(&self) -> bool {
        self.left_matches()
            && self.right_matches()
            && self.layer.len() * self.right_kernel.len() == self.dual_layer.len() * self.left_kernel.len()
    }
}

pub fn pairing_kernels(lambda: &Partition, k: u32, l: Modulus) -> Result<PairingKernels> {
    if k == 0 {
        return Err(Error::Precondition("Art_k needs k >= 1".into()));
    }
    let order = module_order(lambda, l)?;
    if order > MAX_ENUMERATED_ORDER {
        return Err(Error::SizeLimit(format!("|A| = {order} exceeds {MAX_ENUMERATED_ORDER}")));
    }
    let elements: Vec<ModuleElement> =
        (0..order).into_par_iter().map(|i| ModuleElement::from_index(lambda, i, l)).collect();
    let select = |k: u32| -> Vec<u64> { elements.iter().filter(|e| e.in_layer(k)).map(|e| e.index()).collect() };
    let layer = select(k);
    let predicted = select(k + 1);
    let layer_elems: Vec<&ModuleElement> = layer.iter().map(|&i| &elements[i as usize]).collect();
    let lifts: Vec<DualElement> =
        layer.iter().map(|&i| DualElement(elements[i as usize].clone()).lifts(k).swap_remove(0)).collect();
    // values[a][χ]
    let values: Vec<Vec<u8>> = layer_elems
        .par_iter()
        .map(|a| lifts.iter().map(|psi| pairing_value(psi, a, l).map(|v| v.value())).collect::<Result<Vec<u8>>>())
        .collect::<Result<_>>()?;
    let left_kernel =
        layer.iter().zip(&values).filter(|(_, row)| row.iter().all(|&v| v == 0)).map(|(&i, _)| i).collect();
    let right_kernel =
        layer.iter().enumerate().filter(|&(c, _)| values.iter().all(|row| row[c] == 0)).map(|(_, &i)| i).collect();
    Ok(PairingKernels {
        dual_layer: layer.clone(),
        layer,
        left_kernel,
        right_kernel,
        predicted_left: predicted.clone(),
        predicted_right: predicted,
    })
}

/// `μ¹_C.L.(A)` with the η product cut at `tail_cut`; the true value lies
/// in `[value - error_bound, value]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClWeight {
    pub value: f64,
    pub error_bound: f64,
}

pub fn cl_weight(lambda: &Partition, l: Modulus, tail_cut: u32) -> Result<ClWeight> {
    if tail_cut < 2 {
        return Err(Error::Precondition("tail_cut must be at least 2".into()));
    }
    let lf = l.get() as f64;
    let eta1: f64 = (2..=tail_cut).map(|i| 1.0 - lf.powi(-(i as i32))).product();
    let order = BigUint::from(l.get()).pow(lambda.size());
    let denom =
        (order * aut_count(lambda, l)).to_f64().ok_or_else(|| Error::Overflow(format!("|A|·|Aut A| for {lambda}")))?;
    let value = eta1 / denom;
    Ok(ClWeight { value, error_bound: value * lf.powi(-(tail_cut as i32)) / (lf - 1.0) })
}

/// Probability that the rank sequence starts with `prefix`.
pub fn rank_prefix_prob(prefix: &[u32], l: Modulus) -> Result<f64> {
    let Some(&first) = prefix.first() else {
        return Err(Error::Precondition("empty rank prefix".into()));
    };
    if prefix.windows(2).any(|w| w[0].cmp(&w[1]) == Ordering::Less) {
        return Err(Error::Precondition("rank prefix must be non-increasing".into()));
    }
    let lf = l.get() as f64;
    let head = eta_infinity(l) / (lf.powi((first * (first + 1)) as i32) * eta(first, l) * eta(first + 1, l));
    let mut p = head;
    for w in prefix.windows(2) {
        p *= p_cond(w[1] as usize, w[0] as usize, l)?.to_f64().unwrap_or(0.0);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const F3: Modulus = Modulus::of(3);
    const F5: Modulus = Modulus::of(5);

    fn part(p: &[u32]) -> Partition {
        Partition::new(p.to_vec()).unwrap()
    }

    #[test]
    fn rank_examples() {
        let l = part(&[3, 1]);
        assert_eq!(rank_k(&l, 1), 2);
        assert_eq!(rank_k(&l, 2), 1);
        assert_eq!(rank_k(&l, 4), 0);
        assert_eq!(l.rank_sequence(), vec![2, 1, 1]);
        assert!(Partition::new(vec![1, 2]).is_err());
        assert!(Partition::new(vec![0]).is_err());
    }

    #[test]
    fn order_examples() {
        assert_eq!(module_order(&Partition::empty(), F3).unwrap(), 1);
        assert_eq!(module_order(&part(&[2, 1]), F3).unwrap(), 27);
        assert_eq!(module_order(&part(&[1, 1, 1]), F5).unwrap(), 125);
        assert!(module_order(&part(&[100]), F3).is_err());
    }

    #[test]
    fn aut_examples() {
        assert_eq!(aut_count(&part(&[1]), F3), BigUint::from(2u32));
        assert_eq!(aut_count(&part(&[1, 1]), F3), BigUint::from(48u32));
        assert_eq!(aut_count(&part(&[2]), F3), BigUint::from(6u32));
        assert_eq!(aut_count(&Partition::empty(), F3), BigUint::one());
        // |GL_3(F_5)|
        assert_eq!(aut_count(&part(&[1, 1, 1]), F5), BigUint::from(1_488_000u32));
    }

    #[test]
    fn brute_force_small() {
        assert_eq!(brute_force_aut_count(&part(&[1]), F5).unwrap(), 4);
        assert_eq!(brute_force_aut_count(&Partition::empty(), F3).unwrap(), 1);
        assert_eq!(brute_force_aut_count(&part(&[1, 1]), F3).unwrap(), 48);
        assert!(brute_force_aut_count(&part(&[11]), F3).is_err());
        for p in [&[2, 1][..], &[3], &[2, 2], &[3, 1], &[2, 1, 1]] {
            let lambda = part(p);
            assert_eq!(BigUint::from(brute_force_aut_count(&lambda, F3).unwrap()), aut_count(&lambda, F3), "{lambda}");
        }
    }

    /// Full evaluation of φ on all of A for small modules, checking the
    /// socle criterion used by the brute-force count.
    #[test]
    fn socle_criterion_matches_full_injectivity() {
        for p in [&[2][..], &[2, 1], &[1, 1]] {
            let lambda = part(p);
            let order = module_order(&lambda, F3).unwrap();
            let elems: Vec<ModuleElement> = (0..order).map(|i| ModuleElement::from_index(&lambda, i, F3)).collect();
            let images: Vec<Vec<&ModuleElement>> = (0..lambda.len())
                .map(|j| elems.iter().filter(|y| y.mul_pi_pow(lambda.parts()[j]).is_zero()).collect())
                .collect();
            let mut bijective = 0;
            let mut choice = vec![0usize; lambda.len()];
            'outer: loop {
                let mut seen = vec![false; order as usize];
                let mut ok = true;
                for a in &elems {
                    // φ(a) = Σ a_j φ(e_j)
                    let mut img = ModuleElement::zero(&lambda, F3);
                    for (j, &c) in choice.iter().enumerate() {
                        let y = images[j][c];
                        let aj = &a.coords()[j];
                        let coords = y.coords().iter().map(|yc| yc.mul(&aj.at_level(yc.level()))).collect();
                        img = img.add(&ModuleElement::new(&lambda, coords).unwrap());
                    }
                    let idx = img.index() as usize;
                    if seen[idx] {
                        ok = false;
                        break;
                    }
                    seen[idx] = true;
                }
                if ok {
                    bijective += 1;
                }
                for j in 0..choice.len() {
                    choice[j] += 1;
                    if choice[j] < images[j].len() {
                        continue 'outer;
                    }
                    choice[j] = 0;
                }
                break;
            }
            assert_eq!(bijective, brute_force_aut_count(&lambda, F3).unwrap(), "{lambda}");
        }
    }

    #[test]
    fn truncated_arithmetic() {
        for l in [F3, F5, Modulus::of(7)] {
            let pi = TruncatedCyclotomic::pi(6, l);
            let mut digits = vec![0u8; 6];
            digits[1] = 1;
            assert_eq!(pi.digits(), digits);
            // l = π^{l-1}·unit
            let lval = TruncatedCyclotomic::new(&[l.get() as i64], 6, l).unwrap();
            assert_eq!(lval.valuation(), (l.get() - 1).min(6));
            // x^l = 1
            let x = TruncatedCyclotomic::new(&[0, 1], 6, l).unwrap();
            let xl = (0..l.get()).fold(TruncatedCyclotomic::one(6, l), |acc, _| acc.mul(&x));
            assert_eq!(xl, TruncatedCyclotomic::one(6, l));
            assert_eq!(TruncatedCyclotomic::pi(1, l).is_zero(), true);
        }
    }

    #[test]
    fn pairing_examples() {
        let l1 = part(&[1]);
        let a = ModuleElement::generator(&l1, 0, F3);
        let chi = DualElement::generator(&l1, 0, F3);
        assert_eq!(artin_pairing(&l1, 1, &a, &chi).unwrap().value(), 1);
        let zero = ModuleElement::zero(&l1, F3);
        assert!(artin_pairing(&l1, 1, &zero, &chi).unwrap().is_zero());

        let l2 = part(&[2]);
        let a = ModuleElement::generator(&l2, 0, F3).mul_pi_pow(1);
        let chi = DualElement::generator(&l2, 0, F3).mul_pi_pow(1);
        assert!(artin_pairing(&l2, 1, &a, &chi).unwrap().is_zero());
        // The generator is not killed by π.
        assert!(artin_pairing(&l2, 1, &ModuleElement::generator(&l2, 0, F3), &chi).is_err());
        // At k = 2 the same pair is perfect.
        assert_eq!(artin_pairing(&l2, 2, &a, &chi).unwrap().value(), 1);
    }

    #[test]
    fn kernel_examples() {
        let k1 = pairing_kernels(&part(&[1]), 1, F3).unwrap();
        assert_eq!(k1.left_kernel, vec![0]);
        assert_eq!(k1.right_kernel, vec![0]);
        let k2 = pairing_kernels(&part(&[2]), 1, F3).unwrap();
        assert_eq!(k2.left_kernel.len(), 3);
        assert!(k2.matches());
        let empty = pairing_kernels(&Partition::empty(), 2, F3).unwrap();
        assert_eq!(empty.layer, vec![0]);
        assert!(empty.matches());
    }

    #[test]
    fn pairing_independent_of_lift() {
        for p in [&[2, 1][..], &[3, 1], &[2, 2]] {
            let lambda = part(p);
            for k in 1..=lambda.largest() {
                let order = module_order(&lambda, F3).unwrap();
                let layer: Vec<ModuleElement> =
                    (0..order).map(|i| ModuleElement::from_index(&lambda, i, F3)).filter(|e| e.in_layer(k)).collect();
                for a in &layer {
                    for chi in &layer {
                        let chi = DualElement(chi.clone());
                        let values: Vec<FlScalar> =
                            chi.lifts(k).iter().map(|psi| pairing_value(psi, a, F3).unwrap()).collect();
                        assert!(values.windows(2).all(|w| w[0] == w[1]));
                        assert!(chi.lifts(k).iter().all(|psi| psi.mul_pi_pow(k - 1) == chi));
                    }
                }
            }
        }
    }

    #[test]
    fn weight_examples() {
        let empty = cl_weight(&Partition::empty(), F3, DEFAULT_TAIL_CUT).unwrap();
        assert!((empty.value - 0.840_189_0).abs() < 1e-6);
        let one = cl_weight(&part(&[1]), F3, DEFAULT_TAIL_CUT).unwrap();
        assert!((one.value - empty.value / 6.0).abs() < 1e-15);
        assert!(cl_weight(&part(&[2, 2, 1]), F3, 2).unwrap().value > 0.0);
        assert!(cl_weight(&part(&[1]), F3, 1).is_err());
        let prefix = rank_prefix_prob(&[0], F3).unwrap();
        assert!((prefix - empty.value).abs() < 1e-12);
        assert!(rank_prefix_prob(&[0, 1], F3).is_err());
    }

    #[test]
    fn prefix_chain_with_zero_tail() {
        let head = rank_prefix_prob(&[2], F3).unwrap();
        let chained = rank_prefix_prob(&[2, 0, 0], F3).unwrap();
        let p20 = p_cond(0, 2, F3).unwrap().to_f64().unwrap();
        assert!((chained - head * p20).abs() < 1e-15);
    }

    #[test]
    fn partition_enumeration() {
        // p(0..=4) = 1, 1, 2, 3, 5
        assert_eq!(partitions_bounded(4, 4).len(), 12);
        assert_eq!(partitions_bounded(4, 1).len(), 5);
        assert!(partitions_bounded(6, 3).iter().all(|p| p.largest() <= 3 && p.size() <= 6));
    }

    proptest! {
        #[test]
        fn rank_sequence_round_trip(parts in proptest::collection::vec(1u32..8, 0..8)) {
            let lambda = Partition::from_unsorted(parts).unwrap();
            let ranks = lambda.rank_sequence();
            prop_assert!(ranks.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(Partition::from_rank_sequence(&ranks).unwrap(), lambda);
        }

        #[test]
        fn digits_round_trip(digits in proptest::collection::vec(0u8..5, 7)) {
            let e = TruncatedCyclotomic::from_digits(&digits, 7, F5);
            prop_assert_eq!(e.digits(), digits);
        }

        #[test]
        fn ring_laws(a in proptest::collection::vec(-200i64..200, 2), b in proptest::collection::vec(-200i64..200, 2), c in proptest::collection::vec(-200i64..200, 2)) {
            let (a, b, c) = (
                TruncatedCyclotomic::new(&a, 5, F3).unwrap(),
                TruncatedCyclotomic::new(&b, 5, F3).unwrap(),
                TruncatedCyclotomic::new(&c, 5, F3).unwrap(),
            );
            prop_assert_eq!(a.mul(&b.add(&c)), a.mul(&b).add(&a.mul(&c)));
            prop_assert_eq!(a.mul(&b), b.mul(&a));
            prop_assert_eq!(a.mul(&b).valuation().min(5), (a.valuation() + b.valuation()).min(5));
        }

        #[test]
        fn pairing_bilinear(i1 in 0u64..243, i2 in 0u64..243, j in 0u64..243, c in 0i64..3) {
            let lambda = part(&[3, 2]);
            let k = 2;
            let proj = |i: u64| {
                // Push an arbitrary element into the layer π(A[π²]).
                let mut x = ModuleElement::from_index(&lambda, i, F3);
                while !x.in_layer(k) { x = x.mul_pi_pow(1); }
                x
            };
            let (a1, a2) = (proj(i1), proj(i2));
            let chi = DualElement(proj(j));
            let lhs = artin_pairing(&lambda, k, &a1.add(&a2.scale(c)), &chi).unwrap();
            let rhs = artin_pairing(&lambda, k, &a1, &chi).unwrap()
                + FlScalar::new(c, F3) * artin_pairing(&lambda, k, &a2, &chi).unwrap();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
