//! Redei matrices of cyclic degree-l fields and the box/assignment model.
//!
//! A field is described by its support (the primes dividing the radical of
//! its discriminant, each `≡ 1 (mod l)` or equal to `l`) together with an
//! amalgama, the exponent in `[1, l-1]` of the local character at each
//! support prime. Entry `(i, j)` of the Redei matrix is
//! `ε(q_j) · log χ_{q_j}(Frob q_i)` off the diagonal; the diagonal makes every
//! row sum to zero. The (1 - ζ_l)²-rank of the field is `r - 1 - rank`.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::chars::{canonical_character, wild_char_exponent, CharData, WildCharData};
use crate::fl::{FlMatrix, FlSubspace, Modulus};
use crate::primes::{is_prime, sieve};
use crate::{Error, Result};

/// The radical of an l-admissible discriminant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Support {
    primes: Vec<u64>,
    radical: u64,
}

impl Support {
    pub fn new(mut primes: Vec<u64>, l: Modulus) -> Result<Self> {
        if primes.is_empty() {
            return Err(Error::Precondition("empty support".into()));
        }
        primes.sort_unstable();
        if primes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Precondition("repeated prime in support".into()));
        }
        let lu = l.get() as u64;
        let mut radical = 1u64;
        for &q in &primes {
            if !is_prime(q) {
                return Err(Error::NotPrime(q));
            }
            if q != lu && q % lu != 1 {
                return Err(Error::NotOneModL { p: q, l: l.get() });
            }
            radical = radical.checked_mul(q).ok_or_else(|| Error::Overflow("support radical".into()))?;
        }
        Ok(Support { primes, radical })
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn radical(&self) -> u64 {
        self.radical
    }

    pub fn len(&self) -> usize {
        self.primes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primes.is_empty()
    }
}

/// Primes that may ramify in a cyclic degree-l field: `l` and `p ≡ 1 (mod l)`.
pub fn admissible_primes(bound: u64, l: Modulus) -> Vec<u64> {
    let lu = l.get() as u64;
    sieve(bound).into_iter().filter(|&p| p == lu || p % lu == 1).collect()
}

/// All supports with radical `<= bound`, in increasing order of radical.
pub fn enumerate_supports(bound: u64, l: Modulus) -> Vec<Support> {
    let primes = admissible_primes(bound, l);
    let mut out = Vec::new();
    let mut stack = Vec::new();
    collect_products(&primes, 0, 1, bound, &mut stack, &mut out);
    out.sort_unstable_by_key(|s: &Support| s.radical);
    out
}

fn collect_products(
    primes: &[u64],
    start: usize,
    value: u64,
    bound: u64,
    stack: &mut Vec<u64>,
    out: &mut Vec<Support>,
) {
    for (i, &p) in primes.iter().enumerate().skip(start) {
        let Some(next) = value.checked_mul(p).filter(|&v| v <= bound) else {
            break;
        };
        stack.push(p);
        out.push(Support { primes: stack.clone(), radical: next });
        collect_products(primes, i + 1, next, bound, stack, out);
        stack.pop();
    }
}

/// Exponents ε(q) ∈ [1, l-1] at each support prime, in support order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Amalgama {
    eps: Vec<u8>,
}

impl Amalgama {
    pub fn new(eps: Vec<u8>, l: Modulus) -> Result<Self> {
        if eps.iter().any(|&e| e == 0 || e as u32 >= l.get()) {
            return Err(Error::Precondition(format!("amalgama values must lie in [1, {}]", l.get() - 1)));
        }
        Ok(Amalgama { eps })
    }

    pub fn uniform(r: usize) -> Self {
        Amalgama { eps: vec![1; r] }
    }

    pub fn values(&self) -> &[u8] {
        &self.eps
    }

    pub fn get(&self, i: usize) -> u8 {
        self.eps[i]
    }

    pub fn scaled(&self, c: u8, l: Modulus) -> Self {
        Amalgama { eps: self.eps.iter().map(|&e| l.mul(e, c)).collect() }
    }

    /// Whether `other = c · self` for some nonzero `c`.
    pub fn equivalent(&self, other: &Amalgama, l: Modulus) -> bool {
        (1..l.get() as u8).any(|c| &self.scaled(c, l) == other)
    }
}

/// One amalgama per field: the `(l-1)^(r-1)` classes normalized by ε(q_1) = 1,
/// in lexicographic order.
pub fn amalgama_representatives(s: &Support, l: Modulus) -> Vec<Amalgama> {
    let r = s.len();
    let base = l.get() as usize - 1;
    let count = base.pow(r.saturating_sub(1) as u32);
    (0..count)
        .map(|mut idx| {
            let mut eps = vec![1u8; r];
            for e in eps.iter_mut().skip(1).rev() {
                *e = (idx % base) as u8 + 1;
                idx /= base;
            }
            Amalgama { eps }
        })
        .collect()
}

/// Precomputed characters for a fixed set of conductor primes.
#[derive(Clone, Debug)]
pub struct CharCache {
    l: Modulus,
    chars: HashMap<u64, CharData>,
}

impl CharCache {
    pub fn new(l: Modulus) -> Self {
        CharCache { l, chars: HashMap::new() }
    }

    pub fn with_primes<I: IntoIterator<Item = u64>>(l: Modulus, primes: I) -> Result<Self> {
        let mut cache = Self::new(l);
        for p in primes {
            cache.insert(p)?;
        }
        Ok(cache)
    }

    pub fn insert(&mut self, p: u64) -> Result<()> {
        if p != self.l.get() as u64 && !self.chars.contains_key(&p) {
            self.chars.insert(p, canonical_character(p, self.l)?);
        }
        Ok(())
    }

    pub fn modulus(&self) -> Modulus {
        self.l
    }

    /// Exponent of χ_conductor(Frob q); the conductor may be the wild prime `l`.
    pub fn frobenius(&self, conductor: u64, q: u64) -> Result<u8> {
        if conductor == self.l.get() as u64 {
            return Ok(wild_char_exponent(WildCharData { l: self.l }, q)?.value());
        }
        match self.chars.get(&conductor) {
            Some(chi) => Ok(chi.exponent(q)?.value()),
            None => Ok(canonical_character(conductor, self.l)?.exponent(q)?.value()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RedeiMatrix {
    pub support: Support,
    pub eps: Amalgama,
    pub matrix: FlMatrix,
}

impl RedeiMatrix {
    pub fn r(&self) -> usize {
        self.support.len()
    }

    pub fn rank(&self) -> usize {
        self.matrix.rank()
    }

    /// `r - 1 - rank`, the (1 - ζ_l)²-rank of the field.
    pub fn rank2_defect(&self) -> usize {
        rank2_defect(self)
    }
}

pub fn build_redei(s: &Support, eps: &Amalgama, l: Modulus) -> Result<RedeiMatrix> {
    let cache = CharCache::with_primes(l, s.primes().iter().copied())?;
    build_redei_cached(s, eps, &cache)
}

pub fn build_redei_cached(s: &Support, eps: &Amalgama, cache: &CharCache) -> Result<RedeiMatrix> {
    let l = cache.modulus();
    let r = s.len();
    if eps.values().len() != r {
        return Err(Error::Dimension(format!("amalgama of length {} for {r} primes", eps.values().len())));
    }
    let q = s.primes();
    let mut m = FlMatrix::zeros(l, r, r);
    for i in 0..r {
        let mut row_sum = 0u8;
        for j in (0..r).filter(|&j| j != i) {
            let e = l.mul(eps.get(j), cache.frobenius(q[j], q[i])?);
            m.set(i, j, e);
            row_sum = l.add(row_sum, e);
        }
        m.set(i, i, l.neg(row_sum));
    }
    Ok(RedeiMatrix { support: s.clone(), eps: eps.clone(), matrix: m })
}

pub fn rank2_defect(red: &RedeiMatrix) -> usize {
    red.r() - 1 - red.rank()
}

/// One emitted row per (support, amalgama) pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SupportRecord {
    pub radical: u64,
    pub r: usize,
    pub amalgama_index: usize,
    pub rank: usize,
    pub defect: usize,
}

pub const SUPPORT_RECORD_CSV_HEADER: &str = "radical,r,amalgama_index,rank,defect";

impl SupportRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.radical, self.r, self.amalgama_index, self.rank, self.defect)
    }
}

/// Field counts by (1 - ζ_l)²-rank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RankHistogram {
    pub l: u32,
    pub bound: u64,
    pub counts: BTreeMap<usize, u64>,
    pub total: u64,
    pub supports: u64,
    /// Supports whose non-proportional amalgamas do not all share one defect.
    pub supports_with_spread: u64,
}

impl RankHistogram {
    pub fn frequency(&self, j: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        *self.counts.get(&j).unwrap_or(&0) as f64 / self.total as f64
    }

    pub fn frequencies(&self) -> BTreeMap<usize, f64> {
        self.counts.keys().map(|&j| (j, self.frequency(j))).collect()
    }
}

fn support_records(s: &Support, cache: &CharCache) -> Result<Vec<SupportRecord>> {
    amalgama_representatives(s, cache.modulus())
        .iter()
        .enumerate()
        .map(|(idx, eps)| {
            let red = build_redei_cached(s, eps, cache)?;
            let rank = red.rank();
            Ok(SupportRecord {
                radical: s.radical(),
                r: s.len(),
                amalgama_index: idx,
                rank,
                defect: s.len() - 1 - rank,
            })
        })
        .collect()
}

/// Per-field records for every support with radical `<= bound`, in
/// increasing radical order. Runs on the ambient rayon pool; the output
/// does not depend on its size.
pub fn field_records(bound: u64, l: Modulus) -> Result<Vec<SupportRecord>> {
    let cache = CharCache::with_primes(l, admissible_primes(bound, l))?;
    let supports = enumerate_supports(bound, l);
    let nested: Vec<Vec<SupportRecord>> =
        supports.par_iter().map(|s| support_records(s, &cache)).collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

pub fn rank_histogram(bound: u64, l: Modulus) -> Result<RankHistogram> {
    Ok(histogram_from_records(bound, l, &field_records(bound, l)?))
}

pub fn histogram_from_records(bound: u64, l: Modulus, records: &[SupportRecord]) -> RankHistogram {
    let mut hist =
        RankHistogram { l: l.get(), bound, counts: BTreeMap::new(), total: 0, supports: 0, supports_with_spread: 0 };
    for group in records.chunk_by(|a, b| a.radical == b.radical) {
        hist.supports += 1;
        if group.iter().any(|rec| rec.defect != group[0].defect) {
            hist.supports_with_spread += 1;
        }
        for rec in group {
            *hist.counts.entry(rec.defect).or_insert(0) += 1;
            hist.total += 1;
        }
    }
    hist
}

/// Counts of structural violations over every (support, amalgama) pair.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StructuralReport {
    pub pairs_checked: u64,
    pub nonzero_row_sums: u64,
    pub ones_not_in_right_kernel: u64,
    pub trivial_left_kernel: u64,
    pub kernel_dim_mismatch: u64,
    pub scaling_not_invariant: u64,
}

impl StructuralReport {
    pub fn violations(&self) -> u64 {
        self.nonzero_row_sums
            + self.ones_not_in_right_kernel
            + self.trivial_left_kernel
            + self.kernel_dim_mismatch
            + self.scaling_not_invariant
    }

    fn merge(mut self, o: StructuralReport) -> Self {
        self.pairs_checked += o.pairs_checked;
        self.nonzero_row_sums += o.nonzero_row_sums;
        self.ones_not_in_right_kernel += o.ones_not_in_right_kernel;
        self.trivial_left_kernel += o.trivial_left_kernel;
        self.kernel_dim_mismatch += o.kernel_dim_mismatch;
        self.scaling_not_invariant += o.scaling_not_invariant;
        self
    }
}

pub fn structural_check(bound: u64, l: Modulus) -> Result<StructuralReport> {
    let cache = CharCache::with_primes(l, admissible_primes(bound, l))?;
    let supports = enumerate_supports(bound, l);
    let reports: Vec<StructuralReport> = supports
        .par_iter()
        .map(|s| {
            let mut rep = StructuralReport::default();
            let ones = vec![1u8; s.len()];
            for eps in amalgama_representatives(s, l) {
                let red = build_redei_cached(s, &eps, &cache)?;
                let m = &red.matrix;
                rep.pairs_checked += 1;
                if (0..m.rows()).any(|i| m.row(i).iter().fold(0u8, |a, &b| l.add(a, b)) != 0) {
                    rep.nonzero_row_sums += 1;
                }
                if m.mul_vec(&ones).iter().any(|&x| x != 0) {
                    rep.ones_not_in_right_kernel += 1;
                }
                let left = m.left_kernel().dim();
                if left < 1 {
                    rep.trivial_left_kernel += 1;
                }
                if left != m.right_kernel().dim() {
                    rep.kernel_dim_mismatch += 1;
                }
                let defect = red.rank2_defect();
                for c in 2..l.get() as u8 {
                    if build_redei_cached(s, &eps.scaled(c, l), &cache)?.rank2_defect() != defect {
                        rep.scaling_not_invariant += 1;
                    }
                }
            }
            Ok(rep)
        })
        .collect::<Result<_>>()?;
    Ok(reports.into_iter().fold(StructuralReport::default(), StructuralReport::merge))
}

/// A product of disjoint prime cells `X_1 × … × X_r`; the first `pinned`
/// cells are singletons and the rest sit in windows `(t_i, t'_i)` with
/// `t'_i = (1 + 1/(e^(i-k) log D_1)) t_i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrimeBox {
    cells: Vec<Vec<u64>>,
    pinned: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PrimeBox {
    /// `thresholds` holds `t_{k+1}, …, t_r`.
    pub fn new(
        cells: Vec<Vec<u64>>,
        pinned: usize,
        thresholds: Vec<f64>,
        d1: f64,
        spacing_factor: f64,
        l: Modulus,
    ) -> Result<Self> {
        let r = cells.len();
        if pinned > r || thresholds.len() != r - pinned {
            return Err(Error::Dimension(format!(
                "{} thresholds for {r} cells with {pinned} pinned",
                thresholds.len()
            )));
        }
        if d1 <= 1.0 || spacing_factor < 1.0 {
            return Err(Error::Precondition("need D_1 > 1 and spacing factor >= 1".into()));
        }
        let lu = l.get() as u64;
        let mut all: Vec<u64> = cells.iter().flatten().copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Precondition("box cells are not disjoint".into()));
        }
        if let Some(&q) = all.iter().find(|&&q| !is_prime(q) || (q != lu && q % lu != 1)) {
            return Err(Error::Precondition(format!("{q} is not an admissible prime")));
        }
        if cells.iter().any(|c| c.is_empty()) {
            return Err(Error::Precondition("empty box cell".into()));
        }
        if cells.iter().take(pinned).any(|c| c.len() != 1) {
            return Err(Error::Precondition("pinned cells must be singletons".into()));
        }
        let upper: Vec<f64> = thresholds
            .iter()
            .enumerate()
            .map(|(offset, &t)| (1.0 + 1.0 / ((offset as f64 + 1.0).exp() * d1.ln())) * t)
            .collect();
        for (offset, cell) in cells.iter().skip(pinned).enumerate() {
            let (t, t2) = (thresholds[offset], upper[offset]);
            if cell.iter().any(|&q| !(t < q as f64 && (q as f64) < t2)) {
                return Err(Error::Precondition(format!("cell {} leaves its window ({t}, {t2})", pinned + offset + 1)));
            }
            if offset > 0 && t < spacing_factor * upper[offset - 1] {
                return Err(Error::Precondition(format!("threshold {t} too close to the previous window")));
            }
        }
        let mut cells = cells;
        for c in &mut cells {
            c.sort_unstable();
        }
        Ok(PrimeBox { cells, pinned, lower: thresholds, upper })
    }

    pub fn cells(&self) -> &[Vec<u64>] {
        &self.cells
    }

    pub fn pinned(&self) -> usize {
        self.pinned
    }

    pub fn r(&self) -> usize {
        self.cells.len()
    }

    pub fn windows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lower.iter().copied().zip(self.upper.iter().copied())
    }

    pub fn size(&self) -> usize {
        self.cells.iter().map(Vec::len).product()
    }

    /// All points of the box in lexicographic order.
    pub fn points(&self) -> impl Iterator<Item = Vec<u64>> + '_ {
        let total = self.size();
        (0..total).map(move |mut idx| {
            let mut x = vec![0; self.r()];
            for (i, cell) in self.cells.iter().enumerate().rev() {
                x[i] = cell[idx % cell.len()];
                idx /= cell.len();
            }
            x
        })
    }
}

/// Index into `M ⊔ M_{P,1} ⊔ M_{P,2}`; box coordinates are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AssignmentIndex {
    /// `(i, j) ∈ M`, `i ≠ j`.
    Pair(usize, usize),
    /// `(i, p) ∈ M_{P,1}`.
    PointAux(usize, u64),
    /// `(p, j) ∈ M_{P,2}`.
    AuxPoint(u64, usize),
}

/// A generalized Redei matrix: character exponents between box coordinates
/// and auxiliary primes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Assignment {
    r: usize,
    aux: Vec<u64>,
    l: Modulus,
    values: BTreeMap<AssignmentIndex, u8>,
}

impl Assignment {
    /// Assignment on `M` only, read off the off-diagonal of `m`.
    pub fn from_matrix(m: &FlMatrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Dimension("assignment matrix must be square".into()));
        }
        let r = m.rows();
        let values = (0..r)
            .flat_map(|i| (0..r).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| (AssignmentIndex::Pair(i, j), m.get(i, j)))
            .collect();
        Ok(Assignment { r, aux: Vec::new(), l: m.modulus(), values })
    }

    /// Uniformly random assignment on `M`.
    pub fn random<R: rand::Rng + ?Sized>(r: usize, l: Modulus, rng: &mut R) -> Self {
        let values = (0..r)
            .flat_map(|i| (0..r).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| (AssignmentIndex::Pair(i, j), rng.gen_range(0..l.get() as u8)))
            .collect();
        Assignment { r, aux: Vec::new(), l, values }
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn aux(&self) -> &[u64] {
        &self.aux
    }

    pub fn modulus(&self) -> Modulus {
        self.l
    }

    pub fn get(&self, idx: AssignmentIndex) -> Option<u8> {
        self.values.get(&idx).copied()
    }

    pub fn values(&self) -> &BTreeMap<AssignmentIndex, u8> {
        &self.values
    }

    /// Overwrites one entry; the index must already be in the domain.
    pub fn set(&mut self, idx: AssignmentIndex, value: u8) -> Result<()> {
        match self.values.get_mut(&idx) {
            Some(v) => {
                *v = self.l.reduce(value as i64);
                Ok(())
            }
            None => Err(Error::Precondition(format!("{idx:?} outside the assignment domain"))),
        }
    }

    /// The r×r Redei matrix: `a(i, j)` off the diagonal, zero row sums.
    pub fn redei_matrix(&self) -> FlMatrix {
        let l = self.l;
        let mut m = FlMatrix::zeros(l, self.r, self.r);
        for i in 0..self.r {
            let mut sum = 0u8;
            for j in (0..self.r).filter(|&j| j != i) {
                let v = self.values[&AssignmentIndex::Pair(i, j)];
                m.set(i, j, v);
                sum = l.add(sum, v);
            }
            m.set(i, i, l.neg(sum));
        }
        m
    }
}

/// Character-exponent choice `f` on box primes and auxiliary primes.
pub type ExponentMap = BTreeMap<u64, u8>;

fn exponent_of(f: &ExponentMap, p: u64, l: Modulus) -> Result<u8> {
    match f.get(&p) {
        Some(&e) if e != 0 && (e as u32) < l.get() => Ok(e),
        Some(&e) => Err(Error::Precondition(format!("f({p}) = {e} outside [1, l-1]"))),
        None => Err(Error::Precondition(format!("f undefined at {p}"))),
    }
}

pub fn build_assignment(x: &[u64], f: &ExponentMap, aux: &[u64], l: Modulus) -> Result<Assignment> {
    let mut cache = CharCache::new(l);
    for &p in x.iter().chain(aux) {
        cache.insert(p)?;
    }
    build_assignment_cached(x, f, aux, &cache)
}

fn build_assignment_cached(x: &[u64], f: &ExponentMap, aux: &[u64], cache: &CharCache) -> Result<Assignment> {
    let l = cache.modulus();
    let mut all: Vec<u64> = x.iter().chain(aux).copied().collect();
    all.sort_unstable();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Precondition("coordinate collision".into()));
    }
    if let Some(&p) = aux.iter().find(|&&p| p % l.get() as u64 != 1) {
        return Err(Error::NotOneModL { p, l: l.get() });
    }
    let r = x.len();
    let mut values = BTreeMap::new();
    for j in 0..r {
        let fj = exponent_of(f, x[j], l)?;
        for i in (0..r).filter(|&i| i != j) {
            values.insert(AssignmentIndex::Pair(i, j), l.mul(fj, cache.frobenius(x[j], x[i])?));
        }
        for &p in aux {
            values.insert(AssignmentIndex::AuxPoint(p, j), l.mul(fj, cache.frobenius(x[j], p)?));
        }
    }
    for &p in aux {
        let fp = exponent_of(f, p, l)?;
        for i in 0..r {
            values.insert(AssignmentIndex::PointAux(i, p), l.mul(fp, cache.frobenius(p, x[i])?));
        }
    }
    let mut aux = aux.to_vec();
    aux.sort_unstable();
    Ok(Assignment { r, aux, l, values })
}

/// `X(a, f)`: the box points whose assignment equals `a`.
pub fn assignment_filter(bx: &PrimeBox, a: &Assignment, f: &ExponentMap, aux: &[u64]) -> Result<Vec<Vec<u64>>> {
    let l = a.modulus();
    if a.r() != bx.r() {
        return Err(Error::Dimension(format!("assignment for r = {} on a box with r = {}", a.r(), bx.r())));
    }
    let mut sorted_aux = aux.to_vec();
    sorted_aux.sort_unstable();
    if sorted_aux != a.aux() {
        return Err(Error::Precondition("auxiliary prime sets differ".into()));
    }
    let mut cache = CharCache::new(l);
    for &p in bx.cells().iter().flatten().chain(aux) {
        cache.insert(p)?;
    }
    let mut out = Vec::new();
    for x in bx.points() {
        if &build_assignment_cached(&x, f, aux, &cache)? == a {
            out.push(x);
        }
    }
    Ok(out)
}

/// The window `{j ∈ [r] : r/4 <= j <= r/3}` as 0-based indices.
pub fn generic_window(r: usize) -> Vec<usize> {
    (1..=r).filter(|&j| 4 * j >= r && 3 * j <= r).map(|j| j - 1).collect()
}

/// The genericity predicate on an assignment over `M` (no auxiliary primes).
pub fn is_generic(a: &Assignment, n_max: usize) -> Result<bool> {
    if !a.aux().is_empty() {
        return Err(Error::Precondition("genericity is defined for assignments on M only".into()));
    }
    let l = a.modulus();
    let r = a.r();
    let m = a.redei_matrix();
    let left = m.left_kernel();
    let right = m.right_kernel();
    let n2 = left.dim() as isize - 1;
    if n2 > n_max as isize {
        return Ok(false);
    }
    let window = generic_window(r);
    let alpha = window.len() as f64;
    let bound = (-10.0 * n_max as f64).exp2() * r as f64;
    let ones = FlSubspace::span(l, r, vec![vec![1; r]]);
    let right_elems: Vec<Vec<u8>> = right.elements().collect();
    let right_in_ones: Vec<bool> = right_elems.iter().map(|t| ones.contains(t)).collect();
    let lu = l.get() as usize;
    for t1 in left.elements() {
        let t1_zero = t1.iter().all(|&x| x == 0);
        for (t2, &in_ones) in right_elems.iter().zip(&right_in_ones) {
            if t1_zero && in_ones {
                continue;
            }
            let mut counts = vec![0usize; lu];
            for &j in &window {
                counts[l.add(t1[j], t2[j]) as usize] += 1;
            }
            if counts.iter().any(|&c| (c as f64 - alpha / lu as f64).abs() > bound) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    const F3: Modulus = Modulus::of(3);
    const F5: Modulus = Modulus::of(5);

    #[test]
    fn support_enumeration_examples() {
        let small: Vec<Vec<u64>> = enumerate_supports(10, F3).iter().map(|s| s.primes().to_vec()).collect();
        assert_eq!(small, vec![vec![3], vec![7]]);
        let hundred = enumerate_supports(100, F3);
        assert_eq!(hundred.len(), 17);
        assert_eq!(hundred.iter().filter(|s| s.len() == 1).count(), 12);
        assert_eq!(hundred.iter().filter(|s| s.len() == 2).count(), 5);
        assert!(hundred.iter().any(|s| s.primes() == [7, 13]));
        assert!(hundred.windows(2).all(|w| w[0].radical() < w[1].radical()));
        assert!(enumerate_supports(2, F3).is_empty());
    }

    #[test]
    fn support_validation() {
        assert!(Support::new(vec![13, 7], F3).is_ok());
        assert!(Support::new(vec![], F3).is_err());
        assert!(Support::new(vec![5], F3).is_err());
        assert!(Support::new(vec![7, 7], F3).is_err());
    }

    #[test]
    fn amalgama_counts() {
        let s1 = Support::new(vec![7], F3).unwrap();
        assert_eq!(amalgama_representatives(&s1, F3).len(), 1);
        let s2 = Support::new(vec![7, 13], F3).unwrap();
        let reps: Vec<Vec<u8>> = amalgama_representatives(&s2, F3).iter().map(|a| a.values().to_vec()).collect();
        assert_eq!(reps, vec![vec![1, 1], vec![1, 2]]);
        let s3 = Support::new(vec![11, 31, 41], F5).unwrap();
        let reps = amalgama_representatives(&s3, F5);
        assert_eq!(reps.len(), 16);
        for (i, a) in reps.iter().enumerate() {
            for b in &reps[i + 1..] {
                assert!(!a.equivalent(b, F5));
            }
        }
        // Every amalgama is equivalent to exactly one representative.
        for e1 in 1..5u8 {
            for e2 in 1..5u8 {
                for e3 in 1..5u8 {
                    let a = Amalgama::new(vec![e1, e2, e3], F5).unwrap();
                    assert_eq!(reps.iter().filter(|rep| rep.equivalent(&a, F5)).count(), 1);
                }
            }
        }
    }

    #[test]
    fn redei_examples() {
        let s = Support::new(vec![7, 13], F3).unwrap();
        let red = build_redei(&s, &Amalgama::uniform(2), F3).unwrap();
        assert_eq!(red.matrix, FlMatrix::from_rows(F3, &[[1, 2], [0, 0]]).unwrap());
        assert_eq!(red.rank2_defect(), 0);

        let single = build_redei(&Support::new(vec![19], F3).unwrap(), &Amalgama::uniform(1), F3).unwrap();
        assert_eq!(single.matrix, FlMatrix::zeros(F3, 1, 1));
        assert_eq!(single.rank2_defect(), 0);

        let scaled = build_redei(&s, &Amalgama::new(vec![2, 2], F3).unwrap(), F3).unwrap();
        assert_eq!(scaled.matrix, red.matrix.scale(2));
    }

    #[test]
    fn wild_prime_row_and_column() {
        // Support {3, 7}: the column of 3 uses the Fermat quotient at 7,
        // the row of 3 uses χ_7(Frob 3).
        let s = Support::new(vec![3, 7], F3).unwrap();
        let red = build_redei(&s, &Amalgama::uniform(2), F3).unwrap();
        let chi7 = canonical_character(7, F3).unwrap();
        assert_eq!(red.matrix.get(0, 1), chi7.exponent(3).unwrap().value());
        let w = wild_char_exponent(WildCharData { l: F3 }, 7).unwrap().value();
        assert_eq!(red.matrix.get(1, 0), w);
    }

    #[test]
    fn zero_matrix_defect() {
        let m = FlMatrix::zeros(F3, 4, 4);
        let s = Support::new(vec![7, 13, 19, 31], F3).unwrap();
        let red = RedeiMatrix { support: s, eps: Amalgama::uniform(4), matrix: m };
        assert_eq!(red.rank2_defect(), 3);
    }

    #[test]
    fn histogram_at_one_hundred() {
        let hist = rank_histogram(100, F3).unwrap();
        assert_eq!(hist.total, 22);
        assert_eq!(hist.supports, 17);
        let records = field_records(100, F3).unwrap();
        assert!(records.iter().filter(|r| r.r == 1).all(|r| r.defect == 0));
        assert_eq!(records.len(), 22);
    }

    #[test]
    fn assignment_matches_redei() {
        let f: ExponentMap = [(7, 1), (13, 1)].into_iter().collect();
        let a = build_assignment(&[7, 13], &f, &[], F3).unwrap();
        assert_eq!(a.get(AssignmentIndex::Pair(0, 1)), Some(2));
        assert_eq!(a.get(AssignmentIndex::Pair(1, 0)), Some(0));
        assert_eq!(a.redei_matrix(), FlMatrix::from_rows(F3, &[[1, 2], [0, 0]]).unwrap());

        let single = build_assignment(&[7], &f, &[], F3).unwrap();
        assert!(single.values().is_empty());

        let f2: ExponentMap = [(7, 1), (13, 2)].into_iter().collect();
        let b = build_assignment(&[7, 13], &f2, &[], F3).unwrap();
        assert_eq!(b.get(AssignmentIndex::Pair(0, 1)), Some(F3.mul(2, 2)));
        assert_eq!(b.get(AssignmentIndex::Pair(1, 0)), Some(0));

        assert!(build_assignment(&[7, 7], &f, &[], F3).is_err());
        assert!(build_assignment(&[7, 13], &f, &[13], F3).is_err());
    }

    #[test]
    fn assignment_with_auxiliary_primes() {
        let f: ExponentMap = [(7, 1), (13, 2), (19, 1)].into_iter().collect();
        let a = build_assignment(&[7, 13], &f, &[19], F3).unwrap();
        assert_eq!(a.values().len(), 2 + 2 + 2);
        let chi19 = canonical_character(19, F3).unwrap();
        let chi13 = canonical_character(13, F3).unwrap();
        assert_eq!(a.get(AssignmentIndex::PointAux(0, 19)), Some(chi19.exponent(7).unwrap().value()));
        assert_eq!(a.get(AssignmentIndex::AuxPoint(19, 1)), Some(F3.mul(2, chi13.exponent(19).unwrap().value())));
    }

    fn small_box() -> PrimeBox {
        // D_1 = 2 gives windows (t, 1.53 t), (t, 1.195 t), ...
        PrimeBox::new(
            vec![vec![7], vec![61, 67, 73, 79], vec![307, 313, 331, 337, 349]],
            1,
            vec![60.0, 300.0],
            2.0,
            3.0,
            F3,
        )
        .unwrap()
    }

    #[test]
    fn box_validation() {
        assert!(PrimeBox::new(vec![vec![7, 13]], 1, vec![], 2.0, 1.0, F3).is_err());
        assert!(PrimeBox::new(vec![vec![7], vec![7]], 2, vec![], 2.0, 1.0, F3).is_err());
        assert!(PrimeBox::new(vec![vec![61, 97]], 0, vec![60.0], 2.0, 1.0, F3).is_err());
        let bx = small_box();
        assert_eq!(bx.size(), 20);
        assert_eq!(bx.points().count(), 20);
    }

    #[test]
    fn filter_singleton_box() {
        let bx = PrimeBox::new(vec![vec![7], vec![13]], 2, vec![], 2.0, 1.0, F3).unwrap();
        let f: ExponentMap = [(7, 1), (13, 1)].into_iter().collect();
        let a = build_assignment(&[7, 13], &f, &[], F3).unwrap();
        assert_eq!(assignment_filter(&bx, &a, &f, &[]).unwrap(), vec![vec![7, 13]]);
        let mut b = a.clone();
        b.set(AssignmentIndex::Pair(0, 1), 0).unwrap();
        assert!(assignment_filter(&bx, &b, &f, &[]).unwrap().is_empty());
    }

    #[test]
    fn filter_partitions_the_box() {
        let bx = small_box();
        let f: ExponentMap =
            bx.cells().iter().flatten().enumerate().map(|(i, &p)| (p, 1 + (i % 2) as u8)).chain([(103, 2)]).collect();
        let aux = [103];
        let mut attained: Vec<Assignment> = Vec::new();
        for x in bx.points() {
            let a = build_assignment(&x, &f, &aux, F3).unwrap();
            if !attained.contains(&a) {
                attained.push(a);
            }
        }
        let mut covered: Vec<Vec<u64>> = Vec::new();
        for a in &attained {
            let cell = assignment_filter(&bx, a, &f, &aux).unwrap();
            assert!(!cell.is_empty());
            covered.extend(cell);
        }
        covered.sort();
        let mut all: Vec<Vec<u64>> = bx.points().collect();
        all.sort();
        assert_eq!(covered, all);
    }

    #[test]
    fn generic_window_shape() {
        assert!(generic_window(2).is_empty());
        assert_eq!(generic_window(3), vec![0]);
        assert_eq!(generic_window(12), vec![2, 3]);
        assert_eq!(generic_window(4), vec![0]);
    }

    #[test]
    fn genericity_first_clause_and_empty_window() {
        let zero = Assignment::from_matrix(&FlMatrix::zeros(F3, 2, 2)).unwrap();
        // n_2 = 1 here.
        assert!(!is_generic(&zero, 0).unwrap());
        // Empty window: every deviation is |0 - 0| = 0.
        assert!(is_generic(&zero, 1).unwrap());
        // A one-point window can never be balanced.
        let zero3 = Assignment::from_matrix(&FlMatrix::zeros(F3, 3, 3)).unwrap();
        assert!(!is_generic(&zero3, 2).unwrap());
        let mut rng = seeded_rng(3);
        let a = Assignment::random(2, F3, &mut rng);
        assert!(is_generic(&a, 5).unwrap());
    }
}
