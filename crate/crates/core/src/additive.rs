//! l-additive systems on finite product spaces, cube faces, the cube
//! differential `dF` and its image.
//!
//! Factors are finite sets of opaque labels. Internally every factor is
//! addressed by position, and a cube `x̄ ∈ X̄_S` is stored as a mixed-radix
//! index: factor `i` contributes `l` slots when `i ∈ S` and one slot
//! otherwise. Subsets `S ⊆ [d]` are bitmasks.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::fl::{FlMatrix, Modulus};
use crate::{Error, Result};

pub type Label = u32;
/// A subset of `[d]` as a bitmask.
pub type SubsetMask = u32;

/// Largest function space `l^{|Z|}` enumerated by [`unbalanced_image_fraction`].
pub const MAX_FUNCTION_SPACE: u64 = 10_000_000;
/// Largest cube space any single table is allowed to hold.
pub const MAX_CUBES: usize = 20_000_000;

pub fn popcount(mask: SubsetMask) -> u32 {
    mask.count_ones()
}

/// Masks of `[d]` ordered by size, then numerically.
pub fn masks_by_size(d: usize) -> Vec<SubsetMask> {
    let mut masks: Vec<SubsetMask> = (0..1u32 << d).collect();
    masks.sort_by_key(|&m| (popcount(m), m));
    masks
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProductSpace {
    factors: Vec<Vec<Label>>,
}

impl ProductSpace {
    pub fn new(factors: Vec<Vec<Label>>) -> Result<Self> {
        if factors.is_empty() || factors.len() > 16 {
            return Err(Error::Precondition("need between 1 and 16 factors".into()));
        }
        if factors.iter().any(Vec::is_empty) {
            return Err(Error::Precondition("factors must be nonempty".into()));
        }
        let mut all: Vec<Label> = factors.iter().flatten().copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Precondition("factors must be pairwise disjoint with distinct labels".into()));
        }
        Ok(ProductSpace { factors })
    }

    /// Factors of the given sizes with consecutive labels.
    pub fn with_sizes(sizes: &[usize]) -> Result<Self> {
        let mut next = 0;
        let factors = sizes
            .iter()
            .map(|&n| {
                let f = (next..next + n as Label).collect();
                next += n as Label;
                f
            })
            .collect();
        Self::new(factors)
    }

    pub fn d(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Vec<Label>] {
        &self.factors
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.factors.iter().map(Vec::len).collect()
    }

    /// `|X|`.
    pub fn size(&self) -> usize {
        self.factors.iter().map(Vec::len).product()
    }

    pub fn point_index(&self, positions: &[usize]) -> usize {
        positions.iter().zip(self.sizes()).rev().fold(0, |acc, (&p, n)| acc * n + p)
    }

    pub fn point(&self, mut index: usize) -> Vec<usize> {
        self.sizes()
            .into_iter()
            .map(|n| {
                let p = index % n;
                index /= n;
                p
            })
            .collect()
    }

    pub fn labels(&self, positions: &[usize]) -> Vec<Label> {
        positions.iter().zip(&self.factors).map(|(&p, f)| f[p]).collect()
    }

    /// `|X̄_S|`.
    pub fn cube_count(&self, mask: SubsetMask, l: Modulus) -> Option<usize> {
        self.sizes().iter().enumerate().try_fold(1usize, |acc, (i, &n)| {
            let k = if mask >> i & 1 == 1 { l.get() } else { 1 };
            acc.checked_mul(n.checked_pow(k)?)
        })
    }
}

/// An element of `X̄_S`: per factor, an l-tuple of positions when the factor
/// is in S and a single position otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Cube {
    pub mask: SubsetMask,
    pub coords: Vec<Vec<usize>>,
}

impl Cube {
    pub fn new(space: &ProductSpace, mask: SubsetMask, coords: Vec<Vec<usize>>, l: Modulus) -> Result<Self> {
        if coords.len() != space.d() || mask >> space.d() != 0 {
            return Err(Error::Dimension("cube does not match the product space".into()));
        }
        for (i, (c, n)) in coords.iter().zip(space.sizes()).enumerate() {
            let want = if mask >> i & 1 == 1 { l.get() as usize } else { 1 };
            if c.len() != want || c.iter().any(|&p| p >= n) {
                return Err(Error::Dimension(format!("bad coordinate {i} of cube")));
            }
        }
        Ok(Cube { mask, coords })
    }

    /// Whether some factor of S carries a constant tuple.
    pub fn is_degenerate(&self) -> bool {
        self.coords.iter().enumerate().any(|(i, c)| self.mask >> i & 1 == 1 && c.iter().all(|&p| p == c[0]))
    }
}

/// The multiset `x̄(T)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FaceMultiset {
    pub base: Cube,
    pub t: SubsetMask,
    pub elements: BTreeMap<Cube, u64>,
}

impl FaceMultiset {
    pub fn total(&self) -> u64 {
        self.elements.values().sum()
    }
}

pub fn cube_face(x: &Cube, t: SubsetMask) -> Result<FaceMultiset> {
    if t & !x.mask != 0 {
        return Err(Error::Precondition("T must be a subset of S".into()));
    }
    let u: Vec<usize> = (0..x.coords.len()).filter(|&i| (x.mask & !t) >> i & 1 == 1).collect();
    let l = u.first().map_or(1, |&i| x.coords[i].len());
    let mut elements = BTreeMap::new();
    for mut choice in 0..l.pow(u.len() as u32) {
        let mut coords = x.coords.clone();
        for &i in &u {
            coords[i] = vec![x.coords[i][choice % l]];
            choice /= l;
        }
        *elements.entry(Cube { mask: t, coords }).or_insert(0) += 1;
    }
    Ok(FaceMultiset { base: x.clone(), t, elements })
}

/// Mixed-radix addressing of `X̄_S`.
#[derive(Clone, Debug)]
struct Layout {
    sizes: Vec<usize>,
    l: usize,
    mask: SubsetMask,
    first_slot: Vec<usize>,
    radix: Vec<usize>,
    stride: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(sizes: &[usize], l: usize, mask: SubsetMask) -> Result<Self> {
        let mut first_slot = Vec::new();
        let mut radix = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            first_slot.push(radix.len());
            let k = if mask >> i & 1 == 1 { l } else { 1 };
            radix.extend(std::iter::repeat(n).take(k));
        }
        let mut stride = Vec::with_capacity(radix.len());
        let mut total = 1usize;
        for &r in &radix {
            stride.push(total);
            total = total
                .checked_mul(r)
                .filter(|&t| t <= MAX_CUBES)
                .ok_or_else(|| Error::SizeLimit(format!("more than {MAX_CUBES} cubes")))?;
        }
        Ok(Layout { sizes: sizes.to_vec(), l, mask, first_slot, radix, stride, total })
    }

    fn in_s(&self, i: usize) -> bool {
        self.mask >> i & 1 == 1
    }

    fn digits(&self, mut idx: usize, out: &mut Vec<usize>) {
        out.clear();
        for &r in &self.radix {
            out.push(idx % r);
            idx /= r;
        }
    }

    fn encode_digits(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.stride).map(|(d, s)| d * s).sum()
    }

    fn decode(&self, idx: usize) -> Cube {
        let mut digits = Vec::new();
        self.digits(idx, &mut digits);
        let coords = (0..self.sizes.len())
            .map(|i| {
                let k = if self.in_s(i) { self.l } else { 1 };
                digits[self.first_slot[i]..self.first_slot[i] + k].to_vec()
            })
            .collect();
        Cube { mask: self.mask, coords }
    }

    fn encode(&self, cube: &Cube) -> usize {
        let digits: Vec<usize> = cube.coords.iter().flatten().copied().collect();
        self.encode_digits(&digits)
    }

    /// Position of factor `i` after choosing `choice[i]` for factors in S.
    fn point_of(&self, digits: &[usize], choice: &[usize]) -> usize {
        let mut idx = 0;
        for i in (0..self.sizes.len()).rev() {
            let slot = self.first_slot[i] + if self.in_s(i) { choice[i] } else { 0 };
            idx = idx * self.sizes[i] + digits[slot];
        }
        idx
    }

    /// Index in the layout for `S - {s}` of the face keeping entry `j` at `s`.
    fn face_index(&self, digits: &[usize], s: usize, j: usize, face: &Layout) -> usize {
        let mut idx = 0;
        for i in (0..self.sizes.len()).rev() {
            let k = if face.in_s(i) { self.l } else { 1 };
            for t in (0..k).rev() {
                let slot = if i == s { self.first_slot[i] + j } else { self.first_slot[i] + t };
                idx = idx * self.sizes[i] + digits[slot];
            }
        }
        idx
    }

    /// Indices in `face` (the layout for some T ⊆ S) of the elements of
    /// `x̄(T)`, with multiplicity, for the cube with these digits.
    fn face_elements(&self, digits: &[usize], face: &Layout, out: &mut Vec<usize>) {
        out.clear();
        out.push(0);
        for i in 0..self.sizes.len() {
            let (slot, fs) = (self.first_slot[i], face.first_slot[i]);
            if face.in_s(i) {
                out[0] += (0..self.l).map(|t| digits[slot + t] * face.stride[fs + t]).sum::<usize>();
            } else if !self.in_s(i) {
                out[0] += digits[slot] * face.stride[fs];
            }
        }
        for i in (0..self.sizes.len()).filter(|&i| self.in_s(i) && !face.in_s(i)) {
            let (slot, st) = (self.first_slot[i], face.stride[face.first_slot[i]]);
            let len = out.len();
            for c in 1..self.l {
                for k in 0..len {
                    out.push(out[k] + digits[slot + c] * st);
                }
            }
            for o in &mut out[..len] {
                *o += digits[slot] * st;
            }
        }
    }

    /// Iterates over the l^{|S|} choice vectors (entries for factors outside
    /// S stay 0), calling `f` with each.
    fn for_each_choice(&self, mut f: impl FnMut(&[usize])) {
        let in_s: Vec<usize> = (0..self.sizes.len()).filter(|&i| self.in_s(i)).collect();
        let mut choice = vec![0usize; self.sizes.len()];
        loop {
            f(&choice);
            let mut k = 0;
            loop {
                if k == in_s.len() {
                    return;
                }
                let i = in_s[k];
                choice[i] += 1;
                if choice[i] < self.l {
                    break;
                }
                choice[i] = 0;
                k += 1;
            }
        }
    }
}

fn add_packed(a: u32, b: u32, l: u32, dim: u32) -> u32 {
    let (mut a, mut b) = (a, b);
    let mut out = 0;
    let mut place = 1;
    for _ in 0..dim {
        out += ((a % l + b % l) % l) * place;
        a /= l;
        b /= l;
        place *= l;
    }
    out
}

/// `Ȳ_S`, `Ȳ°_S`, `F_S` and `A_S = F_l^dim` for one S.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Level {
    pub mask: SubsetMask,
    pub dim: u32,
    pub in_y: Vec<bool>,
    pub in_y0: Vec<bool>,
    /// `F_S` packed base l; meaningful where `in_y` holds.
    pub values: Vec<u32>,
}

impl Level {
    pub fn density_y0(&self) -> f64 {
        self.in_y0.iter().filter(|&&b| b).count() as f64 / self.in_y0.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct AdditiveSystem {
    space: ProductSpace,
    l: Modulus,
    layouts: Vec<Layout>,
    levels: Vec<Level>,
}

impl AdditiveSystem {
    /// Builds `Ȳ_S` by the face-closure rule and evaluates `F_S` on it; `f`
    /// receives `S`, the cube and must return a vector in `F_l^{dims[S]}`.
    pub fn from_maps<F>(space: ProductSpace, l: Modulus, dims: &[u32], f: F) -> Result<Self>
    where
        F: Fn(SubsetMask, &Cube) -> Vec<u8> + Sync,
    {
        let d = space.d();
        if dims.len() != 1 << d {
            return Err(Error::Dimension(format!("need {} value dimensions, got {}", 1 << d, dims.len())));
        }
        let lu = l.get() as usize;
        let layouts: Vec<Layout> = (0..1u32 << d).map(|m| Layout::new(&space.sizes(), lu, m)).collect::<Result<_>>()?;
        let mut levels: Vec<Option<Level>> = vec![None; 1 << d];
        for mask in masks_by_size(d) {
            let layout = &layouts[mask as usize];
            let dim = dims[mask as usize];
            let faces: Vec<(usize, &Level, &Layout)> = (0..d)
                .filter(|&s| mask >> s & 1 == 1)
                .map(|s| {
                    let t = mask & !(1 << s);
                    (s, levels[t as usize].as_ref().expect("smaller levels built first"), &layouts[t as usize])
                })
                .collect();
            let rows: Vec<(bool, u32)> = (0..layout.total)
                .into_par_iter()
                .map_init(Vec::new, |digits, idx| {
                    layout.digits(idx, digits);
                    let in_y = faces
                        .iter()
                        .all(|(s, lvl, fl)| (0..lu).all(|j| lvl.in_y0[layout.face_index(digits, *s, j, fl)]));
                    if !in_y {
                        return (false, 0);
                    }
                    let v = f(mask, &layout.decode(idx));
                    (true, pack(&v, l))
                })
                .collect();
            let in_y: Vec<bool> = rows.iter().map(|r| r.0).collect();
            let values: Vec<u32> = rows.iter().map(|r| r.1).collect();
            let in_y0 = in_y.iter().zip(&values).map(|(&y, &v)| y && v == 0).collect();
            levels[mask as usize] = Some(Level { mask, dim, in_y, in_y0, values });
        }
        Ok(AdditiveSystem { space, l, layouts, levels: levels.into_iter().map(Option::unwrap).collect() })
    }

    /// Wraps arbitrary tables; nothing is checked until [`validate_additive_system`].
    pub fn from_levels(space: ProductSpace, l: Modulus, levels: Vec<Level>) -> Result<Self> {
        let d = space.d();
        let lu = l.get() as usize;
        let layouts: Vec<Layout> = (0..1u32 << d).map(|m| Layout::new(&space.sizes(), lu, m)).collect::<Result<_>>()?;
        if levels.len() != 1 << d
            || levels.iter().enumerate().any(|(m, lvl)| {
                lvl.mask as usize != m
                    || lvl.in_y.len() != layouts[m].total
                    || lvl.in_y0.len() != layouts[m].total
                    || lvl.values.len() != layouts[m].total
            })
        {
            return Err(Error::Dimension("level tables do not match the cube spaces".into()));
        }
        Ok(AdditiveSystem { space, l, layouts, levels })
    }

    pub fn space(&self) -> &ProductSpace {
        &self.space
    }

    pub fn modulus(&self) -> Modulus {
        self.l
    }

    pub fn level(&self, mask: SubsetMask) -> &Level {
        &self.levels[mask as usize]
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn cube(&self, mask: SubsetMask, idx: usize) -> Cube {
        self.layouts[mask as usize].decode(idx)
    }

    pub fn cube_index(&self, cube: &Cube) -> usize {
        self.layouts[cube.mask as usize].encode(cube)
    }

    /// `a = max_S |A_S|`.
    pub fn max_value_group(&self) -> f64 {
        let lf = self.l.get() as f64;
        self.levels.iter().map(|lvl| lf.powi(lvl.dim as i32)).fold(1.0, f64::max)
    }
}

fn pack(v: &[u8], l: Modulus) -> u32 {
    v.iter().rev().fold(0u32, |acc, &x| acc * l.get() + l.reduce(x as i64) as u32)
}

/// Parameters of [`random_differential_system`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RandomSystemParams {
    pub sizes: Vec<usize>,
    /// `dim A_S` for every mask.
    pub dims: Vec<u32>,
    /// Probability that `F_∅` and each `G_S` vanish at a point.
    pub zero_bias: f64,
}

/// `F_∅` random and `F_S = dG_S` for random `G_S: X → A_S`. A differential is
/// additive, so the result is a valid system.
pub fn random_differential_system<R: Rng + ?Sized>(
    params: &RandomSystemParams,
    l: Modulus,
    rng: &mut R,
) -> Result<AdditiveSystem> {
    let space = ProductSpace::with_sizes(&params.sizes)?;
    let n = space.size();
    let lu = l.get() as u8;
    let tables: Vec<Vec<Vec<u8>>> = params
        .dims
        .iter()
        .map(|&dim| {
            (0..n)
                .map(|_| {
                    if rng.gen_bool(params.zero_bias) {
                        vec![0; dim as usize]
                    } else {
                        (0..dim).map(|_| rng.gen_range(0..lu)).collect()
                    }
                })
                .collect()
        })
        .collect();
    let sizes = params.sizes.clone();
    let lusize = l.get() as usize;
    AdditiveSystem::from_maps(space, l, &params.dims, |mask, cube| {
        let g = &tables[mask as usize];
        let dim = params.dims[mask as usize] as usize;
        let mut acc = vec![0u8; dim];
        let layout = Layout::new(&sizes, lusize, mask).expect("layout already validated");
        let digits: Vec<usize> = cube.coords.iter().flatten().copied().collect();
        layout.for_each_choice(|choice| {
            let x = layout.point_of(&digits, choice);
            for (a, &v) in acc.iter_mut().zip(&g[x]) {
                *a = l.add(*a, v);
            }
        });
        acc
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    /// `Ȳ°_S` differs from the zero set of `F_S` at this cube.
    ZeroSet { mask: SubsetMask, cube: usize },
    /// `Ȳ°_S ⊄ Ȳ_S` at this cube.
    NotNested { mask: SubsetMask, cube: usize },
    /// Membership in `Ȳ_S` disagrees with the face-closure rule.
    Closure { mask: SubsetMask, cube: usize },
    /// `F(x̄_1) + … + F(x̄_l) ≠ F(x̄_{l+1})`.
    Additivity { mask: SubsetMask, s: usize, cubes: Vec<usize> },
    /// `x̄_1, …, x̄_l ∈ Ȳ_S` but `x̄_{l+1} ∉ Ȳ_S`.
    Implication { mask: SubsetMask, s: usize, cubes: Vec<usize> },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: u64,
    pub first: Option<Violation>,
    pub additivity_tuples_checked: u64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations == 0
    }

    fn record(&mut self, v: Violation) {
        self.violations += 1;
        if self.first.is_none() {
            self.first = Some(v);
        }
    }
}

/// Checks every clause of the definition from the raw tables, rebuilding
/// all faces `x̄(T)`, `T ⊊ S`, from scratch.
pub fn validate_additive_system(sys: &AdditiveSystem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let d = sys.space.d();
    let l = sys.l.get();
    let lu = l as usize;
    for mask in masks_by_size(d) {
        let layout = &sys.layouts[mask as usize];
        let lvl = &sys.levels[mask as usize];
        for idx in 0..layout.total {
            if lvl.in_y0[idx] && !lvl.in_y[idx] {
                report.record(Violation::NotNested { mask, cube: idx });
            }
            if lvl.in_y[idx] && lvl.in_y0[idx] != (lvl.values[idx] == 0) {
                report.record(Violation::ZeroSet { mask, cube: idx });
            }
        }
        if mask != 0 {
            let closure_bad: Vec<usize> = (0..layout.total)
                .into_par_iter()
                .map_init(
                    || (Vec::new(), Vec::new()),
                    |(digits, face), idx| {
                        layout.digits(idx, digits);
                        let expected = (0..mask).filter(|&t| t & !mask == 0).all(|t| {
                            let tl = &sys.layouts[t as usize];
                            layout.face_elements(digits, tl, face);
                            face.iter().all(|&y| sys.levels[t as usize].in_y0[y])
                        });
                        (expected != lvl.in_y[idx]).then_some(idx)
                    },
                )
                .flatten()
                .collect();
            for idx in closure_bad {
                report.record(Violation::Closure { mask, cube: idx });
            }
        }
        for s in (0..d).filter(|&s| mask >> s & 1 == 1) {
            let n = layout.sizes[s];
            let first = layout.first_slot[s];
            // Cubes whose s-tuple is all zeros represent the shared projection.
            let rest: Vec<usize> =
                (0..layout.total).filter(|&idx| (0..lu).all(|j| (idx / layout.stride[first + j]) % n == 0)).collect();
            let tuples = (n as u64).pow(2 * l - 1);
            let strides = &layout.stride[first..first + lu];
            let results: Vec<(u64, Vec<Violation>)> = rest
                .par_iter()
                .map(|&base| {
                    let mut found = Vec::new();
                    let mut checked = 0;
                    // Odometer over (p_1, …, p_{l-1}, q_1, …, q_l).
                    let mut pq = vec![0usize; 2 * lu - 1];
                    let mut cubes = vec![0usize; lu + 1];
                    for _ in 0..tuples {
                        let (p, q) = pq.split_at(lu - 1);
                        let p_off = base + p.iter().zip(strides).map(|(e, st)| e * st).sum::<usize>();
                        for (c, &qi) in cubes.iter_mut().zip(q) {
                            *c = p_off + qi * strides[lu - 1];
                        }
                        cubes[lu] = base + q.iter().zip(strides).map(|(e, st)| e * st).sum::<usize>();
                        for digit in pq.iter_mut() {
                            *digit += 1;
                            if *digit < n {
                                break;
                            }
                            *digit = 0;
                        }
                        if !cubes[..lu].iter().all(|&c| lvl.in_y[c]) {
                            continue;
                        }
                        if !lvl.in_y[cubes[lu]] {
                            found.push(Violation::Implication { mask, s, cubes: cubes.clone() });
                            continue;
                        }
                        checked += 1;
                        let lhs = cubes[..lu].iter().fold(0, |acc, &c| add_packed(acc, lvl.values[c], l, lvl.dim));
                        if lhs != lvl.values[cubes[lu]] {
                            found.push(Violation::Additivity { mask, s, cubes: cubes.clone() });
                        }
                    }
                    (checked, found)
                })
                .collect();
            for (checked, found) in results {
                report.additivity_tuples_checked += checked;
                for v in found {
                    report.record(v);
                }
            }
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityEntry {
    pub mask: SubsetMask,
    pub density: f64,
    /// `log(δ^{l^{|S|}} a^{-(l+1)^{|S|+1}})`, `-inf` when δ = 0.
    pub log_bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityReport {
    pub delta: f64,
    pub a: f64,
    pub entries: Vec<DensityEntry>,
}

impl DensityReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

/// Compares the density of every `Ȳ°_S` with `δ^{l^{|S|}} a^{-(l+1)^{|S|+1}}`.
/// `delta` and `a` default to the system's own values.
pub fn density_bound_check(sys: &AdditiveSystem, delta: Option<f64>, a: Option<f64>) -> Result<DensityReport> {
    let delta = delta.unwrap_or_else(|| sys.level(0).density_y0());
    let a = a.unwrap_or_else(|| sys.max_value_group());
    if !(0.0..=1.0).contains(&delta) || a < 1.0 {
        return Err(Error::Precondition("need 0 <= δ <= 1 and a >= 1".into()));
    }
    let lf = sys.l.get() as f64;
    let entries = masks_by_size(sys.space.d())
        .into_iter()
        .map(|mask| {
            let k = popcount(mask) as i32;
            let density = sys.level(mask).density_y0();
            let log_bound = if delta == 0.0 {
                f64::NEG_INFINITY
            } else {
                lf.powi(k) * delta.ln() - (lf + 1.0).powi(k + 1) * a.ln()
            };
            let pass = log_bound == f64::NEG_INFINITY || (density > 0.0 && density.ln() >= log_bound);
            DensityEntry { mask, density, log_bound, pass }
        })
        .collect();
    Ok(DensityReport { delta, a, entries })
}

/// `r <= n (2^{-d-1} δ)^{2 r^{d-1}}`.
pub fn pram_hypothesis(n: usize, d: usize, delta: f64, r: usize) -> bool {
    let exponent = 2.0 * (r as f64).powi(d as i32 - 1);
    (r as f64).ln() <= (n as f64).ln() + exponent * ((-(d as f64) - 1.0) * 2f64.ln() + delta.ln())
}

/// Subsets `Z_i` of size `r` with `Z_1 × … × Z_d ⊆ Y`, by exhaustive search
/// over the first factor and fiber intersection. `y` is indexed by
/// [`ProductSpace::point_index`].
pub fn find_product_subset(space: &ProductSpace, y: &[bool], r: usize) -> Option<Vec<Vec<usize>>> {
    assert_eq!(y.len(), space.size());
    let sizes = space.sizes();
    if r == 0 {
        return Some(vec![Vec::new(); sizes.len()]);
    }
    search_product(&sizes, y, r)
}

fn search_product(sizes: &[usize], y: &[bool], r: usize) -> Option<Vec<Vec<usize>>> {
    let n0 = sizes[0];
    let rest: usize = sizes[1..].iter().product();
    let in_y = |x0: usize, rest_idx: usize| y[x0 + n0 * rest_idx];
    if sizes.len() == 1 {
        let z: Vec<usize> = (0..n0).filter(|&x| in_y(x, 0)).take(r).collect();
        return (z.len() == r).then(|| vec![z]);
    }
    // Candidates in X_1 need a fiber of size at least ∏_{i>1} r.
    let need = r.pow(sizes.len() as u32 - 1);
    let candidates: Vec<usize> = (0..n0).filter(|&x| (0..rest).filter(|&j| in_y(x, j)).count() >= need).collect();
    let mut chosen = Vec::with_capacity(r);
    fn go(
        candidates: &[usize],
        start: usize,
        chosen: &mut Vec<usize>,
        r: usize,
        sizes: &[usize],
        rest: usize,
        in_y: &dyn Fn(usize, usize) -> bool,
    ) -> Option<Vec<Vec<usize>>> {
        if chosen.len() == r {
            let fiber: Vec<bool> = (0..rest).map(|j| chosen.iter().all(|&x| in_y(x, j))).collect();
            let mut sub = search_product(&sizes[1..], &fiber, r)?;
            sub.insert(0, chosen.clone());
            return Some(sub);
        }
        for k in start..candidates.len() {
            if candidates.len() - k < r - chosen.len() {
                break;
            }
            chosen.push(candidates[k]);
            if let Some(found) = go(candidates, k + 1, chosen, r, sizes, rest, in_y) {
                return Some(found);
            }
            chosen.pop();
        }
        None
    }
    go(&candidates, 0, &mut chosen, r, sizes, rest, &in_y)
}

/// Cubes of `X̄_S` with `Set(x̄(∅)) ⊆ Z`, each with the points of `x̄(∅)`
/// listed with multiplicity.
fn cube_domain(space: &ProductSpace, z: &[bool], mask: SubsetMask, l: Modulus) -> Result<Vec<(usize, Vec<usize>)>> {
    let layout = Layout::new(&space.sizes(), l.get() as usize, mask)?;
    Ok((0..layout.total)
        .into_par_iter()
        .filter_map(|idx| {
            let mut digits = Vec::new();
            layout.digits(idx, &mut digits);
            let mut points = Vec::new();
            layout.for_each_choice(|choice| points.push(layout.point_of(&digits, choice)));
            points.iter().all(|&x| z[x]).then_some((idx, points))
        })
        .collect())
}

/// `dF(x̄) = Σ_{x ∈ x̄(∅)} F(x)` on every cube with `x̄(∅) ⊆ Z`, keyed by cube
/// index. `f` is indexed by point of X; only its values on Z are read.
pub fn differential(
    space: &ProductSpace,
    z: &[bool],
    f: &[u8],
    mask: SubsetMask,
    l: Modulus,
) -> Result<BTreeMap<usize, u8>> {
    if z.len() != space.size() || f.len() != space.size() {
        return Err(Error::Dimension("Z and F must be indexed by the points of X".into()));
    }
    Ok(cube_domain(space, z, mask, l)?
        .into_iter()
        .map(|(idx, points)| (idx, points.iter().fold(0u8, |acc, &x| l.add(acc, f[x]))))
        .collect())
}

/// Whether every fiber of `F` has size in `[(1/l - ε)|Z|, (1/l + ε)|Z|]`.
pub fn is_balanced(values: &[u8], l: Modulus, eps: f64) -> Result<bool> {
    if values.is_empty() {
        return Err(Error::Precondition("balance needs a nonempty domain".into()));
    }
    let mut counts = vec![0usize; l.get() as usize];
    for &v in values {
        counts[l.reduce(v as i64) as usize] += 1;
    }
    Ok(balanced_counts(&counts, values.len(), l, eps))
}

fn balanced_counts(counts: &[usize], n: usize, l: Modulus, eps: f64) -> bool {
    let share = 1.0 / l.get() as f64;
    let (lo, hi) = ((share - eps) * n as f64, (share + eps) * n as f64);
    counts.iter().all(|&c| lo <= c as f64 && c as f64 <= hi)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GSpaceReport {
    pub mask: SubsetMask,
    pub rank: usize,
    pub formula: usize,
}

impl GSpaceReport {
    pub fn matches(&self) -> bool {
        self.rank == self.formula
    }
}

/// The d-matrix of `X̄_S → X`, one row per distinct multiset `x̄(∅)`.
fn differential_rows(space: &ProductSpace, z: &[bool], mask: SubsetMask, l: Modulus) -> Result<FlMatrix> {
    let n = space.size();
    let mut seen = HashSet::new();
    let mut rows: Vec<Vec<i64>> = Vec::new();
    for (_, mut points) in cube_domain(space, z, mask, l)? {
        points.sort_unstable();
        if seen.insert(points.clone()) {
            let mut row = vec![0i64; n];
            for x in points {
                row[x] += 1;
            }
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Ok(FlMatrix::zeros(l, 0, n));
    }
    FlMatrix::from_rows(l, &rows)
}

/// `dim im(d)` computed as a rank, next to `∏_{i∈S}(|X_i| - 1) ∏_{j∉S} |X_j|`.
pub fn g_space_dimension(space: &ProductSpace, mask: SubsetMask, l: Modulus) -> Result<GSpaceReport> {
    let z = vec![true; space.size()];
    let rank = differential_rows(space, &z, mask, l)?.rank();
    let formula = space.sizes().iter().enumerate().map(|(i, &n)| if mask >> i & 1 == 1 { n - 1 } else { n }).product();
    Ok(GSpaceReport { mask, rank, formula })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnbalancedImageReport {
    /// `|𝒢_S(ε, Z)|`.
    pub unbalanced_images: u64,
    /// `|𝒢_S(Z)| = l^{rank d}`.
    pub images: u64,
    pub fraction: f64,
    pub bound: f64,
    pub delta: f64,
    pub n: usize,
}

impl UnbalancedImageReport {
    pub fn within_bound(&self) -> bool {
        self.fraction <= self.bound
    }
}

/// `|𝒢_S(ε, Z)| / |𝒢_S(Z)|` by enumerating every `F: Z → F_l`, compared with
/// `2 l exp(|π_S X| (-δ ε² + log l · 2^{|S|+2} n^{-1/l^{|S|}}))`.
pub fn unbalanced_image_fraction(
    space: &ProductSpace,
    z: &[bool],
    mask: SubsetMask,
    eps: f64,
    l: Modulus,
) -> Result<UnbalancedImageReport> {
    if z.len() != space.size() {
        return Err(Error::Dimension("Z must be indexed by the points of X".into()));
    }
    let zpts: Vec<usize> = (0..z.len()).filter(|&x| z[x]).collect();
    if zpts.is_empty() {
        return Err(Error::Precondition("Z must be nonempty".into()));
    }
    let lu = l.get() as u64;
    let total = lu
        .checked_pow(zpts.len() as u32)
        .filter(|&t| t <= MAX_FUNCTION_SPACE)
        .ok_or_else(|| Error::SizeLimit(format!("l^{} functions", zpts.len())))?;
    // dF is determined by its values on a row basis of the d-matrix.
    let rows = differential_rows(space, z, mask, l)?;
    let (_, pivots) = rows.transpose().rref();
    let basis_rows: Vec<&[u8]> = pivots.iter().map(|&p| rows.row(p)).collect();
    let rank = basis_rows.len();
    // cols[k][b] = coefficient of F(z_k) in dF on basis row b.
    let cols: Vec<Vec<u8>> = zpts.iter().map(|&x| basis_rows.iter().map(|row| row[x]).collect()).collect();
    let keyspace = lu.pow(rank as u32);
    let words = keyspace.div_ceil(64) as usize;
    let unbalanced: Vec<AtomicU64> = (0..words).map(|_| AtomicU64::new(0)).collect();
    let m = zpts.len();
    let chunk_digits = m.min(4);
    let chunks = lu.pow(chunk_digits as u32);
    let inner = total / chunks;
    (0..chunks).into_par_iter().for_each(|c| {
        let mut f = vec![0u8; m];
        let mut rem = c;
        for slot in f.iter_mut().take(chunk_digits) {
            *slot = (rem % lu) as u8;
            rem /= lu;
        }
        let mut key = vec![0u8; rank];
        let mut counts = vec![0usize; lu as usize];
        for (k, &v) in f.iter().enumerate() {
            counts[v as usize] += 1;
            for (b, kv) in key.iter_mut().enumerate() {
                *kv = l.add(*kv, l.mul(v, cols[k][b]));
            }
        }
        for step in 0..inner {
            if !balanced_counts(&counts, m, l, eps) {
                let code = key.iter().rev().fold(0u64, |acc, &v| acc * lu + v as u64);
                unbalanced[(code / 64) as usize].fetch_or(1 << (code % 64), Ordering::Relaxed);
            }
            if step + 1 == inner {
                break;
            }
            // Odometer on the digits past the chunk prefix.
            let mut k = chunk_digits;
            loop {
                counts[f[k] as usize] -= 1;
                f[k] = (f[k] + 1) % lu as u8;
                counts[f[k] as usize] += 1;
                for (b, kv) in key.iter_mut().enumerate() {
                    *kv = l.add(*kv, cols[k][b]);
                }
                if f[k] != 0 {
                    break;
                }
                k += 1;
            }
        }
    });
    let unbalanced_images: u64 = unbalanced.iter().map(|w| w.load(Ordering::Relaxed).count_ones() as u64).sum();
    let ps: usize = space.sizes().iter().enumerate().filter(|&(i, _)| mask >> i & 1 == 1).map(|(_, &n)| n).product();
    let n = space.sizes().iter().enumerate().filter(|&(i, _)| mask >> i & 1 == 1).map(|(_, &n)| n).min().unwrap_or(1);
    let delta = zpts.len() as f64 / ps as f64;
    let k = popcount(mask) as i32;
    let lf = l.get() as f64;
    let exponent = ps as f64 * (-delta * eps * eps + lf.ln() * 2f64.powi(k + 2) * (n as f64).powf(-1.0 / lf.powi(k)));
    let bound = 2.0 * lf * exponent.exp();
    Ok(UnbalancedImageReport {
        unbalanced_images,
        images: keyspace,
        fraction: unbalanced_images as f64 / keyspace as f64,
        bound,
        delta,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    const F3: Modulus = Modulus::of(3);

    #[test]
    fn face_examples() {
        let space = ProductSpace::new(vec![vec![10, 11]]).unwrap();
        let x = Cube::new(&space, 1, vec![vec![0, 0, 1]], F3).unwrap();
        let f = cube_face(&x, 0).unwrap();
        let counts: Vec<u64> = f.elements.values().copied().collect();
        assert_eq!(counts, vec![2, 1]);
        assert_eq!(cube_face(&x, 1).unwrap().elements.len(), 1);
        let deg = Cube::new(&space, 1, vec![vec![1, 1, 1]], F3).unwrap();
        assert_eq!(cube_face(&deg, 0).unwrap().elements.values().copied().collect::<Vec<_>>(), vec![3]);
        assert!(cube_face(&Cube::new(&space, 0, vec![vec![1]], F3).unwrap(), 1).is_err());
    }

    #[test]
    fn face_totals() {
        let space = ProductSpace::with_sizes(&[3, 2, 2]).unwrap();
        let layout = Layout::new(&space.sizes(), 3, 0b101).unwrap();
        for idx in (0..layout.total).step_by(37) {
            let cube = layout.decode(idx);
            assert_eq!(layout.encode(&cube), idx);
            for t in [0, 0b001, 0b100, 0b101] {
                assert_eq!(cube_face(&cube, t).unwrap().total(), 3u64.pow(popcount(0b101 & !t)));
            }
        }
    }

    #[test]
    fn layout_faces_agree_with_cube_face() {
        let sizes = [2, 3];
        let full = Layout::new(&sizes, 3, 0b11).unwrap();
        let face = Layout::new(&sizes, 3, 0b10).unwrap();
        let mut digits = Vec::new();
        for idx in 0..full.total {
            full.digits(idx, &mut digits);
            let cube = full.decode(idx);
            let set: Vec<usize> = cube_face(&cube, 0b10).unwrap().elements.keys().map(|c| face.encode(c)).collect();
            for j in 0..3 {
                assert!(set.contains(&full.face_index(&digits, 0, j, &face)));
            }
        }
    }

    #[test]
    fn face_elements_match_cube_face_multisets() {
        let sizes = [2, 3, 2];
        for mask in 0..8u32 {
            let layout = Layout::new(&sizes, 3, mask).unwrap();
            let mut digits = Vec::new();
            let mut out = Vec::new();
            for t in (0..8u32).filter(|t| t & !mask == 0) {
                let tl = Layout::new(&sizes, 3, t).unwrap();
                for idx in (0..layout.total).step_by(7) {
                    layout.digits(idx, &mut digits);
                    layout.face_elements(&digits, &tl, &mut out);
                    out.sort_unstable();
                    let mut want: Vec<usize> = cube_face(&layout.decode(idx), t)
                        .unwrap()
                        .elements
                        .iter()
                        .flat_map(|(c, &m)| std::iter::repeat(tl.encode(c)).take(m as usize))
                        .collect();
                    want.sort_unstable();
                    assert_eq!(out, want, "S {mask:b} T {t:b} cube {idx}");
                }
            }
        }
    }

    #[test]
    fn zero_system_is_everything() {
        let space = ProductSpace::with_sizes(&[2, 3]).unwrap();
        let sys = AdditiveSystem::from_maps(space, F3, &[1, 1, 1, 1], |_, _| vec![0]).unwrap();
        assert!(sys.levels().iter().all(|lvl| lvl.in_y0.iter().all(|&b| b)));
        assert!(validate_additive_system(&sys).is_valid());
        let report = density_bound_check(&sys, None, None).unwrap();
        assert!(report.all_pass());
        assert!(report.entries.iter().all(|e| e.density == 1.0));
    }

    #[test]
    fn coordinate_sum_system_is_valid() {
        // F_{s} = Σ_j φ(pr_j) with F_∅ = 0 and everything else zero.
        let space = ProductSpace::with_sizes(&[4, 2]).unwrap();
        let phi = [0u8, 1, 2, 2];
        let sys = AdditiveSystem::from_maps(space, F3, &[1, 1, 1, 1], |mask, cube| {
            if mask == 0b01 {
                vec![cube.coords[0].iter().fold(0, |a, &p| F3.add(a, phi[p]))]
            } else {
                vec![0]
            }
        })
        .unwrap();
        let report = validate_additive_system(&sys);
        assert!(report.is_valid(), "{report:?}");
        assert!(report.additivity_tuples_checked > 0);
    }

    #[test]
    fn non_additive_system_is_caught() {
        let space = ProductSpace::with_sizes(&[3]).unwrap();
        let sys = AdditiveSystem::from_maps(space, F3, &[1, 1], |mask, cube| {
            if mask == 1 {
                // Not a sum over the tuple entries.
                vec![(cube.coords[0][0] * cube.coords[0][1] % 3) as u8]
            } else {
                vec![0]
            }
        })
        .unwrap();
        let report = validate_additive_system(&sys);
        assert!(!report.is_valid());
        assert!(matches!(report.first, Some(Violation::Additivity { .. })));
    }

    #[test]
    fn tampered_tables_are_caught() {
        let space = ProductSpace::with_sizes(&[2, 2]).unwrap();
        let sys = AdditiveSystem::from_maps(space.clone(), F3, &[1, 1, 1, 1], |_, _| vec![0]).unwrap();
        let mut levels = sys.levels().to_vec();
        levels[0b11].in_y[5] = false;
        levels[0b11].in_y0[5] = false;
        let bad = AdditiveSystem::from_levels(space, F3, levels).unwrap();
        let report = validate_additive_system(&bad);
        assert!(matches!(report.first, Some(Violation::Closure { mask: 0b11, cube: 5 })));
    }

    #[test]
    fn random_systems_are_valid_and_dense_enough() {
        let mut rng = seeded_rng(11);
        for trial in 0..20 {
            let d = 1 + trial % 3;
            let sizes: Vec<usize> = (0..d).map(|_| rng.gen_range(1..=if d == 3 { 3 } else { 5 })).collect();
            let params = RandomSystemParams {
                sizes,
                dims: (0..1 << d).map(|_| rng.gen_range(0..=2)).collect(),
                zero_bias: rng.gen_range(0.5..1.0),
            };
            let sys = random_differential_system(&params, F3, &mut rng).unwrap();
            let report = validate_additive_system(&sys);
            assert!(report.is_valid(), "{params:?} {report:?}");
            assert!(density_bound_check(&sys, None, None).unwrap().all_pass());
        }
    }

    #[test]
    fn density_bound_degenerate_delta() {
        let space = ProductSpace::with_sizes(&[2]).unwrap();
        let sys = AdditiveSystem::from_maps(space, F3, &[1, 1], |_, _| vec![1]).unwrap();
        let report = density_bound_check(&sys, None, None).unwrap();
        assert_eq!(report.delta, 0.0);
        assert!(report.all_pass());
    }

    #[test]
    fn product_subset_examples() {
        let space = ProductSpace::with_sizes(&[5, 4]).unwrap();
        let full = vec![true; 20];
        let z = find_product_subset(&space, &full, 3).unwrap();
        assert!(z.iter().all(|zi| zi.len() == 3));
        assert!(find_product_subset(&space, &vec![false; 20], 1).is_none());
        // A planted 2×2 block in an otherwise sparse set.
        let mut y = vec![false; 20];
        for (a, b) in [(1, 2), (1, 3), (4, 2), (4, 3), (0, 0)] {
            y[space.point_index(&[a, b])] = true;
        }
        assert_eq!(find_product_subset(&space, &y, 2).unwrap(), vec![vec![1, 4], vec![2, 3]]);
        assert!(find_product_subset(&space, &y, 3).is_none());
    }

    #[test]
    fn pram_hypothesis_thresholds() {
        assert!(!pram_hypothesis(12, 2, 0.9, 2));
        assert!(pram_hypothesis(40, 1, 0.9, 2));
        assert!(!pram_hypothesis(39, 1, 0.9, 2));
    }

    #[test]
    fn differential_examples() {
        let space = ProductSpace::with_sizes(&[3, 2]).unwrap();
        let z = vec![true; 6];
        let c = vec![2u8; 6];
        assert!(differential(&space, &z, &c, 0b11, F3).unwrap().values().all(|&v| v == 0));
        let mut rng = seeded_rng(5);
        let f: Vec<u8> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let g: Vec<u8> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let fg: Vec<u8> = f.iter().zip(&g).map(|(&a, &b)| F3.add(a, b)).collect();
        let (df, dg, dfg) = (
            differential(&space, &z, &f, 0b11, F3).unwrap(),
            differential(&space, &z, &g, 0b11, F3).unwrap(),
            differential(&space, &z, &fg, 0b11, F3).unwrap(),
        );
        for (k, v) in &dfg {
            assert_eq!(*v, F3.add(df[k], dg[k]));
        }
        let layout = Layout::new(&space.sizes(), 3, 0b11).unwrap();
        for (k, v) in &df {
            if layout.decode(*k).is_degenerate() {
                assert_eq!(*v, 0);
            }
        }
        // Restricting Z shrinks the domain to cubes inside it.
        let mut zs = z.clone();
        zs[0] = false;
        assert!(differential(&space, &zs, &f, 0b11, F3).unwrap().len() < df.len());
    }

    #[test]
    fn balance_examples() {
        assert!(is_balanced(&[0, 1, 2, 0, 1, 2], F3, 0.0).unwrap());
        assert!(!is_balanced(&[1, 1], F3, 0.5).unwrap());
        assert!(is_balanced(&[], F3, 0.1).is_err());
        let mut rng = seeded_rng(9);
        let f: Vec<u8> = (0..300).map(|_| rng.gen_range(0..3)).collect();
        let counts: Vec<usize> = (0..3u8).map(|a| f.iter().filter(|&&v| v == a).count()).collect();
        let direct = counts.iter().all(|&c| (c as f64 - 100.0).abs() <= 30.0);
        assert_eq!(is_balanced(&f, F3, 0.1).unwrap(), direct);
    }

    #[test]
    fn g_space_examples() {
        let space = ProductSpace::with_sizes(&[3, 3]).unwrap();
        assert_eq!(g_space_dimension(&space, 0b11, F3).unwrap().rank, 4);
        let thin = ProductSpace::with_sizes(&[1, 4]).unwrap();
        assert_eq!(g_space_dimension(&thin, 0b11, F3).unwrap().rank, 0);
        let r = g_space_dimension(&space, 0, F3).unwrap();
        assert_eq!((r.rank, r.formula), (9, 9));
        assert!(g_space_dimension(&space, 0b01, F3).unwrap().matches());
    }

    #[test]
    fn unbalanced_examples() {
        let space = ProductSpace::with_sizes(&[3, 3]).unwrap();
        let z = vec![true; 9];
        let all = unbalanced_image_fraction(&space, &z, 0b11, 1.0, F3).unwrap();
        assert_eq!(all.unbalanced_images, 0);
        assert_eq!(all.images, 81);
        let rep = unbalanced_image_fraction(&space, &z, 0b11, 0.2, F3).unwrap();
        assert!(rep.within_bound());
        assert!(rep.fraction > 0.0 && rep.fraction <= 1.0);

        let one = ProductSpace::with_sizes(&[1, 1]).unwrap();
        let r1 = unbalanced_image_fraction(&one, &[true], 0b11, 0.1, F3).unwrap();
        // Only the zero image, and every F on one point is unbalanced.
        assert_eq!((r1.images, r1.unbalanced_images), (1, 1));
    }

    /// Counts images directly by hashing full dF tables.
    #[test]
    fn unbalanced_matches_hashing_oracle() {
        let space = ProductSpace::with_sizes(&[2, 3]).unwrap();
        let mut z = vec![true; 6];
        z[4] = false;
        let eps = 0.15;
        let rep = unbalanced_image_fraction(&space, &z, 0b11, eps, F3).unwrap();
        let zpts: Vec<usize> = (0..6).filter(|&x| z[x]).collect();
        let mut images = HashSet::new();
        let mut bad = HashSet::new();
        for mut idx in 0..3u32.pow(zpts.len() as u32) {
            let mut f = vec![0u8; 6];
            let mut vals = Vec::new();
            for &x in &zpts {
                f[x] = (idx % 3) as u8;
                vals.push(f[x]);
                idx /= 3;
            }
            let df: Vec<(usize, u8)> = differential(&space, &z, &f, 0b11, F3).unwrap().into_iter().collect();
            if !is_balanced(&vals, F3, eps).unwrap() {
                bad.insert(df.clone());
            }
            images.insert(df);
        }
        assert_eq!(rep.images, images.len() as u64);
        assert_eq!(rep.unbalanced_images, bad.len() as u64);
    }
}
