//! Exact linear algebra over the prime field F_l.
//!
//! Scalars are stored as `u8` residues. Every product of two residues fits
//! in a `u32`, so all arithmetic stays on machine words.

use rand::Rng;
use serde::Serialize;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::primes::is_prime;
use crate::{Error, Result};

/// Largest supported field characteristic.
pub const MAX_MODULUS: u32 = 97;

/// An odd prime `l <= MAX_MODULUS`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Modulus(u32);

impl Modulus {
    pub fn new(l: u32) -> Result<Self> {
        if l < 3 || l > MAX_MODULUS || !is_prime(l as u64) {
            return Err(Error::InvalidModulus(l));
        }
        Ok(Modulus(l))
    }

    /// Compile-time checked constructor: `const L: Modulus = Modulus::of(3);`
    /// fails to build for an unsupported `l`.
    pub const fn of(l: u32) -> Self {
        assert!(l >= 3 && l <= MAX_MODULUS && l % 2 == 1, "unsupported modulus");
        let mut d = 3;
        while d * d <= l {
            assert!(l % d != 0, "modulus must be prime");
            d += 2;
        }
        Modulus(l)
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn reduce(self, v: i64) -> u8 {
        v.rem_euclid(self.0 as i64) as u8
    }

    #[inline]
    pub fn add(self, a: u8, b: u8) -> u8 {
        ((a as u32 + b as u32) % self.0) as u8
    }

    #[inline]
    pub fn sub(self, a: u8, b: u8) -> u8 {
        ((a as u32 + self.0 - b as u32) % self.0) as u8
    }

    #[inline]
    pub fn mul(self, a: u8, b: u8) -> u8 {
        ((a as u32 * b as u32) % self.0) as u8
    }

    #[inline]
    pub fn neg(self, a: u8) -> u8 {
        ((self.0 - a as u32) % self.0) as u8
    }

    /// Inverse of a nonzero residue (Fermat).
    pub fn inv(self, a: u8) -> u8 {
        assert!(a as u32 % self.0 != 0, "zero has no inverse");
        let mut acc = 1u32;
        let mut base = a as u32 % self.0;
        let mut e = self.0 - 2;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base % self.0;
            }
            base = base * base % self.0;
            e >>= 1;
        }
        acc as u8
    }
}

impl fmt::Display for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An element of F_l.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct FlScalar {
    value: u8,
    modulus: Modulus,
}

impl FlScalar {
    pub fn new(value: i64, modulus: Modulus) -> Self {
        FlScalar { value: modulus.reduce(value), modulus }
    }

    pub fn zero(modulus: Modulus) -> Self {
        FlScalar { value: 0, modulus }
    }

    pub fn value(self) -> u8 {
        self.value
    }

    pub fn modulus(self) -> Modulus {
        self.modulus
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    pub fn inv(self) -> Option<Self> {
        (!self.is_zero()).then(|| FlScalar { value: self.modulus.inv(self.value), modulus: self.modulus })
    }
}

impl Add for FlScalar {
    type Output = FlScalar;
    fn add(self, rhs: Self) -> Self {
        debug_assert_eq!(self.modulus, rhs.modulus);
        FlScalar { value: self.modulus.add(self.value, rhs.value), modulus: self.modulus }
    }
}

impl Sub for FlScalar {
    type Output = FlScalar;
    fn sub(self, rhs: Self) -> Self {
        debug_assert_eq!(self.modulus, rhs.modulus);
        FlScalar { value: self.modulus.sub(self.value, rhs.value), modulus: self.modulus }
    }
}

impl Mul for FlScalar {
    type Output = FlScalar;
    fn mul(self, rhs: Self) -> Self {
        debug_assert_eq!(self.modulus, rhs.modulus);
        FlScalar { value: self.modulus.mul(self.value, rhs.value), modulus: self.modulus }
    }
}

impl Neg for FlScalar {
    type Output = FlScalar;
    fn neg(self) -> Self {
        FlScalar { value: self.modulus.neg(self.value), modulus: self.modulus }
    }
}

impl fmt::Display for FlScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// A dense row-major matrix over F_l.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FlMatrix {
    rows: usize,
    cols: usize,
    modulus: Modulus,
    entries: Vec<u8>,
}

impl FlMatrix {
    pub fn new(modulus: Modulus, rows: usize, cols: usize, entries: Vec<u8>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!("{} entries for a {rows}x{cols} matrix", entries.len())));
        }
        if let Some(bad) = entries.iter().find(|&&e| e as u32 >= modulus.get()) {
            return Err(Error::Precondition(format!("entry {bad} not reduced mod {modulus}")));
        }
        Ok(FlMatrix { rows, cols, modulus, entries })
    }

    /// Builds a matrix from integer rows, reducing every entry mod l.
    pub fn from_rows<R: AsRef<[i64]>>(modulus: Modulus, rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Dimension("ragged rows".into()));
            }
            entries.extend(row.iter().map(|&v| modulus.reduce(v)));
        }
        Ok(FlMatrix { rows: rows.len(), cols, modulus, entries })
    }

    pub fn zeros(modulus: Modulus, rows: usize, cols: usize) -> Self {
        FlMatrix { rows, cols, modulus, entries: vec![0; rows * cols] }
    }

    pub fn identity(modulus: Modulus, n: usize) -> Self {
        let mut m = Self::zeros(modulus, n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1;
        }
        m
    }

    /// Uniformly random matrix.
    pub fn random<R: Rng + ?Sized>(modulus: Modulus, rows: usize, cols: usize, rng: &mut R) -> Self {
        let l = modulus.get() as u8;
        let entries = (0..rows * cols).map(|_| rng.gen_range(0..l)).collect();
        FlMatrix { rows, cols, modulus, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn modulus(&self) -> Modulus {
        self.modulus
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.cols + j]
    }

    pub fn scalar(&self, i: usize, j: usize) -> FlScalar {
        FlScalar::new(self.get(i, j) as i64, self.modulus)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: u8) {
        debug_assert!((v as u32) < self.modulus.get());
        self.entries[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.modulus, self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.entries[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn scale(&self, c: u8) -> Self {
        let m = self.modulus;
        FlMatrix { entries: self.entries.iter().map(|&e| m.mul(e, c)).collect(), ..self.clone() }
    }

    pub fn mul(&self, rhs: &FlMatrix) -> Result<FlMatrix> {
        if self.cols != rhs.rows || self.modulus != rhs.modulus {
            return Err(Error::Dimension(format!("{}x{} times {}x{}", self.rows, self.cols, rhs.rows, rhs.cols)));
        }
        let l = self.modulus.get();
        let mut out = Self::zeros(self.modulus, self.rows, rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = 0u32;
                for k in 0..self.cols {
                    acc += self.get(i, k) as u32 * rhs.get(k, j) as u32;
                }
                out.entries[i * rhs.cols + j] = (acc % l) as u8;
            }
        }
        Ok(out)
    }

    /// `M v` for a column vector `v` of length `cols`.
    pub fn mul_vec(&self, v: &[u8]) -> Vec<u8> {
        assert_eq!(v.len(), self.cols);
        let l = self.modulus.get();
        (0..self.rows)
            .map(|i| {
                let acc: u32 = self.row(i).iter().zip(v).map(|(&a, &b)| a as u32 * b as u32).sum();
                (acc % l) as u8
            })
            .collect()
    }

    /// `vᵀ M` for a vector `v` of length `rows`.
    pub fn vec_mul(&self, v: &[u8]) -> Vec<u8> {
        assert_eq!(v.len(), self.rows);
        let l = self.modulus.get();
        let mut acc = vec![0u32; self.cols];
        for (i, &c) in v.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for (a, &e) in acc.iter_mut().zip(self.row(i)) {
                *a += c as u32 * e as u32;
            }
        }
        acc.into_iter().map(|a| (a % l) as u8).collect()
    }

    /// Reduced row echelon form together with the pivot columns.
    pub fn rref(&self) -> (FlMatrix, Vec<usize>) {
        let mut m = self.clone();
        let pivots = rref_in_place(&mut m.entries, m.rows, m.cols, m.modulus);
        (m, pivots)
    }

    pub fn rank(&self) -> usize {
        let mut scratch = self.entries.clone();
        rref_in_place(&mut scratch, self.rows, self.cols, self.modulus).len()
    }

    /// `{v : M v = 0}`.
    pub fn right_kernel(&self) -> FlSubspace {
        let (r, pivots) = self.rref();
        let l = self.modulus;
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let mut basis = Vec::new();
        for free in (0..self.cols).filter(|&c| !is_pivot[c]) {
            let mut v = vec![0u8; self.cols];
            v[free] = 1;
            for (row, &p) in pivots.iter().enumerate() {
                v[p] = l.neg(r.get(row, free));
            }
            basis.push(v);
        }
        FlSubspace::span(l, self.cols, basis)
    }

    /// `{v : vᵀ M = 0}`.
    pub fn left_kernel(&self) -> FlSubspace {
        self.transpose().right_kernel()
    }
}

impl fmt::Display for FlMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|e| e.to_string()).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

fn rref_in_place(a: &mut [u8], rows: usize, cols: usize, m: Modulus) -> Vec<usize> {
    let l = m.get();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| a[i * cols + c] != 0) else {
            continue;
        };
        if p != r {
            for j in 0..cols {
                a.swap(p * cols + j, r * cols + j);
            }
        }
        let inv = m.inv(a[r * cols + c]) as u32;
        for j in c..cols {
            a[r * cols + j] = (a[r * cols + j] as u32 * inv % l) as u8;
        }
        for i in 0..rows {
            let f = a[i * cols + c] as u32;
            if i == r || f == 0 {
                continue;
            }
            let f = l - f;
            for j in c..cols {
                a[i * cols + j] = ((a[i * cols + j] as u32 + f * a[r * cols + j] as u32) % l) as u8;
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

/// A subspace of F_l^n, stored as its reduced echelon basis so that equal
/// subspaces compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FlSubspace {
    ambient_dim: usize,
    modulus: Modulus,
    basis: Vec<Vec<u8>>,
}

impl FlSubspace {
    pub fn span(modulus: Modulus, ambient_dim: usize, vectors: Vec<Vec<u8>>) -> Self {
        let n = vectors.len();
        let mut flat = Vec::with_capacity(n * ambient_dim);
        for v in &vectors {
            assert_eq!(v.len(), ambient_dim, "vector length must equal the ambient dimension");
            flat.extend(v.iter().map(|&x| (x as u32 % modulus.get()) as u8));
        }
        let rank = rref_in_place(&mut flat, n, ambient_dim, modulus).len();
        let basis = flat.chunks(ambient_dim.max(1)).take(rank).map(|c| c.to_vec()).collect();
        FlSubspace { ambient_dim, modulus, basis }
    }

    pub fn zero(modulus: Modulus, ambient_dim: usize) -> Self {
        FlSubspace { ambient_dim, modulus, basis: Vec::new() }
    }

    pub fn full(modulus: Modulus, ambient_dim: usize) -> Self {
        let basis = (0..ambient_dim)
            .map(|i| {
                let mut v = vec![0; ambient_dim];
                v[i] = 1;
                v
            })
            .collect();
        FlSubspace { ambient_dim, modulus, basis }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn modulus(&self) -> Modulus {
        self.modulus
    }

    pub fn basis(&self) -> &[Vec<u8>] {
        &self.basis
    }

    pub fn contains(&self, v: &[u8]) -> bool {
        let mut rows = self.basis.clone();
        rows.push(v.to_vec());
        FlSubspace::span(self.modulus, self.ambient_dim, rows).dim() == self.dim()
    }

    /// Every vector of the subspace, `l^dim` of them, in a fixed order.
    pub fn elements(&self) -> impl Iterator<Item = Vec<u8>> + '_ {
        let l = self.modulus.get() as usize;
        let count = l.pow(self.dim() as u32);
        (0..count).map(move |mut idx| {
            let mut v = vec![0u8; self.ambient_dim];
            for b in &self.basis {
                let c = (idx % l) as u8;
                idx /= l;
                if c != 0 {
                    for (x, &y) in v.iter_mut().zip(b) {
                        *x = self.modulus.add(*x, self.modulus.mul(c, y));
                    }
                }
            }
            v
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const F3: Modulus = Modulus::of(3);
    const F5: Modulus = Modulus::of(5);

    #[test]
    fn modulus_validation() {
        assert!(Modulus::new(3).is_ok());
        assert!(Modulus::new(97).is_ok());
        assert_eq!(Modulus::new(2), Err(Error::InvalidModulus(2)));
        assert_eq!(Modulus::new(9), Err(Error::InvalidModulus(9)));
        assert_eq!(Modulus::new(101), Err(Error::InvalidModulus(101)));
    }

    #[test]
    fn scalar_arithmetic() {
        let a = FlScalar::new(4, F5);
        let b = FlScalar::new(-3, F5);
        assert_eq!(b.value(), 2);
        assert_eq!((a + b).value(), 1);
        assert_eq!((a * b).value(), 3);
        assert_eq!((a - b).value(), 2);
        assert_eq!((-a).value(), 1);
        assert_eq!((a * a.inv().unwrap()).value(), 1);
        assert!(FlScalar::zero(F5).inv().is_none());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(FlMatrix::identity(F3, 3).rank(), 3);
        assert_eq!(FlMatrix::zeros(F5, 2, 4).rank(), 0);
        assert_eq!(FlMatrix::from_rows(F5, &[[1, 2], [2, 4]]).unwrap().rank(), 1);
    }

    #[test]
    fn kernel_examples() {
        let id = FlMatrix::identity(F3, 4);
        assert_eq!(id.left_kernel().dim(), 0);
        assert_eq!(id.right_kernel().dim(), 0);

        let m = FlMatrix::from_rows(F3, &[[1, 2], [0, 0]]).unwrap();
        assert_eq!(m.left_kernel(), FlSubspace::span(F3, 2, vec![vec![0, 1]]));
        assert_eq!(m.right_kernel(), FlSubspace::span(F3, 2, vec![vec![1, 1]]));

        let z = FlMatrix::zeros(F3, 2, 5);
        assert_eq!(z.left_kernel(), FlSubspace::full(F3, 2));
        assert_eq!(z.right_kernel(), FlSubspace::full(F3, 5));
    }

    #[test]
    fn echelon_form_is_canonical() {
        let a = FlSubspace::span(F5, 3, vec![vec![1, 2, 3], vec![0, 1, 1]]);
        let b = FlSubspace::span(F5, 3, vec![vec![1, 3, 4], vec![2, 4, 1], vec![1, 3, 4]]);
        assert_eq!(a, b);
        assert!(a.contains(&[2, 4, 1]));
        assert!(!a.contains(&[0, 0, 1]));
        assert_eq!(a.elements().count(), 25);
    }

    #[test]
    fn bad_shapes_are_rejected() {
        assert!(FlMatrix::new(F3, 2, 2, vec![0, 1, 2]).is_err());
        assert!(FlMatrix::new(F3, 1, 1, vec![3]).is_err());
        let a = FlMatrix::zeros(F3, 2, 3);
        assert!(a.mul(&a).is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = FlMatrix> {
        (prop::sample::select(vec![3u32, 5, 7]), 0usize..7, 0usize..7).prop_flat_map(|(l, r, c)| {
            prop::collection::vec(0..l as u8, r * c)
                .prop_map(move |e| FlMatrix::new(Modulus::new(l).unwrap(), r, c, e).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rank_nullity(m in matrix_strategy()) {
            let rank = m.rank();
            let right = m.right_kernel();
            let left = m.left_kernel();
            prop_assert_eq!(rank + right.dim(), m.cols());
            prop_assert_eq!(rank + left.dim(), m.rows());
            prop_assert_eq!(rank, m.transpose().rank());
            for b in right.basis() {
                prop_assert!(m.mul_vec(b).iter().all(|&x| x == 0));
            }
            for b in left.basis() {
                prop_assert!(m.vec_mul(b).iter().all(|&x| x == 0));
            }
        }
    }
}
