//! Normalized order-l Dirichlet characters of prime conductor.
//!
//! For a prime `p ≡ 1 (mod l)` the character χ_p is pinned down by the least
//! primitive root `g` mod `p`: χ_p(Frob q) = ζ_l^e where
//! `q^((p-1)/l) ≡ ω^e (mod p)` and `ω = g^((p-1)/l)`. The wild character χ_l
//! of conductor l² is normalized by the Fermat quotient `(q^(l-1) - 1)/l`,
//! under which `1 + l` has exponent `l - 1`.

use serde::Serialize;

use crate::fl::{FlScalar, Modulus};
use crate::primes::{distinct_prime_factors, is_prime, multiplicative_order, pow_mod};
use crate::{Error, Result};

/// The character χ_p for a prime `p ≡ 1 (mod l)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct CharData {
    pub p: u64,
    pub l: Modulus,
    /// Least primitive root modulo `p`.
    pub g: u64,
    /// `g^((p-1)/l) mod p`, a primitive l-th root of unity.
    pub omega: u64,
}

/// The character χ_l of conductor l².
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct WildCharData {
    pub l: Modulus,
}

/// χ(Frob q) = ζ_l^e, written additively as `e ∈ F_l`.
pub type CharExponent = FlScalar;

pub fn least_primitive_root(p: u64) -> u64 {
    if p == 2 {
        return 1;
    }
    let factors = distinct_prime_factors(p - 1);
    (2..p).find(|&g| factors.iter().all(|&q| pow_mod(g, (p - 1) / q, p) != 1)).expect("a prime has a primitive root")
}

pub fn canonical_character(p: u64, l: Modulus) -> Result<CharData> {
    let lu = l.get() as u64;
    if !is_prime(p) {
        return Err(Error::NotPrime(p));
    }
    if p % lu != 1 {
        return Err(Error::NotOneModL { p, l: l.get() });
    }
    let g = least_primitive_root(p);
    let omega = pow_mod(g, (p - 1) / lu, p);
    debug_assert!(omega != 1 && pow_mod(omega, lu, p) == 1);
    Ok(CharData { p, l, g, omega })
}

impl CharData {
    /// Exponent of χ_p(Frob q) for any `q` coprime to `p`.
    pub fn exponent(&self, q: u64) -> Result<CharExponent> {
        char_exponent(self, q)
    }
}

/// Unique `e ∈ [0, l)` with `q^((p-1)/l) ≡ ω^e (mod p)`.
pub fn char_exponent(chi: &CharData, q: u64) -> Result<CharExponent> {
    if q % chi.p == 0 {
        return Err(Error::NotCoprime { q, p: chi.p });
    }
    let l = chi.l.get() as u64;
    let target = pow_mod(q, (chi.p - 1) / l, chi.p);
    let mut power = 1u64;
    for e in 0..l {
        if power == target {
            return Ok(FlScalar::new(e as i64, chi.l));
        }
        power = crate::primes::mul_mod(power, chi.omega, chi.p);
    }
    unreachable!("q^((p-1)/l) is an l-th root of unity")
}

/// Fermat-quotient exponent `((q^(l-1) mod l²) - 1) / l (mod l)`.
pub fn wild_char_exponent(w: WildCharData, q: u64) -> Result<CharExponent> {
    let l = w.l.get() as u64;
    if q % l == 0 {
        return Err(Error::NotCoprime { q, p: l });
    }
    let r = pow_mod(q, l - 1, l * l);
    Ok(FlScalar::new(((r - 1) / l) as i64, w.l))
}

/// Whether `q` splits completely in the degree-l subfield of Q(ζ_p),
/// decided from the multiplicative order of `q` alone.
pub fn splitting_oracle(p: u64, q: u64, l: Modulus) -> Result<bool> {
    let lu = l.get() as u64;
    if p % lu != 1 || !is_prime(p) {
        return Err(Error::NotOneModL { p, l: l.get() });
    }
    if q % p == 0 {
        return Err(Error::NotCoprime { q, p });
    }
    Ok(((p - 1) / lu) % multiplicative_order(q % p, p) == 0)
}

/// Frobenius at `q` against χ_conductor, covering both the tame (`p ≡ 1`)
/// and the wild (`p = l`) conductor.
pub fn frobenius_exponent(conductor: u64, q: u64, l: Modulus) -> Result<CharExponent> {
    if conductor == l.get() as u64 {
        wild_char_exponent(WildCharData { l }, q)
    } else {
        char_exponent(&canonical_character(conductor, l)?, q)
    }
}
