//! Small finite fields.
//!
//! Two kinds are supported: prime fields `GF(p)` with `p < 2^16`, and the
//! binary field `GF(2^8)` reduced by the AES polynomial
//! `x^8 + x^4 + x^3 + x + 1`. Every byte-oriented scheme in this crate uses
//! `GF(2^8)` so that payload bytes map one to one onto field elements. Prime
//! fields exist mostly so that tests can work with hand-checkable numbers.
//!
//! Elements are plain `u16` values in `[0, order)`. The arithmetic lives on
//! [`FieldSpec`] so one value describes both the domain and the operations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A field element. Always `< FieldSpec::order()`.
pub type Elem = u16;

/// Reduction polynomial for `GF(2^8)` (the low 8 bits of `0x11b`).
pub const GF256_POLY: u16 = 0x11b;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("{0} is not a prime below 2^16")]
    NotPrime(u32),
    #[error("binary fields must have width 8, got {0}")]
    UnsupportedWidth(u8),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("unknown field tag {0}")]
    UnknownTag(u8),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldSpec {
    Prime(u16),
    /// `GF(2^8)`; the width is fixed.
    #[default]
    Binary8,
}

fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

impl FieldSpec {
    pub fn prime(p: u32) -> Result<Self, FieldError> {
        if p >= 1 << 16 || !is_prime(p) {
            return Err(FieldError::NotPrime(p));
        }
        Ok(FieldSpec::Prime(p as u16))
    }

    pub fn binary(width: u8) -> Result<Self, FieldError> {
        if width != 8 {
            return Err(FieldError::UnsupportedWidth(width));
        }
        Ok(FieldSpec::Binary8)
    }

    /// Number of elements in the field.
    pub fn order(&self) -> u32 {
        match *self {
            FieldSpec::Prime(p) => p as u32,
            FieldSpec::Binary8 => 256,
        }
    }

    pub fn contains(&self, a: u32) -> bool {
        a < self.order()
    }

    /// Bytes needed to store one element in a serialized payload.
    pub fn elem_width(&self) -> usize {
        if self.order() <= 256 {
            1
        } else {
            2
        }
    }

    /// Wire tag and parameter: `(0, 8)` for `GF(2^8)`, `(1, p)` for `GF(p)`.
    pub fn tag(&self) -> (u8, u16) {
        match *self {
            FieldSpec::Binary8 => (0, 8),
            FieldSpec::Prime(p) => (1, p),
        }
    }

    pub fn from_tag(tag: u8, param: u16) -> Result<Self, FieldError> {
        match tag {
            0 => FieldSpec::binary(param.min(255) as u8),
            1 => FieldSpec::prime(param as u32),
            t => Err(FieldError::UnknownTag(t)),
        }
    }

    #[inline]
    pub fn add(&self, a: Elem, b: Elem) -> Elem {
        debug_assert!(self.contains(a as u32) && self.contains(b as u32));
        match *self {
            FieldSpec::Binary8 => a ^ b,
            FieldSpec::Prime(p) => ((a as u32 + b as u32) % p as u32) as Elem,
        }
    }

    #[inline]
    pub fn neg(&self, a: Elem) -> Elem {
        match *self {
            FieldSpec::Binary8 => a,
            FieldSpec::Prime(p) => {
                if a == 0 {
                    0
                } else {
                    p - a
                }
            }
        }
    }

    #[inline]
    pub fn sub(&self, a: Elem, b: Elem) -> Elem {
        self.add(a, self.neg(b))
    }

    #[inline]
    pub fn mul(&self, a: Elem, b: Elem) -> Elem {
        debug_assert!(self.contains(a as u32) && self.contains(b as u32));
        match *self {
            FieldSpec::Binary8 => gf256_mul(a as u8, b as u8) as Elem,
            FieldSpec::Prime(p) => ((a as u32 * b as u32) % p as u32) as Elem,
        }
    }

    pub fn pow(&self, a: Elem, mut e: u32) -> Elem {
        let mut base = a;
        let mut acc: Elem = 1;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse, computed as `a^(order - 2)`.
    pub fn inv(&self, a: Elem) -> Result<Elem, FieldError> {
        if a == 0 {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.pow(a, self.order() - 2))
    }

    pub fn div(&self, a: Elem, b: Elem) -> Result<Elem, FieldError> {
        Ok(self.mul(a, self.inv(b)?))
    }

    /// Reduce an arbitrary integer into the field.
    pub fn reduce(&self, v: u64) -> Elem {
        (v % self.order() as u64) as Elem
    }

    /// Horner evaluation of `coeffs[0] + coeffs[1] x + ...`.
    pub fn eval_poly(&self, coeffs: &[Elem], x: Elem) -> Elem {
        coeffs
            .iter()
            .rev()
            .fold(0, |acc, &c| self.add(self.mul(acc, x), c))
    }
}

/// Carryless multiply followed by reduction modulo [`GF256_POLY`].
fn gf256_mul(a: u8, b: u8) -> u8 {
    let mut a = a as u16;
    let mut b = b;
    let mut product: u16 = 0;
    while b != 0 {
        if b & 1 == 1 {
            product ^= a;
        }
        a <<= 1;
        if a & 0x100 != 0 {
            a ^= GF256_POLY;
        }
        b >>= 1;
    }
    product as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gf13() -> FieldSpec {
        FieldSpec::prime(13).unwrap()
    }

    #[test]
    fn prime_examples() {
        let f = gf13();
        assert_eq!(f.add(8, 11), 6);
        assert_eq!(f.add(9, 0), 9);
        assert_eq!(f.mul(3, 5), 2);
        assert_eq!(f.inv(2), Ok(7));
        assert_eq!(f.inv(0), Err(FieldError::ZeroInverse));
        assert_eq!(f.sub(2, 5), 10);
    }

    #[test]
    fn construction_checks() {
        assert!(FieldSpec::prime(12).is_err());
        assert!(FieldSpec::prime(1).is_err());
        assert!(FieldSpec::prime(65537).is_err());
        assert!(FieldSpec::prime(65521).is_ok());
        assert!(FieldSpec::binary(16).is_err());
        assert_eq!(FieldSpec::binary(8), Ok(FieldSpec::Binary8));
    }

    #[test]
    fn binary_self_add_is_zero() {
        let f = FieldSpec::Binary8;
        for a in 0..256u16 {
            assert_eq!(f.add(a, a), 0);
            assert_eq!(f.mul(a, 1), a);
        }
    }

    // Reference: shift-and-add with the full polynomial, written independently
    // of `gf256_mul`.
    fn slow_gf256_mul(a: u8, b: u8) -> u8 {
        let mut wide: u32 = 0;
        for i in 0..8 {
            if (b >> i) & 1 == 1 {
                wide ^= (a as u32) << i;
            }
        }
        for bit in (8..16).rev() {
            if (wide >> bit) & 1 == 1 {
                wide ^= 0x11b << (bit - 8);
            }
        }
        wide as u8
    }

    #[test]
    fn binary_mul_matches_reference() {
        let f = FieldSpec::Binary8;
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!(f.mul(a as u16, b as u16), slow_gf256_mul(a, b) as u16);
            }
        }
        // FIPS-197 worked example.
        assert_eq!(f.mul(0x57, 0x83), 0xc1);
    }

    #[test]
    fn binary_inverse_exhaustive() {
        let f = FieldSpec::Binary8;
        let mut seen = [false; 256];
        for a in 1..256u16 {
            let ia = f.inv(a).unwrap();
            assert_eq!(f.mul(a, ia), 1);
            assert_eq!(f.inv(ia).unwrap(), a);
            assert!(!seen[ia as usize]);
            seen[ia as usize] = true;
        }
        assert!(f.inv(0).is_err());
    }

    #[test]
    fn small_prime_axioms_exhaustive() {
        for p in [2u32, 3, 5, 7, 11, 13] {
            let f = FieldSpec::prime(p).unwrap();
            let n = p as u16;
            for a in 0..n {
                for b in 0..n {
                    assert_eq!(f.add(a, b), f.add(b, a));
                    assert_eq!(f.mul(a, b), f.mul(b, a));
                    for c in 0..n {
                        assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
                        assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
                        assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
                    }
                }
            }
        }
    }

    #[test]
    fn eval_poly_matches_direct_sum() {
        let f = gf13();
        // 5 + 3x
        assert_eq!(f.eval_poly(&[5, 3], 1), 8);
        assert_eq!(f.eval_poly(&[5, 3], 2), 11);
        assert_eq!(f.eval_poly(&[5, 3], 3), 1);
    }

    #[test]
    fn tag_round_trip() {
        for f in [FieldSpec::Binary8, gf13(), FieldSpec::prime(257).unwrap()] {
            let (t, p) = f.tag();
            assert_eq!(FieldSpec::from_tag(t, p), Ok(f));
        }
        assert_eq!(gf13().elem_width(), 1);
        assert_eq!(FieldSpec::prime(257).unwrap().elem_width(), 2);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn binary_field_axioms(a in 0u16..256, b in 0u16..256, c in 0u16..256) {
                let f = FieldSpec::Binary8;
                prop_assert_eq!(f.mul(a, b), f.mul(b, a));
                prop_assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
                prop_assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
                prop_assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
            }
        }
    }
}
