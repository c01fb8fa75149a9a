//! Additively homomorphic public-key encryption (Paillier, `g = N + 1`).
//!
//! Ciphertexts live modulo `N^2`. Multiplying two ciphertexts adds the
//! plaintexts modulo `N`, and raising a ciphertext to a plain integer scales
//! its plaintext. That covers addition, subtraction and multiplication by a
//! known constant. Division of encrypted values is not available and reports
//! [`HeError::DivisionUnsupported`].
//!
//! Key sizes below [`SECURE_MODULUS_BITS`] are accepted so that tests run
//! quickly; such keys report [`PublicKey::is_production_secure`] as `false`.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CIPHERTEXT_MAGIC: &[u8; 4] = b"CHE1";
pub const SECURE_MODULUS_BITS: u64 = 2048;
const MIN_MODULUS_BITS: u64 = 16;

pub type Fingerprint = [u8; 8];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeError {
    #[error("modulus must have at least {MIN_MODULUS_BITS} bits, got {0}")]
    KeyTooSmall(u64),
    #[error("ciphertexts were produced under different keys")]
    KeyMismatch,
    #[error("plaintext is outside [0, N)")]
    PlaintextOutOfRange,
    #[error("value does not fit a signed 64-bit integer")]
    Overflow,
    #[error("division of encrypted values is not supported")]
    DivisionUnsupported,
    #[error("malformed ciphertext: {0}")]
    Malformed(&'static str),
}

fn random_below<R: RngCore + ?Sized>(bound: &BigUint, rng: &mut R) -> BigUint {
    let bits = bound.bits();
    let bytes = bits.div_ceil(8) as usize;
    let excess = (bytes as u64 * 8 - bits) as u32;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xffu8 >> excess;
        let v = BigUint::from_bytes_be(&buf);
        if &v < bound {
            return v;
        }
    }
}

fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for p in [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let three = BigUint::from(3u32);
    'witness: for _ in 0..40 {
        // a in [2, n - 2]
        let a = random_below(&(n - &three), rng) + &two;
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime with exactly `bits` bits and the top two bits set.
fn random_prime<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        let mut c = BigUint::from_bytes_be(&buf);
        c >>= bytes as u64 * 8 - bits;
        c.set_bit(bits - 1, true);
        c.set_bit(bits - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c, rng) {
            return c;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    fingerprint: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateKey {
    lambda: BigUint,
    mu: BigUint,
    p: BigUint,
    q: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

/// Primes in hex, enough to rebuild a key pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredKeyPair {
    pub p: String,
    pub q: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    fingerprint: Fingerprint,
}

impl Ciphertext {
    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    /// `CHE1 | fingerprint (8 bytes) | value, big-endian magnitude`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CIPHERTEXT_MAGIC.to_vec();
        out.extend_from_slice(&self.fingerprint);
        out.extend_from_slice(&self.value.to_bytes_be());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeError> {
        if bytes.len() < 13 {
            return Err(HeError::Malformed("too short"));
        }
        if &bytes[..4] != CIPHERTEXT_MAGIC {
            return Err(HeError::Malformed("bad magic"));
        }
        let mut fingerprint = [0u8; 8];
        fingerprint.copy_from_slice(&bytes[4..12]);
        Ok(Ciphertext {
            value: BigUint::from_bytes_be(&bytes[12..]),
            fingerprint,
        })
    }
}

fn fingerprint_of(n: &BigUint) -> Fingerprint {
    let digest = Sha256::new()
        .chain_update(b"CHE1-key")
        .chain_update(n.to_bytes_be())
        .finalize();
    let mut fp = [0u8; 8];
    fp.copy_from_slice(&digest[..8]);
    fp
}

impl KeyPair {
    pub fn from_primes(p: BigUint, q: BigUint) -> Result<Self, HeError> {
        let one = BigUint::one();
        let n = &p * &q;
        if n.bits() < MIN_MODULUS_BITS {
            return Err(HeError::KeyTooSmall(n.bits()));
        }
        let lambda = (&p - &one).lcm(&(&q - &one));
        let mu = lambda
            .modinv(&n)
            .ok_or(HeError::Malformed("lambda not invertible modulo N"))?;
        let public = PublicKey {
            n_squared: &n * &n,
            fingerprint: fingerprint_of(&n),
            n,
        };
        Ok(KeyPair {
            public,
            private: PrivateKey { lambda, mu, p, q },
        })
    }

    pub fn to_stored(&self) -> StoredKeyPair {
        StoredKeyPair {
            p: self.private.p.to_str_radix(16),
            q: self.private.q.to_str_radix(16),
        }
    }

    pub fn from_stored(s: &StoredKeyPair) -> Result<Self, HeError> {
        let parse = |h: &str| {
            BigUint::parse_bytes(h.as_bytes(), 16).ok_or(HeError::Malformed("bad key hex"))
        };
        KeyPair::from_primes(parse(&s.p)?, parse(&s.q)?)
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint, HeError> {
        let pk = &self.public;
        pk.check(c)?;
        let x = c.value.modpow(&self.private.lambda, &pk.n_squared);
        let l = (x - BigUint::one()) / &pk.n;
        Ok((l * &self.private.mu) % &pk.n)
    }

    pub fn decrypt_i64(&self, c: &Ciphertext) -> Result<i64, HeError> {
        self.public.decode_i64(&self.decrypt(c)?)
    }
}

/// Generate a key pair whose modulus has exactly `bits` bits.
pub fn keygen<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> Result<KeyPair, HeError> {
    if bits < MIN_MODULUS_BITS {
        return Err(HeError::KeyTooSmall(bits));
    }
    let p_bits = bits / 2;
    let q_bits = bits - p_bits;
    loop {
        let p = random_prime(p_bits, rng);
        let q = random_prime(q_bits, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let phi = (&p - 1u32) * (&q - 1u32);
        if !n.gcd(&phi).is_one() {
            continue;
        }
        return KeyPair::from_primes(p, q);
    }
}

impl PublicKey {
    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn is_production_secure(&self) -> bool {
        self.bits() >= SECURE_MODULUS_BITS
    }

    fn check(&self, c: &Ciphertext) -> Result<(), HeError> {
        if c.fingerprint != self.fingerprint {
            return Err(HeError::KeyMismatch);
        }
        Ok(())
    }

    pub fn encrypt<R: RngCore + ?Sized>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext, HeError> {
        if m >= &self.n {
            return Err(HeError::PlaintextOutOfRange);
        }
        let r = loop {
            let r = random_below(&self.n, rng);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                break r;
            }
        };
        // g^m = (1 + N)^m = 1 + mN (mod N^2)
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        let value = (gm * r.modpow(&self.n, &self.n_squared)) % &self.n_squared;
        Ok(Ciphertext {
            value,
            fingerprint: self.fingerprint,
        })
    }

    pub fn encrypt_i64<R: RngCore + ?Sized>(&self, v: i64, rng: &mut R) -> Result<Ciphertext, HeError> {
        self.encrypt(&self.encode_i64(v)?, rng)
    }

    /// Signed values map around the center `floor(N / 2)`: `[0, N/2]` holds
    /// non-negative values, `(N/2, N)` holds `v - N`.
    pub fn encode_i64(&self, v: i64) -> Result<BigUint, HeError> {
        let mag = BigUint::from(v.unsigned_abs());
        if mag > (&self.n >> 1) {
            return Err(HeError::PlaintextOutOfRange);
        }
        Ok(if v < 0 && !mag.is_zero() {
            &self.n - mag
        } else {
            mag
        })
    }

    pub fn decode_i64(&self, m: &BigUint) -> Result<i64, HeError> {
        let half = &self.n >> 1;
        if m <= &half {
            i64::try_from(m.clone()).map_err(|_| HeError::Overflow)
        } else {
            let mag = &self.n - m;
            let mag = u64::try_from(mag).map_err(|_| HeError::Overflow)?;
            0i64.checked_sub_unsigned(mag).ok_or(HeError::Overflow)
        }
    }

    /// Encrypts `m1 + m2 (mod N)`.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check(a)?;
        self.check(b)?;
        Ok(Ciphertext {
            value: (&a.value * &b.value) % &self.n_squared,
            fingerprint: self.fingerprint,
        })
    }

    /// Encrypts `m1 - m2 (mod N)`.
    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check(a)?;
        self.check(b)?;
        let inv = b
            .value
            .modinv(&self.n_squared)
            .ok_or(HeError::Malformed("ciphertext not invertible"))?;
        Ok(Ciphertext {
            value: (&a.value * inv) % &self.n_squared,
            fingerprint: self.fingerprint,
        })
    }

    /// Encrypts `s * m (mod N)`.
    pub fn scale(&self, c: &Ciphertext, s: &BigUint) -> Result<Ciphertext, HeError> {
        self.check(c)?;
        if s >= &self.n {
            return Err(HeError::PlaintextOutOfRange);
        }
        Ok(Ciphertext {
            value: c.value.modpow(s, &self.n_squared),
            fingerprint: self.fingerprint,
        })
    }

    pub fn scale_i64(&self, c: &Ciphertext, s: i64) -> Result<Ciphertext, HeError> {
        self.scale(c, &self.encode_i64(s)?)
    }

    /// Always fails: the scheme has no way to divide encrypted values.
    pub fn div(&self, _a: &Ciphertext, _b: &Ciphertext) -> Result<Ciphertext, HeError> {
        Err(HeError::DivisionUnsupported)
    }
}
