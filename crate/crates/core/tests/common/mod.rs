//! Reference implementations written from the documented formulas, sharing
//! no code with the library.

#![allow(dead_code)]

use sha2::{Digest, Sha256};

/// GF(2^8) product by shift-and-add, reducing by x^8 + x^4 + x^3 + x + 1.
pub fn gf256_mul(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            p ^= a;
        }
        let carry = a & 0x80 != 0;
        a <<= 1;
        if carry {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    p
}

/// Inverse by search.
pub fn gf256_inv(a: u8) -> u8 {
    (1..=255u8).find(|&b| gf256_mul(a, b) == 1).expect("nonzero")
}

pub fn gf256_pow(a: u8, e: u32) -> u8 {
    (0..e).fold(1, |acc, _| gf256_mul(acc, a))
}

/// Lagrange interpolation at zero over GF(2^8).
pub fn gf256_interpolate_zero(points: &[(u8, u8)]) -> u8 {
    let mut acc = 0u8;
    for (i, &(xi, yi)) in points.iter().enumerate() {
        let mut num = 1u8;
        let mut den = 1u8;
        for (j, &(xj, _)) in points.iter().enumerate() {
            if i != j {
                num = gf256_mul(num, xj);
                den = gf256_mul(den, xi ^ xj);
            }
        }
        acc ^= gf256_mul(yi, gf256_mul(num, gf256_inv(den)));
    }
    acc
}

/// Polynomial value mod a prime by direct power sums.
pub fn poly_mod_p(coeffs: &[u64], x: u64, p: u64) -> u64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(i, &c)| c * x.pow(i as u32) % p)
        .sum::<u64>()
        % p
}

/// `D(file || chunk)` with add-one smoothing, by direct summation.
pub fn kl_direct(file: &[u8], chunk: &[u8]) -> f64 {
    let mut fc = [0f64; 256];
    let mut cc = [0f64; 256];
    for &b in file {
        fc[b as usize] += 1.0;
    }
    for &b in chunk {
        cc[b as usize] += 1.0;
    }
    let fd = file.len() as f64 + 256.0;
    let cd = chunk.len() as f64 + 256.0;
    (0..256)
        .map(|s| {
            let p = (fc[s] + 1.0) / fd;
            let q = (cc[s] + 1.0) / cd;
            p * (p / q).ln()
        })
        .sum()
}

/// Every strictly increasing `(c-1)`-subset of `1..nb`, as cut block indices.
pub fn all_cut_sets(nb: usize, c: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, nb: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for b in start..nb {
            if nb - b < left {
                break;
            }
            cur.push(b);
            rec(b + 1, nb, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(1, nb, c - 1, &mut Vec::new(), &mut out);
    out
}

pub fn factorial(n: u128) -> u128 {
    (1..=n).product()
}

/// Keyed SHA-256 counter stream, rebuilt from the format notes.
pub struct OracleStream {
    prefix: Vec<u8>,
    buf: Vec<u8>,
    counter: u64,
}

impl OracleStream {
    pub fn round(key: &[u8], round: u64) -> Self {
        let mut seed_input = b"CIT1-seed".to_vec();
        seed_input.extend((key.len() as u32).to_le_bytes());
        seed_input.extend(key);
        seed_input.extend(round.to_le_bytes());
        OracleStream {
            prefix: Sha256::digest(&seed_input).to_vec(),
            buf: Vec::new(),
            counter: 0,
        }
    }

    pub fn blinding(key: &[u8], column: u64) -> Self {
        let mut prefix = b"CIT1-blind".to_vec();
        prefix.extend((key.len() as u32).to_le_bytes());
        prefix.extend(key);
        prefix.extend(column.to_le_bytes());
        OracleStream {
            prefix,
            buf: Vec::new(),
            counter: 0,
        }
    }

    fn word(&mut self) -> u32 {
        if self.buf.len() < 4 {
            let mut input = self.prefix.clone();
            input.extend(self.counter.to_le_bytes());
            self.counter += 1;
            self.buf = Sha256::digest(&input).to_vec();
        }
        let w: Vec<u8> = self.buf.drain(..4).collect();
        u32::from_le_bytes([w[0], w[1], w[2], w[3]])
    }

    pub fn below(&mut self, bound: u32) -> u32 {
        let limit = (u32::MAX as u64 + 1) / bound as u64 * bound as u64;
        loop {
            let v = self.word() as u64;
            if v < limit {
                return (v % bound as u64) as u32;
            }
        }
    }
}

/// Row indices and coefficients of one challenge round over GF(2^8).
pub fn oracle_challenge(key: &[u8], round: u64, rows: u32, r: usize) -> (Vec<u32>, Vec<u8>) {
    let mut s = OracleStream::round(key, round);
    let mut perm: Vec<u32> = (0..rows).collect();
    for q in 0..r {
        let j = q + s.below(rows - q as u32) as usize;
        perm.swap(q, j);
    }
    let idx = perm[..r].to_vec();
    let coef = (0..r).map(|_| 1 + s.below(255) as u8).collect();
    (idx, coef)
}

pub fn oracle_token(column: &[u8], idx: &[u32], coef: &[u8]) -> u8 {
    idx.iter()
        .zip(coef)
        .fold(0, |acc, (&i, &c)| acc ^ gf256_mul(c, column[i as usize]))
}

/// Ordered k-subsets of `0..n`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            out.push((0..n).filter(|i| mask & (1 << i) != 0).collect());
        }
    }
    out
}
