//! `(k, n)` threshold secret sharing.
//!
//! Each secret byte `D` becomes the constant term of an independent random
//! polynomial `q(x) = D + a_1 x + ... + a_{k-1} x^{k-1}` and share `i` holds
//! `q(i)` for every byte. Evaluation points are fixed at `x = 1..=n`. Any `k`
//! shares recover the secret by Lagrange interpolation at zero; fewer reveal
//! nothing about it.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Elem, FieldError, FieldSpec};

pub const SHARE_MAGIC: &[u8; 4] = b"CSH1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShamirError {
    #[error("invalid scheme: k={k}, n={n}, field order {order}")]
    InvalidScheme { k: u16, n: u16, order: u32 },
    #[error("secret must not be empty")]
    EmptySecret,
    #[error("secret byte {byte} at offset {offset} is outside the field")]
    SecretOutOfRange { offset: usize, byte: u8 },
    #[error("need {need} shares, got {have}")]
    InsufficientShares { have: usize, need: usize },
    #[error("shares belong to different schemes or objects")]
    MixedScheme,
    #[error("evaluation point {0} appears twice")]
    DuplicatePoint(Elem),
    #[error("malformed share encoding: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShareScheme {
    k: u16,
    n: u16,
    field: FieldSpec,
}

impl ShareScheme {
    /// Requires `1 <= k <= n < order`.
    pub fn new(k: u16, n: u16, field: FieldSpec) -> Result<Self, ShamirError> {
        if k == 0 || k > n || n as u32 >= field.order() {
            return Err(ShamirError::InvalidScheme {
                k,
                n,
                order: field.order(),
            });
        }
        Ok(ShareScheme { k, n, field })
    }

    pub fn k(&self) -> u16 {
        self.k
    }

    pub fn n(&self) -> u16 {
        self.n
    }

    pub fn field(&self) -> FieldSpec {
        self.field
    }

    /// How many shares may be lost or corrupted while the secret stays
    /// recoverable: `n - k`.
    pub fn corruption_tolerance(&self) -> u16 {
        self.n - self.k
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    pub x: Elem,
    pub payload: Vec<Elem>,
    pub scheme: ShareScheme,
    pub object_id: Vec<u8>,
}

impl Share {
    /// Bytes each share stores per secret byte. Reported, never configured.
    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    /// `CSH1 | k u16 | n u16 | field tag u8 | field param u16 | x u16 |
    /// id_len u32 | object_id | payload`, little-endian. Payload elements take
    /// one byte when the field order is at most 256 and two bytes otherwise.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.scheme.field.elem_width();
        let mut out =
            Vec::with_capacity(17 + self.object_id.len() + self.payload.len() * width);
        out.extend_from_slice(SHARE_MAGIC);
        out.extend_from_slice(&self.scheme.k.to_le_bytes());
        out.extend_from_slice(&self.scheme.n.to_le_bytes());
        let (tag, param) = self.scheme.field.tag();
        out.push(tag);
        out.extend_from_slice(&param.to_le_bytes());
        out.extend_from_slice(&self.x.to_le_bytes());
        out.extend_from_slice(&(self.object_id.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.object_id);
        for &e in &self.payload {
            if width == 1 {
                out.push(e as u8);
            } else {
                out.extend_from_slice(&e.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ShamirError> {
        let mut r = Reader(bytes);
        if r.take(4)? != SHARE_MAGIC {
            return Err(ShamirError::Malformed("bad magic"));
        }
        let k = r.u16()?;
        let n = r.u16()?;
        let tag = r.take(1)?[0];
        let param = r.u16()?;
        let field = FieldSpec::from_tag(tag, param)?;
        let scheme = ShareScheme::new(k, n, field)?;
        let x = r.u16()?;
        if x == 0 || x > n {
            return Err(ShamirError::Malformed("evaluation point out of range"));
        }
        let id_len = r.u32()? as usize;
        let object_id = r.take(id_len)?.to_vec();
        let rest = r.0;
        let width = field.elem_width();
        if rest.len() % width != 0 {
            return Err(ShamirError::Malformed("ragged payload"));
        }
        let payload: Vec<Elem> = if width == 1 {
            rest.iter().map(|&b| b as Elem).collect()
        } else {
            rest.chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect()
        };
        if payload.iter().any(|&e| !field.contains(e as u32)) {
            return Err(ShamirError::Malformed("payload element outside field"));
        }
        Ok(Share {
            x,
            payload,
            scheme,
            object_id,
        })
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ShamirError> {
        if self.0.len() < n {
            return Err(ShamirError::Malformed("truncated"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u16(&mut self) -> Result<u16, ShamirError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ShamirError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Split `secret` into `n` shares, drawing coefficients from `rng`.
pub fn split<R: RngCore + ?Sized>(
    secret: &[u8],
    scheme: ShareScheme,
    object_id: &[u8],
    rng: &mut R,
) -> Result<Vec<Share>, ShamirError> {
    let order = scheme.field.order();
    split_with(secret, scheme, object_id, || rng.gen_range(0..order) as Elem)
}

/// Like [`split`], but every non-constant coefficient comes from `draw`.
///
/// Coefficients are drawn byte by byte, `a_1` first. Values are reduced into
/// the field.
pub fn split_with(
    secret: &[u8],
    scheme: ShareScheme,
    object_id: &[u8],
    mut draw: impl FnMut() -> Elem,
) -> Result<Vec<Share>, ShamirError> {
    if secret.is_empty() {
        return Err(ShamirError::EmptySecret);
    }
    let f = scheme.field;
    if let Some((offset, &byte)) = secret
        .iter()
        .enumerate()
        .find(|(_, &b)| !f.contains(b as u32))
    {
        return Err(ShamirError::SecretOutOfRange { offset, byte });
    }

    let n = scheme.n as usize;
    let mut payloads = vec![Vec::with_capacity(secret.len()); n];
    let mut coeffs = vec![0 as Elem; scheme.k as usize];
    for &byte in secret {
        coeffs[0] = byte as Elem;
        for c in coeffs.iter_mut().skip(1) {
            *c = f.reduce(draw() as u64);
        }
        for (i, payload) in payloads.iter_mut().enumerate() {
            payload.push(f.eval_poly(&coeffs, (i + 1) as Elem));
        }
    }
    Ok(payloads
        .into_iter()
        .enumerate()
        .map(|(i, payload)| Share {
            x: (i + 1) as Elem,
            payload,
            scheme,
            object_id: object_id.to_vec(),
        })
        .collect())
}

/// Recover the secret from at least `k` shares of the same sharing.
///
/// Only the first `k` shares (in the given order) take part in the
/// interpolation; extra shares are checked for consistency of scheme and
/// object but not of content.
pub fn reconstruct(shares: &[Share]) -> Result<Vec<u8>, ShamirError> {
    let first = shares.first().ok_or(ShamirError::InsufficientShares {
        have: 0,
        need: 1,
    })?;
    let scheme = first.scheme;
    let len = first.payload.len();
    for s in shares {
        if s.scheme != scheme || s.object_id != first.object_id || s.payload.len() != len {
            return Err(ShamirError::MixedScheme);
        }
    }
    let mut xs: Vec<Elem> = shares.iter().map(|s| s.x).collect();
    xs.sort_unstable();
    if let Some(w) = xs.windows(2).find(|w| w[0] == w[1]) {
        return Err(ShamirError::DuplicatePoint(w[0]));
    }
    let k = scheme.k as usize;
    if shares.len() < k {
        return Err(ShamirError::InsufficientShares {
            have: shares.len(),
            need: k,
        });
    }

    let f = scheme.field;
    let used = &shares[..k];
    // Lagrange basis at zero: l_j(0) = prod_{m != j} x_m / (x_m - x_j).
    let mut basis = Vec::with_capacity(k);
    for (j, sj) in used.iter().enumerate() {
        let mut num: Elem = 1;
        let mut den: Elem = 1;
        for (m, sm) in used.iter().enumerate() {
            if m != j {
                num = f.mul(num, sm.x);
                den = f.mul(den, f.sub(sm.x, sj.x));
            }
        }
        basis.push(f.div(num, den)?);
    }

    let mut out = Vec::with_capacity(len);
    for pos in 0..len {
        let v = used
            .iter()
            .zip(&basis)
            .fold(0, |acc, (s, &l)| f.add(acc, f.mul(l, s.payload[pos])));
        if v > u8::MAX as Elem {
            // A consistent sharing of a byte secret never lands here.
            return Err(ShamirError::Malformed("reconstructed value exceeds a byte"));
        }
        out.push(v as u8);
    }
    Ok(out)
}
