//! Parity-augmented encoding and precomputed challenge tokens.
//!
//! A file is laid out as `m` data columns of `ℓ` field elements. `kp` parity
//! columns are appended, each a Vandermonde-weighted sum of the data columns,
//! and then blinded with a keyed pseudorandom stream so that a provider
//! holding a parity column learns nothing from it. Every column is meant to
//! live on a different server.
//!
//! Before upload the owner precomputes `t` tokens per column. Round `i`
//! samples `r` distinct rows and `r` nonzero coefficients; the token is the
//! coefficient-weighted sum of those rows. To audit, the owner sends only the
//! row indices and coefficients, the server answers with the same sum over
//! what it actually stores, and a mismatch pins the corruption on that
//! column. A single corrupted block is caught in a round with probability
//! exactly `r / ℓ`.
//!
//! # Keyed stream
//!
//! All pseudorandomness comes from SHA-256 in counter mode:
//!
//! * round seed: `seed_i = SHA256("CIT1-seed" || u32le(len key) || key || u64le(i))`
//! * challenge stream for round `i`: blocks `SHA256(seed_i || u64le(c))`,
//!   `c = 0, 1, ...`
//! * blinding stream for parity column `j`: blocks
//!   `SHA256("CIT1-blind" || u32le(len key) || key || u64le(j) || u64le(c))`
//!
//! A stream is consumed four bytes at a time as `u32le`. A value below
//! `bound` is drawn by rejection: values `>= bound * floor(2^32 / bound)` are
//! skipped, otherwise the result is `value % bound`. Row indices come from a
//! partial Fisher-Yates pass over `0..ℓ`: for `q = 0..r`, swap position `q`
//! with `q + draw(ℓ - q)` and emit the value now at `q`. Then `r`
//! coefficients follow as `1 + draw(order - 1)`. Blinding draws one element
//! `draw(order)` per row.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::{Elem, FieldError, FieldSpec};

pub const WIRE_MAGIC: &[u8; 4] = b"CIT1";
const MSG_CHALLENGE: u8 = 1;
const MSG_RESPONSE: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IntegrityError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("cannot sample {r} rows out of {rows}")]
    InvalidChallenge { r: usize, rows: usize },
    #[error("round {round} of column {column} was already issued")]
    RoundExhausted { round: usize, column: usize },
    #[error("round {round} / column {column} out of range")]
    OutOfRange { round: usize, column: usize },
    #[error("no challenge issued for round {round} / column {column}")]
    NoSuchChallenge { round: usize, column: usize },
    #[error("too many erasures to recover")]
    Unrecoverable,
    #[error("malformed message: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// SHA-256 counter-mode byte stream.
struct KeyedStream {
    prefix: Vec<u8>,
    counter: u64,
    block: [u8; 32],
    pos: usize,
}

impl KeyedStream {
    fn new(prefix: Vec<u8>) -> Self {
        KeyedStream {
            prefix,
            counter: 0,
            block: [0; 32],
            pos: 32,
        }
    }

    fn for_round(key: &[u8], round: usize) -> Self {
        KeyedStream::new(round_seed(key, round).to_vec())
    }

    fn for_blinding(key: &[u8], column: usize) -> Self {
        let mut prefix = b"CIT1-blind".to_vec();
        prefix.extend_from_slice(&(key.len() as u32).to_le_bytes());
        prefix.extend_from_slice(key);
        prefix.extend_from_slice(&(column as u64).to_le_bytes());
        KeyedStream::new(prefix)
    }

    fn next_u32(&mut self) -> u32 {
        if self.pos + 4 > 32 {
            let mut h = Sha256::new();
            h.update(&self.prefix);
            h.update(self.counter.to_le_bytes());
            self.block = h.finalize().into();
            self.counter += 1;
            self.pos = 0;
        }
        let b = &self.block[self.pos..self.pos + 4];
        self.pos += 4;
        u32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }

    fn below(&mut self, bound: u32) -> u32 {
        debug_assert!(bound > 0);
        let zone = (1u64 << 32) / bound as u64 * bound as u64;
        loop {
            let v = self.next_u32();
            if (v as u64) < zone {
                return v % bound;
            }
        }
    }
}

/// Seed of challenge round `round`.
pub fn round_seed(key: &[u8], round: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"CIT1-seed");
    h.update((key.len() as u32).to_le_bytes());
    h.update(key);
    h.update((round as u64).to_le_bytes());
    h.finalize().into()
}

fn blinding_column(field: FieldSpec, key: &[u8], column: usize, rows: usize) -> Vec<Elem> {
    let mut s = KeyedStream::for_blinding(key, column);
    (0..rows).map(|_| s.below(field.order()) as Elem).collect()
}

/// Row indices and coefficients of round `round` for columns of `rows` rows.
fn derive_challenge(
    field: FieldSpec,
    key: &[u8],
    round: usize,
    rows: usize,
    r: usize,
    unit: bool,
) -> (Vec<u32>, Vec<Elem>) {
    let mut s = KeyedStream::for_round(key, round);
    // positions moved by earlier swaps; everything else holds its own index
    let mut moved: HashMap<u32, u32> = HashMap::new();
    let mut indices = Vec::with_capacity(r);
    for q in 0..r as u32 {
        let j = q + s.below(rows as u32 - q);
        let at_j = moved.get(&j).copied().unwrap_or(j);
        let at_q = moved.get(&q).copied().unwrap_or(q);
        moved.insert(j, at_q);
        indices.push(at_j);
    }
    let coefficients = (0..r)
        .map(|_| {
            let c = 1 + s.below(field.order() - 1) as Elem;
            if unit {
                1
            } else {
                c
            }
        })
        .collect();
    (indices, coefficients)
}

/// `m x kp` generator with `g[i][j] = (i + 1)^j`.
pub fn vandermonde(field: FieldSpec, m: usize, kp: usize) -> Vec<Vec<Elem>> {
    (0..m)
        .map(|i| (0..kp).map(|j| field.pow((i + 1) as Elem, j as u32)).collect())
        .collect()
}

fn parity_of(field: FieldSpec, generator: &[Vec<Elem>], data: &[Vec<Elem>], j: usize) -> Vec<Elem> {
    let rows = data.first().map_or(0, |c| c.len());
    (0..rows)
        .map(|row| {
            data.iter()
                .zip(generator)
                .fold(0, |acc, (col, g)| field.add(acc, field.mul(g[j], col[row])))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedFile {
    pub field: FieldSpec,
    pub data_columns: Vec<Vec<Elem>>,
    /// Blinded; this is what the parity servers store.
    pub parity_columns: Vec<Vec<Elem>>,
    pub generator: Vec<Vec<Elem>>,
    /// Zero elements appended to fill the last data column.
    pub padding: usize,
}

impl EncodedFile {
    pub fn m(&self) -> usize {
        self.data_columns.len()
    }

    pub fn kp(&self) -> usize {
        self.parity_columns.len()
    }

    /// Rows per column (`ℓ`).
    pub fn rows(&self) -> usize {
        self.data_columns[0].len()
    }

    pub fn column_count(&self) -> usize {
        self.m() + self.kp()
    }

    /// Data columns followed by blinded parity columns.
    pub fn column(&self, j: usize) -> &[Elem] {
        if j < self.m() {
            &self.data_columns[j]
        } else {
            &self.parity_columns[j - self.m()]
        }
    }

    pub fn column_bytes(&self, j: usize) -> Vec<u8> {
        elements_to_bytes(self.field, self.column(j))
    }

    /// Parity columns with the blinding removed.
    pub fn unblinded_parity(&self, master_key: &[u8]) -> Vec<Vec<Elem>> {
        self.parity_columns
            .iter()
            .enumerate()
            .map(|(j, col)| {
                let blind = blinding_column(self.field, master_key, j, col.len());
                col.iter()
                    .zip(blind)
                    .map(|(&v, b)| self.field.sub(v, b))
                    .collect()
            })
            .collect()
    }

    /// Original bytes (data columns, padding stripped).
    pub fn decode(&self) -> Vec<u8> {
        let total = self.m() * self.rows() - self.padding;
        self.data_columns
            .iter()
            .flatten()
            .take(total)
            .map(|&e| e as u8)
            .collect()
    }

    /// Replace data column `i`, shifting each parity column by the
    /// generator-weighted delta. Tokens computed before the update go stale.
    pub fn update_data_column(&mut self, i: usize, column: Vec<Elem>) -> Result<(), IntegrityError> {
        if i >= self.m() || column.len() != self.rows() {
            return Err(IntegrityError::InvalidShape(format!(
                "column {i} with {} rows",
                column.len()
            )));
        }
        let f = self.field;
        if column.iter().any(|&e| !f.contains(e as u32)) {
            return Err(IntegrityError::InvalidShape("element outside field".into()));
        }
        for (j, parity) in self.parity_columns.iter_mut().enumerate() {
            let g = self.generator[i][j];
            for (row, p) in parity.iter_mut().enumerate() {
                let delta = f.sub(column[row], self.data_columns[i][row]);
                *p = f.add(*p, f.mul(g, delta));
            }
        }
        self.data_columns[i] = column;
        Ok(())
    }
}

pub fn elements_to_bytes(field: FieldSpec, elems: &[Elem]) -> Vec<u8> {
    if field.elem_width() == 1 {
        elems.iter().map(|&e| e as u8).collect()
    } else {
        elems.iter().flat_map(|e| e.to_le_bytes()).collect()
    }
}

pub fn elements_from_bytes(field: FieldSpec, bytes: &[u8]) -> Result<Vec<Elem>, IntegrityError> {
    let elems: Vec<Elem> = if field.elem_width() == 1 {
        bytes.iter().map(|&b| b as Elem).collect()
    } else {
        if !bytes.len().is_multiple_of(2) {
            return Err(IntegrityError::Malformed("odd byte count"));
        }
        bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    };
    if elems.iter().any(|&e| !field.contains(e as u32)) {
        return Err(IntegrityError::Malformed("element outside field"));
    }
    Ok(elems)
}

/// Lay `file` out as `m` columns and append `kp` blinded parity columns.
pub fn encode(
    file: &[u8],
    m: usize,
    kp: usize,
    field: FieldSpec,
    master_key: &[u8],
) -> Result<EncodedFile, IntegrityError> {
    if m == 0 {
        return Err(IntegrityError::InvalidShape("need at least one data column".into()));
    }
    let elems: Vec<Elem> = file.iter().map(|&b| b as Elem).collect();
    if let Some(b) = file.iter().find(|&&b| !field.contains(b as u32)) {
        return Err(IntegrityError::InvalidShape(format!(
            "byte {b} does not fit the field"
        )));
    }
    let rows = file.len().div_ceil(m).max(1);
    let padding = m * rows - elems.len();
    let mut padded = elems;
    padded.resize(m * rows, 0);
    let columns: Vec<Vec<Elem>> = padded.chunks(rows).map(|c| c.to_vec()).collect();
    let mut enc = encode_columns(columns, kp, field, master_key)?;
    enc.padding = padding;
    Ok(enc)
}

/// Encode columns that are already laid out (all the same length).
pub fn encode_columns(
    columns: Vec<Vec<Elem>>,
    kp: usize,
    field: FieldSpec,
    master_key: &[u8],
) -> Result<EncodedFile, IntegrityError> {
    let m = columns.len();
    if m == 0 {
        return Err(IntegrityError::InvalidShape("need at least one data column".into()));
    }
    if m + kp >= field.order() as usize {
        return Err(IntegrityError::InvalidShape(format!(
            "{m}+{kp} columns exceed the field's distinct points"
        )));
    }
    let rows = columns[0].len();
    if rows == 0 || columns.iter().any(|c| c.len() != rows) {
        return Err(IntegrityError::InvalidShape("ragged or empty columns".into()));
    }
    if columns.iter().flatten().any(|&e| !field.contains(e as u32)) {
        return Err(IntegrityError::InvalidShape("element outside field".into()));
    }
    let generator = vandermonde(field, m, kp);
    let parity_columns = (0..kp)
        .map(|j| {
            let raw = parity_of(field, &generator, &columns, j);
            let blind = blinding_column(field, master_key, j, rows);
            raw.into_iter()
                .zip(blind)
                .map(|(v, b)| field.add(v, b))
                .collect()
        })
        .collect();
    Ok(EncodedFile {
        field,
        data_columns: columns,
        parity_columns,
        generator,
        padding: 0,
    })
}

/// Rebuild all `m` data columns from any `m` surviving columns.
///
/// `present` lists all `m + kp` columns in storage order (data then blinded
/// parity), `None` for erased ones.
pub fn recover_data_columns(
    field: FieldSpec,
    m: usize,
    kp: usize,
    master_key: &[u8],
    present: &[Option<Vec<Elem>>],
) -> Result<Vec<Vec<Elem>>, IntegrityError> {
    if present.len() != m + kp {
        return Err(IntegrityError::InvalidShape("column count mismatch".into()));
    }
    let rows = present
        .iter()
        .flatten()
        .map(|c| c.len())
        .next()
        .ok_or(IntegrityError::Unrecoverable)?;
    let generator = vandermonde(field, m, kp);

    // Each surviving column is one linear equation in the m unknown data
    // symbols of a row. Pick the first m survivors.
    let mut eqs: Vec<(Vec<Elem>, Vec<Elem>)> = Vec::new();
    for (j, col) in present.iter().enumerate() {
        let Some(col) = col else { continue };
        if eqs.len() == m {
            break;
        }
        if j < m {
            let mut coeff = vec![0; m];
            coeff[j] = 1;
            eqs.push((coeff, col.clone()));
        } else {
            let p = j - m;
            let blind = blinding_column(field, master_key, p, rows);
            let rhs = col.iter().zip(blind).map(|(&v, b)| field.sub(v, b)).collect();
            eqs.push((generator.iter().map(|g| g[p]).collect(), rhs));
        }
    }
    if eqs.len() < m {
        return Err(IntegrityError::Unrecoverable);
    }

    // Gauss-Jordan on the m x m system, applying row operations to whole
    // right-hand-side columns at once.
    let (mut a, mut b): (Vec<Vec<Elem>>, Vec<Vec<Elem>>) = eqs.into_iter().unzip();
    for col in 0..m {
        let pivot = (col..m)
            .find(|&r| a[r][col] != 0)
            .ok_or(IntegrityError::Unrecoverable)?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = field.inv(a[col][col])?;
        for x in a[col].iter_mut() {
            *x = field.mul(*x, inv);
        }
        for x in b[col].iter_mut() {
            *x = field.mul(*x, inv);
        }
        for r in 0..m {
            if r == col || a[r][col] == 0 {
                continue;
            }
            let factor = a[r][col];
            for c in 0..m {
                let v = field.mul(factor, a[col][c]);
                a[r][c] = field.sub(a[r][c], v);
            }
            for row in 0..rows {
                let v = field.mul(factor, b[col][row]);
                b[r][row] = field.sub(b[r][row], v);
            }
        }
    }
    Ok(b)
}

/// How coefficients are drawn. `Unit` forces every coefficient to one and
/// exists for tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CoefficientMode {
    #[default]
    Keyed,
    Unit,
}

/// Locally held audit state for one encoded file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTable {
    pub field: FieldSpec,
    pub columns: usize,
    pub rows: usize,
    pub r: usize,
    /// `tokens[round][column]`
    pub tokens: Vec<Vec<Elem>>,
    pub round_seeds: Vec<[u8; 32]>,
    master_key: Vec<u8>,
    mode: CoefficientMode,
    issued: BTreeSet<(usize, usize)>,
}

impl TokenTable {
    pub fn rounds(&self) -> usize {
        self.tokens.len()
    }

    pub fn token_count(&self) -> usize {
        self.tokens.iter().map(|r| r.len()).sum()
    }

    /// First round not yet issued for `column`.
    pub fn next_round(&self, column: usize) -> Option<usize> {
        (0..self.rounds()).find(|&i| !self.issued.contains(&(i, column)))
    }

    pub fn is_issued(&self, round: usize, column: usize) -> bool {
        self.issued.contains(&(round, column))
    }
}

pub fn precompute_tokens(
    enc: &EncodedFile,
    t: usize,
    r: usize,
    master_key: &[u8],
) -> Result<TokenTable, IntegrityError> {
    precompute_tokens_with(enc, t, r, master_key, CoefficientMode::Keyed)
}

pub fn precompute_tokens_with(
    enc: &EncodedFile,
    t: usize,
    r: usize,
    master_key: &[u8],
    mode: CoefficientMode,
) -> Result<TokenTable, IntegrityError> {
    let rows = enc.rows();
    if r == 0 || r > rows || t == 0 {
        return Err(IntegrityError::InvalidChallenge { r, rows });
    }
    let f = enc.field;
    let mut tokens = Vec::with_capacity(t);
    let mut round_seeds = Vec::with_capacity(t);
    for i in 0..t {
        let (indices, coeffs) = derive_challenge(f, master_key, i, rows, r, mode == CoefficientMode::Unit);
        let row: Vec<Elem> = (0..enc.column_count())
            .map(|j| weighted_sum(f, enc.column(j), &indices, &coeffs))
            .collect();
        tokens.push(row);
        round_seeds.push(round_seed(master_key, i));
    }
    Ok(TokenTable {
        field: f,
        columns: enc.column_count(),
        rows,
        r,
        tokens,
        round_seeds,
        master_key: master_key.to_vec(),
        mode,
        issued: BTreeSet::new(),
    })
}

fn weighted_sum(f: FieldSpec, column: &[Elem], indices: &[u32], coeffs: &[Elem]) -> Elem {
    indices
        .iter()
        .zip(coeffs)
        .fold(0, |acc, (&i, &c)| f.add(acc, f.mul(c, column[i as usize])))
}

/// What the auditor sends to a server. Carries no token and no key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengeMessage {
    pub round: u32,
    pub column: u32,
    pub field: FieldSpec,
    pub indices: Vec<u32>,
    pub coefficients: Vec<Elem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChallengeResponse {
    pub round: u32,
    pub column: u32,
    pub value: Elem,
}

/// Issue round `round` for `column`. Each pair can be issued once.
pub fn challenge(
    table: &mut TokenTable,
    round: usize,
    column: usize,
) -> Result<ChallengeMessage, IntegrityError> {
    if round >= table.rounds() || column >= table.columns {
        return Err(IntegrityError::OutOfRange { round, column });
    }
    if !table.issued.insert((round, column)) {
        return Err(IntegrityError::RoundExhausted { round, column });
    }
    let (indices, coefficients) = derive_challenge(
        table.field,
        &table.master_key,
        round,
        table.rows,
        table.r,
        table.mode == CoefficientMode::Unit,
    );
    Ok(ChallengeMessage {
        round: round as u32,
        column: column as u32,
        field: table.field,
        indices,
        coefficients,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Intact,
    Corrupted { column: usize },
}

pub fn verify(
    table: &TokenTable,
    round: usize,
    column: usize,
    response: Elem,
) -> Result<Verdict, IntegrityError> {
    if !table.issued.contains(&(round, column)) {
        return Err(IntegrityError::NoSuchChallenge { round, column });
    }
    Ok(if table.tokens[round][column] == response {
        Verdict::Intact
    } else {
        Verdict::Corrupted { column }
    })
}

/// Server side: answer a challenge over the column as stored.
pub fn compute_response(column: &[Elem], msg: &ChallengeMessage) -> Result<Elem, IntegrityError> {
    if msg.indices.len() != msg.coefficients.len() {
        return Err(IntegrityError::Malformed("index/coefficient count mismatch"));
    }
    if msg.indices.iter().any(|&i| i as usize >= column.len()) {
        return Err(IntegrityError::Malformed("row index beyond column"));
    }
    Ok(weighted_sum(msg.field, column, &msg.indices, &msg.coefficients))
}

impl ChallengeMessage {
    /// `CIT1 | 0x01 | round u32 | column u32 | field tag u8 | field param u16 |
    /// count u32 | indices u32* | count u32 | coefficients u16*`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.indices.len() * 6);
        out.extend_from_slice(WIRE_MAGIC);
        out.push(MSG_CHALLENGE);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.column.to_le_bytes());
        let (tag, param) = self.field.tag();
        out.push(tag);
        out.extend_from_slice(&param.to_le_bytes());
        out.extend_from_slice(&(self.indices.len() as u32).to_le_bytes());
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out.extend_from_slice(&(self.coefficients.len() as u32).to_le_bytes());
        for c in &self.coefficients {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IntegrityError> {
        let mut r = Wire(bytes);
        r.header(MSG_CHALLENGE)?;
        let round = r.u32()?;
        let column = r.u32()?;
        let tag = r.u8()?;
        let param = r.u16()?;
        let field = FieldSpec::from_tag(tag, param)?;
        let n = r.u32()? as usize;
        let indices = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let n = r.u32()? as usize;
        let coefficients: Vec<Elem> = (0..n).map(|_| r.u16()).collect::<Result<_, _>>()?;
        r.end()?;
        if coefficients.iter().any(|&c| !field.contains(c as u32)) {
            return Err(IntegrityError::Malformed("coefficient outside field"));
        }
        Ok(ChallengeMessage {
            round,
            column,
            field,
            indices,
            coefficients,
        })
    }
}

impl ChallengeResponse {
    /// `CIT1 | 0x02 | round u32 | column u32 | value u16`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(15);
        out.extend_from_slice(WIRE_MAGIC);
        out.push(MSG_RESPONSE);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.column.to_le_bytes());
        out.extend_from_slice(&self.value.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IntegrityError> {
        let mut r = Wire(bytes);
        r.header(MSG_RESPONSE)?;
        let resp = ChallengeResponse {
            round: r.u32()?,
            column: r.u32()?,
            value: r.u16()?,
        };
        r.end()?;
        Ok(resp)
    }
}

struct Wire<'a>(&'a [u8]);

impl Wire<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], IntegrityError> {
        if self.0.len() < N {
            return Err(IntegrityError::Malformed("truncated"));
        }
        let mut out = [0; N];
        out.copy_from_slice(&self.0[..N]);
        self.0 = &self.0[N..];
        Ok(out)
    }

    fn header(&mut self, kind: u8) -> Result<(), IntegrityError> {
        if &self.take::<4>()? != WIRE_MAGIC {
            return Err(IntegrityError::Malformed("bad magic"));
        }
        if self.u8()? != kind {
            return Err(IntegrityError::Malformed("unexpected message type"));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8, IntegrityError> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, IntegrityError> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, IntegrityError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn end(&self) -> Result<(), IntegrityError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(IntegrityError::Malformed("trailing bytes"))
        }
    }
}
