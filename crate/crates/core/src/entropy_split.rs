//! Content-aware chunking and chunk placement.
//!
//! A file is cut into `C` chunks so that every chunk's byte histogram is as
//! poor an approximation of the whole file as possible. The gap is measured as
//! the Kullback-Leibler divergence `D(P_file || P_chunk)` over the 256 byte
//! values, with add-one smoothing on both sides so that missing symbols give a
//! finite value. The planner maximizes the *smallest* per-chunk divergence, so
//! no single chunk gives away a good picture of the file.
//!
//! Cuts are only allowed on multiples of a block size `B`; the search is an
//! exact dynamic program over `(blocks consumed, chunks used)`.
//!
//! Placement hides the chunk order: chunks are uploaded in a random slot order
//! and only the local manifest knows which slot holds which chunk. An insider
//! that sees every chunk still has to guess one of `C!` orderings.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cut granularity in bytes.
pub const DEFAULT_BLOCK_SIZE: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SplitError {
    #[error("distribution is empty")]
    EmptyInput,
    #[error("cannot cut {len} bytes into {chunks} chunks on {block}-byte boundaries")]
    InfeasibleSplit {
        len: usize,
        chunks: usize,
        block: usize,
    },
    #[error("no storage nodes to place chunks on")]
    NoNodes,
    #[error("chunk count must be at least 1")]
    ZeroChunks,
    #[error("slot {0} is missing or the permutation is inconsistent")]
    BadPermutation(usize),
}

/// Byte-value histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteDistribution {
    counts: [u64; 256],
    total: u64,
}

impl Default for ByteDistribution {
    fn default() -> Self {
        ByteDistribution {
            counts: [0; 256],
            total: 0,
        }
    }
}

impl ByteDistribution {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut d = ByteDistribution::default();
        d.extend(bytes);
        d
    }

    pub fn from_counts(counts: [u64; 256]) -> Self {
        let total = counts.iter().sum();
        ByteDistribution { counts, total }
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.counts[b as usize] += 1;
        }
        self.total += bytes.len() as u64;
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Add-one smoothed probability of `symbol`.
    pub fn smoothed(&self, symbol: u8) -> f64 {
        (self.counts[symbol as usize] + 1) as f64 / (self.total + 256) as f64
    }
}

/// `D(P_file || P_chunk)` in nats, both sides add-one smoothed.
pub fn relative_entropy(
    file: &ByteDistribution,
    chunk: &ByteDistribution,
) -> Result<f64, SplitError> {
    if file.total == 0 || chunk.total == 0 {
        return Err(SplitError::EmptyInput);
    }
    Ok(kl_smoothed(file, chunk))
}

fn kl_smoothed(file: &ByteDistribution, chunk: &ByteDistribution) -> f64 {
    let fd = (file.total + 256) as f64;
    let cd = (chunk.total + 256) as f64;
    let mut sum = 0.0;
    for s in 0..256 {
        let p = (file.counts[s] + 1) as f64 / fd;
        let q = (chunk.counts[s] + 1) as f64 / cd;
        sum += p * (p / q).ln();
    }
    // Rounding can push an all-equal comparison a hair below zero.
    sum.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    EntropyDp,
    FixedSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Strictly increasing offsets in `(0, file_len)`.
    pub cut_points: Vec<usize>,
    pub chunk_count: usize,
    /// Smallest per-chunk relative entropy, in nats.
    pub objective: f64,
    pub mode: SplitMode,
    pub file_len: usize,
}

impl SplitPlan {
    /// Byte ranges of the chunks, in file order.
    pub fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut bounds = Vec::with_capacity(self.cut_points.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.cut_points);
        bounds.push(self.file_len);
        bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }

    pub fn chunks<'a>(&self, file: &'a [u8]) -> Vec<&'a [u8]> {
        self.ranges().into_iter().map(|r| &file[r]).collect()
    }
}

/// Cumulative byte counts at each block boundary.
struct BlockPrefix {
    prefix: Vec<[u64; 256]>,
}

impl BlockPrefix {
    fn new(file: &[u8], block: usize) -> Self {
        let mut prefix = Vec::with_capacity(file.len().div_ceil(block) + 1);
        let mut running = [0u64; 256];
        prefix.push(running);
        for blk in file.chunks(block) {
            for &b in blk {
                running[b as usize] += 1;
            }
            prefix.push(running);
        }
        BlockPrefix { prefix }
    }

    fn blocks(&self) -> usize {
        self.prefix.len() - 1
    }

    fn span(&self, from: usize, to: usize) -> ByteDistribution {
        let mut counts = [0u64; 256];
        for (s, c) in counts.iter_mut().enumerate() {
            *c = self.prefix[to][s] - self.prefix[from][s];
        }
        ByteDistribution::from_counts(counts)
    }
}

/// Choose `chunks - 1` block-aligned cuts maximizing the minimum per-chunk
/// relative entropy against the whole file.
///
/// Ties are broken towards earlier cuts, so the plan is a pure function of
/// its inputs.
pub fn plan_split(file: &[u8], chunks: usize, block: usize) -> Result<SplitPlan, SplitError> {
    if chunks == 0 {
        return Err(SplitError::ZeroChunks);
    }
    if block == 0 || chunks > file.len().div_ceil(block) {
        return Err(SplitError::InfeasibleSplit {
            len: file.len(),
            chunks,
            block,
        });
    }
    let whole = ByteDistribution::from_bytes(file);
    let prefix = BlockPrefix::new(file, block);
    let nb = prefix.blocks();

    // score[i][j] for 0 <= i < j <= nb, chunk spanning blocks i..j
    let mut score = vec![f64::NAN; (nb + 1) * (nb + 1)];
    for i in 0..nb {
        for j in i + 1..=nb {
            score[i * (nb + 1) + j] = kl_smoothed(&whole, &prefix.span(i, j));
        }
    }
    let at = |i: usize, j: usize| score[i * (nb + 1) + j];

    // best[c][j]: best objective for covering blocks 0..j with c+1 chunks
    let mut best = vec![vec![f64::NEG_INFINITY; nb + 1]; chunks];
    let mut choice = vec![vec![0usize; nb + 1]; chunks];
    for j in 1..=nb {
        best[0][j] = at(0, j);
    }
    for c in 1..chunks {
        for j in c + 1..=nb {
            let mut top = f64::NEG_INFINITY;
            let mut arg = c;
            for i in c..j {
                let v = best[c - 1][i].min(at(i, j));
                if v > top {
                    top = v;
                    arg = i;
                }
            }
            best[c][j] = top;
            choice[c][j] = arg;
        }
    }

    let mut cuts = Vec::with_capacity(chunks - 1);
    let mut j = nb;
    for c in (1..chunks).rev() {
        let i = choice[c][j];
        cuts.push(i * block);
        j = i;
    }
    cuts.reverse();
    Ok(SplitPlan {
        cut_points: cuts,
        chunk_count: chunks,
        objective: best[chunks - 1][nb],
        mode: SplitMode::EntropyDp,
        file_len: file.len(),
    })
}

/// Equal-size chunks with no search (the last chunk may be shorter).
pub fn plan_fixed_size(file: &[u8], chunk_size: usize) -> Result<SplitPlan, SplitError> {
    if chunk_size == 0 || file.is_empty() {
        return Err(SplitError::InfeasibleSplit {
            len: file.len(),
            chunks: 0,
            block: chunk_size,
        });
    }
    let whole = ByteDistribution::from_bytes(file);
    let cut_points: Vec<usize> = (chunk_size..file.len()).step_by(chunk_size).collect();
    let objective = file
        .chunks(chunk_size)
        .map(|c| kl_smoothed(&whole, &ByteDistribution::from_bytes(c)))
        .fold(f64::INFINITY, f64::min);
    Ok(SplitPlan {
        chunk_count: cut_points.len() + 1,
        cut_points,
        objective,
        mode: SplitMode::FixedSize,
        file_len: file.len(),
    })
}

/// A storage node of one provider.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub provider: String,
    pub node: u32,
}

impl NodeRef {
    pub fn new(provider: impl Into<String>, node: u32) -> Self {
        NodeRef {
            provider: provider.into(),
            node,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionPlan {
    /// `assignment[chunk]` is the node holding that chunk.
    pub assignment: Vec<NodeRef>,
    /// `sequence_permutation[slot]` is the chunk stored in upload slot `slot`.
    /// Local only.
    pub sequence_permutation: Vec<usize>,
}

impl DistributionPlan {
    /// Slot holding each chunk (the inverse permutation).
    pub fn slot_of(&self) -> Vec<usize> {
        let mut inv = vec![0; self.sequence_permutation.len()];
        for (slot, &chunk) in self.sequence_permutation.iter().enumerate() {
            inv[chunk] = slot;
        }
        inv
    }
}

/// Draw a hidden upload order and assign slots round-robin over a shuffled
/// node list.
pub fn plan_distribution<R: RngCore + ?Sized>(
    plan: &SplitPlan,
    nodes: &[NodeRef],
    rng: &mut R,
) -> Result<DistributionPlan, SplitError> {
    if nodes.is_empty() {
        return Err(SplitError::NoNodes);
    }
    let mut order = nodes.to_vec();
    order.shuffle(rng);
    let mut perm: Vec<usize> = (0..plan.chunk_count).collect();
    perm.shuffle(rng);

    let mut assignment = vec![order[0].clone(); plan.chunk_count];
    for (slot, &chunk) in perm.iter().enumerate() {
        assignment[chunk] = order[slot % order.len()].clone();
    }
    Ok(DistributionPlan {
        assignment,
        sequence_permutation: perm,
    })
}

/// Rebuild a file from blobs listed in slot order.
pub fn reassemble(slots: &[Vec<u8>], sequence_permutation: &[usize]) -> Result<Vec<u8>, SplitError> {
    if slots.len() != sequence_permutation.len() {
        return Err(SplitError::BadPermutation(slots.len()));
    }
    let mut by_chunk: Vec<Option<&Vec<u8>>> = vec![None; slots.len()];
    for (slot, &chunk) in sequence_permutation.iter().enumerate() {
        match by_chunk.get_mut(chunk) {
            Some(entry @ None) => *entry = Some(&slots[slot]),
            _ => return Err(SplitError::BadPermutation(slot)),
        }
    }
    Ok(by_chunk.into_iter().flatten().flatten().copied().collect())
}

/// Chance that an attacker recovers the file by guessing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probability {
    /// `num / den`, exact.
    Ratio { num: u128, den: u128 },
    /// Too small for an exact `u128` denominator; `ln` stays finite where
    /// `value` may underflow to zero.
    Real { value: f64, ln: f64 },
}

impl Probability {
    pub fn as_f64(&self) -> f64 {
        match *self {
            Probability::Ratio { num, den } => num as f64 / den as f64,
            Probability::Real { value, .. } => value,
        }
    }

    pub fn ln(&self) -> f64 {
        match *self {
            Probability::Ratio { num, den } => (num as f64).ln() - (den as f64).ln(),
            Probability::Real { ln, .. } => ln,
        }
    }
}

/// Success probability of rebuilding a `chunks`-chunk file by guessing its
/// order.
///
/// An insider who knows the storage set faces `chunks!` equally likely
/// orderings. An outsider must also find the storage set, so the same value
/// is returned as an upper bound for that case.
pub fn recovery_probability(chunks: usize, known_storage_set: bool) -> Probability {
    let _ = known_storage_set;
    let mut den: u128 = 1;
    for c in 2..=chunks as u128 {
        match den.checked_mul(c) {
            Some(d) => den = d,
            None => {
                let ln: f64 = -(2..=chunks).map(|c| (c as f64).ln()).sum::<f64>();
                return Probability::Real {
                    value: ln.exp(),
                    ln,
                };
            }
        }
    }
    Probability::Ratio { num: 1, den }
}
