//! Classification-driven dispatch.
//!
//! A caller hands over an object with a secret level and the class of
//! operations it will later need. [`route`] picks a pipeline from that pair:
//!
//! | level \ operations | none                 | basic              | advanced  |
//! |--------------------|----------------------|--------------------|-----------|
//! | top secret         | local only           | local only         | local only|
//! | secret             | split, share, spread | homomorphic store  | rejected  |
//! | unclassified       | plain, one provider  | plain, one provider| plain     |
//!
//! Secret tables go through the anonymizer instead (one column group per
//! provider) unless advanced analytics is asked for.
//!
//! [`Dispatcher`] runs the chosen pipeline against a set of providers, keeps
//! placement in the manifest and secrets in the keystore, and inverts the
//! pipeline on [`Dispatcher::get`].
//!
//! Split objects are cut with [`plan_split`]; every chunk is then
//! Shamir-shared with one share per provider, so a provider never holds more
//! than one share of a chunk. Chunks are uploaded under slot numbers drawn
//! from a secret permutation. Each chunk's shares plus `parity` blinded
//! parity columns form one audit group with precomputed challenge tokens.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::anonymize::{anonymize_table, rejoin, AnonymizeError, AnonymizeOptions, ColumnGroup, Table};
use crate::entropy_split::{plan_split, reassemble, recovery_probability, Probability, SplitError};
use crate::field::{Elem, FieldSpec};
use crate::homomorphic::{keygen, Ciphertext, HeError, KeyPair};
use crate::integrity::{
    challenge, elements_from_bytes, encode_columns, precompute_tokens, verify, ChallengeResponse,
    IntegrityError, Verdict,
};
use crate::persistence::{
    BlobLocation, ChunkEntry, KeyMaterial, KeyRecord, KeyStore, ManifestRecord, ManifestStore, ObjectKind,
    PersistError, PipelineTag, SplitInfo,
};
use crate::policy::{Endpoint, Policy, PolicyError};
use crate::ranking::{rank_providers, ProviderProfile};
use crate::shamir::{self, ShamirError, Share, ShareScheme};
use crate::simcloud::{CloudProvider, DumpedBlob, ProviderError, SimCloud, SimProvider};

/// Above this many blocks the block size grows, keeping the cut search small.
pub const MAX_SPLIT_BLOCKS: usize = 512;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("no providers available")]
    NoProviders,
    #[error("object {0:?} already exists")]
    DuplicateObject(String),
    #[error("object {0:?} not found")]
    NotFound(String),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("chunk {chunk}: {live} usable shares, {need} needed")]
    ReconstructionFailed { chunk: usize, live: usize, need: usize },
    #[error("integrity violation: {0}")]
    IntegrityViolation(String),
    #[error("provider {0} rejected the credential")]
    AuthenticationFailed(String),
    #[error("unknown provider {0}")]
    UnknownProvider(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Shamir(#[from] ShamirError),
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error(transparent)]
    Homomorphic(#[from] HeError),
    #[error(transparent)]
    Anonymize(#[from] AnonymizeError),
}

impl RouterError {
    /// Stable short name for reports.
    pub fn code(&self) -> &'static str {
        match self {
            RouterError::NoProviders => "no_providers",
            RouterError::DuplicateObject(_) => "duplicate_object",
            RouterError::NotFound(_) => "not_found",
            RouterError::Rejected(_) => "rejected",
            RouterError::ReconstructionFailed { .. } => "reconstruction_failed",
            RouterError::IntegrityViolation(_) => "integrity_violation",
            RouterError::AuthenticationFailed(_) => "authentication_failed",
            RouterError::UnknownProvider(_) => "unknown_provider",
            RouterError::InvalidPayload(_) => "invalid_payload",
            RouterError::InvalidPolicy(_) | RouterError::Policy(_) => "invalid_policy",
            RouterError::Provider(_) => "provider",
            RouterError::Persist(PersistError::CorruptStore { .. }) => "corrupt_store",
            RouterError::Persist(_) => "store",
            RouterError::Split(_) => "split",
            RouterError::Shamir(_) => "shamir",
            RouterError::Integrity(_) => "integrity",
            RouterError::Homomorphic(_) => "homomorphic",
            RouterError::Anonymize(_) => "anonymize",
        }
    }
}

/// Ordered so that `TopSecret > Secret > Unclassified`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SecretLevel {
    Unclassified,
    Secret,
    TopSecret,
}

impl SecretLevel {
    pub const ALL: [SecretLevel; 3] = [SecretLevel::Unclassified, SecretLevel::Secret, SecretLevel::TopSecret];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "top-secret" => Some(SecretLevel::TopSecret),
            "secret" => Some(SecretLevel::Secret),
            "unclassified" => Some(SecretLevel::Unclassified),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SecretLevel::TopSecret => "top-secret",
            SecretLevel::Secret => "secret",
            SecretLevel::Unclassified => "unclassified",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperationClass {
    NoOperations,
    /// Addition, subtraction and scaling on stored values.
    BasicOperations,
    AdvancedAnalytics,
}

impl OperationClass {
    pub const ALL: [OperationClass; 3] = [
        OperationClass::NoOperations,
        OperationClass::BasicOperations,
        OperationClass::AdvancedAnalytics,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(OperationClass::NoOperations),
            "basic" => Some(OperationClass::BasicOperations),
            "advanced" => Some(OperationClass::AdvancedAnalytics),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OperationClass::NoOperations => "none",
            OperationClass::BasicOperations => "basic",
            OperationClass::AdvancedAnalytics => "advanced",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Bytes(Vec<u8>),
    Table {
        table: Table,
        id_columns: Vec<String>,
        groups: Vec<Vec<String>>,
    },
}

impl Payload {
    fn kind(&self) -> ObjectKind {
        match self {
            Payload::Bytes(_) => ObjectKind::Bytes,
            Payload::Table { .. } => ObjectKind::Table,
        }
    }

    /// Bytes as stored by pipelines that do not look inside the object.
    fn to_opaque(&self) -> Vec<u8> {
        match self {
            Payload::Bytes(b) => b.clone(),
            table => serde_json::to_vec(table).expect("tables serialize"),
        }
    }

    fn from_opaque(kind: ObjectKind, bytes: Vec<u8>) -> Result<Self, RouterError> {
        match kind {
            ObjectKind::Bytes => Ok(Payload::Bytes(bytes)),
            ObjectKind::Table => serde_json::from_slice(&bytes)
                .map_err(|e| RouterError::IntegrityViolation(format!("stored table: {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataObject {
    pub object_id: String,
    pub payload: Payload,
    pub level: SecretLevel,
    pub ops: OperationClass,
}

impl DataObject {
    pub fn bytes(id: impl Into<String>, bytes: Vec<u8>, level: SecretLevel, ops: OperationClass) -> Self {
        DataObject {
            object_id: id.into(),
            payload: Payload::Bytes(bytes),
            level,
            ops,
        }
    }

    pub fn table(
        id: impl Into<String>,
        table: Table,
        id_columns: Vec<String>,
        groups: Vec<Vec<String>>,
        level: SecretLevel,
        ops: OperationClass,
    ) -> Self {
        DataObject {
            object_id: id.into(),
            payload: Payload::Table {
                table,
                id_columns,
                groups,
            },
            level,
            ops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pipeline {
    LocalOnly,
    PlainSingleCloud,
    SplitShareDisperse,
    HomomorphicStore,
    AnonymizedPartition,
    Rejected(String),
}

impl Pipeline {
    pub fn tag(&self) -> Option<PipelineTag> {
        Some(match self {
            Pipeline::LocalOnly => PipelineTag::LocalOnly,
            Pipeline::PlainSingleCloud => PipelineTag::PlainSingleCloud,
            Pipeline::SplitShareDisperse => PipelineTag::SplitShareDisperse,
            Pipeline::HomomorphicStore => PipelineTag::HomomorphicStore,
            Pipeline::AnonymizedPartition => PipelineTag::AnonymizedPartition,
            Pipeline::Rejected(_) => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::LocalOnly => "LocalOnly",
            Pipeline::PlainSingleCloud => "PlainSingleCloud",
            Pipeline::SplitShareDisperse => "SplitShareDisperse",
            Pipeline::HomomorphicStore => "HomomorphicStore",
            Pipeline::AnonymizedPartition => "AnonymizedPartition",
            Pipeline::Rejected(_) => "Rejected",
        }
    }

    /// Higher keeps more from the providers. `None` for rejections.
    pub fn confidentiality_rank(&self) -> Option<u8> {
        match self {
            Pipeline::LocalOnly => Some(4),
            Pipeline::SplitShareDisperse => Some(3),
            Pipeline::HomomorphicStore => Some(3),
            Pipeline::AnonymizedPartition => Some(2),
            Pipeline::PlainSingleCloud => Some(1),
            Pipeline::Rejected(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingDecision {
    pub pipeline: Pipeline,
    pub k: u16,
    pub n: u16,
    /// Target chunk count `C` (split pipeline) or group count (anonymizer).
    pub chunks: usize,
    /// Providers that receive data, best ranked first.
    pub providers: Vec<String>,
}

/// Pipeline for a (level, operations, kind) triple, without parameters.
pub fn pipeline_for(level: SecretLevel, ops: OperationClass, kind: ObjectKind) -> Pipeline {
    match (level, ops, kind) {
        (SecretLevel::TopSecret, _, _) => Pipeline::LocalOnly,
        (SecretLevel::Unclassified, _, _) => Pipeline::PlainSingleCloud,
        (SecretLevel::Secret, OperationClass::AdvancedAnalytics, _) => {
            Pipeline::Rejected("advanced analytics tier not implemented".into())
        }
        (SecretLevel::Secret, _, ObjectKind::Table) => Pipeline::AnonymizedPartition,
        (SecretLevel::Secret, OperationClass::NoOperations, ObjectKind::Bytes) => Pipeline::SplitShareDisperse,
        (SecretLevel::Secret, OperationClass::BasicOperations, ObjectKind::Bytes) => Pipeline::HomomorphicStore,
    }
}

/// Share count and threshold for `providers` available providers.
pub fn share_parameters(policy: &Policy, providers: usize) -> Result<(u16, u16), RouterError> {
    let n = policy.n.map_or(providers, |n| (n as usize).min(providers));
    if n == 0 {
        return Err(RouterError::NoProviders);
    }
    let n = u16::try_from(n).map_err(|_| RouterError::InvalidPolicy("too many providers".into()))?;
    let k = policy.k.unwrap_or((n + 2) / 2);
    if k == 0 || k > n {
        return Err(RouterError::InvalidPolicy(format!("k={k} with only {n} share holders")));
    }
    Ok((k, n))
}

/// Decide how `obj` is stored.
pub fn route(obj: &DataObject, policy: &Policy, profiles: &[ProviderProfile]) -> Result<RoutingDecision, RouterError> {
    let pipeline = pipeline_for(obj.level, obj.ops, obj.payload.kind());
    let ranked: Vec<String> = rank_providers(profiles, &policy.weights)
        .into_iter()
        .map(|p| p.id)
        .collect();
    let mut d = RoutingDecision {
        pipeline,
        k: 1,
        n: 1,
        chunks: 1,
        providers: Vec::new(),
    };
    match &d.pipeline {
        Pipeline::LocalOnly => {
            d.n = 0;
            d.k = 0;
        }
        Pipeline::Rejected(_) => {}
        _ if ranked.is_empty() => return Err(RouterError::NoProviders),
        Pipeline::PlainSingleCloud | Pipeline::HomomorphicStore => {
            d.providers = ranked[..1].to_vec();
        }
        Pipeline::SplitShareDisperse => {
            let (k, n) = share_parameters(policy, ranked.len())?;
            d.k = k;
            d.n = n;
            let len = match &obj.payload {
                Payload::Bytes(b) => b.len(),
                _ => 1,
            };
            d.chunks = policy.chunks.min(n as usize).min(len).max(1);
            d.providers = ranked[..n as usize].to_vec();
        }
        Pipeline::AnonymizedPartition => {
            let Payload::Table { groups, .. } = &obj.payload else {
                unreachable!("anonymizer only routes tables")
            };
            if groups.len() > ranked.len() {
                return Err(RouterError::InvalidPayload(format!(
                    "{} column groups but {} providers",
                    groups.len(),
                    ranked.len()
                )));
            }
            d.chunks = groups.len();
            d.n = groups.len() as u16;
            d.providers = ranked[..groups.len()].to_vec();
        }
    }
    Ok(d)
}

/// Chunk count and block size actually used for a `len`-byte payload.
///
/// The block shrinks for payloads smaller than `chunks` blocks so that small
/// objects still split, and grows for large payloads so that the number of
/// candidate cuts stays at most [`MAX_SPLIT_BLOCKS`].
pub fn split_geometry(len: usize, chunks: usize, block_size: usize) -> (usize, usize) {
    let c = chunks.min(len).max(1);
    let mut block = block_size.min(len / c).max(1);
    if len / block > MAX_SPLIT_BLOCKS {
        let min_block = len.div_ceil(MAX_SPLIT_BLOCKS);
        block = min_block.div_ceil(block) * block;
    }
    (c, block)
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Keystore id for one piece of an object's secret state.
pub fn key_id(object_id: &str, what: &str) -> String {
    format!("{object_id}/{what}")
}

fn chunk_key(master: &[u8], chunk: usize) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"chunk-key");
    h.update(master);
    h.update((chunk as u64).to_le_bytes());
    h.finalize().to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditOutcome {
    Intact,
    Corrupted,
    Unreachable(String),
    /// No unused precomputed round left for this column.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub chunk: usize,
    pub column: usize,
    pub provider: String,
    pub node: u32,
    pub blob_id: String,
    pub round: Option<usize>,
    pub outcome: AuditOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub object_id: String,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn corrupted(&self) -> impl Iterator<Item = &AuditEntry> {
        self.entries.iter().filter(|e| e.outcome == AuditOutcome::Corrupted)
    }

    pub fn is_intact(&self) -> bool {
        self.entries.iter().all(|e| e.outcome == AuditOutcome::Intact)
    }
}

/// What one provider's holdings reveal about one split object.
#[derive(Debug, Clone, PartialEq)]
pub struct Exposure {
    pub provider: String,
    pub k: u16,
    /// Most shares of a single chunk found in the dump.
    pub max_shares_per_chunk: usize,
    /// Chunks for which the dump holds at least `k` shares.
    pub reconstructible_chunks: Vec<usize>,
    /// Chance of guessing the chunk order for this object.
    pub order_guess: Probability,
}

/// Count how many shares of each chunk of `record` appear in `dump`, matching
/// stored bytes against the manifest digests.
pub fn exposure(record: &ManifestRecord, provider: &str, dump: &[DumpedBlob]) -> Exposure {
    let held: std::collections::HashSet<String> = dump
        .iter()
        .filter(|b| b.provider == provider)
        .map(|b| digest_hex(&b.bytes))
        .collect();
    let mut max = 0;
    let mut reconstructible = Vec::new();
    for c in &record.chunks {
        let count = c
            .blobs
            .iter()
            .filter(|l| l.x.is_some() && held.contains(&l.digest))
            .count();
        max = max.max(count);
        if record.k > 0 && count >= record.k as usize {
            reconstructible.push(c.index);
        }
    }
    Exposure {
        provider: provider.to_string(),
        k: record.k,
        max_shares_per_chunk: max,
        reconstructible_chunks: reconstructible,
        order_guess: recovery_probability(record.chunks.len().max(1), true),
    }
}

/// In-memory simulated providers for every provider in `policy`; directory
/// endpoints are loaded from disk.
pub fn sim_cloud(policy: &Policy) -> Result<SimCloud, RouterError> {
    let mut out = Vec::new();
    for p in &policy.providers {
        let id = p.raw.id.clone();
        out.push(match &p.endpoint {
            Endpoint::Memory => SimProvider::new(id, &p.depths()),
            Endpoint::Dir(d) => SimProvider::open_dir(id, &p.depths(), d)?,
        });
    }
    Ok(SimCloud::new(out))
}

struct Upload {
    provider: usize,
    node: u32,
    blob_id: String,
    bytes: Vec<u8>,
}

/// Runs pipelines against providers and records the results.
pub struct Dispatcher {
    policy: Policy,
    providers: Vec<Arc<dyn CloudProvider>>,
    by_id: HashMap<String, usize>,
    profiles: Vec<ProviderProfile>,
    manifest: Mutex<ManifestStore>,
    keys: Mutex<KeyStore>,
    rng: Mutex<ChaCha20Rng>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Dispatcher {
    /// Authenticates every provider with the policy credential. Providers
    /// missing from the policy's provider list get identical neutral
    /// profiles; if the policy lists providers, every handle must be listed.
    pub fn new(
        policy: Policy,
        providers: Vec<Arc<dyn CloudProvider>>,
        manifest: ManifestStore,
        keys: KeyStore,
        seed: u64,
    ) -> Result<Self, RouterError> {
        policy.validate()?;
        let mut by_id = HashMap::new();
        for (i, p) in providers.iter().enumerate() {
            if !p.authenticate(&policy.credential) {
                return Err(RouterError::AuthenticationFailed(p.id().to_string()));
            }
            if by_id.insert(p.id().to_string(), i).is_some() {
                return Err(RouterError::InvalidPolicy(format!("duplicate provider {}", p.id())));
            }
        }
        let profiles = if policy.providers.is_empty() {
            providers
                .iter()
                .map(|p| ProviderProfile::uniform(p.id(), 1.0))
                .collect()
        } else {
            let all = policy.profiles()?;
            let mut out = Vec::new();
            for p in &providers {
                let prof = all
                    .iter()
                    .find(|q| q.id == p.id())
                    .ok_or_else(|| RouterError::UnknownProvider(p.id().to_string()))?;
                out.push(prof.clone());
            }
            out
        };
        Ok(Dispatcher {
            policy,
            providers,
            by_id,
            profiles,
            manifest: Mutex::new(manifest),
            keys: Mutex::new(keys),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn profiles(&self) -> &[ProviderProfile] {
        &self.profiles
    }

    pub fn route(&self, obj: &DataObject) -> Result<RoutingDecision, RouterError> {
        route(obj, &self.policy, &self.profiles)
    }

    pub fn record(&self, object_id: &str) -> Result<ManifestRecord, RouterError> {
        lookup(&lock(&self.manifest), object_id)
    }

    pub fn object_ids(&self) -> Vec<String> {
        lock(&self.manifest).keys().map(String::from).collect()
    }

    /// Independent generator for one operation, so concurrent operations do
    /// not hold the shared one.
    fn op_rng(&self) -> ChaCha20Rng {
        let mut seed = [0u8; 32];
        lock(&self.rng).fill_bytes(&mut seed);
        ChaCha20Rng::from_seed(seed)
    }

    fn provider(&self, id: &str) -> Result<&Arc<dyn CloudProvider>, RouterError> {
        self.by_id
            .get(id)
            .map(|&i| &self.providers[i])
            .ok_or_else(|| RouterError::UnknownProvider(id.to_string()))
    }

    fn pick_node(&self, provider: usize, rng: &mut impl Rng) -> Result<u32, RouterError> {
        let nodes = self.providers[provider].nodes();
        nodes
            .choose(rng)
            .map(|n| n.index)
            .ok_or_else(|| RouterError::InvalidPolicy(format!("{} has no nodes", self.providers[provider].id())))
    }

    fn upload_all(&self, uploads: &[Upload]) -> Result<(), RouterError> {
        let mut per_provider: Vec<Vec<&Upload>> = vec![Vec::new(); self.providers.len()];
        for u in uploads {
            per_provider[u.provider].push(u);
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = per_provider
                .iter()
                .enumerate()
                .filter(|(_, list)| !list.is_empty())
                .map(|(i, list)| {
                    let p = &self.providers[i];
                    s.spawn(move || -> Result<(), ProviderError> {
                        for u in list {
                            p.store_blob(u.node, &u.blob_id, &u.bytes)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            for h in handles {
                h.join().expect("upload thread panicked")?;
            }
            Ok(())
        })
    }

    fn location(&self, u: &Upload, x: Option<u16>) -> BlobLocation {
        BlobLocation {
            provider: self.providers[u.provider].id().to_string(),
            node: u.node,
            blob_id: u.blob_id.clone(),
            x,
            digest: digest_hex(&u.bytes),
        }
    }

    /// Store `obj` as its routing decision says.
    pub fn put(&self, obj: &DataObject) -> Result<ManifestRecord, RouterError> {
        self.store(obj, false)
    }

    /// Like [`Dispatcher::put`] but writes a new version of an existing
    /// object. Blobs of the old version stay where they are.
    pub fn replace(&self, obj: &DataObject) -> Result<ManifestRecord, RouterError> {
        self.store(obj, true)
    }

    fn store(&self, obj: &DataObject, replace: bool) -> Result<ManifestRecord, RouterError> {
        if obj.object_id.is_empty() {
            return Err(RouterError::InvalidPayload("empty object id".into()));
        }
        let decision = self.route(obj)?;
        let Some(tag) = decision.pipeline.tag() else {
            let Pipeline::Rejected(reason) = decision.pipeline else {
                unreachable!()
            };
            return Err(RouterError::Rejected(reason));
        };
        if !replace && lock(&self.manifest).contains(&obj.object_id) {
            return Err(RouterError::DuplicateObject(obj.object_id.clone()));
        }
        let mut rng = self.op_rng();
        let mut record = ManifestRecord::new(&obj.object_id, tag, obj.level, obj.ops, obj.payload.kind());
        let mut secrets: Vec<KeyRecord> = Vec::new();
        let opaque = obj.payload.to_opaque();
        record.payload_len = opaque.len() as u64;
        record.payload_digest = digest_hex(&opaque);
        let blob_tag = hex::encode(rng.gen::<[u8; 8]>());
        let master: [u8; 32] = rng.gen();
        if tag != PipelineTag::LocalOnly {
            let id = key_id(&obj.object_id, "master");
            secrets.push(KeyRecord::new(&id, KeyMaterial::MasterKey(master.to_vec())));
            record.key_ref = Some(id);
        }

        match decision.pipeline {
            Pipeline::LocalOnly => {
                let id = key_id(&obj.object_id, "local");
                secrets.push(KeyRecord::new(&id, KeyMaterial::LocalObject(opaque)));
                record.key_ref = Some(id);
            }
            Pipeline::PlainSingleCloud => {
                let p = self.by_id[&decision.providers[0]];
                let (entry, table) = self.single_blob(p, &blob_tag, 0, opaque, &master, &mut rng)?;
                secrets.push(table);
                record.chunks.push(entry);
            }
            Pipeline::HomomorphicStore => {
                let Payload::Bytes(bytes) = &obj.payload else {
                    unreachable!()
                };
                if bytes.is_empty() || bytes.len() % 8 != 0 {
                    return Err(RouterError::InvalidPayload(
                        "homomorphic payloads are little-endian i64 values".into(),
                    ));
                }
                let kp = keygen(self.policy.he_bits, &mut rng)?;
                let mut blob = Vec::new();
                for v in bytes.chunks_exact(8) {
                    let c = kp.public.encrypt_i64(i64::from_le_bytes(v.try_into().unwrap()), &mut rng)?;
                    let cb = c.to_bytes();
                    blob.extend_from_slice(&(cb.len() as u32).to_le_bytes());
                    blob.extend_from_slice(&cb);
                }
                let p = self.by_id[&decision.providers[0]];
                let (entry, table) = self.single_blob(p, &blob_tag, 0, blob, &master, &mut rng)?;
                secrets.push(table);
                record.chunks.push(entry);
                let id = key_id(&obj.object_id, "he");
                secrets.push(KeyRecord::new(&id, KeyMaterial::HomomorphicKey(kp.to_stored())));
                record.key_ref = Some(id);
            }
            Pipeline::AnonymizedPartition => {
                let Payload::Table {
                    table,
                    id_columns,
                    groups,
                } = &obj.payload
                else {
                    unreachable!()
                };
                let salt: [u8; 32] = rng.gen();
                let anon = anonymize_table(table, id_columns, groups, &salt, AnonymizeOptions::default())?;
                for (g, group) in anon.groups.iter().enumerate() {
                    let p = self.by_id[&decision.providers[g]];
                    let (mut entry, table) =
                        self.single_blob(p, &blob_tag, g, group.to_bytes(), &master, &mut rng)?;
                    entry.index = g;
                    secrets.push(table);
                    record.chunks.push(entry);
                }
                let mid = key_id(&obj.object_id, "mapping");
                secrets.push(KeyRecord::new(&mid, KeyMaterial::AnonymizationMapping(anon.mapping)));
                secrets.push(KeyRecord::new(key_id(&obj.object_id, "salt"), KeyMaterial::Salt(salt.to_vec())));
                record.anonymization_ref = Some(mid);
                record.n = groups.len() as u16;
            }
            Pipeline::SplitShareDisperse => {
                self.split_share(&opaque, &decision, &blob_tag, &master, &mut rng, &mut record, &mut secrets)?;
            }
            Pipeline::Rejected(_) => unreachable!(),
        }
        let known = |p: &str, n: u32| {
            self.by_id
                .get(p)
                .is_some_and(|&i| self.providers[i].nodes().iter().any(|x| x.index == n))
        };
        record.validate(known)?;

        // secrets first: a manifest entry never points at missing keys
        {
            lock(&self.keys).commit_all(secrets)?;
        }
        let mut manifest = lock(&self.manifest);
        if !replace && manifest.contains(&obj.object_id) {
            return Err(RouterError::DuplicateObject(obj.object_id.clone()));
        }
        record.version = manifest.commit(record.clone())?;
        Ok(record)
    }

    /// Upload one blob to provider `p` and build its audit state.
    fn single_blob(
        &self,
        p: usize,
        blob_tag: &str,
        slot: usize,
        bytes: Vec<u8>,
        master: &[u8],
        rng: &mut ChaCha20Rng,
    ) -> Result<(ChunkEntry, KeyRecord), RouterError> {
        if bytes.is_empty() {
            return Err(RouterError::InvalidPayload("empty payload".into()));
        }
        let key = chunk_key(master, slot);
        let col: Vec<Elem> = bytes.iter().map(|&b| b as Elem).collect();
        let enc = encode_columns(vec![col], 0, FieldSpec::Binary8, &key)?;
        let r = self.sample_rows(enc.rows());
        let table = precompute_tokens(&enc, self.policy.audit_rounds, r, &key)?;
        let up = Upload {
            provider: p,
            node: self.pick_node(p, rng)?,
            blob_id: format!("{blob_tag}.{slot}"),
            bytes,
        };
        self.upload_all(std::slice::from_ref(&up))?;
        let token_id = format!("{blob_tag}/tokens/{slot}");
        let entry = ChunkEntry {
            index: 0,
            len: up.bytes.len() as u64,
            digest: digest_hex(&up.bytes),
            blobs: vec![self.location(&up, None)],
            parity: Vec::new(),
            token_table: Some(token_id.clone()),
        };
        Ok((entry, KeyRecord::new(token_id, KeyMaterial::TokenTable(table))))
    }

    fn sample_rows(&self, rows: usize) -> usize {
        match self.policy.audit_sample {
            0 => rows,
            r => r.min(rows),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn split_share(
        &self,
        payload: &[u8],
        decision: &RoutingDecision,
        blob_tag: &str,
        master: &[u8],
        rng: &mut ChaCha20Rng,
        record: &mut ManifestRecord,
        secrets: &mut Vec<KeyRecord>,
    ) -> Result<(), RouterError> {
        if payload.is_empty() {
            return Err(RouterError::InvalidPayload("empty payload".into()));
        }
        let (c, block) = split_geometry(payload.len(), decision.chunks, self.policy.block_size);
        let plan = plan_split(payload, c, block)?;
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(rng);
        let mut slot_of = vec![0; c];
        for (slot, &chunk) in perm.iter().enumerate() {
            slot_of[chunk] = slot;
        }
        let scheme = ShareScheme::new(decision.k, decision.n, FieldSpec::Binary8)?;
        let holders: Vec<usize> = decision.providers.iter().map(|id| self.by_id[id]).collect();
        let n = holders.len();
        let parity = self.policy.parity;

        // every chunk is shared at the longest chunk's length, so share sizes
        // say nothing about which chunk came last
        let chunks = plan.chunks(payload);
        let width = chunks.iter().map(|c| c.len()).max().unwrap_or(0);
        let mut uploads = Vec::new();
        let mut entries = Vec::new();
        for (i, chunk) in chunks.into_iter().enumerate() {
            let slot = slot_of[i];
            let mut padded = chunk.to_vec();
            padded.resize(width, 0);
            record.padding += (width - chunk.len()) as u64;
            let shares = shamir::split(&padded, scheme, blob_tag.as_bytes(), rng)?;
            let blobs: Vec<Vec<u8>> = shares.iter().map(Share::to_bytes).collect();
            let key = chunk_key(master, slot);
            let columns = blobs.iter().map(|b| b.iter().map(|&x| x as Elem).collect()).collect();
            let enc = encode_columns(columns, parity, FieldSpec::Binary8, &key)?;
            let table = precompute_tokens(&enc, self.policy.audit_rounds, self.sample_rows(enc.rows()), &key)?;

            let first = uploads.len();
            for (j, bytes) in blobs.into_iter().enumerate() {
                uploads.push(Upload {
                    provider: holders[j],
                    node: self.pick_node(holders[j], rng)?,
                    blob_id: format!("{blob_tag}.{slot}"),
                    bytes,
                });
            }
            for j in 0..parity {
                let holder = holders[(slot + j) % n];
                uploads.push(Upload {
                    provider: holder,
                    node: self.pick_node(holder, rng)?,
                    blob_id: format!("{blob_tag}.{slot}.p{j}"),
                    bytes: enc.column_bytes(n + j),
                });
            }
            let token_id = format!("{blob_tag}/tokens/{slot}");
            secrets.push(KeyRecord::new(&token_id, KeyMaterial::TokenTable(table)));
            entries.push((first, i, chunk, token_id));
        }
        self.upload_all(&uploads)?;

        for (first, i, chunk, token_id) in entries {
            let ups = &uploads[first..first + n + parity];
            record.chunks.push(ChunkEntry {
                index: i,
                len: chunk.len() as u64,
                digest: digest_hex(chunk),
                blobs: ups[..n]
                    .iter()
                    .enumerate()
                    .map(|(j, u)| self.location(u, Some(j as u16 + 1)))
                    .collect(),
                parity: ups[n..].iter().map(|u| self.location(u, None)).collect(),
                token_table: Some(token_id),
            });
        }
        record.split = Some(SplitInfo {
            cut_points: plan.cut_points.clone(),
            chunk_count: plan.chunk_count,
            objective: plan.objective,
            mode: plan.mode,
        });
        record.sequence_permutation = perm;
        record.k = decision.k;
        record.n = decision.n;
        Ok(())
    }

    fn fetch(&self, loc: &BlobLocation) -> Result<Vec<u8>, RouterError> {
        Ok(self.provider(&loc.provider)?.fetch_blob(loc.node, &loc.blob_id)?)
    }

    /// Fetch a blob and insist on its recorded digest.
    fn fetch_checked(&self, loc: &BlobLocation) -> Result<Vec<u8>, RouterError> {
        let bytes = self.fetch(loc)?;
        if digest_hex(&bytes) != loc.digest {
            return Err(RouterError::IntegrityViolation(format!(
                "{}/node{}/{} does not match its digest",
                loc.provider, loc.node, loc.blob_id
            )));
        }
        Ok(bytes)
    }

    fn key_material(&self, id: &str) -> Result<KeyMaterial, RouterError> {
        Ok(lock(&self.keys).lookup(id)?.material.clone())
    }

    /// Read an object back, verifying every digest on the way.
    pub fn get(&self, object_id: &str) -> Result<DataObject, RouterError> {
        let record = self.record(object_id)?;
        let payload = match record.pipeline {
            PipelineTag::LocalOnly => {
                let id = record.key_ref.as_deref().unwrap_or_default();
                match self.key_material(id)? {
                    KeyMaterial::LocalObject(b) => Payload::from_opaque(record.kind, b)?,
                    _ => return Err(RouterError::IntegrityViolation(format!("{id} is not a stored object"))),
                }
            }
            PipelineTag::PlainSingleCloud => {
                let bytes = self.fetch_checked(&single(&record)?.blobs[0])?;
                Payload::from_opaque(record.kind, bytes)?
            }
            PipelineTag::HomomorphicStore => {
                let kp = self.he_keys(&record)?;
                let mut out = Vec::new();
                for c in self.ciphertexts(&record)? {
                    out.extend_from_slice(&kp.decrypt_i64(&c)?.to_le_bytes());
                }
                Payload::Bytes(out)
            }
            PipelineTag::AnonymizedPartition => {
                let id = record.anonymization_ref.as_deref().unwrap_or_default();
                let KeyMaterial::AnonymizationMapping(mapping) = self.key_material(id)? else {
                    return Err(RouterError::IntegrityViolation(format!("{id} is not a mapping")));
                };
                let mut groups = Vec::new();
                for c in &record.chunks {
                    groups.push(ColumnGroup::from_bytes(&self.fetch_checked(&c.blobs[0])?)?);
                }
                let table = rejoin(&mapping, &groups)?;
                Payload::Table {
                    table,
                    id_columns: mapping.id_columns.clone(),
                    groups: mapping.group_columns.clone(),
                }
            }
            PipelineTag::SplitShareDisperse => Payload::Bytes(self.get_split(&record)?),
        };
        let check = payload.to_opaque();
        if record.pipeline != PipelineTag::AnonymizedPartition && digest_hex(&check) != record.payload_digest {
            return Err(RouterError::IntegrityViolation(format!("{object_id}: payload digest mismatch")));
        }
        Ok(DataObject {
            object_id: record.object_id,
            payload,
            level: record.level,
            ops: record.ops,
        })
    }

    fn get_split(&self, record: &ManifestRecord) -> Result<Vec<u8>, RouterError> {
        let need = record.k as usize;
        let c = record.chunks.len();
        let mut slots = vec![Vec::new(); c];
        let mut slot_of = vec![0; c];
        for (slot, &chunk) in record.sequence_permutation.iter().enumerate() {
            if chunk >= c {
                return Err(RouterError::IntegrityViolation("bad sequence permutation".into()));
            }
            slot_of[chunk] = slot;
        }
        for chunk in &record.chunks {
            let mut good = Vec::with_capacity(need);
            for loc in &chunk.blobs {
                if good.len() == need {
                    break;
                }
                // unavailable, altered or unparsable shares are skipped
                let Ok(bytes) = self.fetch_checked(loc) else { continue };
                let Ok(share) = Share::from_bytes(&bytes) else { continue };
                good.push(share);
            }
            if good.len() < need {
                return Err(RouterError::ReconstructionFailed {
                    chunk: chunk.index,
                    live: good.len(),
                    need,
                });
            }
            let mut bytes = shamir::reconstruct(&good)?;
            if bytes.len() < chunk.len as usize {
                return Err(RouterError::IntegrityViolation(format!("chunk {} is short", chunk.index)));
            }
            bytes.truncate(chunk.len as usize);
            if digest_hex(&bytes) != chunk.digest {
                return Err(RouterError::IntegrityViolation(format!("chunk {} digest mismatch", chunk.index)));
            }
            slots[slot_of[chunk.index]] = bytes;
        }
        Ok(reassemble(&slots, &record.sequence_permutation)?)
    }

    fn he_keys(&self, record: &ManifestRecord) -> Result<KeyPair, RouterError> {
        let id = record.key_ref.as_deref().unwrap_or_default();
        match self.key_material(id)? {
            KeyMaterial::HomomorphicKey(s) => Ok(KeyPair::from_stored(&s)?),
            _ => Err(RouterError::IntegrityViolation(format!("{id} is not a key pair"))),
        }
    }

    fn ciphertexts(&self, record: &ManifestRecord) -> Result<Vec<Ciphertext>, RouterError> {
        let blob = self.fetch_checked(&single(record)?.blobs[0])?;
        let bad = || RouterError::IntegrityViolation("truncated ciphertext list".into());
        let mut out = Vec::new();
        let mut rest = &blob[..];
        while !rest.is_empty() {
            let len = u32::from_le_bytes(rest.get(..4).ok_or_else(bad)?.try_into().unwrap()) as usize;
            let body = rest.get(4..4 + len).ok_or_else(bad)?;
            out.push(Ciphertext::from_bytes(body)?);
            rest = &rest[4 + len..];
        }
        Ok(out)
    }

    /// Sum of the stored values of a homomorphic object. The addition runs
    /// on ciphertexts; only the total is decrypted.
    pub fn homomorphic_sum(&self, object_id: &str) -> Result<i64, RouterError> {
        let record = self.record(object_id)?;
        if record.pipeline != PipelineTag::HomomorphicStore {
            return Err(RouterError::InvalidPayload(format!("{object_id} is not homomorphically stored")));
        }
        let kp = self.he_keys(&record)?;
        let cts = self.ciphertexts(&record)?;
        let mut acc = kp.public.encrypt_i64(0, &mut self.op_rng())?;
        for c in &cts {
            acc = kp.public.add(&acc, c)?;
        }
        Ok(kp.decrypt_i64(&acc)?)
    }

    /// Run `rounds` challenge rounds on every stored column of the object.
    pub fn audit(&self, object_id: &str, rounds: usize) -> Result<AuditReport, RouterError> {
        let record = self.record(object_id)?;
        let mut report = AuditReport {
            object_id: object_id.to_string(),
            entries: Vec::new(),
        };
        for chunk in &record.chunks {
            let Some(tid) = &chunk.token_table else { continue };
            let KeyMaterial::TokenTable(mut table) = self.key_material(tid)? else {
                return Err(RouterError::IntegrityViolation(format!("{tid} is not a token table")));
            };
            let columns: Vec<&BlobLocation> = chunk.columns().collect();
            if columns.len() != table.columns {
                return Err(RouterError::IntegrityViolation(format!("{tid} covers a different column count")));
            }
            for _ in 0..rounds {
                for (j, loc) in columns.iter().enumerate() {
                    let entry = |round, outcome| AuditEntry {
                        chunk: chunk.index,
                        column: j,
                        provider: loc.provider.clone(),
                        node: loc.node,
                        blob_id: loc.blob_id.clone(),
                        round,
                        outcome,
                    };
                    let Some(round) = table.next_round(j) else {
                        report.entries.push(entry(None, AuditOutcome::Exhausted));
                        continue;
                    };
                    let msg = challenge(&mut table, round, j)?;
                    let answer = self
                        .provider(&loc.provider)
                        .map_err(|e| e.to_string())
                        .and_then(|p| {
                            p.answer_challenge(loc.node, &loc.blob_id, &msg.to_bytes())
                                .map_err(|e| e.to_string())
                        })
                        .and_then(|b| ChallengeResponse::from_bytes(&b).map_err(|e| e.to_string()));
                    let outcome = match answer {
                        Err(e) => AuditOutcome::Unreachable(e),
                        Ok(r) if r.round != msg.round || r.column != msg.column => AuditOutcome::Corrupted,
                        Ok(r) => match verify(&table, round, j, r.value)? {
                            Verdict::Intact => AuditOutcome::Intact,
                            Verdict::Corrupted { .. } => AuditOutcome::Corrupted,
                        },
                    };
                    report.entries.push(entry(Some(round), outcome));
                }
            }
            lock(&self.keys).commit(KeyRecord::new(tid, KeyMaterial::TokenTable(table)))?;
        }
        Ok(report)
    }

    /// Element view of a stored column, for tests and tooling.
    pub fn column_elements(&self, loc: &BlobLocation) -> Result<Vec<Elem>, RouterError> {
        Ok(elements_from_bytes(FieldSpec::Binary8, &self.fetch(loc)?)?)
    }
}

fn lookup(store: &ManifestStore, object_id: &str) -> Result<ManifestRecord, RouterError> {
    match store.lookup(object_id) {
        Ok(r) => Ok(r.clone()),
        Err(PersistError::NotFound(_)) => Err(RouterError::NotFound(object_id.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn single(record: &ManifestRecord) -> Result<&ChunkEntry, RouterError> {
    match record.chunks.as_slice() {
        [c] if c.blobs.len() == 1 => Ok(c),
        _ => Err(RouterError::IntegrityViolation(format!(
            "{}: expected a single stored blob",
            record.object_id
        ))),
    }
}
