//! Local manifest and keystore.
//!
//! Both are append-only record logs with the same framing:
//!
//! ```text
//! file   := "CMF1" record*
//! record := len:u32le crc32:u32le payload[len]
//! ```
//!
//! The CRC-32 (IEEE) covers the payload, which is a JSON document. A record
//! is visible only once all of its bytes are on disk and the checksum
//! matches, so a crash mid-append leaves the earlier records intact and a
//! detectable tail. Opening a log with such a tail fails with
//! [`PersistError::CorruptStore`]; [`RecordLog::scan`] still returns the
//! complete records and [`RecordLog::repair`] cuts the tail off.
//!
//! Records are never rewritten. Committing a new record for an existing key
//! appends the next version.
//!
//! One process writes at a time: a writer holds an exclusive advisory lock on
//! the file for as long as the log is open. Readers use [`RecordLog::scan`]
//! and take no lock.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions, TryLockError};
use std::io::{Read, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymize::LocalMapping;
use crate::entropy_split::SplitMode;
use crate::homomorphic::StoredKeyPair;
use crate::integrity::TokenTable;
use crate::router::{OperationClass, SecretLevel};

pub const STORE_MAGIC: &[u8; 4] = b"CMF1";
const FRAME_HEADER: usize = 8;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: corrupt store at byte {offset} ({complete_records} complete records before it)")]
    CorruptStore {
        path: PathBuf,
        offset: u64,
        complete_records: usize,
    },
    #[error("{0}: not a record store")]
    BadHeader(PathBuf),
    #[error("{0} is locked by another writer")]
    Locked(PathBuf),
    #[error("{0:?} not found")]
    NotFound(String),
    #[error("record does not decode: {0}")]
    Decode(String),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a scan ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Clean,
    /// The file ends inside a header or record.
    Truncated { offset: u64 },
    ChecksumMismatch { offset: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanResult {
    pub records: Vec<Vec<u8>>,
    /// Length of the prefix made of the header and complete records.
    pub valid_len: u64,
    pub tail: Tail,
}

/// Parse a log image. Only a wrong magic is an error; damage after it is
/// reported through [`ScanResult::tail`].
pub fn scan_bytes(bytes: &[u8]) -> Result<ScanResult, &'static str> {
    if bytes.is_empty() {
        return Ok(ScanResult {
            records: Vec::new(),
            valid_len: 0,
            tail: Tail::Clean,
        });
    }
    if bytes.len() < STORE_MAGIC.len() {
        if STORE_MAGIC.starts_with(bytes) {
            return Ok(ScanResult {
                records: Vec::new(),
                valid_len: 0,
                tail: Tail::Truncated { offset: 0 },
            });
        }
        return Err("bad magic");
    }
    if &bytes[..4] != STORE_MAGIC {
        return Err("bad magic");
    }
    let mut records = Vec::new();
    let mut pos = 4usize;
    let tail = loop {
        if pos == bytes.len() {
            break Tail::Clean;
        }
        if bytes.len() - pos < FRAME_HEADER {
            break Tail::Truncated { offset: pos as u64 };
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        let start = pos + FRAME_HEADER;
        if bytes.len() - start < len {
            break Tail::Truncated { offset: pos as u64 };
        }
        let payload = &bytes[start..start + len];
        if crc32fast::hash(payload) != crc {
            break Tail::ChecksumMismatch { offset: pos as u64 };
        }
        records.push(payload.to_vec());
        pos = start + len;
    };
    Ok(ScanResult {
        records,
        valid_len: pos as u64,
        tail,
    })
}

/// Encode one record frame.
pub fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// An open, exclusively locked record log.
pub struct RecordLog {
    path: PathBuf,
    file: File,
    records: Vec<Vec<u8>>,
}

impl RecordLog {
    /// Open or create the log at `path` for writing.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        match file.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(PersistError::Locked(path)),
            Err(TryLockError::Error(e)) => return Err(e.into()),
        }
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let scan = scan_bytes(&bytes).map_err(|_| PersistError::BadHeader(path.clone()))?;
        match scan.tail {
            Tail::Clean => {}
            Tail::Truncated { offset } | Tail::ChecksumMismatch { offset } => {
                return Err(PersistError::CorruptStore {
                    path,
                    offset,
                    complete_records: scan.records.len(),
                })
            }
        }
        if bytes.is_empty() {
            file.write_all(STORE_MAGIC)?;
            file.sync_all()?;
        }
        Ok(RecordLog {
            path,
            file,
            records: scan.records,
        })
    }

    /// Read whatever complete records the file holds, without locking.
    pub fn scan(path: impl AsRef<Path>) -> Result<ScanResult, PersistError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        scan_bytes(&bytes).map_err(|_| PersistError::BadHeader(path.to_path_buf()))
    }

    /// Drop a damaged tail so the log opens again. Returns what was found.
    pub fn repair(path: impl AsRef<Path>) -> Result<ScanResult, PersistError> {
        let path = path.as_ref();
        let scan = RecordLog::scan(path)?;
        if scan.tail != Tail::Clean {
            let f = OpenOptions::new().write(true).open(path)?;
            f.try_lock().map_err(|_| PersistError::Locked(path.to_path_buf()))?;
            f.set_len(scan.valid_len)?;
            f.sync_all()?;
        }
        Ok(scan)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[Vec<u8>] {
        &self.records
    }

    /// Append and flush one record; returns only once it is durable.
    pub fn append(&mut self, payload: &[u8]) -> Result<(), PersistError> {
        if payload.len() > u32::MAX as usize {
            return Err(PersistError::Invalid("record too large".into()));
        }
        self.file.seek(SeekFrom::End(0))?;
        self.file.write_all(&frame(payload))?;
        self.file.sync_data()?;
        self.records.push(payload.to_vec());
        Ok(())
    }

    /// Several records with a single flush.
    pub fn append_all(&mut self, payloads: &[Vec<u8>]) -> Result<(), PersistError> {
        if payloads.iter().any(|p| p.len() > u32::MAX as usize) {
            return Err(PersistError::Invalid("record too large".into()));
        }
        let bytes: Vec<u8> = payloads.iter().flat_map(|p| frame(p)).collect();
        self.file.seek(SeekFrom::End(0))?;
        self.file.write_all(&bytes)?;
        self.file.sync_data()?;
        self.records.extend(payloads.iter().cloned());
        Ok(())
    }
}

/// Something stored under a key with a version number.
pub trait Versioned: Serialize + DeserializeOwned + Clone {
    fn key(&self) -> &str;
    fn version(&self) -> u64;
    fn set_version(&mut self, version: u64);
}

/// A record log indexed by key, each key holding ascending versions.
pub struct VersionedStore<T> {
    log: RecordLog,
    index: BTreeMap<String, Vec<T>>,
    _marker: PhantomData<T>,
}

impl<T: Versioned> VersionedStore<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        let log = RecordLog::open(path)?;
        let mut index: BTreeMap<String, Vec<T>> = BTreeMap::new();
        for raw in log.records() {
            let rec: T = serde_json::from_slice(raw).map_err(|e| PersistError::Decode(e.to_string()))?;
            index.entry(rec.key().to_string()).or_default().push(rec);
        }
        for versions in index.values_mut() {
            versions.sort_by_key(|r| r.version());
        }
        Ok(VersionedStore {
            log,
            index,
            _marker: PhantomData,
        })
    }

    /// Append `record` as the next version of its key.
    pub fn commit(&mut self, mut record: T) -> Result<u64, PersistError> {
        let versions = self.index.entry(record.key().to_string()).or_default();
        let version = versions.last().map_or(1, |r| r.version() + 1);
        record.set_version(version);
        let bytes = serde_json::to_vec(&record).map_err(|e| PersistError::Invalid(e.to_string()))?;
        self.log.append(&bytes)?;
        versions.push(record);
        Ok(version)
    }

    /// Commit a batch with one flush; returns the assigned versions.
    pub fn commit_all(&mut self, mut records: Vec<T>) -> Result<Vec<u64>, PersistError> {
        let mut next: BTreeMap<String, u64> = BTreeMap::new();
        let mut payloads = Vec::with_capacity(records.len());
        for r in &mut records {
            let v = next.entry(r.key().to_string()).or_insert_with(|| {
                self.index.get(r.key()).and_then(|v| v.last()).map_or(1, |l| l.version() + 1)
            });
            r.set_version(*v);
            *v += 1;
            payloads.push(serde_json::to_vec(r).map_err(|e| PersistError::Invalid(e.to_string()))?);
        }
        self.log.append_all(&payloads)?;
        let versions = records.iter().map(|r| r.version()).collect();
        for r in records {
            self.index.entry(r.key().to_string()).or_default().push(r);
        }
        Ok(versions)
    }

    pub fn lookup(&self, key: &str) -> Result<&T, PersistError> {
        self.index
            .get(key)
            .and_then(|v| v.last())
            .ok_or_else(|| PersistError::NotFound(key.to_string()))
    }

    pub fn history(&self, key: &str) -> Result<&[T], PersistError> {
        self.index
            .get(key)
            .map(|v| v.as_slice())
            .ok_or_else(|| PersistError::NotFound(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(|k| k.as_str())
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PipelineTag {
    LocalOnly,
    PlainSingleCloud,
    SplitShareDisperse,
    HomomorphicStore,
    AnonymizedPartition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectKind {
    Bytes,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobLocation {
    pub provider: String,
    pub node: u32,
    pub blob_id: String,
    /// Shamir evaluation point, for share blobs.
    pub x: Option<u16>,
    /// Hex SHA-256 of the blob as uploaded.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub index: usize,
    pub len: u64,
    /// Hex SHA-256 of the plaintext chunk.
    pub digest: String,
    /// Data columns: shares, or the single stored blob.
    pub blobs: Vec<BlobLocation>,
    pub parity: Vec<BlobLocation>,
    /// Keystore id of the chunk's token table.
    pub token_table: Option<String>,
}

impl ChunkEntry {
    /// Columns in integrity order: data blobs, then parity.
    pub fn columns(&self) -> impl Iterator<Item = &BlobLocation> {
        self.blobs.iter().chain(&self.parity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub cut_points: Vec<usize>,
    pub chunk_count: usize,
    pub objective: f64,
    pub mode: SplitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub object_id: String,
    pub version: u64,
    pub pipeline: PipelineTag,
    pub level: SecretLevel,
    pub ops: OperationClass,
    pub kind: ObjectKind,
    pub payload_len: u64,
    pub payload_digest: String,
    pub split: Option<SplitInfo>,
    /// `sequence_permutation[slot]` is the chunk uploaded in `slot`.
    pub sequence_permutation: Vec<usize>,
    pub k: u16,
    pub n: u16,
    pub chunks: Vec<ChunkEntry>,
    pub anonymization_ref: Option<String>,
    /// Keystore id of the key material (HE key pair, master key).
    pub key_ref: Option<String>,
    /// Zero bytes added in total so every chunk is shared at one length.
    pub padding: u64,
}

impl ManifestRecord {
    pub fn new(
        object_id: impl Into<String>,
        pipeline: PipelineTag,
        level: SecretLevel,
        ops: OperationClass,
        kind: ObjectKind,
    ) -> Self {
        ManifestRecord {
            object_id: object_id.into(),
            version: 0,
            pipeline,
            level,
            ops,
            kind,
            payload_len: 0,
            payload_digest: String::new(),
            split: None,
            sequence_permutation: Vec::new(),
            k: 0,
            n: 0,
            chunks: Vec::new(),
            anonymization_ref: None,
            key_ref: None,
            padding: 0,
        }
    }

    /// Every blob must name a node that `known` accepts.
    pub fn validate(&self, known: impl Fn(&str, u32) -> bool) -> Result<(), PersistError> {
        for c in &self.chunks {
            for loc in c.columns() {
                if !known(&loc.provider, loc.node) {
                    return Err(PersistError::Invalid(format!(
                        "{}/node{} is not a known location",
                        loc.provider, loc.node
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Versioned for ManifestRecord {
    fn key(&self) -> &str {
        &self.object_id
    }
    fn version(&self) -> u64 {
        self.version
    }
    fn set_version(&mut self, version: u64) {
        self.version = version;
    }
}

pub type ManifestStore = VersionedStore<ManifestRecord>;

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KeyMaterial {
    MasterKey(#[serde(with = "hex_bytes")] Vec<u8>),
    Salt(#[serde(with = "hex_bytes")] Vec<u8>),
    HomomorphicKey(StoredKeyPair),
    TokenTable(TokenTable),
    AnonymizationMapping(LocalMapping),
    /// Payload kept on the trusted side only.
    LocalObject(#[serde(with = "hex_bytes")] Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub id: String,
    pub version: u64,
    pub material: KeyMaterial,
}

impl KeyRecord {
    pub fn new(id: impl Into<String>, material: KeyMaterial) -> Self {
        KeyRecord {
            id: id.into(),
            version: 0,
            material,
        }
    }
}

impl Versioned for KeyRecord {
    fn key(&self) -> &str {
        &self.id
    }
    fn version(&self) -> u64 {
        self.version
    }
    fn set_version(&mut self, version: u64) {
        self.version = version;
    }
}

pub type KeyStore = VersionedStore<KeyRecord>;
