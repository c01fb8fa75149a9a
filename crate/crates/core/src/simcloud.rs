//! In-process storage providers with injectable faults.
//!
//! [`CloudProvider`] is the interface the dispatcher talks to; [`SimProvider`]
//! implements it with per-node blob maps held in memory and optionally
//! mirrored to a directory so that state survives between CLI runs.
//!
//! Faults model the attack menu the dispatcher has to survive:
//!
//! * [`Fault::NodeUnavailable`]: a node stops answering (denial of service).
//! * [`Fault::CorruptBlob`]: a stored byte is XORed with a mask. Fetches
//!   return the damaged bytes without complaint; catching it is the job of
//!   digests and audits.
//! * [`Fault::InsiderDump`]: the provider's staff read everything they hold.
//!   [`SimCloud::insider_dump`] gives that view whether or not the fault is
//!   active; the fault only marks the provider as compromised.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

use crate::integrity::{compute_response, elements_from_bytes, ChallengeMessage, ChallengeResponse};

pub const DEFAULT_CREDENTIAL: &str = "sim-credential";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("{provider}/node{node} is unavailable")]
    Unavailable { provider: String, node: u32 },
    #[error("{provider}/node{node} has no blob {blob_id:?}")]
    UnknownBlob {
        provider: String,
        node: u32,
        blob_id: String,
    },
    #[error("{provider} has no node {node}")]
    UnknownNode { provider: String, node: u32 },
    #[error("fault target does not exist: {0}")]
    UnknownTarget(String),
    #[error("blob id {0:?} is not allowed")]
    InvalidBlobId(String),
    #[error("bad challenge: {0}")]
    BadChallenge(String),
    #[error("storage io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeInfo {
    pub index: u32,
    /// Hierarchy level, 1 = outermost.
    pub depth: u32,
}

/// What a storage backend must offer the dispatcher.
pub trait CloudProvider: Send + Sync {
    fn id(&self) -> &str;
    fn nodes(&self) -> Vec<NodeInfo>;
    fn authenticate(&self, credential: &str) -> bool;
    fn store_blob(&self, node: u32, blob_id: &str, bytes: &[u8]) -> Result<(), ProviderError>;
    fn fetch_blob(&self, node: u32, blob_id: &str) -> Result<Vec<u8>, ProviderError>;
    /// Answer a `CIT1` challenge over a stored blob with a `CIT1` response.
    fn answer_challenge(&self, node: u32, blob_id: &str, challenge: &[u8]) -> Result<Vec<u8>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fault {
    NodeUnavailable {
        provider: String,
        node: u32,
    },
    CorruptBlob {
        provider: String,
        node: u32,
        blob_id: String,
        offset: usize,
        mask: u8,
    },
    InsiderDump {
        provider: String,
    },
}

impl Fault {
    pub fn provider(&self) -> &str {
        match self {
            Fault::NodeUnavailable { provider, .. }
            | Fault::CorruptBlob { provider, .. }
            | Fault::InsiderDump { provider } => provider,
        }
    }
}

/// One blob as an insider sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpedBlob {
    pub provider: String,
    pub node: u32,
    pub depth: u32,
    pub blob_id: String,
    pub bytes: Vec<u8>,
}

#[derive(Default)]
struct SimState {
    blobs: BTreeMap<(u32, String), Vec<u8>>,
    faults: BTreeSet<Fault>,
}

pub struct SimProvider {
    id: String,
    nodes: Vec<NodeInfo>,
    credential: String,
    dir: Option<PathBuf>,
    state: Mutex<SimState>,
}

fn valid_blob_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.')
        && !id.starts_with('.')
}

impl SimProvider {
    /// In-memory provider; `depths[i]` is the hierarchy depth of node `i`.
    pub fn new(id: impl Into<String>, depths: &[u32]) -> Self {
        SimProvider {
            id: id.into(),
            nodes: depths
                .iter()
                .enumerate()
                .map(|(i, &d)| NodeInfo {
                    index: i as u32,
                    depth: d.max(1),
                })
                .collect(),
            credential: DEFAULT_CREDENTIAL.to_string(),
            dir: None,
            state: Mutex::new(SimState::default()),
        }
    }

    pub fn with_credential(mut self, credential: impl Into<String>) -> Self {
        self.credential = credential.into();
        self
    }

    /// Provider mirrored to `dir/node-<i>/<blob id>`; existing blobs are
    /// loaded.
    pub fn open_dir(id: impl Into<String>, depths: &[u32], dir: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let mut p = SimProvider::new(id, depths);
        let dir = dir.as_ref().to_path_buf();
        let io = |e: std::io::Error| ProviderError::Io(e.to_string());
        let mut state = SimState::default();
        for node in &p.nodes {
            let nd = dir.join(format!("node-{}", node.index));
            fs::create_dir_all(&nd).map_err(io)?;
            for entry in fs::read_dir(&nd).map_err(io)? {
                let entry = entry.map_err(io)?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if valid_blob_id(&name) {
                    state
                        .blobs
                        .insert((node.index, name), fs::read(entry.path()).map_err(io)?);
                }
            }
        }
        p.dir = Some(dir);
        p.state = Mutex::new(state);
        Ok(p)
    }

    fn lock(&self) -> MutexGuard<'_, SimState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn check_node(&self, node: u32, state: &SimState) -> Result<(), ProviderError> {
        if node as usize >= self.nodes.len() {
            return Err(ProviderError::UnknownNode {
                provider: self.id.clone(),
                node,
            });
        }
        let down = Fault::NodeUnavailable {
            provider: self.id.clone(),
            node,
        };
        if state.faults.contains(&down) {
            return Err(ProviderError::Unavailable {
                provider: self.id.clone(),
                node,
            });
        }
        Ok(())
    }

    fn persist(&self, node: u32, blob_id: &str, bytes: &[u8]) -> Result<(), ProviderError> {
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("node-{node}")).join(blob_id);
            fs::write(path, bytes).map_err(|e| ProviderError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn inject(&self, fault: &Fault) -> Result<(), ProviderError> {
        if fault.provider() != self.id {
            return Err(ProviderError::UnknownTarget(format!("{fault:?}")));
        }
        let mut st = self.lock();
        match fault {
            Fault::NodeUnavailable { node, .. } if *node as usize >= self.nodes.len() => {
                return Err(ProviderError::UnknownTarget(format!("node {node}")));
            }
            Fault::CorruptBlob {
                node,
                blob_id,
                offset,
                mask,
                ..
            } => {
                if st.faults.contains(fault) {
                    return Ok(());
                }
                let key = (*node, blob_id.clone());
                let blob = st
                    .blobs
                    .get_mut(&key)
                    .filter(|b| *offset < b.len())
                    .ok_or_else(|| ProviderError::UnknownTarget(format!("{blob_id}@{offset}")))?;
                blob[*offset] ^= mask;
                let snapshot = blob.clone();
                self.persist(*node, blob_id, &snapshot)?;
            }
            _ => {}
        }
        st.faults.insert(fault.clone());
        Ok(())
    }

    pub fn clear(&self, fault: &Fault) -> Result<(), ProviderError> {
        if fault.provider() != self.id {
            return Err(ProviderError::UnknownTarget(format!("{fault:?}")));
        }
        let mut st = self.lock();
        if !st.faults.remove(fault) {
            return Ok(());
        }
        if let Fault::CorruptBlob {
            node,
            blob_id,
            offset,
            mask,
            ..
        } = fault
        {
            if let Some(blob) = st.blobs.get_mut(&(*node, blob_id.clone())) {
                blob[*offset] ^= mask;
                let snapshot = blob.clone();
                self.persist(*node, blob_id, &snapshot)?;
            }
        }
        Ok(())
    }

    pub fn faults(&self) -> Vec<Fault> {
        self.lock().faults.iter().cloned().collect()
    }

    pub fn is_compromised(&self) -> bool {
        let f = Fault::InsiderDump {
            provider: self.id.clone(),
        };
        self.lock().faults.contains(&f)
    }

    /// Everything this provider stores, ordered by `(node, blob id)`.
    pub fn insider_dump(&self) -> Vec<DumpedBlob> {
        self.lock()
            .blobs
            .iter()
            .map(|((node, blob_id), bytes)| DumpedBlob {
                provider: self.id.clone(),
                node: *node,
                depth: self.nodes[*node as usize].depth,
                blob_id: blob_id.clone(),
                bytes: bytes.clone(),
            })
            .collect()
    }

    pub fn blob_count(&self) -> usize {
        self.lock().blobs.len()
    }
}

impl CloudProvider for SimProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn nodes(&self) -> Vec<NodeInfo> {
        self.nodes.clone()
    }

    fn authenticate(&self, credential: &str) -> bool {
        credential == self.credential
    }

    fn store_blob(&self, node: u32, blob_id: &str, bytes: &[u8]) -> Result<(), ProviderError> {
        if !valid_blob_id(blob_id) {
            return Err(ProviderError::InvalidBlobId(blob_id.to_string()));
        }
        let mut st = self.lock();
        self.check_node(node, &st)?;
        self.persist(node, blob_id, bytes)?;
        st.blobs.insert((node, blob_id.to_string()), bytes.to_vec());
        Ok(())
    }

    fn fetch_blob(&self, node: u32, blob_id: &str) -> Result<Vec<u8>, ProviderError> {
        let st = self.lock();
        self.check_node(node, &st)?;
        st.blobs
            .get(&(node, blob_id.to_string()))
            .cloned()
            .ok_or_else(|| ProviderError::UnknownBlob {
                provider: self.id.clone(),
                node,
                blob_id: blob_id.to_string(),
            })
    }

    fn answer_challenge(&self, node: u32, blob_id: &str, challenge: &[u8]) -> Result<Vec<u8>, ProviderError> {
        let bytes = self.fetch_blob(node, blob_id)?;
        let bad = |e: crate::integrity::IntegrityError| ProviderError::BadChallenge(e.to_string());
        let msg = ChallengeMessage::from_bytes(challenge).map_err(bad)?;
        let column = elements_from_bytes(msg.field, &bytes).map_err(bad)?;
        let value = compute_response(&column, &msg).map_err(bad)?;
        Ok(ChallengeResponse {
            round: msg.round,
            column: msg.column,
            value,
        }
        .to_bytes())
    }
}

/// A set of simulated providers addressed by id.
#[derive(Clone, Default)]
pub struct SimCloud {
    providers: Vec<Arc<SimProvider>>,
}

impl SimCloud {
    pub fn new(providers: Vec<SimProvider>) -> Self {
        SimCloud {
            providers: providers.into_iter().map(Arc::new).collect(),
        }
    }

    /// `count` in-memory providers `p0, p1, ...`, each with `nodes` nodes at
    /// depths `1..=nodes`.
    pub fn uniform(count: usize, nodes: u32) -> Self {
        let depths: Vec<u32> = (1..=nodes.max(1)).collect();
        SimCloud::new(
            (0..count)
                .map(|i| SimProvider::new(format!("p{i}"), &depths))
                .collect(),
        )
    }

    pub fn providers(&self) -> &[Arc<SimProvider>] {
        &self.providers
    }

    /// The providers as trait objects, in the same order.
    pub fn handles(&self) -> Vec<Arc<dyn CloudProvider>> {
        self.providers
            .iter()
            .map(|p| p.clone() as Arc<dyn CloudProvider>)
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&Arc<SimProvider>> {
        self.providers.iter().find(|p| p.id == id)
    }

    fn target(&self, fault: &Fault) -> Result<&Arc<SimProvider>, ProviderError> {
        self.get(fault.provider())
            .ok_or_else(|| ProviderError::UnknownTarget(fault.provider().to_string()))
    }

    pub fn inject(&self, fault: Fault) -> Result<(), ProviderError> {
        self.target(&fault)?.inject(&fault)
    }

    pub fn clear(&self, fault: Fault) -> Result<(), ProviderError> {
        self.target(&fault)?.clear(&fault)
    }

    /// Mark every node of `provider` unavailable.
    pub fn disable_provider(&self, provider: &str) -> Result<(), ProviderError> {
        let p = self
            .get(provider)
            .ok_or_else(|| ProviderError::UnknownTarget(provider.to_string()))?;
        for n in &p.nodes {
            p.inject(&Fault::NodeUnavailable {
                provider: provider.to_string(),
                node: n.index,
            })?;
        }
        Ok(())
    }

    pub fn enable_provider(&self, provider: &str) -> Result<(), ProviderError> {
        let p = self
            .get(provider)
            .ok_or_else(|| ProviderError::UnknownTarget(provider.to_string()))?;
        for n in &p.nodes {
            p.clear(&Fault::NodeUnavailable {
                provider: provider.to_string(),
                node: n.index,
            })?;
        }
        Ok(())
    }

    pub fn insider_dump(&self, provider: &str) -> Result<Vec<DumpedBlob>, ProviderError> {
        self.get(provider)
            .map(|p| p.insider_dump())
            .ok_or_else(|| ProviderError::UnknownTarget(provider.to_string()))
    }

    /// Dumps of every provider with an active [`Fault::InsiderDump`].
    pub fn leaked(&self) -> Vec<DumpedBlob> {
        self.providers
            .iter()
            .filter(|p| p.is_compromised())
            .flat_map(|p| p.insider_dump())
            .collect()
    }
}
