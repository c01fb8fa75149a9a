//! Policy configuration.
//!
//! Plain `key = value` lines; `#` starts a comment, blank lines are ignored.
//! Later lines override earlier ones.
//!
//! ```text
//! k = 3                    # share threshold (default: majority of n)
//! n = 5                    # shares per chunk (default: provider count)
//! chunks = 8               # upper bound on the chunk count C
//! block_size = 4096        # cut alignment B in bytes
//! parity = 1               # parity columns per chunk for audits
//! audit_rounds = 8         # precomputed challenge rounds
//! audit_sample = 0         # rows per challenge, 0 = whole column
//! he_bits = 2048           # modulus size for the homomorphic pipeline
//! weights = 1,1,1,1        # time, cost, security, privacy
//! credential = sim-credential
//! manifest = /var/lib/cloudsplit/manifest.cmf
//! keystore = /var/lib/cloudsplit/keys.cmf
//!
//! provider.p0.endpoint = dir:/srv/p0   # or mem:
//! provider.p0.time = 120               # raw, lower is better
//! provider.p0.cost = 0.023             # raw, lower is better
//! provider.p0.security = 0.9
//! provider.p0.privacy = 0.8            # defaults to security
//! provider.p0.auth_bypass = 0.01
//! provider.p0.hier_access = 0.5,0.2    # per depth, outermost first
//! provider.p0.info_fraction = 0.2
//! provider.p0.nodes = 2                # defaults to the hier_access length
//! ```
//!
//! Keys under `step.` are left alone for scenario files.

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::ranking::{normalize_profiles, ProviderProfile, RankingError, RawProfile, Weights};
use crate::simcloud::DEFAULT_CREDENTIAL;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {value:?}")]
    BadValue { line: usize, key: String, value: String },
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Split text into entries, in file order.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, PolicyError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(PolicyError::Syntax { line: i + 1 })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(PolicyError::Syntax { line: i + 1 });
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Memory,
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub endpoint: Endpoint,
    pub raw: RawProfile,
    pub nodes: u32,
}

impl ProviderConfig {
    /// Node depths `1..=nodes`.
    pub fn depths(&self) -> Vec<u32> {
        (1..=self.nodes).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub k: Option<u16>,
    pub n: Option<u16>,
    pub chunks: usize,
    pub block_size: usize,
    pub parity: usize,
    pub audit_rounds: usize,
    pub audit_sample: usize,
    pub he_bits: u64,
    pub weights: Weights,
    pub credential: String,
    pub manifest: Option<PathBuf>,
    pub keystore: Option<PathBuf>,
    /// In file order.
    pub providers: Vec<ProviderConfig>,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            k: None,
            n: None,
            chunks: 8,
            block_size: crate::entropy_split::DEFAULT_BLOCK_SIZE,
            parity: 1,
            audit_rounds: 8,
            audit_sample: 0,
            he_bits: crate::homomorphic::SECURE_MODULUS_BITS,
            weights: Weights::equal(),
            credential: DEFAULT_CREDENTIAL.to_string(),
            manifest: None,
            keystore: None,
            providers: Vec::new(),
        }
    }
}

fn num<T: std::str::FromStr>(e: &Entry) -> Result<T, PolicyError> {
    e.value.parse().map_err(|_| bad(e))
}

fn bad(e: &Entry) -> PolicyError {
    PolicyError::BadValue {
        line: e.line,
        key: e.key.clone(),
        value: e.value.clone(),
    }
}

fn list(e: &Entry) -> Result<Vec<f64>, PolicyError> {
    e.value
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad(e)))
        .collect()
}

impl Policy {
    pub fn parse(text: &str) -> Result<Self, PolicyError> {
        Policy::from_entries(&parse_entries(text)?)
    }

    pub fn from_entries(entries: &[Entry]) -> Result<Self, PolicyError> {
        let mut p = Policy::default();
        let mut providers: Vec<(String, ProviderConfig, Option<u32>)> = Vec::new();
        for e in entries {
            match e.key.as_str() {
                "k" => p.k = Some(num(e)?),
                "n" => p.n = Some(num(e)?),
                "chunks" => p.chunks = num(e)?,
                "block_size" => p.block_size = num(e)?,
                "parity" => p.parity = num(e)?,
                "audit_rounds" => p.audit_rounds = num(e)?,
                "audit_sample" => p.audit_sample = num(e)?,
                "he_bits" => p.he_bits = num(e)?,
                "weights" => {
                    let w = list(e)?;
                    if w.len() != 4 {
                        return Err(bad(e));
                    }
                    p.weights = Weights::new(w[0], w[1], w[2], w[3]).map_err(|_| bad(e))?;
                }
                "credential" => p.credential = e.value.clone(),
                "manifest" => p.manifest = Some(PathBuf::from(&e.value)),
                "keystore" => p.keystore = Some(PathBuf::from(&e.value)),
                key if key.starts_with("step.") => {}
                key if key.starts_with("provider.") => {
                    let rest = &key["provider.".len()..];
                    let (id, field) = rest.rsplit_once('.').ok_or_else(|| PolicyError::UnknownKey {
                        line: e.line,
                        key: key.to_string(),
                    })?;
                    let idx = match providers.iter().position(|(pid, _, _)| pid == id) {
                        Some(i) => i,
                        None => {
                            providers.push((
                                id.to_string(),
                                ProviderConfig {
                                    endpoint: Endpoint::Memory,
                                    raw: RawProfile::new(id, 1.0, 1.0, 1.0),
                                    nodes: 1,
                                },
                                None,
                            ));
                            providers.len() - 1
                        }
                    };
                    let (_, cfg, nodes) = &mut providers[idx];
                    match field {
                        "endpoint" => {
                            cfg.endpoint = if e.value == "mem:" {
                                Endpoint::Memory
                            } else if let Some(d) = e.value.strip_prefix("dir:") {
                                Endpoint::Dir(PathBuf::from(d))
                            } else {
                                return Err(bad(e));
                            }
                        }
                        "time" => cfg.raw.time = num(e)?,
                        "cost" => cfg.raw.cost = num(e)?,
                        "security" => cfg.raw.security = num(e)?,
                        "privacy" => cfg.raw.privacy = Some(num(e)?),
                        "auth_bypass" => cfg.raw.p_auth_bypass = num(e)?,
                        "hier_access" => cfg.raw.p_hier_access = list(e)?,
                        "info_fraction" => cfg.raw.info_fraction = num(e)?,
                        "nodes" => *nodes = Some(num(e)?),
                        _ => {
                            return Err(PolicyError::UnknownKey {
                                line: e.line,
                                key: key.to_string(),
                            })
                        }
                    }
                }
                key => {
                    return Err(PolicyError::UnknownKey {
                        line: e.line,
                        key: key.to_string(),
                    })
                }
            }
        }
        for (_, mut cfg, nodes) in providers {
            cfg.nodes = nodes.unwrap_or(cfg.raw.p_hier_access.len() as u32).max(1);
            p.providers.push(cfg);
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let invalid = |m: &str| Err(PolicyError::Invalid(m.to_string()));
        if self.chunks == 0 {
            return invalid("chunks must be at least 1");
        }
        if self.block_size == 0 {
            return invalid("block_size must be at least 1");
        }
        if self.audit_rounds == 0 {
            return invalid("audit_rounds must be at least 1");
        }
        if self.k == Some(0) || self.n == Some(0) {
            return invalid("k and n must be at least 1");
        }
        if let (Some(k), Some(n)) = (self.k, self.n) {
            if k > n {
                return invalid("k must not exceed n");
            }
        }
        if !self.providers.is_empty() {
            self.profiles()?;
        }
        Ok(())
    }

    pub fn provider(&self, id: &str) -> Option<&ProviderConfig> {
        self.providers.iter().find(|p| p.raw.id == id)
    }

    /// Normalized profiles of the configured providers, in file order.
    pub fn profiles(&self) -> Result<Vec<ProviderProfile>, PolicyError> {
        let raw: Vec<RawProfile> = self.providers.iter().map(|p| p.raw.clone()).collect();
        let profiles = normalize_profiles(&raw)?;
        for (cfg, prof) in self.providers.iter().zip(&profiles) {
            if prof.p_hier_access.len() < cfg.nodes as usize {
                return Err(PolicyError::Invalid(format!(
                    "provider {} has {} nodes but {} hier_access levels",
                    prof.id,
                    cfg.nodes,
                    prof.p_hier_access.len()
                )));
            }
        }
        Ok(profiles)
    }

    /// Providers keyed by id, for lookups.
    pub fn provider_ids(&self) -> BTreeMap<&str, usize> {
        self.providers
            .iter()
            .enumerate()
            .map(|(i, p)| (p.raw.id.as_str(), i))
            .collect()
    }
}
