//! Scripted fault scenarios.
//!
//! A scenario file is a policy file with extra `step.N` keys, run in
//! ascending `N`:
//!
//! ```text
//! step.1 = put doc secret none 4000
//! step.2 = disable p0
//! step.3 = disable p1
//! step.4 = get doc -> ok
//! step.5 = disable p2
//! step.6 = get doc -> reconstruction_failed
//! step.7 = corrupt doc 0 3
//! step.8 = audit doc 1 -> corrupted
//! step.9 = dump p4 -> safe
//! ```
//!
//! Actions:
//!
//! * `put ID LEVEL OPS SIZE`: store SIZE seeded random bytes (for `basic`
//!   operations SIZE counts i64 values). Outcome `ok` or an error code.
//! * `get ID`: `ok` when the bytes match what was put, else `mismatch` or an
//!   error code.
//! * `audit ID ROUNDS`: `intact`, `corrupted`, `unreachable` or an error code.
//! * `disable P`, `enable P`: take every node of a provider down or up.
//! * `corrupt ID CHUNK COLUMN`: flip one bit in the middle of a stored column.
//! * `dump P`: the provider's insider reads everything. `safe` when no chunk
//!   of any split object can be rebuilt from that dump and no secret
//!   plaintext appears in it, else `exposed`.
//!
//! `-> EXPECTED` after any action turns its outcome into a check.
//!
//! Without `provider.*` keys the scenario runs against five in-memory
//! providers `p0` to `p4` with one node each.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::persistence::{KeyStore, ManifestStore, PipelineTag};
use crate::policy::{parse_entries, Policy, PolicyError};
use crate::router::{exposure, sim_cloud, AuditOutcome, DataObject, Dispatcher, OperationClass, Payload, RouterError, SecretLevel};
use crate::simcloud::{Fault, SimCloud};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    BadStep { line: usize, reason: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Put {
        id: String,
        level: SecretLevel,
        ops: OperationClass,
        size: usize,
    },
    Get { id: String },
    Audit { id: String, rounds: usize },
    Disable { provider: String },
    Enable { provider: String },
    Corrupt { id: String, chunk: usize, column: usize },
    Dump { provider: String },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Put { .. } => "put",
            Action::Get { .. } => "get",
            Action::Audit { .. } => "audit",
            Action::Disable { .. } => "disable",
            Action::Enable { .. } => "enable",
            Action::Corrupt { .. } => "corrupt",
            Action::Dump { .. } => "dump",
        }
    }

    pub fn target(&self) -> &str {
        match self {
            Action::Put { id, .. } | Action::Get { id } | Action::Audit { id, .. } | Action::Corrupt { id, .. } => id,
            Action::Disable { provider } | Action::Enable { provider } | Action::Dump { provider } => provider,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub index: u64,
    pub action: Action,
    pub expect: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub policy: Policy,
    pub steps: Vec<Step>,
}

fn parse_step(line: usize, index: u64, text: &str) -> Result<Step, ScenarioError> {
    let bad = |reason: &str| ScenarioError::BadStep {
        line,
        reason: reason.to_string(),
    };
    let (body, expect) = match text.split_once("->") {
        Some((b, e)) => (b, Some(e.trim().to_string())),
        None => (text, None),
    };
    let words: Vec<&str> = body.split_whitespace().collect();
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("{s:?} is not a count")));
    let action = match words.as_slice() {
        ["put", id, level, ops, size] => Action::Put {
            id: id.to_string(),
            level: SecretLevel::parse(level).ok_or_else(|| bad("unknown level"))?,
            ops: OperationClass::parse(ops).ok_or_else(|| bad("unknown operation class"))?,
            size: int(size)?,
        },
        ["get", id] => Action::Get { id: id.to_string() },
        ["audit", id, rounds] => Action::Audit {
            id: id.to_string(),
            rounds: int(rounds)?,
        },
        ["disable", p] => Action::Disable { provider: p.to_string() },
        ["enable", p] => Action::Enable { provider: p.to_string() },
        ["corrupt", id, chunk, column] => Action::Corrupt {
            id: id.to_string(),
            chunk: int(chunk)?,
            column: int(column)?,
        },
        ["dump", p] => Action::Dump { provider: p.to_string() },
        _ => return Err(bad("unrecognized step")),
    };
    if expect.as_deref() == Some("") {
        return Err(bad("empty expectation"));
    }
    Ok(Step { index, action, expect })
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let entries = parse_entries(text)?;
        let policy = Policy::from_entries(&entries)?;
        let mut steps = BTreeMap::new();
        for e in &entries {
            let Some(n) = e.key.strip_prefix("step.") else { continue };
            let index: u64 = n.parse().map_err(|_| ScenarioError::BadStep {
                line: e.line,
                reason: format!("step number {n:?}"),
            })?;
            steps.insert(index, parse_step(e.line, index, &e.value)?);
        }
        Ok(Scenario {
            policy,
            steps: steps.into_values().collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Scenario::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepResult {
    pub index: u64,
    pub action: &'static str,
    pub target: String,
    pub outcome: String,
    pub expect: Option<String>,
}

impl StepResult {
    pub fn passed(&self) -> bool {
        self.expect.as_ref().is_none_or(|e| *e == self.outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioReport {
    pub steps: Vec<StepResult>,
}

impl ScenarioReport {
    pub fn failures(&self) -> usize {
        self.steps.iter().filter(|s| !s.passed()).count()
    }
}

/// Seeded payload for a `put` step.
pub fn step_payload(seed: u64, step: u64, size: usize) -> Vec<u8> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut out = vec![0u8; size];
    rng.fill_bytes(&mut out);
    out
}

/// Values for `basic` puts stay small so sums never wrap.
fn basic_payload(seed: u64, step: u64, count: usize) -> Vec<u8> {
    step_payload(seed, step, count * 8)
        .chunks_exact(8)
        .flat_map(|c| (i64::from_le_bytes(c.try_into().unwrap()) >> 24).to_le_bytes())
        .collect()
}

fn outcome_of(e: &RouterError) -> String {
    e.code().to_string()
}

/// Run every step against fresh simulated providers and a scratch manifest.
pub fn run(scenario: &Scenario, seed: u64) -> Result<ScenarioReport, ScenarioError> {
    let scratch = tempfile::tempdir()?;
    let cloud = sim_cloud(&scenario.policy)?;
    let cloud = if cloud.providers().is_empty() {
        SimCloud::uniform(5, 1)
    } else {
        cloud
    };
    let dispatcher = Dispatcher::new(
        scenario.policy.clone(),
        cloud.handles(),
        ManifestStore::open(scratch.path().join("manifest.cmf")).map_err(RouterError::from)?,
        KeyStore::open(scratch.path().join("keys.cmf")).map_err(RouterError::from)?,
        seed,
    )?;
    let mut originals: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut steps = Vec::new();
    for step in &scenario.steps {
        let outcome = match &step.action {
            Action::Put { id, level, ops, size } => {
                let bytes = if *ops == OperationClass::BasicOperations {
                    basic_payload(seed, step.index, *size)
                } else {
                    step_payload(seed, step.index, *size)
                };
                match dispatcher.put(&DataObject::bytes(id, bytes.clone(), *level, *ops)) {
                    Ok(_) => {
                        originals.insert(id.clone(), bytes);
                        "ok".to_string()
                    }
                    Err(e) => outcome_of(&e),
                }
            }
            Action::Get { id } => match dispatcher.get(id) {
                Ok(obj) if Some(&obj.payload) == originals.get(id).map(|b| Payload::Bytes(b.clone())).as_ref() => {
                    "ok".to_string()
                }
                Ok(_) => "mismatch".to_string(),
                Err(e) => outcome_of(&e),
            },
            Action::Audit { id, rounds } => match dispatcher.audit(id, *rounds) {
                Ok(r) if r.corrupted().next().is_some() => "corrupted".to_string(),
                Ok(r) if r.entries.iter().any(|e| matches!(e.outcome, AuditOutcome::Unreachable(_))) => {
                    "unreachable".to_string()
                }
                Ok(r) if r.entries.iter().any(|e| e.outcome == AuditOutcome::Exhausted) => "exhausted".to_string(),
                Ok(_) => "intact".to_string(),
                Err(e) => outcome_of(&e),
            },
            Action::Disable { provider } => match cloud.disable_provider(provider) {
                Ok(()) => "ok".to_string(),
                Err(_) => "unknown_provider".to_string(),
            },
            Action::Enable { provider } => match cloud.enable_provider(provider) {
                Ok(()) => "ok".to_string(),
                Err(_) => "unknown_provider".to_string(),
            },
            Action::Corrupt { id, chunk, column } => corrupt(&dispatcher, &cloud, id, *chunk, *column),
            Action::Dump { provider } => dump(&dispatcher, &cloud, provider, &originals),
        };
        steps.push(StepResult {
            index: step.index,
            action: step.action.name(),
            target: step.action.target().to_string(),
            outcome,
            expect: step.expect.clone(),
        });
    }
    Ok(ScenarioReport { steps })
}

fn corrupt(d: &Dispatcher, cloud: &SimCloud, id: &str, chunk: usize, column: usize) -> String {
    let record = match d.record(id) {
        Ok(r) => r,
        Err(e) => return outcome_of(&e),
    };
    let Some((entry, loc)) = record
        .chunks
        .iter()
        .find(|c| c.index == chunk)
        .and_then(|c| c.columns().nth(column).map(|l| (c, l)))
    else {
        return "no_such_column".to_string();
    };
    let fault = Fault::CorruptBlob {
        provider: loc.provider.clone(),
        node: loc.node,
        blob_id: loc.blob_id.clone(),
        offset: entry.len as usize / 2,
        mask: 0x01,
    };
    match cloud.inject(fault) {
        Ok(()) => "ok".to_string(),
        Err(_) => "unknown_provider".to_string(),
    }
}

fn dump(d: &Dispatcher, cloud: &SimCloud, provider: &str, originals: &BTreeMap<String, Vec<u8>>) -> String {
    if cloud
        .inject(Fault::InsiderDump {
            provider: provider.to_string(),
        })
        .is_err()
    {
        return "unknown_provider".to_string();
    }
    let blobs = cloud.leaked();
    for id in d.object_ids() {
        let Ok(record) = d.record(&id) else { continue };
        if record.level != SecretLevel::Secret {
            continue;
        }
        if record.pipeline == PipelineTag::SplitShareDisperse
            && !exposure(&record, provider, &blobs).reconstructible_chunks.is_empty()
        {
            return "exposed".to_string();
        }
        if let Some(plain) = originals.get(&id) {
            let probe = &plain[..plain.len().min(16)];
            if probe.len() >= 8 && blobs.iter().any(|b| b.bytes.windows(probe.len()).any(|w| w == probe)) {
                return "exposed".to_string();
            }
        }
    }
    "safe".to_string()
}
