//! Command-line front end.
//!
//! [`run`] parses arguments, calls the library and formats the result as
//! `key=value` lines (or aligned tables with `--human`). Exit codes: 0 on
//! success, 1 for operational failures, 2 for usage errors. Failures print
//! one `error=<code> message=...` line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::anonymize::{anonymize_table, AnonymizeOptions, Cell, Table};
use crate::persistence::{KeyStore, ManifestStore, PersistError};
use crate::policy::{Policy, PolicyError};
use crate::ranking::{rank_providers, rank_score, Weights};
use crate::router::{digest_hex, sim_cloud, AuditOutcome, DataObject, Dispatcher, OperationClass, Payload, RouterError, SecretLevel};
use crate::scenario::{self, Scenario, ScenarioError};

/// Read when `--config` is absent.
pub const CONFIG_ENV: &str = "CLOUDSPLIT_CONFIG";
pub const DEFAULT_MANIFEST: &str = "cloudsplit-manifest.cmf";
pub const DEFAULT_KEYSTORE: &str = "cloudsplit-keys.cmf";

#[derive(Parser, Debug)]
#[command(name = "cloudsplit", version, about = "Classify, split and spread data over storage providers")]
struct Cli {
    /// Policy file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    keystore: Option<PathBuf>,
    /// Fixes every random choice, for reproducible runs
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Aligned tables instead of key=value lines
    #[arg(long, global = true)]
    human: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LevelArg {
    TopSecret,
    Secret,
    Unclassified,
}

impl From<LevelArg> for SecretLevel {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::TopSecret => SecretLevel::TopSecret,
            LevelArg::Secret => SecretLevel::Secret,
            LevelArg::Unclassified => SecretLevel::Unclassified,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OpsArg {
    None,
    Basic,
    Advanced,
}

impl From<OpsArg> for OperationClass {
    fn from(o: OpsArg) -> Self {
        match o {
            OpsArg::None => OperationClass::NoOperations,
            OpsArg::Basic => OperationClass::BasicOperations,
            OpsArg::Advanced => OperationClass::AdvancedAnalytics,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Store a file
    Put {
        path: PathBuf,
        #[arg(long)]
        level: LevelArg,
        #[arg(long, default_value = "none")]
        ops: OpsArg,
        /// Object id (default: the file name)
        #[arg(long)]
        id: Option<String>,
        /// Treat the file as a CSV table
        #[arg(long)]
        table: bool,
        #[arg(long, value_delimiter = ',')]
        id_columns: Vec<String>,
        /// Column groups, `a,b;c`
        #[arg(long)]
        groups: Option<String>,
    },
    /// Fetch an object into a file
    Get {
        object_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Challenge every stored column of an object
    Audit {
        object_id: String,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
    },
    /// Score and order providers from a profile file
    Rank {
        profiles: PathBuf,
        /// time,cost,security,privacy
        #[arg(long)]
        weights: Option<String>,
    },
    /// Split a CSV table into identifier-free column groups
    Anonymize {
        table: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        id_columns: Vec<String>,
        #[arg(long)]
        groups: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Hex salt (default: random)
        #[arg(long)]
        salt: Option<String>,
    },
    /// Run a fault scenario file
    Simulate { scenario: PathBuf },
}

/// Exit code and standard output of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
}

/// One report line: ordered key/value pairs.
pub type Line = Vec<(String, String)>;

fn quote(v: &str) -> String {
    if v.is_empty() || v.chars().any(|c| c.is_whitespace() || c == '=' || c == '"') {
        format!("{v:?}")
    } else {
        v.to_string()
    }
}

pub fn format_machine(lines: &[Line]) -> String {
    let mut out = String::new();
    for line in lines {
        let parts: Vec<String> = line.iter().map(|(k, v)| format!("{k}={}", quote(v))).collect();
        out.push_str(&parts.join(" "));
        out.push('\n');
    }
    out
}

/// Consecutive lines with the same keys become one aligned table.
pub fn format_human(lines: &[Line]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < lines.len() {
        let keys: Vec<&String> = lines[i].iter().map(|(k, _)| k).collect();
        let mut j = i + 1;
        while j < lines.len() && lines[j].iter().map(|(k, _)| k).eq(keys.iter().copied()) {
            j += 1;
        }
        let block = &lines[i..j];
        let widths: Vec<usize> = (0..keys.len())
            .map(|c| block.iter().map(|l| l[c].1.len()).max().unwrap_or(0).max(keys[c].len()))
            .collect();
        let row = |cells: Vec<&str>| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        out.push_str(&row(keys.iter().map(|k| k.as_str()).collect()));
        for l in block {
            out.push_str(&row(l.iter().map(|(_, v)| v.as_str()).collect()));
        }
        out.push('\n');
        i = j;
    }
    out
}

fn line<const N: usize>(pairs: [(&str, String); N]) -> Line {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Debug)]
struct Failure {
    code: &'static str,
    message: String,
}

impl Failure {
    fn new(code: &'static str, message: impl ToString) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<RouterError> for Failure {
    fn from(e: RouterError) -> Self {
        Failure::new(e.code(), e)
    }
}

impl From<PersistError> for Failure {
    fn from(e: PersistError) -> Self {
        RouterError::from(e).into()
    }
}

impl From<PolicyError> for Failure {
    fn from(e: PolicyError) -> Self {
        Failure::new("invalid_policy", e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Router(r) => r.into(),
            ScenarioError::Policy(p) => p.into(),
            ScenarioError::Io(io) => Failure::new("io", io),
            other => Failure::new("bad_scenario", other),
        }
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::new("io", format!("{}: {e}", path.display()))
}

/// Run with `args` (program name first), reading the config path from the
/// environment when `--config` is absent.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, std::env::var_os(CONFIG_ENV).map(PathBuf::from))
}

pub fn run_with_env<I, T>(args: I, env_config: Option<PathBuf>) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Outcome {
                    code: 0,
                    stdout: e.to_string(),
                },
                _ => {
                    let msg = e.to_string();
                    let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
                    Outcome {
                        code: 2,
                        stdout: format_machine(&[line([("error", "usage".into()), ("message", first.to_string())])]),
                    }
                }
            };
        }
    };
    let human = cli.human;
    let config = cli.config.clone().or(env_config);
    let (lines, failure) = match execute(cli, config) {
        Ok((lines, failure)) => (lines, failure),
        Err(f) => (Vec::new(), Some(f)),
    };
    let mut stdout = if human { format_human(&lines) } else { format_machine(&lines) };
    let code = match failure {
        None => 0,
        Some(f) => {
            stdout.push_str(&format_machine(&[line([("error", f.code.into()), ("message", f.message)])]));
            1
        }
    };
    Outcome { code, stdout }
}

fn load_policy(config: Option<&Path>) -> Result<Policy, Failure> {
    match config {
        None => Ok(Policy::default()),
        Some(p) => Ok(Policy::parse(&std::fs::read_to_string(p).map_err(io(p))?)?),
    }
}

fn parse_groups(spec: Option<&str>) -> Vec<Vec<String>> {
    spec.map(|s| {
        s.split(';')
            .map(|g| g.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect())
            .collect()
    })
    .unwrap_or_default()
}

pub fn read_csv(path: &Path) -> Result<Table, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push(
            rec.iter()
                .map(|v| v.parse::<i64>().map(Cell::Int).unwrap_or_else(|_| Cell::Str(v.to_string())))
                .collect(),
        );
    }
    Ok(Table::new(columns, rows))
}

pub fn write_csv(path: &Path, table: &Table) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| e.to_string())?;
    w.write_record(&table.columns).map_err(|e| e.to_string())?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| match c {
            Cell::Str(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
        }))
        .map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

/// Non-identifier columns as one group when none are given.
fn default_groups(table: &Table, ids: &[String], groups: Vec<Vec<String>>) -> Vec<Vec<String>> {
    if groups.is_empty() {
        vec![table.columns.iter().filter(|c| !ids.contains(c)).cloned().collect()]
    } else {
        groups
    }
}

fn dispatcher(
    policy: Policy,
    manifest: Option<PathBuf>,
    keystore: Option<PathBuf>,
    seed: u64,
) -> Result<Dispatcher, Failure> {
    let m = manifest
        .or_else(|| policy.manifest.clone())
        .unwrap_or_else(|| DEFAULT_MANIFEST.into());
    let k = keystore
        .or_else(|| policy.keystore.clone())
        .unwrap_or_else(|| DEFAULT_KEYSTORE.into());
    let cloud = sim_cloud(&policy)?;
    let manifest = ManifestStore::open(&m)?;
    let keys = KeyStore::open(&k)?;
    Ok(Dispatcher::new(policy, cloud.handles(), manifest, keys, seed)?)
}

type Executed = (Vec<Line>, Option<Failure>);

fn execute(cli: Cli, config: Option<PathBuf>) -> Result<Executed, Failure> {
    let seed = cli.seed.unwrap_or_else(rand::random);
    match cli.command {
        Command::Put {
            path,
            level,
            ops,
            id,
            table,
            id_columns,
            groups,
        } => {
            let policy = load_policy(config.as_deref())?;
            let raw = std::fs::read(&path).map_err(io(&path))?;
            let object_id = id.unwrap_or_else(|| {
                path.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            let obj = if table {
                let t = read_csv(&path).map_err(|e| Failure::new("bad_table", e))?;
                let groups = default_groups(&t, &id_columns, parse_groups(groups.as_deref()));
                DataObject::table(&object_id, t, id_columns, groups, level.into(), ops.into())
            } else {
                DataObject::bytes(&object_id, raw.clone(), level.into(), ops.into())
            };
            let d = dispatcher(policy, cli.manifest, cli.keystore, seed)?;
            let decision = d.route(&obj)?;
            let rec = d.put(&obj)?;
            Ok((
                vec![line([
                    ("object_id", rec.object_id.clone()),
                    ("pipeline", decision.pipeline.name().into()),
                    ("version", rec.version.to_string()),
                    ("k", rec.k.to_string()),
                    ("n", rec.n.to_string()),
                    ("chunks", rec.chunks.len().to_string()),
                    ("providers", decision.providers.join(",")),
                    ("bytes", raw.len().to_string()),
                    ("digest", digest_hex(&raw)),
                ])],
                None,
            ))
        }
        Command::Get { object_id, out } => {
            let d = dispatcher(load_policy(config.as_deref())?, cli.manifest, cli.keystore, seed)?;
            let rec = d.record(&object_id)?;
            let obj = d.get(&object_id)?;
            match &obj.payload {
                Payload::Bytes(b) => std::fs::write(&out, b).map_err(io(&out))?,
                Payload::Table { table, .. } => write_csv(&out, table).map_err(|e| Failure::new("io", e))?,
            }
            let written = std::fs::read(&out).map_err(io(&out))?;
            Ok((
                vec![line([
                    ("object_id", object_id),
                    ("pipeline", format!("{:?}", rec.pipeline)),
                    ("version", rec.version.to_string()),
                    ("bytes", written.len().to_string()),
                    ("digest", digest_hex(&written)),
                ])],
                None,
            ))
        }
        Command::Audit { object_id, rounds } => {
            let d = dispatcher(load_policy(config.as_deref())?, cli.manifest, cli.keystore, seed)?;
            let report = d.audit(&object_id, rounds)?;
            let mut lines = Vec::new();
            for e in &report.entries {
                let (outcome, detail) = match &e.outcome {
                    AuditOutcome::Intact => ("intact", String::new()),
                    AuditOutcome::Corrupted => ("corrupted", String::new()),
                    AuditOutcome::Unreachable(why) => ("unreachable", why.clone()),
                    AuditOutcome::Exhausted => ("exhausted", String::new()),
                };
                let mut l = line([
                    ("chunk", e.chunk.to_string()),
                    ("column", e.column.to_string()),
                    ("provider", e.provider.clone()),
                    ("node", e.node.to_string()),
                    ("round", e.round.map_or("-".into(), |r| r.to_string())),
                    ("outcome", outcome.into()),
                ]);
                if !detail.is_empty() && !cli.human {
                    l.push(("detail".into(), detail));
                }
                lines.push(l);
            }
            let corrupted = report.corrupted().count();
            let status = if corrupted > 0 {
                "corrupted"
            } else if report.is_intact() {
                "intact"
            } else {
                "incomplete"
            };
            lines.push(line([
                ("object_id", object_id),
                ("status", status.into()),
                ("checks", report.entries.len().to_string()),
                ("corrupted", corrupted.to_string()),
            ]));
            Ok((lines, None))
        }
        Command::Rank { profiles, weights } => {
            let policy = load_policy(Some(&profiles))?;
            let w = match weights {
                None => policy.weights,
                Some(s) => {
                    let v: Vec<f64> = s
                        .split(',')
                        .map(|x| x.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| Failure::new("usage", format!("bad weights {s:?}")))?;
                    if v.len() != 4 {
                        return Err(Failure::new("usage", "weights take four values"));
                    }
                    Weights::new(v[0], v[1], v[2], v[3]).map_err(|e| Failure::new("usage", e))?
                }
            };
            let profs = policy.profiles()?;
            if profs.is_empty() {
                return Err(Failure::new("no_providers", "profile file lists no providers"));
            }
            let lines = rank_providers(&profs, &w)
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    line([
                        ("rank", (i + 1).to_string()),
                        ("provider", p.id.clone()),
                        ("score", rank_score(p, &w).to_string()),
                        ("time", p.time.to_string()),
                        ("cost", p.cost.to_string()),
                        ("security", p.security.to_string()),
                        ("privacy", p.privacy.to_string()),
                    ])
                })
                .collect();
            Ok((lines, None))
        }
        Command::Anonymize {
            table,
            id_columns,
            groups,
            out_dir,
            salt,
        } => {
            let t = read_csv(&table).map_err(|e| Failure::new("bad_table", e))?;
            let groups = default_groups(&t, &id_columns, parse_groups(groups.as_deref()));
            let salt = match salt {
                Some(h) => hex::decode(&h).map_err(|_| Failure::new("usage", "salt must be hex"))?,
                None => ChaCha20Rng::seed_from_u64(seed).gen::<[u8; 32]>().to_vec(),
            };
            let anon = anonymize_table(&t, &id_columns, &groups, &salt, AnonymizeOptions::default())
                .map_err(|e| Failure::new("anonymize", e))?;
            std::fs::create_dir_all(&out_dir).map_err(io(&out_dir))?;
            let mut lines = Vec::new();
            for (i, g) in anon.groups.iter().enumerate() {
                let file = out_dir.join(format!("group-{i}.can"));
                let bytes = g.to_bytes();
                std::fs::write(&file, &bytes).map_err(io(&file))?;
                lines.push(line([
                    ("group", i.to_string()),
                    ("columns", g.columns.join(",")),
                    ("rows", g.rows.len().to_string()),
                    ("file", file.display().to_string()),
                    ("digest", digest_hex(&bytes)),
                ]));
            }
            let mapping = out_dir.join("mapping.json");
            let doc = serde_json::json!({ "salt": hex::encode(&salt), "mapping": anon.mapping });
            std::fs::write(&mapping, serde_json::to_vec_pretty(&doc).expect("json"))
                .map_err(io(&mapping))?;
            lines.push(line([
                ("mapping", mapping.display().to_string()),
                ("rows", anon.digests.len().to_string()),
            ]));
            Ok((lines, None))
        }
        Command::Simulate { scenario } => {
            let text = std::fs::read_to_string(&scenario).map_err(io(&scenario))?;
            let mut s = Scenario::parse(&text)?;
            if s.policy.providers.is_empty() {
                if let Some(c) = config.as_deref() {
                    s.policy.providers = load_policy(Some(c))?.providers;
                }
            }
            let report = scenario::run(&s, seed)?;
            let mut lines: Vec<Line> = report
                .steps
                .iter()
                .map(|st| {
                    line([
                        ("step", st.index.to_string()),
                        ("action", st.action.into()),
                        ("target", st.target.clone()),
                        ("outcome", st.outcome.clone()),
                        ("expect", st.expect.clone().unwrap_or_else(|| "-".into())),
                        ("status", if st.passed() { "pass" } else { "fail" }.into()),
                    ])
                })
                .collect();
            let failures = report.failures();
            lines.push(line([
                ("scenario", if failures == 0 { "pass" } else { "fail" }.into()),
                ("steps", report.steps.len().to_string()),
                ("failures", failures.to_string()),
            ]));
            let failure = (failures > 0).then(|| Failure::new("expectation_failed", format!("{failures} steps")));
            Ok((lines, failure))
        }
    }
}
