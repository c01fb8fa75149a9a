mod fixture;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use cloudsplit::anonymize::{rejoin, ColumnGroup, LocalMapping};
use cloudsplit::cli::{read_csv, run_with_env, CONFIG_ENV};
use cloudsplit::policy::Policy;
use cloudsplit::ranking::{rank_providers, rank_score, Weights};
use cloudsplit::router::{digest_hex, route, DataObject, OperationClass, SecretLevel};
use cloudsplit::scenario::{self, Scenario};
use fixture::seeded_bytes;

type Fields = BTreeMap<String, String>;

/// Parse `key=value` report lines. Quoted values use Rust string escapes,
/// which agree with JSON for everything the reports print.
fn parse_report(stdout: &str) -> Vec<Fields> {
    stdout
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut out = Fields::new();
            let mut rest = l;
            while !rest.is_empty() {
                let (key, after) = rest.split_once('=').expect("key=value");
                let (value, tail) = if let Some(q) = after.strip_prefix('"') {
                    let mut end = 0;
                    let bytes = q.as_bytes();
                    while bytes[end] != b'"' {
                        end += if bytes[end] == b'\\' { 2 } else { 1 };
                    }
                    let quoted = &after[..end + 2];
                    (serde_json::from_str(quoted).expect("quoted value"), &q[end + 1..])
                } else {
                    let end = after.find(' ').unwrap_or(after.len());
                    (after[..end].to_string(), &after[end..])
                };
                out.insert(key.to_string(), value);
                rest = tail.trim_start();
            }
            out
        })
        .collect()
}

fn cli(args: &[&str]) -> (i32, Vec<Fields>, String) {
    let o = run_with_env(std::iter::once("cloudsplit").chain(args.iter().copied()), None);
    (o.code, parse_report(&o.stdout), o.stdout)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const PROFILES: &str = "
provider.alpha.time = 120
provider.alpha.cost = 3.5
provider.alpha.security = 7
provider.alpha.privacy = 4
provider.beta.time = 80
provider.beta.cost = 5
provider.beta.security = 9
provider.gamma.time = 200
provider.gamma.cost = 1
provider.gamma.security = 5
provider.gamma.privacy = 9
provider.delta.time = 95
provider.delta.cost = 2
provider.delta.security = 9
provider.delta.privacy = 2
";

#[test]
fn rank_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profiles.conf");
    std::fs::write(&path, PROFILES).unwrap();
    let profiles = Policy::parse(PROFILES).unwrap().profiles().unwrap();

    for (arg, w) in [
        (None, Weights::equal()),
        (Some("1,2,3,4"), Weights::new(1.0, 2.0, 3.0, 4.0).unwrap()),
        (Some("0,0,1,0"), Weights::new(0.0, 0.0, 1.0, 0.0).unwrap()),
    ] {
        let mut args = vec!["rank", s(&path)];
        if let Some(a) = arg {
            args.extend(["--weights", a]);
        }
        let (code, lines, _) = cli(&args);
        assert_eq!(code, 0);
        let want = rank_providers(&profiles, &w);
        assert_eq!(lines.len(), want.len());
        for (i, (l, p)) in lines.iter().zip(&want).enumerate() {
            assert_eq!(l["rank"], (i + 1).to_string());
            assert_eq!(l["provider"], p.id);
            assert_eq!(l["score"], rank_score(p, &w).to_string());
            assert_eq!(l["security"], p.security.to_string());
        }
    }
}

#[test]
fn security_only_weights_sort_by_security() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profiles.conf");
    std::fs::write(&path, PROFILES).unwrap();
    let (code, lines, _) = cli(&["rank", s(&path), "--weights", "0,0,1,0"]);
    assert_eq!(code, 0);
    let mut by_s: Vec<(f64, String)> = lines
        .iter()
        .map(|l| (l["security"].parse().unwrap(), l["provider"].clone()))
        .collect();
    by_s.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let got: Vec<&str> = lines.iter().map(|l| l["provider"].as_str()).collect();
    assert_eq!(got, by_s.iter().map(|p| p.1.as_str()).collect::<Vec<_>>());
    assert_eq!(got, ["beta", "delta", "alpha", "gamma"]);
    assert_eq!(cli(&["rank", s(&path), "--weights", "0,0,0"]).0, 1);
    assert_eq!(cli(&["rank", s(&path), "--weights", "0,0,0,0"]).0, 1);
}

const SCENARIO: &str = "
he_bits = 128
block_size = 256
step.1 = put doc secret none 4000
step.2 = put notes unclassified none 100
step.3 = put vault top-secret none 50
step.4 = disable p1
step.5 = disable p3
step.6 = get doc -> ok
step.7 = disable p4
step.8 = get doc -> reconstruction_failed
step.9 = enable p1
step.10 = enable p3
step.11 = enable p4
step.12 = corrupt doc 1 2
step.13 = audit doc 1 -> corrupted
step.14 = dump p0 -> safe
step.15 = dump p2 -> safe
step.16 = put x secret advanced 10 -> rejected
step.17 = get vault -> ok
";

#[test]
fn simulate_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.conf");
    std::fs::write(&path, SCENARIO).unwrap();
    let report = scenario::run(&Scenario::parse(SCENARIO).unwrap(), 5).unwrap();
    assert_eq!(report.failures(), 0, "{report:?}");

    let (code, lines, _) = cli(&["simulate", s(&path), "--seed", "5"]);
    assert_eq!(code, 0);
    assert_eq!(lines.len(), report.steps.len() + 1);
    for (l, st) in lines.iter().zip(&report.steps) {
        assert_eq!(l["step"], st.index.to_string());
        assert_eq!(l["action"], st.action);
        assert_eq!(l["outcome"], st.outcome);
        assert_eq!(l["status"], "pass");
    }
    assert_eq!(lines.last().unwrap()["scenario"], "pass");

    std::fs::write(&path, "step.1 = get ghost -> ok\n").unwrap();
    let (code, lines, _) = cli(&["simulate", s(&path)]);
    assert_eq!(code, 1);
    assert_eq!(lines[0]["outcome"], "not_found");
    assert_eq!(lines.last().unwrap()["error"], "expectation_failed");
}

/// Five providers persisted under `root`, plus small test parameters.
fn dir_config(root: &Path) -> (PathBuf, String) {
    let mut text = String::from("he_bits = 128\nblock_size = 256\n");
    for i in 0..5 {
        let d = root.join(format!("cloud-p{i}"));
        text.push_str(&format!("provider.p{i}.endpoint = dir:{}\n", d.display()));
        text.push_str(&format!("provider.p{i}.security = {}\n", 5 + i));
        text.push_str(&format!("provider.p{i}.hier_access = 0.5,0.25\n"));
    }
    text.push_str(&format!("manifest = {}\n", root.join("m.cmf").display()));
    text.push_str(&format!("keystore = {}\n", root.join("k.cmf").display()));
    let path = root.join("policy.conf");
    std::fs::write(&path, &text).unwrap();
    (path, text)
}

#[test]
fn put_report_mirrors_the_routing_decision() {
    let dir = tempfile::tempdir().unwrap();
    let (config, text) = dir_config(dir.path());
    let policy = Policy::parse(&text).unwrap();
    let data = seeded_bytes(7, 6000);
    let file = dir.path().join("report.bin");
    std::fs::write(&file, &data).unwrap();

    let (code, lines, out) = cli(&["put", s(&file), "--level", "secret", "--ops", "none", "--config", s(&config), "--seed", "1"]);
    assert_eq!(code, 0, "{out}");
    let l = &lines[0];
    let want = route(
        &DataObject::bytes("report.bin", data.clone(), SecretLevel::Secret, OperationClass::NoOperations),
        &policy,
        &policy.profiles().unwrap(),
    )
    .unwrap();
    assert_eq!(l["object_id"], "report.bin");
    assert_eq!(l["pipeline"], "SplitShareDisperse");
    assert_eq!(l["k"], want.k.to_string());
    assert_eq!(l["n"], want.n.to_string());
    assert_eq!(l["chunks"], want.chunks.to_string());
    assert_eq!(l["providers"], want.providers.join(","));
    assert_eq!(l["digest"], digest_hex(&data));
    assert_eq!((l["k"].as_str(), l["n"].as_str()), ("3", "5"));

    let (code, lines, _) = cli(&["put", s(&file), "--level", "secret", "--config", s(&config)]);
    assert_eq!(code, 1);
    assert_eq!(lines[0]["error"], "duplicate_object");
}

fn bin(config: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cloudsplit"));
    c.env(CONFIG_ENV, config);
    c
}

fn bin_run(cmd: &mut Command) -> (i32, Vec<Fields>) {
    let out = cmd.output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    (out.status.code().unwrap(), parse_report(&stdout))
}

#[test]
fn binary_round_trip_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = dir_config(dir.path());
    let data = seeded_bytes(8, 9000);
    let file = dir.path().join("input.bin");
    std::fs::write(&file, &data).unwrap();

    let (code, put) = bin_run(bin(&config).args(["put", s(&file), "--level", "secret", "--id", "obj"]));
    assert_eq!(code, 0);
    let out = dir.path().join("output.bin");
    let (code, got) = bin_run(bin(&config).args(["get", "obj", "--out", s(&out)]));
    assert_eq!(code, 0);
    assert_eq!(got[0]["digest"], put[0]["digest"]);
    assert_eq!(std::fs::read(&out).unwrap(), data);

    let (code, audit) = bin_run(bin(&config).args(["audit", "obj"]));
    assert_eq!(code, 0);
    assert_eq!(audit.last().unwrap()["status"], "intact");

    // damage one stored share on disk, as a provider-side fault would
    let victim = audit[3].clone();
    let node_dir = dir
        .path()
        .join(format!("cloud-{}", victim["provider"]))
        .join(format!("node-{}", victim["node"]));
    let blob = std::fs::read_dir(&node_dir).unwrap().next().unwrap().unwrap().path();
    let mut bytes = std::fs::read(&blob).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&blob, &bytes).unwrap();

    let (code, audit) = bin_run(bin(&config).args(["audit", "obj"]));
    assert_eq!(code, 0);
    let summary = audit.last().unwrap();
    assert_eq!(summary["status"], "corrupted");
    assert_eq!(summary["corrupted"], "1");
    let bad = audit.iter().find(|l| l.get("outcome").map(String::as_str) == Some("corrupted")).unwrap();
    assert_eq!(bad["provider"], victim["provider"]);

    // the damaged share is skipped; the other four still rebuild the file
    let out2 = dir.path().join("output2.bin");
    let (code, _) = bin_run(bin(&config).args(["get", "obj", "--out", s(&out2)]));
    assert_eq!(code, 0);
    assert_eq!(std::fs::read(&out2).unwrap(), data);
}

#[test]
fn binary_usage_and_operational_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = dir_config(dir.path());
    let (code, lines) = bin_run(bin(&config).args(["put", "x", "--level", "cosmic"]));
    assert_eq!(code, 2);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["error"], "usage");
    let (code, lines) = bin_run(bin(&config).args(["get", "ghost", "--out", "never"]));
    assert_eq!(code, 1);
    assert_eq!(lines[0]["error"], "not_found");
}

#[test]
fn anonymize_writes_identifier_free_groups() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("people.csv");
    std::fs::write(
        &table,
        "email,age,city,plan\nada@example.org,36,paris,gold\nbob@example.org,41,rome,basic\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let (code, lines, text) = cli(&[
        "anonymize",
        s(&table),
        "--id-columns",
        "email",
        "--groups",
        "age;city,plan",
        "--out-dir",
        s(&out),
        "--salt",
        "00ff",
    ]);
    assert_eq!(code, 0, "{text}");
    assert_eq!(lines.len(), 3);
    let mut groups = Vec::new();
    for l in &lines[..2] {
        let bytes = std::fs::read(&l["file"]).unwrap();
        assert_eq!(l["digest"], digest_hex(&bytes));
        assert!(!bytes.windows(7).any(|w| w == b"example"));
        groups.push(ColumnGroup::from_bytes(&bytes).unwrap());
    }
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&lines[2]["mapping"]).unwrap()).unwrap();
    assert_eq!(doc["salt"], "00ff");
    let mapping: LocalMapping = serde_json::from_value(doc["mapping"].clone()).unwrap();
    assert_eq!(rejoin(&mapping, &groups).unwrap(), read_csv(&table).unwrap());

    std::fs::write(&table, "email,age\nada@example.org,36\nada@example.org,37\n").unwrap();
    let (code, lines, _) = cli(&["anonymize", s(&table), "--id-columns", "email", "--out-dir", s(&out)]);
    assert_eq!(code, 1);
    assert_eq!(lines[0]["error"], "anonymize");
}
