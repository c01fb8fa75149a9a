mod fixture;

use cloudsplit::anonymize::{Cell, Table};
use cloudsplit::persistence::ObjectKind;
use cloudsplit::policy::Policy;
use cloudsplit::ranking::ProviderProfile;
use cloudsplit::router::{
    pipeline_for, route, AuditOutcome, DataObject, OperationClass, Payload, Pipeline, RouterError, SecretLevel,
};
use cloudsplit::simcloud::{Fault, SimCloud};
use fixture::{dispatcher, quick_policy, seeded_bytes};

fn profiles(n: usize) -> Vec<ProviderProfile> {
    (0..n).map(|i| ProviderProfile::uniform(format!("p{i}"), 0.5)).collect()
}

fn small_table() -> Table {
    Table::new(
        vec!["id".into(), "x".into(), "y".into()],
        vec![
            vec![Cell::from("u1"), Cell::from(1), Cell::from("a")],
            vec![Cell::from("u2"), Cell::from(2), Cell::from("b")],
        ],
    )
}

fn table_object(level: SecretLevel, ops: OperationClass) -> DataObject {
    DataObject::table(
        "t",
        small_table(),
        vec!["id".into()],
        vec![vec!["x".into()], vec!["y".into()]],
        level,
        ops,
    )
}

#[test]
fn golden_routing_table() {
    use OperationClass::*;
    use SecretLevel::*;
    let golden = [
        (TopSecret, NoOperations, "LocalOnly"),
        (TopSecret, BasicOperations, "LocalOnly"),
        (TopSecret, AdvancedAnalytics, "LocalOnly"),
        (Secret, NoOperations, "SplitShareDisperse"),
        (Secret, BasicOperations, "HomomorphicStore"),
        (Secret, AdvancedAnalytics, "Rejected"),
        (Unclassified, NoOperations, "PlainSingleCloud"),
        (Unclassified, BasicOperations, "PlainSingleCloud"),
        (Unclassified, AdvancedAnalytics, "PlainSingleCloud"),
    ];
    let policy = Policy::default();
    let ps = profiles(5);
    for (level, ops, want) in golden {
        let obj = DataObject::bytes("o", vec![0; 64], level, ops);
        let d = route(&obj, &policy, &ps).unwrap();
        assert_eq!(d.pipeline.name(), want, "{level:?} {ops:?}");
        if want == "Rejected" {
            assert_eq!(
                d.pipeline,
                Pipeline::Rejected("advanced analytics tier not implemented".into())
            );
        }
        if want == "SplitShareDisperse" {
            assert_eq!((d.k, d.n, d.chunks), (3, 5, 5));
            assert_eq!(d.providers.len(), 5);
        }
    }

    let tables = [
        (TopSecret, NoOperations, "LocalOnly"),
        (Secret, NoOperations, "AnonymizedPartition"),
        (Secret, BasicOperations, "AnonymizedPartition"),
        (Secret, AdvancedAnalytics, "Rejected"),
        (Unclassified, BasicOperations, "PlainSingleCloud"),
    ];
    for (level, ops, want) in tables {
        let d = route(&table_object(level, ops), &policy, &ps).unwrap();
        assert_eq!(d.pipeline.name(), want, "table {level:?} {ops:?}");
    }
}

#[test]
fn protection_never_drops_as_the_level_rises() {
    for kind in [ObjectKind::Bytes, ObjectKind::Table] {
        for ops in [
            OperationClass::NoOperations,
            OperationClass::BasicOperations,
            OperationClass::AdvancedAnalytics,
        ] {
            let ranks: Vec<u8> = [SecretLevel::Unclassified, SecretLevel::Secret, SecretLevel::TopSecret]
                .iter()
                .filter_map(|&l| pipeline_for(l, ops, kind).confidentiality_rank())
                .collect();
            assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "{kind:?} {ops:?}: {ranks:?}");
        }
    }
}

#[test]
fn routing_errors() {
    let obj = DataObject::bytes("o", vec![1], SecretLevel::Secret, OperationClass::NoOperations);
    assert!(matches!(route(&obj, &Policy::default(), &[]), Err(RouterError::NoProviders)));
    let obj = table_object(SecretLevel::Secret, OperationClass::NoOperations);
    assert!(matches!(
        route(&obj, &Policy::default(), &profiles(1)),
        Err(RouterError::InvalidPayload(_))
    ));
}

#[test]
fn any_two_outages_leave_get_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = SimCloud::uniform(5, 2);
    let d = dispatcher(&cloud, quick_policy(), dir.path(), 1);
    let data = seeded_bytes(1, 5000);
    let rec = d
        .put(&DataObject::bytes("f", data.clone(), SecretLevel::Secret, OperationClass::NoOperations))
        .unwrap();
    assert_eq!((rec.k, rec.n), (3, 5));
    let ids: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
    let mut pairs = 0;
    for a in 0..5 {
        for b in a + 1..5 {
            cloud.disable_provider(&ids[a]).unwrap();
            cloud.disable_provider(&ids[b]).unwrap();
            assert_eq!(d.get("f").unwrap().payload, Payload::Bytes(data.clone()), "{a},{b}");
            for c in (0..5).filter(|&c| c != a && c != b) {
                cloud.disable_provider(&ids[c]).unwrap();
                assert!(matches!(
                    d.get("f"),
                    Err(RouterError::ReconstructionFailed { live: 2, need: 3, .. })
                ));
                cloud.enable_provider(&ids[c]).unwrap();
            }
            cloud.enable_provider(&ids[a]).unwrap();
            cloud.enable_provider(&ids[b]).unwrap();
            pairs += 1;
        }
    }
    assert_eq!(pairs, 10);
}

#[test]
fn full_coverage_audit_names_the_damaged_column() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = SimCloud::uniform(5, 1);
    let policy = Policy {
        audit_rounds: 40,
        ..quick_policy()
    };
    let d = dispatcher(&cloud, policy, dir.path(), 2);
    let rec = d
        .put(&DataObject::bytes("f", seeded_bytes(2, 3000), SecretLevel::Secret, OperationClass::NoOperations))
        .unwrap();
    assert!(d.audit("f", 1).unwrap().is_intact());

    for (ci, chunk) in rec.chunks.iter().enumerate() {
        let columns: Vec<_> = chunk.columns().cloned().collect();
        for (col, loc) in columns.iter().enumerate() {
            let fault = Fault::CorruptBlob {
                provider: loc.provider.clone(),
                node: loc.node,
                blob_id: loc.blob_id.clone(),
                offset: (col * 7) % chunk.len as usize,
                mask: 0x81,
            };
            cloud.inject(fault.clone()).unwrap();
            let report = d.audit("f", 1).unwrap();
            let bad: Vec<_> = report.corrupted().collect();
            assert_eq!(bad.len(), 1, "chunk {ci} column {col}");
            assert_eq!((bad[0].chunk, bad[0].column), (chunk.index, col));
            assert_eq!(bad[0].provider, loc.provider);
            assert_eq!(bad[0].blob_id, loc.blob_id);
            cloud.clear(fault).unwrap();
        }
    }
    let report = d.audit("f", 1).unwrap();
    assert!(report.entries.iter().all(|e| e.outcome == AuditOutcome::Intact));
}

#[test]
fn corrupted_share_is_caught_on_read_when_too_few_remain() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = SimCloud::uniform(3, 1);
    let d = dispatcher(&cloud, quick_policy(), dir.path(), 3);
    let data = seeded_bytes(3, 600);
    let rec = d
        .put(&DataObject::bytes("f", data.clone(), SecretLevel::Secret, OperationClass::NoOperations))
        .unwrap();
    assert_eq!((rec.k, rec.n), (2, 3));
    let loc = rec.chunks[0].blobs[0].clone();
    cloud
        .inject(Fault::CorruptBlob {
            provider: loc.provider.clone(),
            node: loc.node,
            blob_id: loc.blob_id.clone(),
            offset: 0,
            mask: 1,
        })
        .unwrap();
    assert_eq!(d.get("f").unwrap().payload, Payload::Bytes(data));
    let other = &rec.chunks[0].blobs[1].provider;
    cloud.disable_provider(other).unwrap();
    assert!(matches!(d.get("f"), Err(RouterError::ReconstructionFailed { .. })));
}
