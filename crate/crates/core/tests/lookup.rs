use misadapt::bnm::BnmCurve;
use misadapt::error::Error;
use misadapt::lookup::{resolve_path, LookupEntry, LookupTable, ENV_VAR, FORMAT_VERSION};
use misadapt::model::PolicyTable;
use misadapt::thresholding::ThresholdKind;

fn toy() -> LookupTable {
    let t: Vec<f64> = (-8..=8).map(|i| i as f64 * 0.5).collect();
    let curve = BnmCurve::from_parts(vec![0.1, 0.2, 0.3], vec![0.0099, 0.038, 0.08]).unwrap();
    let entries = (0..4)
        .map(|k| {
            let rho = (0.3 * k as f64).tanh();
            let s = 1.0 / (1.0 + k as f64);
            LookupEntry {
                rho,
                rho2: rho * rho,
                policy: PolicyTable::new(t.clone(), t.iter().map(|v| s * v).collect()).unwrap(),
                a_star: 1.0 + rho * rho,
                lambda_soft: 0.45 + 0.1 * k as f64,
                regret_soft: 1.0 + 1.1 * rho * rho,
                lambda_hard: 1.1 + 0.2 * k as f64,
                regret_hard: 1.0 + 1.5 * rho * rho,
            }
        })
        .collect();
    LookupTable::from_parts(t, entries, curve).unwrap()
}

#[test]
fn file_round_trip_is_bit_exact() {
    let table = toy();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.txt");
    table.save(&path).unwrap();
    let back = LookupTable::load(&path).unwrap();
    assert_eq!(back, table);
    assert_eq!(back.to_text(), table.to_text());
}

#[test]
fn corrupted_body_fails_checksum() {
    let text = toy().to_text();
    let i = text.find("0.45").unwrap();
    let mut bad = text.clone();
    bad.replace_range(i..i + 4, "0.46");
    assert!(matches!(LookupTable::from_text(&bad), Err(Error::ChecksumMismatch { .. })));
}

#[test]
fn other_versions_are_rejected() {
    let text = toy().to_text();
    let bumped = text.replacen(&format!("v{FORMAT_VERSION}"), &format!("v{}", FORMAT_VERSION + 1), 1);
    assert!(matches!(
        LookupTable::from_text(&bumped),
        Err(Error::FormatVersionMismatch { .. })
    ));
    assert!(matches!(LookupTable::from_text("hello"), Err(Error::Format(_))));
}

#[test]
fn node_queries_return_stored_values() {
    let table = toy();
    let e = &table.entries()[2];
    let q = table.query_lambda(ThresholdKind::Soft, e.rho2);
    assert!((q.value - e.lambda_soft).abs() < 1e-12);
    let p = table.query_policy(e.rho2, 1.5);
    assert!((p.value - 1.5 / 3.0).abs() < 1e-9);
}

#[test]
fn explicit_path_beats_environment() {
    std::env::set_var(ENV_VAR, "/from/env");
    assert_eq!(resolve_path(Some("/flag".as_ref())).unwrap(), std::path::PathBuf::from("/flag"));
    assert_eq!(resolve_path(None).unwrap(), std::path::PathBuf::from("/from/env"));
    std::env::set_var(ENV_VAR, "");
    assert!(resolve_path(None).is_none());
    std::env::remove_var(ENV_VAR);
}
