//! Replays the checked-in fuzz seeds through the same invariants the fuzz
//! targets assert, so they run under plain `cargo test`.

use std::path::PathBuf;

use anb::experiment::{encode_results_csv, encode_summary_csv, parse_results_csv, parse_summary_csv};
use anb::metrics::{decode_dataset, encode_dataset};
use anb::{decode_model, encode_model, ExperimentConfig};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn model_seeds() {
    let mut decoded = 0;
    for (name, bytes) in seeds("parse_model") {
        if let Ok(m) = decode_model(&bytes) {
            let again = encode_model(&m);
            assert_eq!(encode_model(&decode_model(&again).unwrap()), again, "{name}");
            decoded += 1;
        }
    }
    assert!(decoded >= 4);
}

#[test]
fn dataset_seeds() {
    let mut decoded = 0;
    for (name, bytes) in seeds("parse_dataset") {
        if let Ok(ds) = decode_dataset("seed", &bytes) {
            assert_eq!(decode_dataset("seed", &encode_dataset(&ds)).unwrap(), ds, "{name}");
            decoded += 1;
        }
    }
    assert_eq!(decoded, 2);
}

#[test]
fn results_seeds() {
    for (name, bytes) in seeds("parse_results") {
        let rows = parse_results_csv(&bytes).map(|r| encode_results_csv(&r));
        let summary = parse_summary_csv(&bytes).map(|r| encode_summary_csv(&r));
        match (rows, summary) {
            (Ok(b), Err(_)) | (Err(_), Ok(b)) => assert_eq!(b, bytes, "{name} does not re-encode byte-identically"),
            other => panic!("{name}: expected exactly one schema to parse, got {other:?}"),
        }
    }
}

#[test]
fn config_seeds() {
    for (name, bytes) in seeds("parse_config") {
        let cfg = ExperimentConfig::from_toml_str(std::str::from_utf8(&bytes).unwrap());
        assert!(cfg.is_ok_and(|c| c.validate().is_ok()), "{name}");
    }
}
