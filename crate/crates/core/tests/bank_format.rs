//! Banks written byte by byte, the way a non-Rust extractor would, then read
//! back through the library.

use std::fs;
use std::path::Path;

use zoorank::estimators::{score_bank, Method};
use zoorank::feature_bank::{read_bank, read_matrix, write_bank};
use zoorank::Error;

fn mat_bytes(rows: u64, cols: u64, values: &[f32]) -> Vec<u8> {
    let mut out = b"MSPB".to_vec();
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn write_foreign_bank(dir: &Path, with_probs: bool) {
    fs::create_dir_all(dir).unwrap();
    let manifest = format!(
        r#"{{"model_id": "vit", "dataset_id": "pets", "n_samples": 4, "feat_dim": 3, "n_classes": 2,
            "has_source_probs": {with_probs}, "source_dim": {}, "seed": 42, "class_names": ["cat", "dog"]}}"#,
        if with_probs { 2 } else { 0 }
    );
    fs::write(dir.join("manifest.json"), manifest).unwrap();
    let features = [1.0, 0.5, -2.0, 1.5, 0.0, -1.0, -1.0, 2.0, 0.25, -0.5, 1.0, 0.75];
    fs::write(dir.join("features.mat"), mat_bytes(4, 3, &features)).unwrap();
    fs::write(dir.join("labels.mat"), mat_bytes(4, 1, &[0.0, 0.0, 1.0, 1.0])).unwrap();
    if with_probs {
        let probs = [0.75, 0.25, 0.5, 0.5, 0.125, 0.875, 0.25, 0.75];
        fs::write(dir.join("source_probs.mat"), mat_bytes(4, 2, &probs)).unwrap();
    }
}

#[test]
fn hand_written_bank_reads_in_row_major_order() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("vit");
    write_foreign_bank(&dir, true);
    let bank = read_bank(&dir).unwrap();
    assert_eq!(bank.model_id(), "vit");
    assert_eq!(bank.manifest.class_names.as_deref(), Some(&["cat".to_string(), "dog".to_string()][..]));
    assert_eq!(bank.features.row(1), &[1.5, 0.0, -1.0]);
    assert_eq!(bank.features.get(3, 2), 0.75);
    assert_eq!(bank.labels, vec![0, 0, 1, 1]);
    assert_eq!(bank.source_probs.as_ref().unwrap().row(2), &[0.125, 0.875]);
    for method in Method::ALL {
        assert!(score_bank(&bank, method).unwrap().value.is_finite(), "{method}");
    }
}

#[test]
fn library_writer_reproduces_foreign_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let foreign = tmp.path().join("foreign");
    write_foreign_bank(&foreign, true);
    let ours = tmp.path().join("ours");
    write_bank(&read_bank(&foreign).unwrap(), &ours).unwrap();
    for file in ["features.mat", "labels.mat", "source_probs.mat"] {
        assert_eq!(fs::read(foreign.join(file)).unwrap(), fs::read(ours.join(file)).unwrap(), "{file}");
    }
    assert_eq!(read_bank(&ours).unwrap(), read_bank(&foreign).unwrap());
}

#[test]
fn bank_without_source_head_is_a_capability_gap_for_nce_and_leep() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bare");
    write_foreign_bank(&dir, false);
    let bank = read_bank(&dir).unwrap();
    assert!(bank.source_probs.is_none());
    assert!(score_bank(&bank, Method::LogMe).is_ok());
    for method in [Method::Nce, Method::Leep] {
        assert!(matches!(score_bank(&bank, method), Err(Error::Capability { .. })), "{method}");
    }
}

#[test]
fn corrupt_headers_are_format_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.mat");
    let cases: Vec<(&str, Vec<u8>)> = vec![
        ("bad magic", {
            let mut b = mat_bytes(1, 1, &[1.0]);
            b[0] = b'X';
            b
        }),
        ("bad version", {
            let mut b = mat_bytes(1, 1, &[1.0]);
            b[4] = 2;
            b
        }),
        ("truncated payload", mat_bytes(2, 2, &[1.0, 2.0, 3.0])),
        ("trailing bytes", mat_bytes(1, 1, &[1.0, 2.0])),
        ("short header", b"MSPB\x01\x00".to_vec()),
    ];
    for (what, bytes) in cases {
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Format { .. })), "{what}");
    }
}

#[test]
fn manifest_disagreeing_with_data_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("vit");
    write_foreign_bank(&dir, false);
    fs::write(dir.join("labels.mat"), mat_bytes(4, 1, &[0.0, 0.0, 0.0, 0.0])).unwrap();
    let err = read_bank(&dir).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");

    write_foreign_bank(&dir, false);
    fs::write(dir.join("labels.mat"), mat_bytes(4, 1, &[0.0, 0.5, 1.0, 1.0])).unwrap();
    assert!(read_bank(&dir).is_err());
}
