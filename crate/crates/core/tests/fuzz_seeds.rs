//! Replays the checked-in fuzz corpus through the same checks the fuzz
//! targets make, and confirms every seed parses.

use std::fs;
use std::path::PathBuf;

use dispmeter::formats::{paramsets_to_toml, parse_calibration, parse_paramsets, parse_stack_manifest};
use dispmeter::formats::{read_correspondences, read_defects, read_patches};
use dispmeter::ufi::{decode, encode};

fn seeds(dir: &str) -> Vec<(String, Vec<u8>)> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(dir);
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(&root)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    assert!(!v.is_empty(), "no seeds in {}", root.display());
    v
}

#[test]
fn ufi_seeds_round_trip() {
    for (name, bytes) in seeds("ufi") {
        let img = decode(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode(&img).unwrap(), bytes, "{name}");
    }
}

#[test]
fn manifest_seeds_parse() {
    for (name, bytes) in seeds("manifest") {
        let text = String::from_utf8(bytes).unwrap();
        let parsed = match name.as_str() {
            "stack.toml" => parse_stack_manifest(&text).map(|_| ()),
            "calibration.toml" => parse_calibration(&text).map(|_| ()),
            _ => parse_paramsets(&text).map(|sets| {
                let back = paramsets_to_toml(&sets).unwrap();
                assert_eq!(parse_paramsets(&back).unwrap(), sets);
            }),
        };
        parsed.unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn csv_seeds_parse() {
    for (name, bytes) in seeds("csv") {
        let ok = match name.as_str() {
            "correspondences.csv" => read_correspondences(&bytes[..]).map(|v| v.len()),
            "patches.csv" => read_patches(&bytes[..]).map(|v| v.len()),
            _ => read_defects(&bytes[..], 96, 64).map(|p| p.centers.len()),
        };
        assert!(ok.unwrap_or_else(|e| panic!("{name}: {e}")) > 0, "{name}");
    }
}

#[test]
fn truncated_seeds_fail_cleanly() {
    for dir in ["ufi", "manifest", "csv"] {
        for (_, bytes) in seeds(dir) {
            for cut in 0..bytes.len() {
                let b = &bytes[..cut];
                let _ = decode(b);
                let _ = read_correspondences(b);
                let _ = read_patches(b);
                let _ = read_defects(b, 96, 64);
                if let Ok(t) = std::str::from_utf8(b) {
                    let _ = parse_stack_manifest(t);
                    let _ = parse_calibration(t);
                    let _ = parse_paramsets(t);
                }
            }
        }
    }
}
