#![no_main]

use dispmeter::formats::{read_correspondences, read_defects, read_patches, read_table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_table(data, &["a", "b"]);
    let _ = read_correspondences(data);
    let _ = read_patches(data);
    if let Ok(p) = read_defects(data, 96, 64) {
        assert!(p.centers.iter().all(|c| c.x.abs() <= 48.0 && c.y.abs() <= 32.0));
    }
});
