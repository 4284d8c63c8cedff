#![no_main]

use dispmeter::formats::{paramsets_to_toml, parse_calibration, parse_paramsets, parse_stack_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_stack_manifest(text);
    let _ = parse_calibration(text);
    if let Ok(sets) = parse_paramsets(text) {
        let back = paramsets_to_toml(&sets).expect("valid paramsets serialize");
        assert_eq!(parse_paramsets(&back).expect("serialized paramsets parse"), sets);
    }
});
