#![no_main]

use dispmeter::ufi::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // anything that decodes must survive a round trip unchanged
    if let Ok(img) = decode(data) {
        let bytes = encode(&img).expect("decoded image re-encodes");
        let again = decode(&bytes).expect("re-encoded image decodes");
        assert_eq!(encode(&again).unwrap(), bytes);
    }
});
