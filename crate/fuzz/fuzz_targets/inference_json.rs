#![no_main]

use libfuzzer_sys::fuzz_target;
use panoact_debrief::{parse_inference_json, VideoStore};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(v) = parse_inference_json(text, "fuzz.json") {
        assert!(v.events.windows(2).all(|w| !w[0].chrono_cmp(&w[1]).is_gt()));
        assert_eq!(VideoStore::from_file(v.to_file()).expect("stored file re-validates"), v);
    }
});
