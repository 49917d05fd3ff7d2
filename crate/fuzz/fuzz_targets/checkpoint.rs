#![no_main]

//! Input: manifest text, a NUL byte, then the tensor payload.

use libfuzzer_sys::fuzz_target;
use panoact::detector::ModelCheckpoint;
use panoact::manifest::Manifest;

fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else { return };
    let Ok(text) = std::str::from_utf8(&data[..split]) else { return };
    let Ok(m) = Manifest::parse_text(text) else { return };
    if let Ok(ck) = ModelCheckpoint::decode(&m, &data[split + 1..]) {
        let (m2, bytes) = ck.encode().expect("decoded checkpoint re-encodes");
        let again = ModelCheckpoint::decode(&m2, &bytes).expect("round trip");
        // Byte comparison rather than `==` so NaN weights still round-trip.
        assert_eq!(again.encode().expect("re-encode").1, bytes);
    }
});
