#![no_main]

//! Input: manifest text, a NUL byte, then the tensor payload.

use libfuzzer_sys::fuzz_target;
use panoact::manifest::Manifest;
use panoact::optimize::QuantizedModel;

fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else { return };
    let Ok(text) = std::str::from_utf8(&data[..split]) else { return };
    let Ok(m) = Manifest::parse_text(text) else { return };
    if let Ok(qm) = QuantizedModel::decode(&m, &data[split + 1..]) {
        let (m2, bytes) = qm.encode().expect("decoded model re-encodes");
        QuantizedModel::decode(&m2, &bytes).expect("round trip");
    }
});
