#![no_main]

use libfuzzer_sys::fuzz_target;
use panoact::tensor::{decode_tensors, encode_tensor, Tensor};

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = decode_tensors(data) {
        // Whatever decodes re-encodes to the bytes it came from.
        let mut out = Vec::new();
        for t in &tensors {
            encode_tensor(t, &mut out);
        }
        assert_eq!(out, data);
    }
    if let Ok(t) = Tensor::from_bytes(data) {
        assert_eq!(t.len(), t.shape().iter().product::<usize>());
        assert_eq!(t.to_bytes(), data);
    }
});
