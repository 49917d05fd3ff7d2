#![no_main]

use libfuzzer_sys::fuzz_target;
use panoact::eval::{parse_metadata, render_metadata};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(videos) = parse_metadata(text) {
        let again = parse_metadata(&render_metadata(&videos)).expect("rendered metadata parses");
        assert_eq!(again, videos);
    }
});
