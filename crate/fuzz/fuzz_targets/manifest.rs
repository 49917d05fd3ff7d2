#![no_main]

use libfuzzer_sys::fuzz_target;
use panoact::manifest::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse_text(text) {
        let again = Manifest::parse_text(&m.render()).expect("rendered manifest parses");
        assert_eq!(again.render(), m.render());
    }
});
