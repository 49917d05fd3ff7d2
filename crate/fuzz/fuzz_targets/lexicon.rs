#![no_main]

use libfuzzer_sys::fuzz_target;
use panoact_debrief::Lexicon;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(lex) = Lexicon::parse(text, "fuzz.txt") {
        for a in lex.actions() {
            assert!(!lex.phrase(a).is_empty());
        }
    }
});
