#![no_main]

use libfuzzer_sys::fuzz_target;
use panoact::annotate::{export_csv_string, import_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(anns) = import_csv(data, "fuzz.csv") {
        let text = export_csv_string(&anns).expect("imported annotations export");
        let back = import_csv(text.as_bytes(), "fuzz.csv").expect("exported CSV imports");
        assert_eq!(export_csv_string(&back).expect("export"), text);
    }
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = panoact_debrief::parse_annotation_csv(text, "fuzz.csv", 10.0);
    }
});
