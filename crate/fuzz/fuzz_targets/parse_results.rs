#![no_main]

use anb::experiment::{encode_results_csv, encode_summary_csv, parse_results_csv, parse_summary_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_results_csv(data) {
        let bytes = encode_results_csv(&rows);
        assert_eq!(parse_results_csv(&bytes).expect("re-encoded rows parse").len(), rows.len());
    }
    if let Ok(rows) = parse_summary_csv(data) {
        let bytes = encode_summary_csv(&rows);
        assert_eq!(parse_summary_csv(&bytes).expect("re-encoded summary parses").len(), rows.len());
    }
});
