#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = anb::metrics::decode_dataset("fuzz", data) {
        let bytes = anb::metrics::encode_dataset(&ds);
        assert_eq!(anb::metrics::decode_dataset("fuzz", &bytes).expect("re-encoded dataset decodes"), ds);
    }
});
