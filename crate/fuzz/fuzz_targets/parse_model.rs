#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = anb::decode_model(data) {
        let bytes = anb::encode_model(&model);
        let again = anb::decode_model(&bytes).expect("re-encoded model decodes");
        assert_eq!(again.param_digest(), model.param_digest());
        assert_eq!(anb::encode_model(&again), bytes);
    }
});
