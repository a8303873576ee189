#![no_main]

use heavy_polymer::io::{decode_field_binary, encode_field_binary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(field) = decode_field_binary(data) {
        // accepted input is canonical
        assert_eq!(encode_field_binary(&field), data);
    }
});
