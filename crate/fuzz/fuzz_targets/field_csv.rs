#![no_main]

use heavy_polymer::io::{decode_field_csv, encode_field_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(field) = decode_field_csv(data) {
        let again = decode_field_csv(&encode_field_csv(&field)).expect("re-encoded field parses");
        assert_eq!(again, field);
    }
});
