#![no_main]

use heavy_polymer::elpp::{solve, SolveParams};
use heavy_polymer::io::decode_points_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(points) = decode_points_csv(data) {
        if points.len() <= 64 {
            let _ = solve(&points, &SolveParams::quadratic(1.0));
        }
    }
});
