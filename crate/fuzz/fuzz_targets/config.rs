#![no_main]

use drivestyle::bench::parse_grid_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = parse_grid_spec(text) {
            let _ = spec.experiments();
        }
    }
});
