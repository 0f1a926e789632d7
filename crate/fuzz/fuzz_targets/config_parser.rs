#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|s: &str| {
    // Errors are fine; panics are not.
    let _ = nmor_sim::config::parse_config_str(s, None);
});
