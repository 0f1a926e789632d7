#![no_main]

use libfuzzer_sys::fuzz_target;
use nmor_sim::traces::PhotocurrentTraces;

fuzz_target!(|s: &str| {
    if let Ok(t) = PhotocurrentTraces::from_csv(s) {
        PhotocurrentTraces::from_csv(&t.to_csv()).expect("re-decode");
    }
});
