#![no_main]

use libfuzzer_sys::fuzz_target;
use nmor_sim::traces::PhotocurrentTraces;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = PhotocurrentTraces::from_binary(data) {
        // anything accepted must survive a round trip
        let again = PhotocurrentTraces::from_binary(&t.to_binary()).expect("re-decode");
        assert_eq!(t.to_binary(), again.to_binary());
    }
});
