#![no_main]

use inbo::bm_sim::decode_ensemble;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cached) = decode_ensemble(data) {
        assert!(!cached.times.is_empty());
        assert_eq!(cached.positions.len() % cached.times.len(), 0);
    }
});
