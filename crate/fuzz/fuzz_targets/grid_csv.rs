#![no_main]

use inbo::bench::{load_domain, read_grid_csv};
use libfuzzer_sys::fuzz_target;

const SQUARE: &str = "ring_id,x,y\n0,0,0\n0,1,0\n0,1,1\n0,0,1\n";

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_grid_csv(data) {
        assert!(rows.iter().all(|r| r.x.is_finite() && r.y.is_finite() && r.is_inducing <= 1));
    }
    // Keep the Voronoi step cheap.
    if data.len() < 2048 {
        if let Ok(problem) = load_domain("fuzz", SQUARE.as_bytes(), data) {
            assert!(!problem.inducing.is_empty());
        }
    }
});
