#![no_main]

use std::sync::OnceLock;

use inbo::bench::{ushape_problem, Problem, RunConfig};
use libfuzzer_sys::fuzz_target;

fn problem() -> &'static Problem {
    static PROBLEM: OnceLock<Problem> = OnceLock::new();
    PROBLEM.get_or_init(ushape_problem)
}

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = serde_json::from_slice::<RunConfig>(data) {
        let _ = cfg.validate(problem());
    }
});
