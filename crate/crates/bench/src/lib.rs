//! Fixtures shared by the benchmarks.

use fim_core::config::RunConfig;
use fim_core::data::generate_synthetic;
use fim_core::harness::{prepare, Prepared};

/// Encoded train/test examples from a small generated dataset.
pub fn fixture(users: usize) -> (RunConfig, Prepared) {
    let mut cfg = RunConfig::default();
    cfg.set("gen.users", &users.to_string()).expect("known key");
    let ds = generate_synthetic(&cfg.synthetic().expect("valid defaults")).expect("generator");
    let prepared = prepare(&cfg, &ds).expect("prepare");
    (cfg, prepared)
}
