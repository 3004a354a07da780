//! Inputs shared by the benchmarks.

use polytube_core::environment::sample_field;
use polytube_core::{DisorderField, ModelParams};

/// A tube of exponent `a` and radius 1 with a sampled field.
pub fn tube(d: usize, a: f64, n: usize) -> (ModelParams, DisorderField) {
    let p = ModelParams::new(d, a, 1.0, n).expect("valid parameters");
    let f = sample_field(&p, 7).expect("field fits in memory");
    (p, f)
}
