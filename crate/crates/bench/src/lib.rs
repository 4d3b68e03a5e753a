//! Shared fixtures for the benchmarks.

use unfitted_core::{Method, RunConfig};

/// Poisson with Nitsche conditions on the sliver box.
pub fn case(method: Method, n: usize, order: usize) -> RunConfig {
    RunConfig { n, order, ..RunConfig::default() }.with_method(method, 1.0)
}

pub const SIZES: [usize; 2] = [16, 32];
