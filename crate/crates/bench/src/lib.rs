//! Shared setup for the benchmarks.

use mcs_core::{build_box_mesh, build_spaces, Discretization, MeshSpec};

/// Periodic `[0, 2 pi]^2` discretization with `n x n` cells.
pub fn periodic_square(n: usize, k: usize) -> Discretization {
    let mut spec = MeshSpec::periodic_box(2, n, 0.0, 2.0 * std::f64::consts::PI);
    spec.cells = vec![n, n];
    build_spaces(&build_box_mesh(&spec).expect("mesh"), k).expect("spaces")
}

pub fn taylor_green(x: &[f64]) -> [f64; 3] {
    [x[0].sin() * x[1].cos(), -x[0].cos() * x[1].sin(), 0.0]
}
