//! Closed-form instanton data sampled on product grids, with fiber
//! coordinates read as physical offsets from the submanifold.

use crate::grid::{pair_slot, GaugeField, ProductGrid, TwoFormField};
use crate::instanton::{curvature_closed, kernel_element, potential, InstantonParams, KernelCoeffs};
use crate::lie::PAIRS4;

/// Instanton potential in the fiber directions; base components vanish.
pub fn instanton_connection(grid: &ProductGrid, p: &InstantonParams) -> GaugeField {
    let m = grid.base_dim();
    let nf = grid.fiber_points();
    GaugeField::from_fn(grid, |q, out| {
        let b = potential(p, grid.fiber_coord(q % nf));
        out[m..m + 4].copy_from_slice(&b);
    })
}

/// Exact instanton curvature, purely vertical.
pub fn instanton_curvature(grid: &ProductGrid, p: &InstantonParams) -> TwoFormField {
    let m = grid.base_dim();
    let d = grid.dim();
    let nf = grid.fiber_points();
    TwoFormField::from_fn(grid, |q, out| {
        let f = curvature_closed(p, grid.fiber_coord(q % nf));
        for (s, &(a, b)) in PAIRS4.iter().enumerate() {
            out[pair_slot(d, m + a, m + b)] = f.c[s];
        }
    })
}

/// Kernel element with coefficients `k`, purely vertical.
pub fn kernel_field(grid: &ProductGrid, p: &InstantonParams, k: &KernelCoeffs) -> GaugeField {
    let m = grid.base_dim();
    let nf = grid.fiber_points();
    GaugeField::from_fn(grid, |q, out| {
        let v = kernel_element(p, k, grid.fiber_coord(q % nf));
        out[m..m + 4].copy_from_slice(&v);
    })
}
