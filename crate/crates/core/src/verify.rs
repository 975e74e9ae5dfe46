//! Closed-form identity checks and small convergence studies shared by the
//! command line tool and the acceptance suite.

use crate::fields::{instanton_connection, instanton_curvature, kernel_field};
use crate::fourier::FourierSeries;
use crate::gluing::{build_connection, Frame, GeometryData, GluingData};
use crate::grid::{Metric, ProductGrid};
use crate::instanton::{
    curvature_closed, energy_quadrature, parallel_frame_derivative, parallel_frame_derivative_direct, potential,
    potential_derivative, rotation_gauge_identity, rotation_invariance_defect, EnergyQuadrature, InstantonParams,
    KernelCoeffs,
};
use crate::lie::{from_matrix, matrix_commutator, selfdual_project, LieValue, SkewPlus, TwoForm, PAIRS4};
use crate::ops::{linearized_op, Assembly};
use crate::report::{fmt_f64, Table};
use crate::Result;
use std::f64::consts::{PI, TAU};

/// Threshold for the closed-form identities.
pub const IDENTITY_TOL: f64 = 1e-10;

/// One named check with its measured error and threshold.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tol: f64,
}

impl Check {
    fn new(name: &str, error: f64, tol: f64) -> Self {
        Self { name: name.into(), error, tol }
    }

    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error < self.tol
    }
}

/// Writes checks as `name,error,tol,pass`.
pub fn checks_table(checks: &[Check]) -> Table {
    let mut t = Table::new(&["check", "error", "tol", "pass"]);
    for c in checks {
        t.push(vec![c.name.clone(), fmt_f64(c.error), fmt_f64(c.tol), c.passed().to_string()]);
    }
    t
}

fn sample_points() -> Vec<[f64; 4]> {
    vec![
        [0.3, -0.2, 0.5, 0.1],
        [1.0, 0.0, 0.0, 0.0],
        [-0.7, 0.4, 0.05, -1.3],
        [0.0, 0.0, 0.0, 0.0],
        [2.5, -1.5, 0.3, 0.9],
        [0.02, 0.01, -0.03, 0.04],
    ]
}

fn sample_params() -> Vec<InstantonParams> {
    [(1.0, 1.0, [0.0; 4]), (0.3, 1.0, [0.0; 4]), (0.5, 1.7, [0.2, -0.4, 0.1, 0.3]), (0.1, 2.0, [1.0, 0.0, -2.0, 0.5])]
        .into_iter()
        .map(|(e, l, v)| InstantonParams::new(e, l, v).expect("fixed sample parameters are valid"))
        .collect()
}

/// Bracket table and agreement with the matrix commutator on basis pairs.
pub fn bracket_table_error() -> f64 {
    let b = [LieValue::I, LieValue::J, LieValue::K];
    let mut err: f64 = 0.0;
    for (x, y, z) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        err = err.max((b[x].bracket(b[y]) - b[z] * 2.0).max_abs());
    }
    for x in b {
        for y in b {
            let m = from_matrix(&matrix_commutator(&x.matrix(), &y.matrix()));
            err = err.max((x.bracket(y) - m).max_abs());
        }
    }
    err
}

/// Relative self-dual part of `dB + s[B,B]` over the sample set. With the
/// correct sign `s = 1` this vanishes.
pub fn selfdual_part_error(bracket_sign: f64) -> f64 {
    let mut err: f64 = 0.0;
    for p in sample_params() {
        for y in sample_points() {
            let y = p.center().iter().zip(y).map(|(c, v)| c + v * p.scale()).collect::<Vec<_>>();
            let y = [y[0], y[1], y[2], y[3]];
            let b = potential(&p, y);
            let db = potential_derivative(&p, y);
            let f = TwoForm::new(PAIRS4.map(|(a, c)| db[a][c] - db[c][a] + b[a].bracket(b[c]) * bracket_sign));
            let closed = curvature_closed(&p, y);
            err = err.max(selfdual_project(&f).max_abs() / (1.0 + closed.max_abs()));
        }
    }
    err
}

/// Closed-form covariant derivative of the frame field against the route
/// through the potential, scaled by the instanton size.
pub fn frame_derivative_error() -> f64 {
    let mut err: f64 = 0.0;
    for p in sample_params() {
        for y in sample_points() {
            for (mu, r) in [(1.0, SkewPlus::ZERO), (0.0, SkewPlus::basis(0)), (0.3, SkewPlus::new(0.2, -0.5, 0.7))] {
                let (_, du) = parallel_frame_derivative(&p, mu, r, y);
                let dd = parallel_frame_derivative_direct(&p, mu, r, y);
                for (u, d) in du.iter().flatten().zip(dd.iter().flatten()) {
                    err = err.max((u - d).abs() * p.scale());
                }
            }
        }
    }
    err
}

/// Both sides of the rotation gauge identity for self-dual generators.
pub fn gauge_identity_error() -> f64 {
    let mut err: f64 = 0.0;
    for p in sample_params() {
        let s = p.scale();
        for y in sample_points() {
            for k in 0..3 {
                let r = SkewPlus::basis(k);
                let (l, rr) = rotation_gauge_identity(&p, r, y);
                for a in 0..4 {
                    err = err.max((l[a] - rr[a]).max_abs() * s * s);
                }
                for v in rotation_invariance_defect(&p, r, y) {
                    err = err.max(v.max_abs() * s);
                }
            }
        }
    }
    err
}

/// Curvature of the approximate connection in the Levi-Civita frame, from
/// the closed form and by transport from the parallel frame.
pub fn frame_change_error() -> Result<f64> {
    let l = [TAU, TAU];
    let th = FourierSeries::constant(&l, 0.2).with_mode(&[0, 1], 0.1, 0.0);
    let gd = GluingData::flat(0.1, &l)
        .with_v(1, FourierSeries::zero(&l).with_mode(&[1, 1], 0.2, 0.1))
        .with_lambda(FourierSeries::constant(&l, 1.3).with_mode(&[1, 0], 0.0, 0.2))
        .with_theta(0, 2, FourierSeries::constant(&l, 0.2))
        .with_theta(1, 2, th);
    let grid = ProductGrid::scaled(&[4, 4], &l, 5, 4.0, 0.1)?;
    let a = build_connection(&gd, &GeometryData::flat(&l), &grid)?;
    let mut err: f64 = 0.0;
    for p in (0..grid.npts()).step_by(7) {
        let lc = a.curvature_closed_at(p, Frame::LeviCivita);
        let tr = a.curvature_transported(p);
        let scale = lc.iter().map(|v| v.max_abs()).fold(1.0, f64::max);
        for (u, v) in lc.iter().zip(&tr) {
            err = err.max((*u - *v).max_abs() / scale);
        }
    }
    Ok(err)
}

/// The closed-form identity suite. `bracket_sign = 1` is the correct
/// structure; any other value is a negative control.
pub fn identity_suite(bracket_sign: f64) -> Result<Vec<Check>> {
    Ok(vec![
        Check::new("bracket_table", bracket_table_error(), IDENTITY_TOL),
        Check::new("curvature_antiselfdual", selfdual_part_error(bracket_sign), IDENTITY_TOL),
        Check::new("frame_derivative", frame_derivative_error(), IDENTITY_TOL),
        Check::new("rotation_gauge_identity", gauge_identity_error(), IDENTITY_TOL),
        Check::new("frame_change", frame_change_error()?, IDENTITY_TOL),
    ])
}

/// `8π²`, the energy of a charge-one instanton.
pub const ENERGY_QUANTUM: f64 = 8.0 * PI * PI;

/// Lattice energy at unit scale on a ball of radius 4 with `cells` cells
/// per axis, plus the exact tail, and its relative error.
pub fn energy_check(cells: usize) -> (EnergyQuadrature, f64) {
    let q = energy_quadrature(&InstantonParams::basic(1.0), 4.0, cells);
    let rel = (q.total - ENERGY_QUANTUM).abs() / ENERGY_QUANTUM;
    (q, rel)
}

/// Fiber spacings of the kernel refinement study.
pub const KERNEL_SPACINGS: [f64; 3] = [0.05, 0.025, 0.0125];

/// `|𝕃_B a| / |a|` at an off-center node for the `j`-th kernel basis element
/// at each spacing of [`KERNEL_SPACINGS`], and the two observed orders.
pub fn kernel_refinement(j: usize) -> Result<([f64; 3], [f64; 2])> {
    let p = InstantonParams::basic(0.5);
    let k = KernelCoeffs::basis(j);
    let mut ratios = [0.0; 3];
    for (r, &h) in ratios.iter_mut().zip(&KERNEL_SPACINGS) {
        let grid = ProductGrid::fiber_only(5, h, 0.5)?.with_center([0.2, -0.1, 0.15, 0.05]);
        let conn = instanton_connection(&grid, &p);
        let curv = instanton_curvature(&grid, &p);
        let a = kernel_field(&grid, &p, &k);
        let la = linearized_op(&grid, &conn, &curv, &Metric::Flat, &a, Assembly::Direct)?;
        let c = grid.fiber_center_index();
        let num = la.at(c).iter().map(|v| v.norm_sq()).sum::<f64>().sqrt();
        let den = a.at(c).iter().map(|v| v.norm_sq()).sum::<f64>().sqrt();
        *r = num / den;
    }
    let orders = [(ratios[0] / ratios[1]).log2(), (ratios[1] / ratios[2]).log2()];
    Ok((ratios, orders))
}
