//! The nonlinear step: the exact discrete quadratic remainder, the projected
//! fixed-point contraction for `(I−ℙ)(D*F + D D* a) = 0` and the
//! consistency report on its result.
//!
//! The discrete nonlinear operator is `D*_{A+a}F_{A+a} + D_{A+a}D*_{A+a}a`
//! with centered differences, plus the linear correction
//! `λ⁻²(𝕃_link − 𝕃_flat) a`. That correction swaps the principal part of the
//! wide centered stencil for the compact link stencil that the model solver
//! inverts. It vanishes at `a = 0` and is `O(h²)` on smooth fields.

use crate::balancing::{
    perturbed_data, project_residual, solve_balance, BalanceOptions, BalanceSolution, BalanceTriple, BaseGrid, FiberQuadrature,
    JacobiSystem,
};
use crate::gluing::{build_connection, ym_residual, ApproxConnection, GeometryData, GluingData, MetricChoice, ResidualMode};
use crate::grid::{GaugeField, Metric, ProductGrid, TwoFormField};
use crate::model_solver::{solve_model, ModelOperator};
use crate::ops::{self, linearized_op, Assembly, WeightSpec};
use crate::projection::{physical_coeffs, Cutoff, ProjectionBasis};
use crate::report::{fmt_f64, Table};
use crate::{Error, Result};
use rayon::prelude::*;
use std::path::Path;

/// Iteration cap for [`contract`].
pub const MAX_ITERATES: usize = 20;
/// Bound on `|Πa|` kept by every iterate.
pub const E_INVARIANT_TOL: f64 = 1e-6;

/// `D*_{A+a}F_{A+a} + D_{A+a}D*_{A+a} a` with the centered-difference
/// operators, without the stencil correction.
pub fn direct_residual(grid: &ProductGrid, conn: &GaugeField, metric: &Metric, a: &GaugeField) -> Result<GaugeField> {
    let at = conn.add(a);
    let f = ops::curvature(grid, &at)?;
    let dsf = ops::cov_codifferential(grid, &at, metric, &f)?;
    let ds = ops::gauge_codifferential(grid, &at, metric, a)?;
    let dds = ops::cov_gradient(grid, &at, &ds)?;
    Ok(dsf.add(&dds))
}

/// `D_{A+a} D*_{A+a} a`, the gauge-fixing part.
pub fn gauge_part(grid: &ProductGrid, conn: &GaugeField, metric: &Metric, a: &GaugeField) -> Result<GaugeField> {
    let at = conn.add(a);
    let ds = ops::gauge_codifferential(grid, &at, metric, a)?;
    ops::cov_gradient(grid, &at, &ds)
}

/// Everything the contraction needs, assembled once per connection.
#[derive(Debug, Clone)]
pub struct NonlinearProblem {
    pub conn: ApproxConnection,
    pub metric: Metric,
    pub curv: TwoFormField,
    pub model: ModelOperator,
    /// Uncut kernel fields; `ℙ` is the orthogonal projection onto them.
    pub basis: ProjectionBasis,
    /// `λ²` per base point.
    pub lambda_sq: Vec<f64>,
    /// `D*_A F_A`, evaluated exactly.
    pub ym: GaugeField,
    /// `D*_A F_A` with centered differences.
    pub ym_discrete: GaugeField,
    pub spec: WeightSpec,
}

impl NonlinearProblem {
    pub fn new(conn: &ApproxConnection) -> Result<Self> {
        let grid = &conn.grid;
        let metric = conn.sampled_metric(MetricChoice::Expanded)?;
        let curv = ops::curvature(grid, &conn.field)?;
        let ym_discrete = ops::cov_codifferential(grid, &conn.field, &metric, &curv)?;
        let ym = ym_residual(conn, MetricChoice::Expanded, ResidualMode::Analytic, WeightSpec::default_for(grid.eps))?.0;
        let lambda_sq = (0..grid.base_points())
            .map(|b| {
                let x = &grid.base_coord(b)[..grid.base_dim()];
                conn.gd.lambda.eval_f64(x).powi(2)
            })
            .collect();
        Ok(Self {
            conn: conn.clone(),
            model: ModelOperator::new(grid)?,
            basis: ProjectionBasis::new(grid, Cutoff::None)?,
            metric,
            curv,
            lambda_sq,
            ym,
            ym_discrete,
            spec: WeightSpec::default_for(grid.eps),
        })
    }

    pub fn grid(&self) -> &ProductGrid {
        &self.conn.grid
    }

    fn scale_by_base(&self, f: &GaugeField, s: impl Fn(f64) -> f64 + Sync) -> GaugeField {
        let nf = self.grid().fiber_points();
        let mut out = f.clone();
        let ncomp = f.ncomp();
        out.data.par_chunks_mut(nf * ncomp).enumerate().for_each(|(b, blk)| {
            let k = s(self.lambda_sq[b]);
            blk.iter_mut().for_each(|v| *v = *v * k);
        });
        out
    }

    /// Zeroes the fiber faces, where the Dirichlet unknowns live.
    pub fn mask_faces(&self, f: GaugeField) -> GaugeField {
        mask_fiber_faces(self.grid(), f)
    }

    /// `λ⁻²(𝕃_link − 𝕃_flat) a`.
    pub fn stencil_correction(&self, a: &GaugeField) -> Result<GaugeField> {
        let g = self.grid();
        let link = self.model.apply(a)?;
        let wide = linearized_op(g, &self.conn.field, &self.curv, &Metric::Flat, a, Assembly::Direct)?;
        Ok(self.scale_by_base(&link.sub(&wide), |l2| 1.0 / l2))
    }

    /// `𝕃_A a`: the centered linearization plus the stencil correction.
    pub fn linear(&self, a: &GaugeField) -> Result<GaugeField> {
        let g = self.grid();
        let l = linearized_op(g, &self.conn.field, &self.curv, &self.metric, a, Assembly::Direct)?;
        Ok(self.mask_faces(l.add(&self.stencil_correction(a)?)))
    }

    /// `D*_Ã F_Ã + D_Ã D*_Ã a` for `Ã = A + a`: the exact `D*_A F_A` plus
    /// the discrete increment and the stencil correction.
    pub fn full_residual(&self, a: &GaugeField) -> Result<GaugeField> {
        let g = self.grid();
        let inc = direct_residual(g, &self.conn.field, &self.metric, a)?.sub(&self.ym_discrete);
        Ok(self.mask_faces(self.ym.add(&inc).add(&self.stencil_correction(a)?)))
    }

    /// `Q(a) = full − D*F_A − 𝕃_A a`, which is the same for either
    /// evaluation of `D*_A F_A`.
    pub fn quadratic(&self, a: &GaugeField) -> Result<GaugeField> {
        let g = self.grid();
        let inc = direct_residual(g, &self.conn.field, &self.metric, a)?.sub(&self.ym_discrete);
        let lin = linearized_op(g, &self.conn.field, &self.curv, &self.metric, a, Assembly::Direct)?;
        Ok(self.mask_faces(inc.sub(&lin)))
    }

    /// `(I−ℙ) f`.
    pub fn complement(&self, f: &GaugeField) -> Result<GaugeField> {
        self.basis.compact_complement(f)
    }

    /// `𝔾 f`: the model solve of `λ² f` for `f ∈ ℰ`. The input is
    /// projected once more so that round-off left by a large kernel part
    /// does not trip the ℰ check.
    pub fn green(&self, f: &GaugeField) -> Result<GaugeField> {
        let rhs = self.complement(&self.scale_by_base(f, |l2| l2))?;
        solve_model(&self.model, &self.basis, &rhs)
    }

    /// Weighted `C₃` norm of a residual.
    pub fn residual_norm(&self, f: &GaugeField) -> f64 {
        self.conn.weighted_norm(f, self.spec.with_nu(3.0)).total()
    }

    /// Weighted `C_{1+ν}` norm of a correction.
    pub fn correction_norm(&self, a: &GaugeField) -> f64 {
        self.conn.weighted_norm(a, self.spec.shifted(1.0)).total()
    }

    /// Largest kernel coefficient of `a`.
    pub fn kernel_part(&self, a: &GaugeField) -> Result<f64> {
        Ok(self.basis.coefficients(a)?.iter().flat_map(|c| c.iter().map(|v| v.abs())).fold(0.0, f64::max))
    }
}


/// Relative round-off level of the residual evaluation, used as a lower
/// bound for the default tolerance.
pub const ROUNDOFF_LEVEL: f64 = 1e-10;

/// One row of the contraction history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub iter: usize,
    /// Weighted `C₃` norm of `(I−ℙ)` of the full residual.
    pub projected_residual: f64,
    /// Weighted `C_{1+ν}` norm of `a`.
    pub a_norm: f64,
    /// Weighted `C₃` norm of `Q(a)`.
    pub q_norm: f64,
    /// Largest kernel coefficient of `a`.
    pub kernel_part: f64,
}

/// Result of [`contract`].
#[derive(Debug, Clone)]
pub struct ContractionState {
    pub a: GaugeField,
    pub residual_history: Vec<f64>,
    /// `(I−ℙ)` of the full residual at `a`.
    pub projected_residual: GaugeField,
    /// Full residual at `a`.
    pub full: GaugeField,
    pub records: Vec<IterateRecord>,
    pub tol: f64,
    pub converged: bool,
}

impl ContractionState {
    /// `(iter, projected_residual_norm, a_norm, Q_norm)`.
    pub fn history_table(&self) -> Table {
        let mut t = Table::new(&["iter", "projected_residual_norm", "a_norm", "Q_norm"]);
        for r in &self.records {
            t.push(vec![r.iter.to_string(), fmt_f64(r.projected_residual), fmt_f64(r.a_norm), fmt_f64(r.q_norm)]);
        }
        t
    }

    pub fn write_history(&self, path: &Path, comments: &[String]) -> Result<()> {
        let mut t = self.history_table();
        for c in comments {
            t.comment(c.clone());
        }
        t.write(path)
    }

    /// Ratios `r_i / r_{i+1}` of successive projected residuals.
    pub fn decrease_factors(&self) -> Vec<f64> {
        self.residual_history.windows(2).map(|w| w[0] / w[1]).collect()
    }

    /// Largest kernel coefficient over all iterates.
    pub fn max_kernel_part(&self) -> f64 {
        self.records.iter().map(|r| r.kernel_part).fold(0.0, f64::max)
    }
}

/// Weighted `C₃` norm of `(I−ℙ)` of the exact residual for flat data on the
/// same grid. The exact instanton is Yang-Mills, so this is round-off.
pub fn flat_floor(grid: &ProductGrid) -> Result<f64> {
    let gd = GluingData::flat(grid.eps, &grid.base_lengths);
    let geo = GeometryData::flat(&grid.base_lengths);
    let conn = build_connection(&gd, &geo, grid)?;
    let basis = ProjectionBasis::new(grid, Cutoff::None)?;
    let spec = WeightSpec::default_for(grid.eps);
    let (r, _) = ym_residual(&conn, MetricChoice::Expanded, ResidualMode::Analytic, spec)?;
    let r = basis.compact_complement(&mask_fiber_faces(grid, r))?;
    Ok(conn.weighted_norm(&r, spec.with_nu(3.0)).total())
}

/// Weighted `C₃` norm of the centered-difference `D*F` of the flat-data
/// instanton: the truncation error of the plain stencil on this grid.
pub fn discretization_floor(grid: &ProductGrid) -> Result<f64> {
    let gd = GluingData::flat(grid.eps, &grid.base_lengths);
    let geo = GeometryData::flat(&grid.base_lengths);
    let conn = build_connection(&gd, &geo, grid)?;
    let spec = WeightSpec::default_for(grid.eps);
    let r = ym_residual(&conn, MetricChoice::Expanded, ResidualMode::Discrete, spec)?.0;
    Ok(conn.weighted_norm(&mask_fiber_faces(grid, r), spec.with_nu(3.0)).total())
}

fn mask_fiber_faces(grid: &ProductGrid, mut f: GaugeField) -> GaugeField {
    let nf = grid.fiber_points();
    let nc = f.ncomp();
    f.data.par_chunks_mut(nc).enumerate().for_each(|(p, v)| {
        if grid.on_fiber_boundary(p % nf) {
            v.iter_mut().for_each(|x| *x = crate::LieValue::ZERO);
        }
    });
    f
}

/// Three times the larger of the flat-data floor and the round-off level of
/// this problem's initial residual.
pub fn default_tolerance(pb: &NonlinearProblem) -> Result<f64> {
    let r0 = pb.residual_norm(&pb.full_residual(&GaugeField::zeros(pb.grid()))?);
    Ok(3.0 * flat_floor(pb.grid())?.max(ROUNDOFF_LEVEL * r0))
}

/// Projected fixed-point iteration `a ← a − 𝔾(I−ℙ)(D*_Ã F_Ã + D_Ã D*_Ã a)`.
///
/// With `𝔾` inverting `𝕃_A` on ℰ this is the map
/// `a ↦ −𝔾(I−ℙ)(D*F_A + Q(a))`; the update form keeps the iteration
/// consistent when `𝔾` is only an approximate inverse.
pub fn contract(pb: &NonlinearProblem, tol: f64) -> Result<ContractionState> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let grid = pb.grid();
    let mut a = GaugeField::zeros(grid);
    let mut records = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut increases = 0;
    for iter in 0..=MAX_ITERATES {
        let full = pb.full_residual(&a)?;
        let projected = pb.complement(&full)?;
        let norm = pb.residual_norm(&projected);
        let kernel_part = pb.kernel_part(&a)?;
        let rec = IterateRecord {
            iter,
            projected_residual: norm,
            a_norm: pb.correction_norm(&a),
            q_norm: pb.residual_norm(&pb.quadratic(&a)?),
            kernel_part,
        };
        records.push(rec);
        if let Some(&last) = history.last() {
            increases = if norm > last { increases + 1 } else { 0 };
        }
        history.push(norm);
        if !(norm.is_finite()) || increases >= 2 {
            let trail: Vec<String> = history.iter().map(|h| format!("{h:.3e}")).collect();
            return Err(Error::NoConvergence(format!("projected residual increased twice in a row: {}", trail.join(" "))));
        }
        if kernel_part >= E_INVARIANT_TOL {
            return Err(Error::KernelObstruction(format!("iterate {iter} left ℰ: kernel part {kernel_part:.3e}")));
        }
        let done = norm < tol;
        if done || iter == MAX_ITERATES {
            return Ok(ContractionState {
                a,
                residual_history: history,
                projected_residual: projected,
                full,
                records,
                tol,
                converged: done,
            });
        }
        a = a.sub(&pb.green(&projected)?);
    }
    unreachable!("loop returns at the iteration cap")
}

/// The consistency report on a converged state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    /// `‖D*_Ã F_Ã + D_Ã D*_Ã a‖`.
    pub full: f64,
    /// `‖ℙ(D*_Ã F_Ã + D_Ã D*_Ã a)‖`.
    pub projected: f64,
    /// `‖D_Ã D*_Ã a‖`.
    pub gauge: f64,
    /// `‖D*_Ã F_Ã‖` in the scheme's evaluation.
    pub ym: f64,
    /// `‖D*_Ã F_Ã‖` with the plain centered stencil.
    pub ym_centered: f64,
}

pub fn residual_report(pb: &NonlinearProblem, state: &ContractionState) -> Result<ResidualReport> {
    let g = pb.grid();
    let full = &state.full;
    let kernel_part = full.sub(&pb.complement(full)?);
    let gauge = pb.mask_faces(gauge_part(g, &pb.conn.field, &pb.metric, &state.a)?);
    let at = pb.conn.field.add(&state.a);
    let f = ops::curvature(g, &at)?;
    let centered = pb.mask_faces(ops::cov_codifferential(g, &at, &pb.metric, &f)?);
    Ok(ResidualReport {
        full: pb.residual_norm(full),
        projected: pb.residual_norm(&kernel_part),
        gauge: pb.residual_norm(&gauge),
        ym: pb.residual_norm(&full.sub(&gauge)),
        ym_centered: pb.residual_norm(&centered),
    })
}

/// `ℙ f` as a balancing triple: kernel coefficients in physical units
/// `(w, μ, r)` per base point.
pub fn grid_projection(pb: &NonlinearProblem, f: &GaugeField) -> Result<BalanceTriple> {
    let base = BaseGrid::of(pb.grid());
    let coeffs = pb.basis.coefficients(f)?;
    let mut out = BalanceTriple::zeros(&base);
    for (b, c) in coeffs.iter().enumerate() {
        let k = physical_coeffs(c, pb.lambda_sq[b].sqrt());
        out.v[b] = k.w;
        out.lambda[b] = k.mu;
        out.theta[b] = k.r;
    }
    Ok(out)
}

/// `Ξ_ε` for the balancing step.
///
/// The leading part `Π(D*F_A)` is evaluated by fiber quadrature of the
/// exact residual. The grid projection of the remaining part
/// `ℙ(𝕃_A a + Q(a))` is computed once from the converged contraction and
/// kept frozen while the balancing iteration moves the data.
#[derive(Debug, Clone)]
pub struct XiEpsilon {
    pub geo: GeometryData,
    pub base: BaseGrid,
    pub fq: FiberQuadrature,
    /// `ℙ` of the converged full residual on the grid.
    pub grid_full: BalanceTriple,
    /// `ℙ(D*F_A)` on the grid.
    pub grid_leading: BalanceTriple,
    /// `grid_full − grid_leading`.
    pub correction: BalanceTriple,
    /// `Ξ_ε` at the data of the contraction.
    pub value: BalanceTriple,
}

impl XiEpsilon {
    pub fn new(pb: &NonlinearProblem, state: &ContractionState, fq: FiberQuadrature) -> Result<Self> {
        let base = BaseGrid::of(pb.grid());
        let grid_full = grid_projection(pb, &state.full)?;
        let grid_leading = grid_projection(pb, &pb.mask_faces(pb.ym.clone()))?;
        let correction = grid_full.sub(&grid_leading);
        let geo = pb.conn.geo.clone();
        let lead = project_residual(&pb.conn.gd, &geo, &base, &fq, MetricChoice::Expanded)?;
        Ok(Self { value: lead.add(&correction), geo, base, fq, grid_full, grid_leading, correction })
    }

    /// `Ξ_ε` at moved data with the frozen correction.
    pub fn eval(&self, gd: &GluingData) -> Result<BalanceTriple> {
        Ok(project_residual(gd, &self.geo, &self.base, &self.fq, MetricChoice::Expanded)?.add(&self.correction))
    }
}

/// Runs the contraction for `(gd, geo)` on `grid` and returns `Ξ_ε` with the
/// state it came from.
pub fn xi_epsilon(
    gd: &GluingData,
    geo: &GeometryData,
    grid: &ProductGrid,
    fq: FiberQuadrature,
    tol: Option<f64>,
) -> Result<(XiEpsilon, ContractionState, NonlinearProblem)> {
    let conn = build_connection(gd, geo, grid)?;
    let pb = NonlinearProblem::new(&conn)?;
    let tol = match tol {
        Some(t) => t,
        None => default_tolerance(&pb)?,
    };
    let state = contract(&pb, tol)?;
    if !state.converged {
        return Err(Error::NoConvergence(format!(
            "contraction stopped at the iteration cap with residual {:.3e} above {tol:.3e}",
            state.residual_history.last().copied().unwrap_or(f64::NAN)
        )));
    }
    let xi = XiEpsilon::new(&pb, &state, fq)?;
    Ok((xi, state, pb))
}

/// Everything produced by [`end_to_end`].
#[derive(Debug, Clone)]
pub struct EndToEnd {
    /// Contraction at the initial data.
    pub initial: ContractionState,
    pub xi: XiEpsilon,
    pub jacobi_condition: f64,
    pub balance: BalanceSolution,
    /// Data moved by the balancing solution.
    pub balanced: GluingData,
    /// Contraction at the balanced data.
    pub last: ContractionState,
    pub initial_report: ResidualReport,
    pub report: ResidualReport,
    /// Centered-stencil residual of the flat instanton on the same grid.
    pub floor: f64,
}

/// Contraction, `Ξ_ε`, the balancing solve and a second contraction at the
/// balanced data, followed by the consistency report.
pub fn end_to_end(
    gd0: &GluingData,
    geo: &GeometryData,
    grid: &ProductGrid,
    fq: FiberQuadrature,
    opts: &BalanceOptions,
) -> Result<EndToEnd> {
    let base = BaseGrid::of(grid);
    let sys = JacobiSystem::assemble(gd0, geo, &base)?;
    let (xi, initial, pb0) = xi_epsilon(gd0, geo, grid, fq, None)?;
    let initial_report = residual_report(&pb0, &initial)?;
    drop(pb0);
    let balance = solve_balance(&sys, gd0, opts, |gd| xi.eval(gd))?;
    let balanced = perturbed_data(gd0, &balance.z)?;
    let conn = build_connection(&balanced, geo, grid)?;
    let pb = NonlinearProblem::new(&conn)?;
    let last = contract(&pb, default_tolerance(&pb)?)?;
    if !last.converged {
        return Err(Error::NoConvergence("contraction at the balanced data hit the iteration cap".into()));
    }
    let report = residual_report(&pb, &last)?;
    Ok(EndToEnd {
        initial,
        xi,
        jacobi_condition: sys.condition,
        balance,
        balanced,
        last,
        initial_report,
        report,
        floor: discretization_floor(grid)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::FourierSeries;
    use crate::model_solver::manufactured_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const EPS: f64 = 0.1;

    fn grid() -> ProductGrid {
        ProductGrid::scaled(&[4], &[2.0 * PI], 9, 8.0, EPS).unwrap()
    }

    fn problem(gd: &GluingData) -> NonlinearProblem {
        let g = grid();
        let conn = build_connection(gd, &GeometryData::flat(&g.base_lengths), &g).unwrap();
        NonlinearProblem::new(&conn).unwrap()
    }

    fn flat() -> GluingData {
        GluingData::flat(EPS, &[2.0 * PI])
    }

    fn perturbed() -> GluingData {
        flat().with_v(1, FourierSeries::zero(&[2.0 * PI]).with_mode(&[1], 0.0, 0.3))
    }

    fn small_field(pb: &NonlinearProblem, size: f64) -> GaugeField {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = manufactured_field(pb.grid(), &pb.basis, &mut rng).unwrap();
        a.scale(size / a.max_abs())
    }

    #[test]
    fn zero_correction_gives_the_residual() {
        let pb = problem(&perturbed());
        let full = pb.full_residual(&GaugeField::zeros(pb.grid())).unwrap();
        let ym = pb.mask_faces(pb.ym.clone());
        assert!(full.sub(&ym).max_abs() <= 1e-12 * ym.max_abs());
    }

    #[test]
    fn remainder_is_quadratic() {
        let pb = problem(&perturbed());
        let a = small_field(&pb, 0.05);
        let q: Vec<f64> = [1.0, 0.5, 0.25].iter().map(|&t| pb.quadratic(&a.scale(t)).unwrap().norm() / (t * t)).collect();
        // halving quarters Q within 20%, and the cubic part only shrinks
        for w in q.windows(2) {
            let r = w[1] / w[0];
            assert!((r - 1.0).abs() < 0.2, "{q:?}");
        }
        assert!((q[2] - q[1]).abs() <= (q[1] - q[0]).abs() + 1e-12 * q[0], "{q:?}");
    }

    #[test]
    fn linear_part_dominates_for_small_corrections() {
        let pb = problem(&flat());
        let a = small_field(&pb, 1e-3);
        let full = pb.full_residual(&a).unwrap();
        let lin = pb.linear(&a).unwrap();
        let q = pb.quadratic(&a).unwrap();
        let ym = pb.mask_faces(pb.ym.clone());
        // operator decomposition: full = D*F_A + 𝕃a + Q(a)
        assert!(full.sub(&ym).sub(&lin).sub(&q).max_abs() <= 1e-10 * lin.max_abs());
        assert!(q.norm() < 0.01 * lin.norm(), "{} vs {}", q.norm(), lin.norm());
    }

    #[test]
    fn flat_data_converge_at_once() {
        let pb = problem(&flat());
        let tol = default_tolerance(&pb).unwrap();
        let st = contract(&pb, tol).unwrap();
        assert!(st.converged);
        assert_eq!(st.records.len(), 1);
        assert_eq!(st.a.max_abs(), 0.0);
    }

    #[test]
    fn perturbed_data_contract_geometrically() {
        let pb = problem(&perturbed());
        let tol = default_tolerance(&pb).unwrap();
        let st = contract(&pb, tol).unwrap();
        assert!(st.converged, "{:?}", st.residual_history);
        let f = st.decrease_factors();
        assert!(f.len() >= 3 && f[..3].iter().all(|&x| x >= 5.0), "{f:?}");
        assert!(st.max_kernel_part() < E_INVARIANT_TOL);
        let last = *st.residual_history.last().unwrap();
        assert!(last < tol);
        let t = st.history_table();
        assert_eq!(t.header, vec!["iter", "projected_residual_norm", "a_norm", "Q_norm"]);
        assert_eq!(t.rows.len(), st.records.len());

        let rep = residual_report(&pb, &st).unwrap();
        // after convergence the full residual is its kernel part
        assert!((rep.full - rep.projected).abs() <= 1e-6 * rep.full + 3.0 * tol, "{rep:?}");
    }

    #[test]
    fn report_of_the_zero_state() {
        let pb = problem(&perturbed());
        let st = contract(&pb, 1e30).unwrap();
        assert_eq!(st.records.len(), 1);
        let rep = residual_report(&pb, &st).unwrap();
        let ym = pb.mask_faces(pb.ym.clone());
        let kernel = ym.sub(&pb.complement(&ym).unwrap());
        assert!((rep.full - pb.residual_norm(&ym)).abs() <= 1e-12 * rep.full);
        assert!((rep.projected - pb.residual_norm(&kernel)).abs() <= 1e-12 * rep.full);
        assert_eq!(rep.gauge, 0.0);
    }

    #[test]
    fn xi_plumbing_is_exact() {
        let g = grid();
        let gd = perturbed();
        let geo = GeometryData::flat(&g.base_lengths);
        let fq = FiberQuadrature::for_eps(EPS).with_rmax(8.0 * EPS).with_nodes(24, 5);
        let (xi, st, pb) = xi_epsilon(&gd, &geo, &g, fq, None).unwrap();
        // ℙ of the converged residual, with its leading part swapped for
        // the quadrature value, is what the balancing step receives
        let lead = project_residual(&gd, &geo, &xi.base, &fq, MetricChoice::Expanded).unwrap();
        let again = grid_projection(&pb, &st.full).unwrap().sub(&xi.grid_leading).add(&lead);
        assert!(again.sub(&xi.value).max_abs() < 1e-8);
        assert!(xi.eval(&gd).unwrap().sub(&xi.value).max_abs() < 1e-12);
        // the leading term is Δv = −0.3 sin x in slot v₁
        for b in 0..xi.base.len() {
            let x = xi.base.point(b)[0];
            assert!((xi.value.v[b][1] + 0.3 * x.sin()).abs() < 0.03, "{b}: {:?}", xi.value.get(b));
        }
    }
}
