//! The three subcommands. Each writes its tables under the output directory
//! and returns whether every check it performs passed.

use crate::config::{ConfigError, RunConfig};
use crate::svg::{self, Fit};
use std::path::Path;
use ymglue::balancing::{curved_deviation_sweep, BalanceOptions, BaseGrid, JacobiSystem};
use ymglue::gluing::residual_sweep;
use ymglue::model_solver::uniform_estimate_probe;
use ymglue::report::{fmt_f64, Table};
use ymglue::solver::{residual_report, discretization_floor, end_to_end, xi_epsilon, ResidualReport};
use ymglue::verify::{self, Check};

/// Failure of a subcommand.
#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numeric(#[from] ymglue::Error),
}

pub type CmdResult<T> = Result<T, CmdError>;

fn write_svg(path: &Path, body: &str) -> CmdResult<()> {
    std::fs::write(path, body).map_err(ymglue::Error::from)?;
    Ok(())
}

/// Identity suite, energy quantum and kernel refinement orders.
pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> CmdResult<bool> {
    // building the data validates the geometry, minimality included
    cfg.build_data()?;
    let mut checks: Vec<(Check, &str)> = Vec::new();
    let anchors = [
        "[i,j] = 2k and cyclic; bracket = matrix commutator",
        "self-dual part of dB + [B,B] vanishes",
        "covariant derivative of the parallel frame field",
        "D_B(r z B) = -F_B(r z, .) for self-dual r",
        "curvature in the Levi-Civita frame equals transported curvature",
    ];
    for (c, a) in verify::identity_suite(cfg.verify.bracket_sign)?.into_iter().zip(anchors) {
        checks.push((c, a));
    }
    let (_, rel) = verify::energy_check(cfg.verify.energy_cells);
    checks.push((Check { name: "energy_quantum".into(), error: rel, tol: 5e-3 }, "integral of |F|^2 equals 8 pi^2"));
    for j in 0..8 {
        let (_, orders) = verify::kernel_refinement(j)?;
        // distance of the worse order from 2
        let dev = orders.iter().map(|o| (o - 2.0).abs()).fold(0.0, f64::max);
        checks.push((
            Check { name: format!("kernel_order_{j}"), error: dev, tol: 0.2 + 1e-12 },
            "linearized operator annihilates kernel fields at second order",
        ));
    }
    let mut t = Table::new(&["check", "anchor", "error", "tol", "pass"]);
    t.comment("closed-form identities, energy quantum and kernel refinement orders");
    t.comment("error is relative for identities and the energy; |order - 2| for kernel orders");
    let mut all = true;
    for (c, a) in &checks {
        all &= c.passed();
        t.push(vec![c.name.clone(), a.to_string(), fmt_f64(c.error), fmt_f64(c.tol), c.passed().to_string()]);
        println!("{:<26} {:>10.3e}  {}", c.name, c.error, if c.passed() { "ok" } else { "FAIL" });
    }
    t.write(&out.join("verify.csv"))?;
    Ok(all)
}

/// Sweep kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepKind {
    Residual,
    Uniform,
    Balance,
}

pub fn cmd_sweep(cfg: &RunConfig, kind: SweepKind, out: &Path) -> CmdResult<bool> {
    let eps = cfg.sweep_list()?.to_vec();
    match kind {
        SweepKind::Residual => {
            let built = cfg.build()?;
            let rows = residual_sweep(
                &built.gd,
                &built.geo,
                &cfg.grid.base_counts,
                cfg.grid.fiber_n,
                cfg.grid.radius_factor,
                &eps,
                built.weights,
            )?;
            let pts: Vec<(f64, f64)> = rows.iter().map(|(e, n)| (*e, n.total())).collect();
            let fit = Fit::of(&pts);
            let slope = fit.map_or(f64::NAN, |f| f.slope);
            let mut t = Table::new(&["eps", "sup", "holder", "residual_norm"]);
            t.comment("weighted C3 norm of the Yang-Mills residual of the approximate connection, bounded by C eps^2");
            t.comment(format!("fitted log-log slope {}", fmt_f64(slope)));
            for (e, n) in &rows {
                t.push(vec![fmt_f64(*e), fmt_f64(n.sup), fmt_f64(n.holder), fmt_f64(n.total())]);
            }
            t.write(&out.join("sweep_residual.csv"))?;
            let plot = svg::loglog("residual scaling", "eps", "weighted C3 residual", &pts, fit, "expected 2.0 +/- 0.3");
            write_svg(&out.join("sweep_residual.svg"), &plot)?;
            println!("residual slope {slope:.4}");
            Ok((slope - 2.0).abs() <= 0.3)
        }
        SweepKind::Uniform => {
            cfg.validate()?;
            let rows = uniform_estimate_probe(&eps, cfg.sweep.draws, cfg.sweep.probe_fiber_n, cfg.seed())?;
            let max = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
            let min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
            let mut t = Table::new(&["eps", "draw", "ratio"]);
            t.comment("ratio |a|_{1+nu} / |L a|_{3+nu} over manufactured fields orthogonal to the kernel, uniformly bounded");
            t.comment(format!("max/min {}", fmt_f64(max / min)));
            for r in &rows {
                t.push(vec![fmt_f64(r.eps), r.draw.to_string(), fmt_f64(r.ratio)]);
            }
            t.write(&out.join("sweep_uniform.csv"))?;
            let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.ratio)).collect();
            let note = format!("max/min {:.3}", max / min);
            write_svg(&out.join("sweep_uniform.svg"), &svg::loglog("uniform estimate", "eps", "ratio", &pts, Fit::of(&pts), &note))?;
            println!("uniform max/min {:.4}", max / min);
            Ok(max / min < 3.0)
        }
        SweepKind::Balance => {
            let (gd, geo, base, _) = cfg.build_data()?;
            let rows = curved_deviation_sweep(&gd, &geo, &base, &eps, |e| cfg.fiber_quadrature(e))?;
            let fit = Fit::of(&rows);
            let slope = fit.map_or(f64::NAN, |f| f.slope);
            let mut t = Table::new(&["eps", "deviation"]);
            t.comment("curved-metric kernel projection of the residual against its closed form, deviation O(eps)");
            t.comment(format!("fitted log-log slope {}", fmt_f64(slope)));
            for (e, d) in &rows {
                t.push(vec![fmt_f64(*e), fmt_f64(*d)]);
            }
            t.write(&out.join("sweep_balance.csv"))?;
            let plot = svg::loglog("balancing closed form", "eps", "max deviation", &rows, fit, "expected >= 0.8");
            write_svg(&out.join("sweep_balance.svg"), &plot)?;
            println!("balance deviation slope {slope:.4}");
            Ok(slope >= 0.8)
        }
    }
}

fn report_rows(t: &mut Table, prefix: &str, r: &ResidualReport) {
    for (k, v) in [
        ("full_residual", r.full),
        ("projected_residual", r.projected),
        ("gauge_part", r.gauge),
        ("ym_residual", r.ym),
        ("ym_residual_centered", r.ym_centered),
    ] {
        t.push(vec![format!("{prefix}{k}"), fmt_f64(v)]);
    }
}

/// Contraction, `Ξ_ε`, balancing when the Jacobi operator allows it, and the
/// final residual report.
pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> CmdResult<bool> {
    let b = cfg.build()?;
    let fq = cfg.fiber_quadrature(b.gd.eps);
    let base = BaseGrid::of(&b.grid);
    let sys = JacobiSystem::assemble(&b.gd, &b.geo, &base)?;
    let mut summary = Table::new(&["quantity", "value"]);
    summary.comment("fixed-point contraction, projected residual and balancing solve");
    let hist_comment = ["projected residual of the fixed-point iteration, decreasing geometrically".to_string()];
    let floor = discretization_floor(&b.grid)?;
    let ok;
    if sys.is_nondegenerate() {
        let e = end_to_end(&b.gd, &b.geo, &b.grid, fq, &BalanceOptions::default())?;
        e.initial.write_history(&out.join("contraction_history.csv"), &hist_comment)?;
        e.xi.value.write_csv(&out.join("xi.csv"), &["projected residual triple at the initial data".into()])?;
        let mut bh = e.balance.history_table();
        bh.comment("balancing iteration z = -J^{-1} R(z) on the complement of V");
        bh.write(&out.join("balance_history.csv"))?;
        e.balance.z.write_csv(&out.join("balance_solution.csv"), &["balancing correction triple".into()])?;
        e.last.write_history(&out.join("balanced_contraction_history.csv"), &hist_comment)?;
        summary.push(vec!["jacobi_condition".into(), fmt_f64(e.jacobi_condition)]);
        summary.push(vec!["balance_contraction".into(), fmt_f64(e.balance.contraction)]);
        summary.push(vec!["balance_complement".into(), fmt_f64(e.balance.complement)]);
        report_rows(&mut summary, "initial_", &e.initial_report);
        report_rows(&mut summary, "", &e.report);
        summary.push(vec!["discretization_floor".into(), fmt_f64(e.floor)]);
        ok = e.balance.contraction <= 0.5 && e.balance.complement < 1e-5 && e.report.ym_centered <= 3.0 * e.floor;
        println!(
            "balanced: contraction {:.3e}, complement {:.3e}, residual {:.3e} (centered {:.3e}, floor {:.3e})",
            e.balance.contraction, e.balance.complement, e.report.ym, e.report.ym_centered, e.floor
        );
    } else {
        let (xi, st, pb) = xi_epsilon(&b.gd, &b.geo, &b.grid, fq, None)?;
        st.write_history(&out.join("contraction_history.csv"), &hist_comment)?;
        xi.value.write_csv(&out.join("xi.csv"), &["projected residual triple".into()])?;
        let r = residual_report(&pb, &st)?;
        summary.comment(format!("balancing skipped: Jacobi operator degenerate on the complement (condition {})", fmt_f64(sys.condition)));
        summary.push(vec!["iterations".into(), (st.residual_history.len() - 1).to_string()]);
        report_rows(&mut summary, "", &r);
        summary.push(vec!["discretization_floor".into(), fmt_f64(floor)]);
        ok = st.converged;
        println!("contraction: {} iterates, residual {:.3e}", st.residual_history.len() - 1, r.ym);
    }
    summary.write(&out.join("summary.csv"))?;
    Ok(ok)
}
