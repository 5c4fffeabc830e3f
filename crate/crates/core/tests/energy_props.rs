use std::f64::consts::PI;
use std::sync::Arc;

use finsler_vortex::energy::*;
use finsler_vortex::field::TorusGrid;
use finsler_vortex::geometry::*;
use finsler_vortex::green::GreenSolver;
use finsler_vortex_oracle as oracle;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solver(s: FinslerStructure, n: usize) -> GreenSolver {
    GreenSolver::new(Arc::new(TorusGrid::new(s, n).unwrap()))
}

fn config(p: &[(f64, f64)], d: &[i32]) -> VortexConfiguration {
    VortexConfiguration::new(p.iter().map(|&(x, y)| Vec2::new(x, y)).collect(), d.to_vec()).unwrap()
}

fn antipodal() -> VortexConfiguration {
    config(&[(0.25, 0.25), (0.75, 0.75)], &[1, -1])
}

fn checkerboard() -> VortexConfiguration {
    config(&[(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)], &[1, -1, -1, 1])
}

fn generic() -> VortexConfiguration {
    config(&[(0.3, 0.5), (0.75, 0.55)], &[1, -1])
}

fn modulated() -> FinslerStructure {
    FinslerStructure::new(Kind::Riemannian, AlphaField::Modulated { amp: 0.3 }, BetaField::Zero, MeasureKind::HolmesThompson)
        .unwrap()
}

fn energy_at(sv: &GreenSolver, base: &VortexConfiguration, x: &[f64]) -> f64 {
    let mut c = base.clone();
    for (i, p) in c.positions.iter_mut().enumerate() {
        *p = Vec2::new(x[2 * i], x[2 * i + 1]);
    }
    renormalized_energy(sv, &c).unwrap().w_f
}

fn flat(c: &VortexConfiguration) -> Vec<f64> {
    c.positions.iter().flat_map(|p| [p.x, p.y]).collect()
}

#[test]
fn antipodal_dipole_energy_matches_oracle() {
    let sv = solver(FinslerStructure::identity(), 64);
    let c = config(&[(0.2, 0.3), (0.7, 0.8)], &[1, -1]);
    let w = renormalized_energy(&sv, &c).unwrap().w_f;
    let g = oracle::iso_green([0.5, 0.5], [0.0, 0.0], oracle::K_VALUES).unwrap();
    let h = oracle::iso_regular_part(oracle::K_VALUES);
    let want = -2.0 * PI * g + 2.0 * PI * h;
    // regular-part tolerance plus pair tolerance, each weighted by 2π
    assert!((w - want).abs() <= 2.0 * PI * (5e-3 + 2e-3), "{w} {want}");
}

#[test]
fn energy_is_invariant_under_relabeling_degree_flip_and_translation() {
    let sv = solver(FinslerStructure::diagonal(4.0, 1.0).unwrap(), 64);
    let c = config(&[(0.2, 0.3), (0.6, 0.45), (0.4, 0.8)], &[2, -1, -1]);
    let w = renormalized_energy(&sv, &c).unwrap().w_f;
    let swapped = renormalized_energy(&sv, &c.swapped(0, 2)).unwrap().w_f;
    assert!((w - swapped).abs() <= 1e-12 * w.abs());
    let mut flipped = c.clone();
    flipped.degrees.iter_mut().for_each(|d| *d = -*d);
    assert!((w - renormalized_energy(&sv, &flipped).unwrap().w_f).abs() <= 1e-12 * w.abs());
    let shift = [Vec2::new(0.137, 0.291); 3];
    let moved = renormalized_energy(&sv, &c.displaced(&shift, 1.0)).unwrap().w_f;
    assert!((w - moved).abs() <= 1e-6, "{w} {moved}");
}

#[test]
fn antipodal_gradient_vanishes() {
    let sv = solver(FinslerStructure::identity(), 64);
    for g in gradient_wf(&sv, &antipodal()).unwrap() {
        assert!(g.norm() < 1e-10, "{g}");
    }
}

#[test]
fn gradient_matches_energy_differences_and_improves() {
    let c = generic();
    let mut errs = Vec::new();
    for n in [32, 64] {
        let sv = solver(FinslerStructure::identity(), n);
        let g: Vec<f64> = euclidean_gradient(&sv, &c).unwrap().iter().flat_map(|v| [v.x, v.y]).collect();
        let fd = oracle::fd_gradient(|x| energy_at(&sv, &c, x), &flat(&c), 2.0 * sv.grid().h());
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        errs.push(num / den);
    }
    assert!(errs[1] <= 3e-2 && errs[1] < errs[0], "{errs:?}");
}

#[test]
fn randers_gradient_matches_energy_differences() {
    let sv = solver(FinslerStructure::shear_randers(0.2).unwrap(), 32);
    let c = generic();
    let g: Vec<f64> = euclidean_gradient(&sv, &c).unwrap().iter().flat_map(|v| [v.x, v.y]).collect();
    let fd = oracle::fd_gradient(|x| energy_at(&sv, &c, x), &flat(&c), 2.0 * sv.grid().h());
    let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(num / den <= 3e-2, "{g:?} {fd:?}");
}

#[test]
fn riemannian_finsler_gradient_is_inverse_metric_times_covector() {
    let sv = solver(FinslerStructure::diagonal(4.0, 1.0).unwrap(), 32);
    let c = generic();
    let e = euclidean_gradient(&sv, &c).unwrap();
    let f = gradient_wf(&sv, &c).unwrap();
    for (a, b) in e.iter().zip(&f) {
        assert_eq!(*b, Vec2::new(a.x / 4.0, a.y));
    }
}

#[test]
fn gradient_is_permutation_equivariant() {
    let sv = solver(modulated(), 32);
    let c = config(&[(0.2, 0.3), (0.6, 0.45), (0.4, 0.8)], &[2, -1, -1]);
    let g = euclidean_gradient(&sv, &c).unwrap();
    let gs = euclidean_gradient(&sv, &c.swapped(0, 1)).unwrap();
    assert!((g[0] - gs[1]).norm() < 1e-12 && (g[1] - gs[0]).norm() < 1e-12 && (g[2] - gs[2]).norm() < 1e-12);
}

#[test]
fn hessian_is_nearly_symmetric_for_variable_metrics() {
    let sv = solver(modulated(), 32);
    let h = hessian_wf(&sv, &generic()).unwrap();
    assert!(h.asymmetry <= 1e-2, "{}", h.asymmetry);
}

#[test]
fn constant_coefficient_hessian_has_translation_zero_modes() {
    let sv = solver(FinslerStructure::diagonal(4.0, 1.0).unwrap(), 64);
    let c = config(&[(0.2, 0.3), (0.6, 0.45), (0.4, 0.8)], &[2, -1, -1]);
    let h = hessian_wf(&sv, &c).unwrap().matrix;
    for k in 0..2 {
        let t = DVector::from_fn(6, |r, _| if r % 2 == k { 1.0 } else { 0.0 });
        assert!((&h * t).norm() <= 1e-3 * h.norm());
    }
}

#[test]
fn hessian_matches_energy_differences_on_three_vortices() {
    let sv = solver(FinslerStructure::identity(), 64);
    let c = config(&[(0.2, 0.3), (0.6, 0.45), (0.4, 0.8)], &[2, -1, -1]);
    let h = hessian_wf(&sv, &c).unwrap().matrix;
    let fd = oracle::fd_hessian(|x| energy_at(&sv, &c, x), &flat(&c), 2.0 * sv.grid().h());
    let fd = nalgebra::DMatrix::from_fn(6, 6, |i, j| fd[i][j]);
    assert!((&h - &fd).norm() <= 5e-2 * fd.norm(), "{h} {fd}");
}

#[test]
fn second_variation_is_nonnegative() {
    let sv = solver(FinslerStructure::shear_randers(0.2).unwrap(), 32);
    let c = config(&[(0.2, 0.3), (0.6, 0.45), (0.4, 0.8)], &[1, 1, -2]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let p = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let q = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let v = [p, q, 0.5 * (p + q)];
        assert!(second_variation_field(&sv, &c, &v).unwrap() > 0.0);
    }
}

#[test]
fn symmetric_configurations_are_equilibria() {
    for s in [FinslerStructure::identity(), FinslerStructure::diagonal(4.0, 1.0).unwrap()] {
        let sv = solver(s, 64);
        for c in [antipodal(), checkerboard()] {
            let r = equilibrium_residual(&sv, &c).unwrap();
            assert!(r.at_equilibrium && r.residuals.iter().all(|&x| x <= 1e-4), "{:?}", r.residuals);
        }
    }
    let sv = solver(FinslerStructure::identity(), 64);
    let r = equilibrium_residual(&sv, &config(&[(0.13, 0.22), (0.41, 0.37), (0.72, 0.81), (0.55, 0.1)], &[1, -1, 1, -1]))
        .unwrap();
    assert!(r.residuals.iter().cloned().fold(0.0, f64::max) > 1e-2);
}

#[test]
fn opposite_vortices_attract() {
    let sv = solver(FinslerStructure::identity(), 64);
    // on a reflection axis the periodic images cannot bend the force
    let c = config(&[(0.3, 0.5), (0.6, 0.5)], &[1, -1]);
    for (i, j) in [(0, 1), (1, 0)] {
        let f = effective_force(&sv, &c, i).unwrap();
        let towards = wrap(c.positions[j] - c.positions[i]);
        assert!(f.dot(&towards) > 0.0);
        assert!(f.perp(&towards).abs() <= 1e-10 * f.norm() * towards.norm(), "{f}");
    }
}

#[test]
fn anisotropy_rotates_force_toward_soft_axis() {
    let c = config(&[(0.3, 0.4), (0.6, 0.6)], &[1, -1]);
    let sv = solver(FinslerStructure::diagonal(4.0, 1.0).unwrap(), 64);
    let f = effective_force(&sv, &c, 0).unwrap();
    let xi = interaction_covector(&sv, &c, 0).unwrap();
    assert!((f + Vec2::new(xi.x / 4.0, xi.y)).norm() < 1e-12);
    assert!((f.y / f.x).abs() > (xi.y / xi.x).abs(), "{f} {xi}");
}

#[test]
fn force_matches_interaction_gradient() {
    let sv = solver(FinslerStructure::shear_randers(0.2).unwrap(), 32);
    let c = generic();
    for i in 0..2 {
        let f = effective_force(&sv, &c, i).unwrap();
        let g = interaction_gradient(&sv, &c, i).unwrap();
        assert!((f + g).norm() <= 1e-8, "{f} {g}");
    }
}

fn alignment_gap(kappa: f64) -> f64 {
    let s = FinslerStructure::shear_randers(kappa).unwrap();
    let sv = solver(s.alpha_part(), 32);
    let r = alignment_residual(&s, &sv, &config(&[(0.1, 0.3), (0.45, 0.55)], &[1, -1])).unwrap();
    r.residuals.iter().zip(&r.isotropic).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
}

#[test]
fn alignment_correction_is_first_order_in_shear() {
    let (g1, g2) = (alignment_gap(0.2), alignment_gap(0.1));
    assert!(g1 > 0.0 && (g1 / g2 - 2.0).abs() <= 0.4, "{g1} {g2}");
}

#[test]
fn constant_beta_has_no_alignment_correction() {
    let s = FinslerStructure::constant_randers(0.1, 0.05).unwrap();
    let sv = solver(s.alpha_part(), 32);
    let r = alignment_residual(&s, &sv, &generic()).unwrap();
    assert_eq!(r.residuals, r.isotropic);
    assert!(r.strain_axis.iter().all(|a| a.norm() == 0.0));
}

#[test]
fn shear_strain_axis_is_diagonal() {
    let s = FinslerStructure::shear_randers(0.1).unwrap();
    let sv = solver(s.alpha_part(), 32);
    let r = alignment_residual(&s, &sv, &generic()).unwrap();
    for a in &r.strain_axis {
        assert!((a.x.abs() - a.y.abs()).abs() < 1e-12);
    }
}

#[test]
fn superposition_is_exact_only_for_linear_operators() {
    let c = generic();
    let lin = superposition_defect(&solver(modulated(), 32), &c).unwrap();
    assert!(lin <= 1e-8, "{lin}");
    let nonlin = superposition_defect(&solver(FinslerStructure::shear_randers(0.2).unwrap(), 32), &c).unwrap();
    assert!(nonlin > 1e-4, "{nonlin}");
}
