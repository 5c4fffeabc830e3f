use std::sync::Arc;

use finsler_vortex::energy::*;
use finsler_vortex::field::TorusGrid;
use finsler_vortex::geometry::*;
use finsler_vortex::green::GreenSolver;
use finsler_vortex::stability::*;
use finsler_vortex::Error;
use nalgebra::DMatrix;
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

fn spectrum(sv: &GreenSolver, c: &VortexConfiguration) -> StabilityReport {
    let h = hessian_wf(sv, c).unwrap();
    stability_spectrum(sv, c, &h.matrix).unwrap()
}

#[test]
fn isotropic_dipole_has_two_translation_modes() {
    let sv = solver(FinslerStructure::identity(), 64);
    let r = spectrum(&sv, &antipodal());
    assert_eq!(r.zero_mode_count, 2, "{:?}", r.eigenvalues);
    assert!(r.reconstruction_error <= 1e-6 && r.orthonormality_error <= 1e-8);
    assert!(r.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn anisotropy_splits_the_nonzero_pair() {
    let sv = solver(FinslerStructure::diagonal(4.0, 1.0).unwrap(), 64);
    let r = spectrum(&sv, &antipodal());
    assert_eq!(r.zero_mode_count, 2);
    let nonzero: Vec<f64> = r.eigenvalues.iter().copied().filter(|l| l.abs() > r.tol_zero).collect();
    assert_eq!(nonzero.len(), 2);
    assert!((nonzero[0] - nonzero[1]).abs() > 10.0 * r.tol_zero, "{:?}", r.eigenvalues);
}

#[test]
fn riemannian_metric_blocks_are_the_metric() {
    let s = FinslerStructure::diagonal(4.0, 1.0).unwrap();
    let sv = solver(s, 32);
    let c = antipodal();
    for (m, p) in metric_blocks(&sv, &c).unwrap().iter().zip(&c.positions) {
        assert!((m - s.local(*p).a).norm() < 1e-14);
    }
}

#[test]
fn randers_eigenvectors_are_orthonormal_in_the_metric() {
    let sv = solver(FinslerStructure::shear_randers(0.2).unwrap(), 32);
    let c = config(&[(0.3, 0.5), (0.75, 0.55)], &[1, -1]);
    let r = spectrum(&sv, &c);
    assert!(r.reconstruction_error <= 1e-6 && r.orthonormality_error <= 1e-8, "{r:?}");
    for m in &r.metric_blocks {
        assert!(m.symmetric_eigenvalues().min() > 0.0);
    }
}

#[test]
fn spectrum_is_permutation_invariant() {
    let sv = solver(FinslerStructure::diagonal(2.0, 1.0).unwrap(), 32);
    let c = config(&[(0.2, 0.3), (0.7, 0.4), (0.45, 0.8)], &[1, 1, -2]);
    let a = spectrum(&sv, &c);
    let b = spectrum(&sv, &c.swapped(0, 2));
    for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
        assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "{x} {y}");
    }
}

#[test]
fn dipole_expansion_remainder_is_higher_order() {
    let sv = solver(FinslerStructure::identity(), 64);
    let c = antipodal();
    let h = hessian_wf(&sv, &c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let v: Vec<Vec2> = (0..2).map(|_| Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let e = expansion_remainders(&sv, &c, &h.matrix, &v, &EXPANSION_STEPS).unwrap();
        assert!(e.order >= 2.5, "{e:?}");
    }
}

#[test]
fn quadratic_term_predicts_energy_change_along_eigenvectors() {
    let sv = solver(FinslerStructure::diagonal(4.0, 1.0).unwrap(), 64);
    let c = antipodal();
    let h = hessian_wf(&sv, &c).unwrap();
    let r = stability_spectrum(&sv, &c, &h.matrix).unwrap();
    let w0 = renormalized_energy(&sv, &c).unwrap().w_f;
    for (lambda, q) in r.eigenvalues.iter().zip(&r.eigenvectors) {
        if lambda.abs() <= r.tol_zero {
            continue;
        }
        let e = expansion_remainders(&sv, &c, &h.matrix, q, &[0.01]).unwrap();
        let dw = renormalized_energy(&sv, &c.displaced(q, 0.01)).unwrap().w_f - w0;
        assert_eq!(dw.signum(), e.quadratic[0].signum(), "{lambda} {dw}");
    }
}

#[test]
fn admissible_expansion_on_the_checkerboard() {
    let sv = solver(FinslerStructure::identity(), 64);
    let c = checkerboard();
    let h = hessian_wf(&sv, &c).unwrap();
    // d·v sums to zero: (0.3, 0.1) − (0.1, −0.2) − (0.4, 0.5) + (0.2, 0.2)
    let v = [Vec2::new(0.3, 0.1), Vec2::new(0.1, -0.2), Vec2::new(0.4, 0.5), Vec2::new(0.2, 0.2)];
    let e = quadratic_expansion_check(&sv, &c, &h.matrix, &v, &EXPANSION_STEPS).unwrap();
    // cubic terms cancel by symmetry, so what is left is mostly Hessian discretization error
    for (r, q) in e.remainders.iter().zip(&e.quadratic) {
        assert!(r.abs() < 1e-2 * q.abs(), "{e:?}");
    }
}

#[test]
fn expansion_check_rejects_bad_inputs() {
    let sv = solver(FinslerStructure::identity(), 32);
    let h = DMatrix::zeros(8, 8);
    let bad = [Vec2::new(0.1, 0.0), Vec2::zeros(), Vec2::zeros(), Vec2::zeros()];
    assert!(matches!(
        quadratic_expansion_check(&sv, &checkerboard(), &h, &bad, &EXPANSION_STEPS),
        Err(Error::InadmissibleVariation(_))
    ));
    let c = config(&[(0.3, 0.5), (0.75, 0.55)], &[1, -1]);
    let v = [Vec2::new(0.1, 0.0), Vec2::new(0.1, 0.0)];
    assert!(matches!(
        quadratic_expansion_check(&sv, &c, &DMatrix::zeros(4, 4), &v, &EXPANSION_STEPS),
        Err(Error::NotStationary { .. })
    ));
}

#[test]
fn riemannian_elasticity_equals_second_variation() {
    let modulated =
        FinslerStructure::new(Kind::Riemannian, AlphaField::Modulated { amp: 0.3 }, BetaField::Zero, MeasureKind::HolmesThompson)
            .unwrap();
    let c = config(&[(0.3, 0.5), (0.75, 0.55)], &[1, -1]);
    let v = [Vec2::new(0.3, -0.4), Vec2::new(0.3, -0.4)];
    for s in [FinslerStructure::diagonal(4.0, 1.0).unwrap(), modulated] {
        let q = quadratic_forms(&solver(s, 32), &c, &v).unwrap();
        assert!((q.elasticity - q.second_variation).abs() <= 1e-10 * q.second_variation, "{q:?}");
        assert!((q.first_order_elasticity - q.second_variation).abs() <= 1e-10 * q.second_variation);
    }
}

#[test]
fn randers_elasticity_tracks_second_variation() {
    let c = config(&[(0.3, 0.5), (0.75, 0.5)], &[1, -1]);
    let v = [Vec2::new(0.3, -0.4), Vec2::new(0.3, -0.4)];
    let gaps: Vec<(f64, f64)> = [0.2, 0.1]
        .iter()
        .map(|&b| {
            let q = quadratic_forms(&solver(FinslerStructure::constant_randers(b, 0.0).unwrap(), 32), &c, &v).unwrap();
            assert!(q.second_variation > 0.0);
            (
                (q.elasticity - q.second_variation).abs() / q.second_variation,
                (q.first_order_elasticity - q.second_variation).abs() / q.second_variation,
            )
        })
        .collect();
    // exact tensor: fourth order; first-order tensor: second order
    assert!(gaps[0].0 / gaps[1].0 > 10.0, "{gaps:?}");
    assert!((3.0..5.0).contains(&(gaps[0].1 / gaps[1].1)), "{gaps:?}");
}
