use std::sync::Arc;

use finsler_vortex::field::TorusGrid;
use finsler_vortex::geometry::*;
use finsler_vortex::green::{GreenOptions, GreenSolver, Interpolation};
use finsler_vortex_oracle as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solver(s: FinslerStructure, n: usize) -> GreenSolver {
    GreenSolver::new(Arc::new(TorusGrid::new(s, n).unwrap()))
}

fn solver_with(s: FinslerStructure, n: usize, options: GreenOptions) -> GreenSolver {
    GreenSolver::with_options(Arc::new(TorusGrid::new(s, n).unwrap()), options)
}

fn modulated(amp: f64) -> FinslerStructure {
    FinslerStructure::new(Kind::Riemannian, AlphaField::Modulated { amp }, BetaField::Zero, MeasureKind::HolmesThompson)
        .unwrap()
}

fn arr(v: Vec2) -> [f64; 2] {
    [v.x, v.y]
}

/// Max error against the spectral oracle over nodes at separation ≥ `min_sep`.
fn oracle_error(sv: &GreenSolver, y: Vec2, min_sep: f64) -> f64 {
    let f = sv.field(y).unwrap();
    let grid = sv.grid();
    let mut worst: f64 = 0.0;
    for idx in (0..grid.n() * grid.n()).step_by(3) {
        let x = grid.node(idx);
        let r = wrap(x - y).norm();
        if r < min_sep {
            continue;
        }
        let want = oracle::iso_green(arr(x), arr(y), oracle::terms_for_separation(r, oracle::K_VALUES)).unwrap();
        worst = worst.max((f.values.values[idx] - want).abs());
    }
    worst
}

#[test]
fn identity_kernel_matches_oracle() {
    let sv = solver(FinslerStructure::identity(), 64);
    let y = Vec2::new(0.3137, 0.7071);
    // n = 64 counterpart of the 5e-4 bound at n = 128
    let err = oracle_error(&sv, y, 4.0 * sv.grid().h());
    assert!(err <= 2e-3, "{err}");
}

#[test]
fn identity_kernel_converges_at_second_order() {
    let y = Vec2::new(0.21, 0.64);
    let pairs: Vec<(f64, f64)> = [32, 64, 128]
        .iter()
        .map(|&n| {
            let sv = solver(FinslerStructure::identity(), n);
            (1.0 / n as f64, oracle_error(&sv, y, 0.125))
        })
        .collect();
    let p = oracle::order_fit(&pairs).unwrap();
    assert!((1.7..=2.3).contains(&p), "order {p} {pairs:?}");
}

#[test]
fn kernel_gradient_matches_oracle() {
    let y = Vec2::new(0.4, 0.45);
    let xs = [Vec2::new(0.1, 0.2), Vec2::new(0.8, 0.6), Vec2::new(0.55, 0.05)];
    let mut errs = Vec::new();
    for n in [32, 64] {
        let sv = solver(FinslerStructure::identity(), n);
        let f = sv.field(y).unwrap();
        let e = xs
            .iter()
            .map(|&x| {
                let g = sv.kernel_gradient(&f, x).unwrap();
                let w = oracle::iso_green_gradient(arr(x), arr(y), oracle::K_GRADIENTS).unwrap();
                (g - Vec2::new(w[0], w[1])).norm()
            })
            .fold(0.0, f64::max);
        errs.push(e);
    }
    assert!(errs[1] < 1e-3 && errs[0] / errs[1] > 3.0, "{errs:?}");
}

#[test]
fn symmetric_points_have_zero_or_axial_gradients() {
    let sv = solver(FinslerStructure::identity(), 32);
    let y = Vec2::new(0.2, 0.3);
    let f = sv.field(y).unwrap();
    assert!(sv.kernel_gradient(&f, y + Vec2::new(0.5, 0.5)).unwrap().norm() < 1e-10);

    let sv = solver(FinslerStructure::diagonal(4.0, 1.0).unwrap(), 32);
    let f = sv.field(y).unwrap();
    let g = sv.kernel_gradient(&f, y + Vec2::new(0.23, 0.0)).unwrap();
    assert!(g.y.abs() <= 1e-10 * g.x.abs() && g.x.abs() > 1e-3, "{g}");
}

#[test]
fn kernels_have_zero_mean() {
    for s in [modulated(0.4), FinslerStructure::shear_randers(0.3).unwrap()] {
        let sv = solver(s, 32);
        for y in [Vec2::new(0.1, 0.9), Vec2::new(0.55, 0.35)] {
            let f = sv.field(y).unwrap();
            let m = sv.grid().mean(&f.values);
            assert!(m.abs() <= 1e-10 * f.values.max_abs(), "{m}");
        }
    }
}

#[test]
fn riemannian_kernels_are_symmetric() {
    let n = 64;
    let sv = solver(modulated(0.4), n);
    let h = sv.grid().h();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let a = Vec2::new(rng.gen(), rng.gen());
        let b = Vec2::new(rng.gen(), rng.gen());
        if wrap(a - b).norm() < 4.0 * h {
            continue;
        }
        let gab = sv.value(&sv.field(b).unwrap(), a);
        let gba = sv.value(&sv.field(a).unwrap(), b);
        worst = worst.max((gab - gba).abs());
    }
    assert!(worst <= (h * h).max(1e-6), "{worst}");
}

#[test]
fn constant_coefficient_kernels_are_translation_invariant() {
    let opts = GreenOptions { fast_path: false, ..GreenOptions::default() };
    let sv = solver_with(FinslerStructure::diagonal(4.0, 1.0).unwrap(), 32, opts);
    let y = Vec2::new(0.31, 0.62);
    let t = Vec2::new(0.137, -0.291);
    let x = Vec2::new(0.8, 0.1);
    let a = sv.value(&sv.field(y).unwrap(), x);
    let b = sv.value(&sv.field(y + t).unwrap(), x + t);
    assert!((a - b).abs() < 1e-9, "{a} {b}");
}

#[test]
fn fast_path_and_parallel_solves_agree() {
    let s = FinslerStructure::diagonal(2.0, 1.0).unwrap();
    let fast = solver(s, 32);
    let slow = solver_with(s, 32, GreenOptions { fast_path: false, ..GreenOptions::default() });
    let ys = [Vec2::new(0.1, 0.2), Vec2::new(0.7, 0.33), Vec2::new(0.5, 0.9)];
    let x = Vec2::new(0.42, 0.58);
    let a = fast.fields(&ys).unwrap();
    let b = slow.fields(&ys).unwrap();
    for (fa, fb) in a.iter().zip(&b) {
        assert!((fast.value(fa, x) - slow.value(fb, x)).abs() < 1e-9);
    }
    let again = solver_with(s, 32, GreenOptions { fast_path: false, ..GreenOptions::default() });
    for (y, fb) in ys.iter().zip(&b) {
        assert_eq!(again.field(*y).unwrap().values.values, fb.values.values);
    }
}

#[test]
fn bicubic_option_tracks_spectral_interpolation() {
    let sv = solver(FinslerStructure::identity(), 64);
    let bc = solver_with(
        FinslerStructure::identity(),
        64,
        GreenOptions { interpolation: Interpolation::Bicubic, ..GreenOptions::default() },
    );
    let y = Vec2::new(0.25, 0.25);
    let x = Vec2::new(0.613, 0.48);
    let (va, ga) = sv.value_and_gradient(&sv.field(y).unwrap(), x);
    let (vb, gb) = bc.value_and_gradient(&bc.field(y).unwrap(), x);
    assert!((va - vb).abs() < 1e-4 && (ga - gb).norm() < 1e-2, "{va} {vb} {ga} {gb}");
}

#[test]
fn log_coefficient_is_universal() {
    let structures = [
        FinslerStructure::identity(),
        FinslerStructure::diagonal(4.0, 1.0).unwrap(),
        FinslerStructure::constant_randers(0.2, 0.0).unwrap().with_measure(MeasureKind::BusemannHausdorff),
    ];
    for s in structures {
        let sv = solver(s, 64);
        let lambda = sv.log_coefficient(Vec2::new(0.5, 0.5)).unwrap();
        assert!((lambda - 1.0).abs() <= 0.02, "{s:?}: {lambda}");
    }
}

#[test]
fn regular_part_matches_lattice_constant() {
    let want = oracle::iso_regular_part(oracle::K_VALUES);
    let sv = solver(FinslerStructure::identity(), 64);
    let r = sv.extract_regular_part_at(Vec2::new(0.37, 0.81)).unwrap();
    assert!((r.value - want).abs() <= 5e-3, "{} {want}", r.value);
    assert!(!r.diagnostics.flagged);
    assert!(r.gradient.norm() <= 1e-4);
}

#[test]
fn regular_part_converges_under_refinement() {
    let y = Vec2::new(0.37, 0.81);
    // at n = 32 the outer ring reaches half the torus, so the ladder starts at 64
    let h: Vec<f64> = [64, 128, 256]
        .iter()
        .map(|&n| solver(modulated(0.3), n).regular_value(y).unwrap().0)
        .collect();
    let (d1, d2) = ((h[0] - h[1]).abs(), (h[1] - h[2]).abs());
    let p = (d1 / d2).log2();
    assert!(d2 < d1 && p >= 1.5, "{h:?} order {p}");
}

#[test]
fn constant_randers_regular_part_is_flat_and_measure_shift_is_uniform() {
    let s = FinslerStructure::constant_randers(0.15, 0.05).unwrap();
    let ht = solver(s, 32);
    let bh = solver(s.with_measure(MeasureKind::BusemannHausdorff), 32);
    let ys = [Vec2::new(0.2, 0.7), Vec2::new(0.61, 0.13)];
    let shift: Vec<f64> =
        ys.iter().map(|&y| ht.regular_value(y).unwrap().0 - bh.regular_value(y).unwrap().0).collect();
    assert!((shift[0] - shift[1]).abs() <= 1e-6, "{shift:?}");
    assert!(shift[0].abs() > 1e-6);
    assert!(ht.regular_gradient(ys[0]).unwrap().norm() <= 1e-4);
}
