use finsler_vortex::geometry::*;
use finsler_vortex_oracle as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_structure(rng: &mut ChaCha8Rng, bmax: f64) -> FinslerStructure {
    let l1 = rng.gen_range(0.3..3.0);
    let l2 = rng.gen_range(0.3..3.0);
    let off = rng.gen_range(-0.9..0.9) * (l1 * l2 as f64).sqrt();
    let alpha = AlphaField::Constant { a11: l1, a12: off, a22: l2 };
    let a = alpha.at(Vec2::zeros());
    let a_inv = a.try_inverse().unwrap();
    // choose b with |b|_{a⁻¹} = target
    let dir = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let target = rng.gen_range(0.0..bmax);
    let b = dir * (target / dir.dot(&(a_inv * dir)).sqrt());
    FinslerStructure::new(Kind::Randers, alpha, BetaField::Constant { b1: b.x, b2: b.y }, MeasureKind::HolmesThompson)
        .unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng) -> Vec2 {
    Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
}

#[test]
fn homogeneity_of_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let f = random_structure(&mut rng, 0.8);
        let x = Vec2::zeros();
        let v = random_vec(&mut rng);
        let t = rng.gen_range(0.01..50.0);
        let p = f.primal_norm(x, v).unwrap();
        let d = f.dual_norm(x, v).unwrap();
        assert!((f.primal_norm(x, t * v).unwrap() - t * p).abs() <= 1e-12 * t * p);
        assert!((f.dual_norm(x, t * v).unwrap() - t * d).abs() <= 1e-12 * t * d);
    }
}

#[test]
fn duality_inequality_and_equality_at_legendre_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let f = random_structure(&mut rng, 0.8);
        let x = Vec2::zeros();
        let xi = random_vec(&mut rng);
        let v = random_vec(&mut rng);
        let lhs = f.dual_norm(x, xi).unwrap() * f.primal_norm(x, v).unwrap();
        assert!(lhs >= xi.dot(&v) - 1e-12 * lhs.abs());
        let w = f.legendre_map(x, xi).unwrap();
        let eq = f.dual_norm(x, xi).unwrap() * f.primal_norm(x, w).unwrap();
        assert!((eq - xi.dot(&w)).abs() <= 1e-8 * eq);
    }
}

#[test]
fn euler_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let f = random_structure(&mut rng, 0.8);
        let x = Vec2::zeros();
        let xi = random_vec(&mut rng);
        let d = f.dual_norm(x, xi).unwrap();
        let e = xi.dot(&f.legendre_map(x, xi).unwrap());
        assert!((e - d * d).abs() <= 1e-8 * d * d);
    }
}

#[test]
fn hessian_is_jacobian_of_legendre_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    for _ in 0..200 {
        let f = random_structure(&mut rng, 0.8);
        let x = Vec2::zeros();
        let xi = random_vec(&mut rng);
        if xi.norm() < 0.1 {
            continue;
        }
        let t = f.hessian_tensor(x, xi).unwrap();
        for k in 0..2 {
            let mut e = Vec2::zeros();
            e[k] = h;
            let col = (f.legendre_map(x, xi + e).unwrap() - f.legendre_map(x, xi - e).unwrap()) / (2.0 * h);
            assert!((t.column(k) - col).amax() <= 1e-5, "{t} {col}");
        }
        assert!((t - t.transpose()).amax() < 1e-14);
        assert!(t.determinant() > 0.0 && t.trace() > 0.0);
    }
}

#[test]
fn legendre_matches_fd_of_half_square_dual() {
    let f = FinslerStructure::constant_randers(0.1, 0.0).unwrap();
    let xi = Vec2::new(0.0, 1.0);
    let x = Vec2::zeros();
    let g = oracle::fd_gradient(|p| 0.5 * f.dual_norm(x, Vec2::new(p[0], p[1])).unwrap().powi(2), &[0.0, 1.0], 1e-5);
    let l = f.legendre_map(x, xi).unwrap();
    assert!((l.x - g[0]).abs() < 1e-9 && (l.y - g[1]).abs() < 1e-9);
}

#[test]
fn randers_closed_form_dual_matches_indicatrix_maximization() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let f = random_structure(&mut rng, 0.6);
        let x = Vec2::zeros();
        let xi = random_vec(&mut rng);
        let closed = f.dual_norm(x, xi).unwrap();
        let max = oracle::indicatrix_dual_norm(|v| f.primal_norm(x, Vec2::new(v[0], v[1])).unwrap(), [xi.x, xi.y], 720);
        assert!((closed - max).abs() <= 1e-6 * closed, "{closed} {max}");
    }
}

#[test]
fn response_tensor_first_order_defect_is_quadratic_in_b() {
    for alpha in [AlphaField::Identity, AlphaField::Constant { a11: 2.0, a12: 0.3, a22: 0.7 }] {
        for xi in [Vec2::new(0.0, 1.0), Vec2::new(0.6, -0.8), Vec2::new(2.0, 0.5)] {
            let mut pairs = Vec::new();
            for b in [0.2, 0.1, 0.05] {
                let f = FinslerStructure::new(
                    Kind::Randers,
                    alpha,
                    BetaField::Constant { b1: b, b2: 0.4 * b },
                    MeasureKind::HolmesThompson,
                )
                .unwrap();
                let x = Vec2::zeros();
                let fo = f.randers_first_order(x, xi).unwrap();
                let t = f.hessian_tensor(x, xi).unwrap();
                pairs.push((b, (t - fo.t_first_order).amax()));
            }
            let p = oracle::order_fit(&pairs).unwrap();
            assert!((p - 2.0).abs() < 0.3, "{p} {pairs:?}");
        }
    }
}

#[test]
fn printed_first_order_form_is_only_first_order_accurate_off_axis() {
    let xi = Vec2::new(0.6, 0.8);
    let mut pairs = Vec::new();
    for b in [0.2, 0.1, 0.05] {
        let f = FinslerStructure::constant_randers(b, 0.0).unwrap();
        let l = f.local(Vec2::zeros());
        let t = l.hessian(xi).unwrap();
        pairs.push((b, (t - (l.a_inv - l.s_beta_printed(xi).unwrap())).amax()));
    }
    let p = oracle::order_fit(&pairs).unwrap();
    assert!(p < 1.3, "{p}");
}

#[test]
fn elasticity_tensor_halving_ladder() {
    let xi = Vec2::new(0.3, 1.1);
    let mut errs = Vec::new();
    for b in [0.2, 0.1, 0.05] {
        let f = FinslerStructure::constant_randers(b, -0.5 * b).unwrap();
        let x = Vec2::zeros();
        let c = f.elasticity_tensor(x, xi).unwrap();
        let s = f.randers_first_order(x, xi).unwrap().s_beta;
        errs.push((c - (Mat2::identity() - s)).norm());
    }
    for w in errs.windows(2) {
        let r = w[0] / w[1];
        assert!((r - 4.0).abs() <= 1.2, "ratio {r}");
    }
    let f = FinslerStructure::constant_randers(0.2, 0.1).unwrap();
    let c1 = f.elasticity_tensor(Vec2::zeros(), xi).unwrap();
    let c2 = f.elasticity_tensor(Vec2::zeros(), 7.5 * xi).unwrap();
    assert!((c1 - c2).amax() < 1e-13);
}

#[test]
fn tensors_converge_linearly_to_riemannian() {
    let xi = Vec2::new(-0.4, 0.9);
    let mut pairs = Vec::new();
    for b in [0.2, 0.1, 0.05, 0.025] {
        let f = FinslerStructure::constant_randers(0.0, b).unwrap();
        let t = f.hessian_tensor(Vec2::zeros(), xi).unwrap();
        pairs.push((b, (t - Mat2::identity()).amax()));
    }
    let p = oracle::order_fit(&pairs).unwrap();
    assert!((p - 1.0).abs() < 0.15, "{p}");
}

#[test]
fn busemann_hausdorff_density_matches_polygon_oracle() {
    for b in [0.1, 0.3, 0.6] {
        let f = FinslerStructure::constant_randers(b, 0.0).unwrap().with_measure(MeasureKind::BusemannHausdorff);
        let x = Vec2::zeros();
        let area = oracle::polygon_area(|e| 1.0 / f.primal_norm(x, Vec2::new(e[0], e[1])).unwrap(), 20000);
        let oracle_density = std::f64::consts::PI / area;
        let closed = (1.0 - b * b).powf(1.5);
        assert!((f.measure_density(x) - closed).abs() <= 1e-6);
        assert!((oracle_density - closed).abs() <= 1e-6, "{oracle_density} {closed}");
    }
}

#[test]
fn holmes_thompson_density_matches_polygon_oracle() {
    let f = FinslerStructure::new(
        Kind::Randers,
        AlphaField::Diagonal { l1: 2.0, l2: 0.5 },
        BetaField::Constant { b1: 0.3, b2: 0.2 },
        MeasureKind::HolmesThompson,
    )
    .unwrap();
    let x = Vec2::zeros();
    let area = oracle::polygon_area(|e| 1.0 / f.dual_norm(x, Vec2::new(e[0], e[1])).unwrap(), 20000);
    assert!((f.measure_density(x) - area / std::f64::consts::PI).abs() <= 1e-6);
}
