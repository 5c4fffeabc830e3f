//! Reference computations that share no code with the main pipeline.
//!
//! Everything here works on plain `[f64; 2]` arrays and the standard library
//! so that a bug in the discretization crate cannot leak into the checks that
//! are supposed to catch it.
//!
//! * [`iso_green`] / [`iso_green_gradient`]: the mean-zero Green function of the
//!   Euclidean Laplacian on the unit square torus, `-ΔG = δ - 1`, written as the
//!   lattice sum `Σ_{k≠0} e^{2πik·x} / (4π²|k|²)`. One of the two frequency sums
//!   is carried out in closed form, which leaves an exponentially convergent
//!   series in the other frequency.
//! * [`iso_regular_part`]: `lim_{r→0} G(r) + log(r)/2π` by Richardson extrapolation.
//! * [`fd_gradient`] / [`fd_hessian`]: central finite differences.
//! * [`order_fit`]: least-squares convergence order.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("points coincide modulo the lattice")]
    CoincidentPoints,
    #[error("order fit needs at least 3 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("order fit needs positive scales and errors (pair {index}: scale {scale}, error {error})")]
    NonPositive { index: usize, scale: f64, error: f64 },
    #[error("degenerate fit: every error is zero")]
    DegenerateFit,
}

/// Default truncation for Green function values.
pub const K_VALUES: usize = 64;
/// Default truncation for Green function gradients.
pub const K_GRADIENTS: usize = 128;

fn wrap_signed(d: f64) -> f64 {
    d - d.round()
}

/// `Σ_{k∈Z} e^{2πiks}/(k²+m²)` for `m ≥ 1` and its `s`-derivative, `s ∈ [0,1)`.
fn row_sum(m: f64, s: f64) -> (f64, f64) {
    let q = (-2.0 * PI * m).exp();
    let e0 = (-2.0 * PI * m * s).exp();
    let e1 = (-2.0 * PI * m * (1.0 - s)).exp();
    let denom = 1.0 - q;
    let value = PI / m * (e0 + e1) / denom;
    let deriv = PI / m * (2.0 * PI * m) * (e1 - e0) / denom;
    (value, deriv)
}

/// Lattice sum and its derivative along the "summed" axis `s` and the "series"
/// axis `t`. Returns `(G, dG/ds, dG/dt)`.
fn green_parts(s: f64, t: f64, terms: usize) -> (f64, f64, f64) {
    // k_q = 0 row: Σ_{k≠0} e^{2πiks}/k² = 2π²(s² - s + 1/6)
    let mut g = 2.0 * PI * PI * (s * s - s + 1.0 / 6.0);
    let mut gs = 2.0 * PI * PI * (2.0 * s - 1.0);
    let mut gt = 0.0;
    for m in 1..=terms {
        let mf = m as f64;
        let (v, dv) = row_sum(mf, s);
        let (sn, cs) = (2.0 * PI * mf * t).sin_cos();
        g += 2.0 * cs * v;
        gs += 2.0 * cs * dv;
        gt -= 2.0 * (2.0 * PI * mf) * sn * v;
    }
    let c = 1.0 / (4.0 * PI * PI);
    (c * g, c * gs, c * gt)
}

/// Chooses which axis is summed in closed form: the one with the larger
/// periodic separation, so the remaining series decays fastest.
fn split(x: [f64; 2], y: [f64; 2]) -> Result<(usize, f64, f64), OracleError> {
    let d = [wrap_signed(x[0] - y[0]), wrap_signed(x[1] - y[1])];
    if d[0] == 0.0 && d[1] == 0.0 {
        return Err(OracleError::CoincidentPoints);
    }
    let p = if d[0].abs() >= d[1].abs() { 0 } else { 1 };
    let q = 1 - p;
    let s = d[p].rem_euclid(1.0);
    Ok((p, s, d[q]))
}

/// Mean-zero isotropic Green function `G(x, y)` on the unit square torus.
pub fn iso_green(x: [f64; 2], y: [f64; 2], terms: usize) -> Result<f64, OracleError> {
    let (_, s, t) = split(x, y)?;
    Ok(green_parts(s, t, terms).0)
}

/// Gradient of [`iso_green`] in its first argument.
pub fn iso_green_gradient(x: [f64; 2], y: [f64; 2], terms: usize) -> Result<[f64; 2], OracleError> {
    let (p, s, t) = split(x, y)?;
    let (_, gs, gt) = green_parts(s, t, terms);
    let mut out = [0.0; 2];
    out[p] = gs;
    out[1 - p] = gt;
    Ok(out)
}

/// Number of series terms that pushes the neglected tail below machine
/// precision for a point at separation `r`.
pub fn terms_for_separation(r: f64, minimum: usize) -> usize {
    let dmin = (r / std::f64::consts::SQRT_2).max(1e-6);
    let needed = (40.0 / (2.0 * PI * dmin)).ceil() as usize;
    needed.max(minimum)
}

/// `G(x, y) + log|x - y| / 2π` sampled at one separation and direction.
pub fn iso_regular_sample(r: f64, angle: f64, terms: usize) -> f64 {
    let y = [0.3, 0.6];
    let x = [y[0] + r * angle.cos(), y[1] + r * angle.sin()];
    let k = terms_for_separation(r, terms);
    iso_green(x, y, k).expect("nonzero separation") + r.ln() / (2.0 * PI)
}

/// Separations used by [`iso_regular_part`].
pub const REGULAR_LADDER: [f64; 3] = [0.02, 0.01, 0.005];

/// Regular part of the isotropic Green function on the diagonal, by
/// second-order Richardson extrapolation over a separation ladder `r, r/2, r/4`.
pub fn iso_regular_part_with(ladder: [f64; 3], angle: f64, terms: usize) -> f64 {
    let r: Vec<f64> = ladder.iter().map(|&s| iso_regular_sample(s, angle, terms)).collect();
    // remainder is even in the separation: R(s) = H + c s² + d s⁴ + ...
    let a1 = (4.0 * r[1] - r[0]) / 3.0;
    let a2 = (4.0 * r[2] - r[1]) / 3.0;
    (16.0 * a2 - a1) / 15.0
}

pub fn iso_regular_part(terms: usize) -> f64 {
    iso_regular_part_with(REGULAR_LADDER, 0.3, terms)
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + step;
            let fp = f(&p);
            p[i] = x[i] - step;
            let fm = f(&p);
            p[i] = x[i];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Central-difference Hessian of `f` at `x`; symmetric by construction.
pub fn fd_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let f0 = f(x);
    let mut p = x.to_vec();
    let mut eval = |di: &[(usize, f64)]| {
        for &(i, s) in di {
            p[i] += s;
        }
        let v = f(&p);
        for &(i, s) in di {
            p[i] -= s;
        }
        v
    };
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        let fp = eval(&[(i, step)]);
        let fm = eval(&[(i, -step)]);
        h[i][i] = (fp - 2.0 * f0 + fm) / (step * step);
        for j in 0..i {
            let pp = eval(&[(i, step), (j, step)]);
            let pm = eval(&[(i, step), (j, -step)]);
            let mp = eval(&[(i, -step), (j, step)]);
            let mm = eval(&[(i, -step), (j, -step)]);
            let v = (pp - pm - mp + mm) / (4.0 * step * step);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// Dual norm `max{⟨ξ, v⟩ : F(v) = 1}` by sampling the indicatrix and refining
/// the best sample with golden-section search.
pub fn indicatrix_dual_norm<F: Fn([f64; 2]) -> f64>(primal: F, xi: [f64; 2], samples: usize) -> f64 {
    let pairing = |t: f64| {
        let e = [t.cos(), t.sin()];
        (xi[0] * e[0] + xi[1] * e[1]) / primal(e)
    };
    let dt = 2.0 * PI / samples as f64;
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for k in 0..samples {
        let v = pairing(k as f64 * dt);
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    let (mut lo, mut hi) = ((best as f64 - 1.0) * dt, (best as f64 + 1.0) * dt);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if pairing(m1) < pairing(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    pairing(0.5 * (lo + hi)).max(best_val)
}

/// Shoelace area of the star-shaped polygon with vertices `r(θ_k)·e_{θ_k}`.
pub fn polygon_area<R: Fn([f64; 2]) -> f64>(radius: R, samples: usize) -> f64 {
    let pts: Vec<[f64; 2]> = (0..samples)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / samples as f64;
            let e = [t.cos(), t.sin()];
            let r = radius(e);
            [r * e[0], r * e[1]]
        })
        .collect();
    let mut area = 0.0;
    for k in 0..samples {
        let p = pts[k];
        let q = pts[(k + 1) % samples];
        area += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * area
}

/// Least-squares slope of `log(error)` against `log(scale)`.
pub fn order_fit(pairs: &[(f64, f64)]) -> Result<f64, OracleError> {
    if pairs.len() < 3 {
        return Err(OracleError::TooFewPairs(pairs.len()));
    }
    if pairs.iter().all(|&(_, e)| e == 0.0) {
        return Err(OracleError::DegenerateFit);
    }
    for (index, &(scale, error)) in pairs.iter().enumerate() {
        if !(scale > 0.0 && error > 0.0) {
            return Err(OracleError::NonPositive { index, scale, error });
        }
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn green_is_symmetric_and_translation_invariant() {
        let x = [0.13, 0.71];
        let y = [0.62, 0.05];
        let a = iso_green(x, y, K_VALUES).unwrap();
        let b = iso_green(y, x, K_VALUES).unwrap();
        assert!((a - b).abs() < 1e-14);
        let s = [0.37, -0.21];
        let c = iso_green([x[0] + s[0], x[1] + s[1]], [y[0] + s[0], y[1] + s[1]], K_VALUES).unwrap();
        assert!((a - c).abs() < 1e-12);
    }

    #[test]
    fn coincident_points_rejected() {
        assert_eq!(iso_green([0.2, 0.3], [1.2, -0.7], 8), Err(OracleError::CoincidentPoints));
    }

    #[test]
    fn green_has_zero_mean() {
        let m = 200;
        let y = [0.5 / m as f64, 0.5 / m as f64];
        let mut sum = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = [(i as f64 + 0.25) / m as f64, (j as f64 + 0.75) / m as f64];
                sum += iso_green(x, y, terms_for_separation(1.0 / m as f64, 64)).unwrap();
            }
        }
        // midpoint-style rule on a log singularity; the cell containing y dominates
        assert!((sum / (m * m) as f64).abs() < 1e-4, "{}", sum / (m * m) as f64);
    }

    #[test]
    fn truncation_tail_is_negligible() {
        for &(x, y) in &[([0.05, 0.0], [0.0, 0.0]), ([0.3, 0.4], [0.0, 0.0]), ([0.04, 0.03], [0.0, 0.0])] {
            let a = iso_green(x, y, K_VALUES).unwrap();
            let b = iso_green(x, y, 2 * K_VALUES).unwrap();
            assert!((a - b).abs() <= 1e-8, "{a} {b}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let y = [0.1, 0.2];
        let x = [0.45, 0.33];
        let g = iso_green_gradient(x, y, K_GRADIENTS).unwrap();
        let fd = fd_gradient(|p| iso_green([p[0], p[1]], y, K_GRADIENTS).unwrap(), &x, 1e-5);
        assert!((g[0] - fd[0]).abs() < 1e-7 && (g[1] - fd[1]).abs() < 1e-7);
        // antipodal point on the square torus is a critical point
        let g = iso_green_gradient([0.6, 0.7], y, K_GRADIENTS).unwrap();
        assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn regular_part_is_self_consistent() {
        let a = iso_regular_part(64);
        let b = iso_regular_part_with([0.04, 0.02, 0.01], 0.3, 64);
        assert!((a - b).abs() < 1e-5, "{a} {b}");
        let c = iso_regular_part_with(REGULAR_LADDER, 1.1, 64);
        assert!((a - c).abs() < 1e-6, "{a} {c}");
    }

    #[test]
    fn fd_exact_on_polynomials() {
        let lin = |p: &[f64]| 3.0 * p[0] - 2.0 * p[1] + 1.0;
        let g = fd_gradient(lin, &[0.3, 0.7], 0.1);
        assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] + 2.0).abs() < 1e-12);
        let quad = |p: &[f64]| p[0] * p[0] + 3.0 * p[0] * p[1] - 0.5 * p[1] * p[1];
        let h = fd_hessian(quad, &[0.2, -0.4], 0.05);
        assert!((h[0][0] - 2.0).abs() < 1e-8);
        assert!((h[0][1] - 3.0).abs() < 1e-8);
        assert!((h[1][1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn fd_step_halving_is_second_order() {
        let f = |p: &[f64]| (2.0 * p[0]).sin() * p[1].exp();
        let x = [0.4, 0.1];
        let exact = 2.0 * (0.8f64).cos() * (0.1f64).exp();
        let e1 = (fd_gradient(f, &x, 0.1)[0] - exact).abs();
        let e2 = (fd_gradient(f, &x, 0.05)[0] - exact).abs();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.8, "{ratio}");
    }

    #[test]
    fn indicatrix_helpers_on_euclidean_and_randers() {
        let euc = |v: [f64; 2]| v[0].hypot(v[1]);
        assert!((indicatrix_dual_norm(euc, [3.0, 4.0], 360) - 5.0).abs() < 1e-12);
        let r1 = |v: [f64; 2]| v[0].hypot(v[1]) + 0.5 * v[0];
        assert!((indicatrix_dual_norm(r1, [1.0, 0.0], 360) - 2.0 / 3.0).abs() < 1e-12);
        let a = polygon_area(|_| 1.0, 20000);
        assert!((a - PI).abs() < 1e-6);
    }

    #[test]
    fn order_fit_basic_cases() {
        let sq: Vec<_> = [0.1, 0.05, 0.025].iter().map(|&s| (s, s * s)).collect();
        assert!((order_fit(&sq).unwrap() - 2.0).abs() < 1e-12);
        let c: Vec<_> = [0.1, 0.05, 0.025].iter().map(|&s| (s, 0.3)).collect();
        assert!(order_fit(&c).unwrap().abs() < 1e-12);
        let mixed: Vec<_> = [1e-3, 5e-4, 2.5e-4].iter().map(|&s| (s, s + s * s)).collect();
        let p = order_fit(&mixed).unwrap();
        assert!(p > 1.0 && p < 1.1, "{p}");
        let zero: Vec<_> = [0.1, 0.05, 0.025].iter().map(|&s| (s, 0.0)).collect();
        assert_eq!(order_fit(&zero), Err(OracleError::DegenerateFit));
        assert!(matches!(order_fit(&sq[..2]), Err(OracleError::TooFewPairs(2))));
    }
}
