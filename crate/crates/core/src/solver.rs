//! Mean-zero solves of `−Δ_{F,μ} u = f`.
//!
//! The discrete problem is `∇E[u] = W f` with `W = diag(w_c)`. Riemannian
//! structures give a linear system solved by conjugate gradients with an FFT
//! preconditioner (the exact inverse of the face-averaged operator). Randers
//! structures minimize `Φ(u) = E[u] − ⟨W f, u⟩` by damped Newton.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{dot, ScalarField, TangentOperator, TorusGrid};
use crate::geometry::Kind;

pub const LINEAR_TOL: f64 = 1e-10;
pub const NEWTON_TOL: f64 = 1e-9;
pub const MAX_NEWTON: usize = 50;
pub const MAX_HALVINGS: usize = 40;
const MAX_CG: usize = 5000;

/// Inverse of a translation-invariant reference operator, applied in Fourier space.
pub struct FourierPreconditioner<'g> {
    grid: &'g TorusGrid,
    inv_symbol: Vec<f64>,
}

impl<'g> FourierPreconditioner<'g> {
    pub fn new(grid: &'g TorusGrid, reference: &TangentOperator) -> Self {
        let n = grid.n();
        let mut e0 = vec![0.0; n * n];
        e0[0] = 1.0;
        let col = reference.apply(&e0, grid);
        let mut data: Vec<Complex64> = col.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        grid.fft().forward(&mut data);
        let scale = data.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
        let inv_symbol = data
            .iter()
            .enumerate()
            .map(|(k, c)| if k == 0 || c.re <= 1e-14 * scale { 0.0 } else { 1.0 / c.re })
            .collect();
        FourierPreconditioner { grid, inv_symbol }
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let fft = self.grid.fft();
        let n2 = r.len() as f64;
        let mut data: Vec<Complex64> = r.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut data);
        data.iter_mut().zip(&self.inv_symbol).for_each(|(c, s)| *c *= s / n2);
        fft.inverse(&mut data);
        data.iter().map(|c| c.re).collect()
    }
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Solves `K x = b` on the complement of constants to `‖r‖ ≤ tol‖b‖`.
pub fn pcg(
    grid: &TorusGrid,
    op: &TangentOperator,
    pre: &FourierPreconditioner,
    b: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, usize)> {
    let mut b = b.to_vec();
    remove_mean(&mut b);
    let bnorm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; b.len()];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b;
    let mut z = pre.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rnorm = bnorm;
    for it in 0..MAX_CG {
        if rnorm <= tol * bnorm {
            return Ok((x, it));
        }
        let kp = op.apply(&p, grid);
        let pkp = dot(&p, &kp);
        if !(pkp > 0.0) {
            return Err(Error::LinearStall { iterations: it, residual: rnorm / bnorm });
        }
        let alpha = rz / pkp;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&kp).for_each(|(ri, ki)| *ri -= alpha * ki);
        rnorm = dot(&r, &r).sqrt();
        z = pre.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    if rnorm <= tol * bnorm {
        Ok((x, MAX_CG))
    } else {
        Err(Error::LinearStall { iterations: MAX_CG, residual: rnorm / bnorm })
    }
}

/// Diagnostics of one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    pub relative_residual: f64,
}

/// Solves `−Δ_{F,μ} u = rhs` for the unique μ-mean-zero `u`.
pub fn solve_mean_zero(grid: &TorusGrid, rhs: &ScalarField) -> Result<ScalarField> {
    solve_mean_zero_with_stats(grid, rhs).map(|(u, _)| u)
}

pub fn solve_mean_zero_with_stats(grid: &TorusGrid, rhs: &ScalarField) -> Result<(ScalarField, SolveStats)> {
    let mean = grid.mean(rhs);
    if mean.abs() > 1e-10 * rhs.max_abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NonNeutralSource { mean });
    }
    let n = grid.n();
    let b: Vec<f64> = rhs.values.iter().zip(grid.weights()).map(|(f, w)| f * w).collect();
    let alpha_op = grid.alpha_operator();
    let pre = FourierPreconditioner::new(grid, &alpha_op.averaged());
    let (x, lin_its) = pcg(grid, &alpha_op, &pre, &b, LINEAR_TOL)?;
    let mut u = ScalarField { n, values: x };
    let mut stats = SolveStats { newton_iterations: 0, linear_iterations: lin_its, relative_residual: 0.0 };
    if grid.structure().kind == Kind::Randers {
        newton(grid, &b, &mut u, &mut stats)?;
    } else {
        let k = alpha_op.apply(&u.values, grid);
        let res: Vec<f64> = k.iter().zip(&b).map(|(a, c)| a - c).collect();
        stats.relative_residual = dot(&res, &res).sqrt() / dot(&b, &b).sqrt().max(f64::MIN_POSITIVE);
    }
    grid.project_mean_zero(&mut u);
    Ok((u, stats))
}

fn newton(grid: &TorusGrid, b: &[f64], u: &mut ScalarField, stats: &mut SolveStats) -> Result<()> {
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        u.values.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    let objective = |v: &ScalarField| grid.dirichlet_energy(v) - dot(b, &v.values);
    let residual = |v: &ScalarField| -> Vec<f64> {
        grid.energy_gradient(&v.values).iter().zip(b).map(|(g, c)| g - c).collect()
    };
    let mut g = residual(u);
    let mut gnorm = dot(&g, &g).sqrt();
    let mut phi = objective(u);
    for it in 0..MAX_NEWTON {
        let rel = gnorm / bnorm;
        stats.relative_residual = rel;
        if rel <= NEWTON_TOL {
            stats.newton_iterations = it;
            return Ok(());
        }
        let op = grid.tangent_operator(u);
        let pre = FourierPreconditioner::new(grid, &op.averaged());
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let inner_tol = (0.1 * rel).clamp(1e-13, 1e-3);
        let (step, its) = pcg(grid, &op, &pre, &neg, inner_tol)?;
        stats.linear_iterations += its;
        let slope = dot(&g, &step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial = ScalarField { n: u.n, values: u.values.iter().zip(&step).map(|(a, s)| a + t * s).collect() };
            let phi_t = objective(&trial);
            let g_t = residual(&trial);
            let gn_t = dot(&g_t, &g_t).sqrt();
            let armijo = phi_t <= phi + 1e-4 * t * slope;
            if armijo || gn_t < (1.0 - 1e-4 * t) * gnorm {
                *u = trial;
                g = g_t;
                gnorm = gn_t;
                phi = phi_t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonStall { iterations: it, residual: rel });
        }
    }
    let rel = gnorm / bnorm;
    stats.relative_residual = rel;
    stats.newton_iterations = MAX_NEWTON;
    if rel <= NEWTON_TOL {
        Ok(())
    } else {
        Err(Error::NewtonStall { iterations: MAX_NEWTON, residual: rel })
    }
}
