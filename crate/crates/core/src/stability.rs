//! Second-order structure at a configuration: the generalized eigenproblem
//! `H v = λ M v`, the quadratic expansion check and the elasticity form.
//!
//! `M` is block diagonal with `M_i = T_F(a_i, ξ_i)⁻¹`, the metric on displacement
//! vectors dual to the response tensor at the interaction covector `ξ_i`. Its
//! generalized eigenvectors are the modes of the linearized flow `ȧ = −T_F ∇W`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::energy::{
    equilibrium_residual, interaction_covector, perturbation_potential, renormalized_energy, VortexConfiguration,
};
use crate::error::{Error, Result};
use crate::field::TINY_COVECTOR;
use crate::geometry::{Kind, Mat2, Vec2};
use crate::green::GreenSolver;

/// Zero-mode threshold relative to the spectral radius.
pub const ZERO_MODE_FRACTION: f64 = 1e-3;
/// Default expansion steps, in units of the torus period.
pub const EXPANSION_STEPS: [f64; 3] = [0.02, 0.01, 0.005];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `M`-orthonormal displacement fields, one per eigenvalue.
    pub eigenvectors: Vec<Vec<Vec2>>,
    pub zero_mode_count: usize,
    pub stable: bool,
    pub tol_zero: f64,
    pub metric_blocks: Vec<Mat2>,
    /// `‖H − M V Λ Vᵀ M‖ / ‖H‖`.
    pub reconstruction_error: f64,
    /// `max |Vᵀ M V − I|`.
    pub orthonormality_error: f64,
}

/// Per-vortex Gram blocks `T_F(a_i, ξ_i)⁻¹`; the α metric where a Randers
/// interaction covector vanishes.
pub fn metric_blocks(solver: &GreenSolver, config: &VortexConfiguration) -> Result<Vec<Mat2>> {
    let s = solver.grid().structure();
    (0..config.len())
        .map(|i| {
            let a = config.positions[i];
            let local = s.local(a);
            if s.kind == Kind::Riemannian {
                return Ok(local.a);
            }
            let xi = interaction_covector(solver, config, i)?;
            if xi.norm() < TINY_COVECTOR {
                return Ok(local.a);
            }
            s.hessian_tensor(a, xi)?.try_inverse().ok_or(Error::GramNotPd(i))
        })
        .collect()
}

/// Solves `H v = λ M v` for a block-diagonal `M` by Cholesky whitening.
pub fn generalized_spectrum(hessian: &DMatrix<f64>, blocks: &[Mat2]) -> Result<StabilityReport> {
    let dim = 2 * blocks.len();
    if hessian.nrows() != dim || hessian.ncols() != dim {
        return Err(Error::InvalidConfiguration(format!("hessian is {}×{}, expected {dim}×{dim}", hessian.nrows(), hessian.ncols())));
    }
    let mut l = DMatrix::zeros(dim, dim);
    let mut m = DMatrix::zeros(dim, dim);
    for (i, b) in blocks.iter().enumerate() {
        let sym = 0.5 * (b + b.transpose());
        let c = Cholesky::new(sym).ok_or(Error::GramNotPd(i))?;
        l.fixed_view_mut::<2, 2>(2 * i, 2 * i).copy_from(&c.l());
        m.fixed_view_mut::<2, 2>(2 * i, 2 * i).copy_from(&sym);
    }
    let l_inv = l.clone().try_inverse().ok_or(Error::GramNotPd(0))?;
    let a = &l_inv * hessian * l_inv.transpose();
    let a = 0.5 * (&a + a.transpose());
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let q = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    let v = l_inv.transpose() * q;

    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eigenvalues.clone()));
    let recon = &m * &v * lam * v.transpose() * &m;
    let hn = hessian.norm();
    let reconstruction_error = if hn > 0.0 { (hessian - recon).norm() / hn } else { 0.0 };
    let gram = v.transpose() * &m * &v;
    let orthonormality_error = (gram - DMatrix::identity(dim, dim)).abs().max();

    let tol_zero = ZERO_MODE_FRACTION * eigenvalues.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let zero_mode_count = eigenvalues.iter().filter(|x| x.abs() <= tol_zero).count();
    let stable = eigenvalues.iter().all(|&x| x >= -tol_zero);
    let eigenvectors = (0..dim)
        .map(|c| (0..blocks.len()).map(|i| Vec2::new(v[(2 * i, c)], v[(2 * i + 1, c)])).collect())
        .collect();
    Ok(StabilityReport {
        eigenvalues,
        eigenvectors,
        zero_mode_count,
        stable,
        tol_zero,
        metric_blocks: blocks.to_vec(),
        reconstruction_error,
        orthonormality_error,
    })
}

/// Spectrum of `hessian` in the co-metric of `config`.
pub fn stability_spectrum(
    solver: &GreenSolver,
    config: &VortexConfiguration,
    hessian: &DMatrix<f64>,
) -> Result<StabilityReport> {
    generalized_spectrum(hessian, &metric_blocks(solver, config)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionCheck {
    pub steps: Vec<f64>,
    /// `W(a + t v) − W(a) − ½t² vᵀHv` per step.
    pub remainders: Vec<f64>,
    /// `½t² vᵀHv` per step.
    pub quadratic: Vec<f64>,
    /// Fitted exponent of `|remainder| ∝ t^p`.
    pub order: f64,
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.abs().max(f64::MIN_POSITIVE).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Remainder of the second-order expansion along any displacement `v`.
pub fn expansion_remainders(
    solver: &GreenSolver,
    config: &VortexConfiguration,
    hessian: &DMatrix<f64>,
    v: &[Vec2],
    steps: &[f64],
) -> Result<ExpansionCheck> {
    let w0 = renormalized_energy(solver, config)?.w_f;
    let flat = nalgebra::DVector::from_iterator(2 * v.len(), v.iter().flat_map(|p| [p.x, p.y]));
    let vhv = flat.dot(&(hessian * &flat));
    let mut remainders = Vec::new();
    let mut quadratic = Vec::new();
    for &t in steps {
        let w = renormalized_energy(solver, &config.displaced(v, t))?.w_f;
        let q = 0.5 * t * t * vhv;
        quadratic.push(q);
        remainders.push(w - w0 - q);
    }
    let order = log_slope(steps, &remainders);
    Ok(ExpansionCheck { steps: steps.to_vec(), remainders, quadratic, order })
}

/// [`expansion_remainders`] for an admissible displacement at a stationary configuration.
pub fn quadratic_expansion_check(
    solver: &GreenSolver,
    config: &VortexConfiguration,
    hessian: &DMatrix<f64>,
    v: &[Vec2],
    steps: &[f64],
) -> Result<ExpansionCheck> {
    let total: Vec2 = v.iter().zip(&config.degrees).map(|(vi, &d)| d as f64 * vi).sum();
    if total.norm() > 1e-9 * v.iter().map(|x| x.norm()).sum::<f64>().max(1.0) {
        return Err(Error::InadmissibleVariation(total.norm()));
    }
    let eq = equilibrium_residual(solver, config)?;
    if !eq.at_equilibrium {
        let residual = eq.residuals.iter().cloned().fold(0.0, f64::max);
        return Err(Error::NotStationary { residual, tol: eq.tolerance });
    }
    expansion_remainders(solver, config, hessian, v, steps)
}

/// Field second variation and elasticity form from one perturbation potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticForms {
    /// `π ∫ F*²(dU) dμ`.
    pub second_variation: f64,
    /// `π ∫ ⟨C_F(ζ) dU, dU⟩ dμ` with `ζ = a 𝓛(dU)`.
    pub elasticity: f64,
    /// The same form with the first-order Randers tensor `a⁻¹ − S_β(dU)`.
    pub first_order_elasticity: f64,
}

pub fn quadratic_forms(solver: &GreenSolver, config: &VortexConfiguration, v: &[Vec2]) -> Result<QuadraticForms> {
    let u = perturbation_potential(solver, config, v)?;
    let grid = solver.grid();
    let c = grid.covectors(&u.values);
    let second_variation = PI * grid.face_sum(&c, |f, xi| f.local.dual(xi).powi(2));
    let elasticity = PI
        * grid.face_sum(&c, |f, xi| {
            let zeta = f.local.a * f.local.legendre(xi);
            let cf = f.local.hessian_regularized(zeta, TINY_COVECTOR);
            xi.dot(&(cf * xi))
        });
    let first_order_elasticity = PI
        * grid.face_sum(&c, |f, xi| {
            let s_beta = f.local.s_beta(xi).unwrap_or_else(|_| Mat2::zeros());
            xi.dot(&((f.local.a_inv - s_beta) * xi))
        });
    Ok(QuadraticForms { second_variation, elasticity, first_order_elasticity })
}

/// `π ∫ ⟨C_F ∇U, ∇U⟩`, equal to the field second variation for Riemannian structures.
pub fn elasticity_form(solver: &GreenSolver, config: &VortexConfiguration, v: &[Vec2]) -> Result<f64> {
    quadratic_forms(solver, config, v).map(|q| q.elasticity)
}
