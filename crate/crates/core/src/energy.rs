//! Renormalized energy `W_F` of a vortex configuration and its derivatives.
//!
//! `W_F = π Σ_{i≠j} d_i d_j G(a_i, a_j) + π Σ_i d_i² H(a_i)` is assembled from
//! single-source kernels. Derivatives in a source position are fourth-order
//! differences over the source stencil of [`GreenSolver::stencil`], so the
//! pair derivative includes both `∂_x G(a_i; a_j)` and `∂_y G(a_j; a_i)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{wrap, FinslerStructure, Kind, Mat2, Vec2};
use crate::green::{fd4, GreenSolver, CORE_MULTIPLE};

/// Equilibrium threshold on the per-vortex residual.
pub const EQUILIBRIUM_TOL: f64 = 1e-4 * PI;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VortexConfiguration {
    pub positions: Vec<Vec2>,
    pub degrees: Vec<i32>,
    /// Core scale ε, used only by [`predicted_total_energy`].
    pub epsilon: f64,
    /// Exponent α in the separation threshold `C ε^α`.
    pub separation_exponent: f64,
    /// Constant C in the separation threshold.
    pub separation_constant: f64,
}

/// A pair closer than the `C ε^α` threshold (a warning, not an error).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparationWarning {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub threshold: f64,
}

impl VortexConfiguration {
    /// Configuration with ε = 0.05, α = ½ and C = 1.
    pub fn new(positions: Vec<Vec2>, degrees: Vec<i32>) -> Result<Self> {
        Self::with_core(positions, degrees, 0.05, 0.5, 1.0)
    }

    pub fn with_core(
        positions: Vec<Vec2>,
        degrees: Vec<i32>,
        epsilon: f64,
        separation_exponent: f64,
        separation_constant: f64,
    ) -> Result<Self> {
        let c = VortexConfiguration { positions, degrees, epsilon, separation_exponent, separation_constant };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if self.positions.len() != self.degrees.len() {
            return bad(format!("{} positions but {} degrees", self.positions.len(), self.degrees.len()));
        }
        if self.positions.len() < 2 {
            return bad("at least two vortices are required".into());
        }
        if let Some(i) = self.degrees.iter().position(|&d| d == 0) {
            return bad(format!("vortex {i} has degree 0"));
        }
        let total: i32 = self.degrees.iter().sum();
        if total != 0 {
            return bad(format!("degrees sum to {total}, expected 0"));
        }
        if self.positions.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return bad("non-finite position".into());
        }
        for (i, j) in self.pairs() {
            if wrap(self.positions[i] - self.positions[j]).norm() == 0.0 {
                return bad(format!("vortices {i} and {j} coincide"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if !(self.separation_exponent > 0.0 && self.separation_exponent < 1.0) {
            return bad(format!("separation exponent {} outside (0, 1)", self.separation_exponent));
        }
        if !(self.separation_constant > 0.0) {
            return bad(format!("separation constant {} must be positive", self.separation_constant));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Unordered pairs `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.len();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }

    pub fn threshold(&self) -> f64 {
        self.separation_constant * self.epsilon.powf(self.separation_exponent)
    }

    /// Pairs whose local distance `F(a_i, a_j ⊖ a_i)` falls below `C ε^α`.
    pub fn separation_warnings(&self, structure: &FinslerStructure) -> Vec<SeparationWarning> {
        let threshold = self.threshold();
        self.pairs()
            .filter_map(|(i, j)| {
                let d = structure.local_distance(self.positions[i], self.positions[j]).ok()?;
                (d < threshold).then_some(SeparationWarning { i, j, distance: d, threshold })
            })
            .collect()
    }

    pub fn with_position(&self, i: usize, p: Vec2) -> Self {
        let mut c = self.clone();
        c.positions[i] = p;
        c
    }

    /// `a_i + t v_i` for every vortex.
    pub fn displaced(&self, v: &[Vec2], t: f64) -> Self {
        let mut c = self.clone();
        c.positions.iter_mut().zip(v).for_each(|(p, d)| *p += t * d);
        c
    }

    /// Swaps the labels of vortices `i` and `j`.
    pub fn swapped(&self, i: usize, j: usize) -> Self {
        let mut c = self.clone();
        c.positions.swap(i, j);
        c.degrees.swap(i, j);
        c
    }

    /// Smallest periodic distance between two vortices.
    pub fn min_separation(&self) -> f64 {
        self.pairs().map(|(i, j)| wrap(self.positions[i] - self.positions[j]).norm()).fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn d(&self, i: usize) -> f64 {
        self.degrees[i] as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    /// `G(a_i, a_j)`, the kernel with source `a_j` read at `a_i`.
    pub g_ij: f64,
    pub g_ji: f64,
    /// `π d_i d_j (G(a_i, a_j) + G(a_j, a_i))`.
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfTerm {
    pub i: usize,
    pub regular_part: f64,
    /// `π d_i² H(a_i)`.
    pub energy: f64,
    pub fit_residual: f64,
}

/// `W_F` with its pair and self contributions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub w_f: f64,
    pub pairs: Vec<PairTerm>,
    pub selves: Vec<SelfTerm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianReport {
    /// Symmetrized `2N × 2N` coordinate Hessian, ordered `(a_1¹, a_1², a_2¹, …)`.
    pub matrix: DMatrix<f64>,
    /// `‖H − Hᵀ‖ / ‖H‖` before symmetrization.
    pub asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub w_f: f64,
    pub gradient: Vec<Vec2>,
    pub euclidean_gradient: Vec<Vec2>,
    pub hessian: Vec<Vec<f64>>,
    pub hessian_asymmetry: f64,
    pub predicted_total: f64,
    pub pairs: Vec<PairTerm>,
    pub selves: Vec<SelfTerm>,
}

/// Errors with `SeparationTooSmall` if two vortices are closer than the core limit.
pub fn check_separation(solver: &GreenSolver, config: &VortexConfiguration) -> Result<()> {
    let limit = CORE_MULTIPLE * solver.grid().h();
    for (i, j) in config.pairs() {
        let separation = wrap(config.positions[i] - config.positions[j]).norm();
        if separation < limit {
            return Err(Error::SeparationTooSmall { i, j, separation, limit });
        }
    }
    Ok(())
}

fn stencil_sources(solver: &GreenSolver, y: Vec2) -> Vec<Vec2> {
    let mut v = vec![y];
    v.extend(solver.stencil_points(y));
    v
}

/// Solves, in parallel, every kernel the gradient of `config` needs.
fn prefetch(solver: &GreenSolver, configs: &[&VortexConfiguration]) -> Result<()> {
    let mut ys = Vec::new();
    for c in configs {
        for &p in &c.positions {
            ys.extend(stencil_sources(solver, p));
        }
    }
    solver.fields(&ys).map(|_| ())
}

/// `∂_y G(x; y)` by differences over the source stencil of `y`.
pub fn source_gradient(solver: &GreenSolver, x: Vec2, y: Vec2) -> Result<Vec2> {
    let s = solver.source_step();
    let st = solver.stencil(y);
    let mut g = Vec2::zeros();
    for k in 0..2 {
        let f = solver.fields(&st[k])?;
        let v: Vec<f64> = f.iter().map(|f| solver.value(f, x)).collect();
        g[k] = fd4(v[0], v[1], v[2], v[3], s);
    }
    Ok(g)
}

/// `M[k][l] = ∂_{x_k} ∂_{y_l} G(x; y)`.
pub fn mixed_derivative(solver: &GreenSolver, x: Vec2, y: Vec2) -> Result<Mat2> {
    let s = solver.source_step();
    let st = solver.stencil(y);
    let mut m = Mat2::zeros();
    for l in 0..2 {
        let f = solver.fields(&st[l])?;
        let g: Vec<Vec2> = f.iter().map(|f| solver.value_and_gradient(f, x).1).collect();
        for k in 0..2 {
            m[(k, l)] = fd4(g[0][k], g[1][k], g[2][k], g[3][k], s);
        }
    }
    Ok(m)
}

/// Pair part of `∂_{a_i} W_F`: `π Σ_{j≠i} d_i d_j [∂_x G(a_i; a_j) + ∂_y G(a_j; a_i)]`.
pub fn interaction_covector(solver: &GreenSolver, config: &VortexConfiguration, i: usize) -> Result<Vec2> {
    let ai = config.positions[i];
    let mut xi = Vec2::zeros();
    for j in (0..config.len()).filter(|&j| j != i) {
        let aj = config.positions[j];
        let field = solver.field(aj)?;
        let gx = solver.value_and_gradient(&field, ai).1;
        let gy = source_gradient(solver, aj, ai)?;
        xi += PI * config.d(i) * config.d(j) * (gx + gy);
    }
    Ok(xi)
}

fn vortex_gradient(solver: &GreenSolver, config: &VortexConfiguration, i: usize) -> Result<Vec2> {
    let d = config.d(i);
    Ok(interaction_covector(solver, config, i)? + PI * d * d * solver.regular_gradient(config.positions[i])?)
}

/// `W_F` with the per-pair and per-vortex tables.
pub fn renormalized_energy(solver: &GreenSolver, config: &VortexConfiguration) -> Result<EnergyBreakdown> {
    config.validate()?;
    check_separation(solver, config)?;
    let fields = solver.fields(&config.positions)?;
    let pairs: Vec<PairTerm> = config
        .pairs()
        .map(|(i, j)| {
            let g_ij = solver.value(&fields[j], config.positions[i]);
            let g_ji = solver.value(&fields[i], config.positions[j]);
            PairTerm { i, j, g_ij, g_ji, energy: PI * config.d(i) * config.d(j) * (g_ij + g_ji) }
        })
        .collect();
    let selves = (0..config.len())
        .map(|i| {
            let (h, fit) = solver.regular_value(config.positions[i])?;
            if fit.flagged {
                return Err(Error::FitDiverged { residual: fit.residual, limit: 1e-3 * h.abs() + 1e-6 });
            }
            let d = config.d(i);
            Ok(SelfTerm { i, regular_part: h, energy: PI * d * d * h, fit_residual: fit.residual })
        })
        .collect::<Result<Vec<_>>>()?;
    let w_f = pairs.iter().map(|p| p.energy).sum::<f64>() + selves.iter().map(|s| s.energy).sum::<f64>();
    Ok(EnergyBreakdown { w_f, pairs, selves })
}

/// `∂_{a_i} W_F` as covectors.
pub fn euclidean_gradient(solver: &GreenSolver, config: &VortexConfiguration) -> Result<Vec<Vec2>> {
    config.validate()?;
    check_separation(solver, config)?;
    prefetch(solver, &[config])?;
    (0..config.len()).map(|i| vortex_gradient(solver, config, i)).collect()
}

/// Finsler gradients `𝓛_{a_i}(∂_{a_i} W_F)`.
pub fn gradient_wf(solver: &GreenSolver, config: &VortexConfiguration) -> Result<Vec<Vec2>> {
    let g = euclidean_gradient(solver, config)?;
    finsler_gradient(solver.grid().structure(), config, &g)
}

pub fn finsler_gradient(structure: &FinslerStructure, config: &VortexConfiguration, g: &[Vec2]) -> Result<Vec<Vec2>> {
    config.positions.iter().zip(g).map(|(&a, &xi)| structure.legendre_map(a, xi)).collect()
}

/// Coordinate Hessian of `W_F`. Off-diagonal blocks come from mixed
/// source/field derivatives and are symmetric by construction; diagonal
/// blocks are fourth-order differences of the vortex's own gradient.
pub fn hessian_wf(solver: &GreenSolver, config: &VortexConfiguration) -> Result<HessianReport> {
    config.validate()?;
    check_separation(solver, config)?;
    let n = config.len();
    let s = solver.source_step();
    let offsets = [s, -s, 2.0 * s, -2.0 * s];
    let mut shifted = Vec::new();
    for i in 0..n {
        for k in 0..2 {
            for o in offsets {
                let mut e = Vec2::zeros();
                e[k] = o;
                shifted.push(config.with_position(i, config.positions[i] + e));
            }
        }
    }
    let mut all: Vec<&VortexConfiguration> = shifted.iter().collect();
    all.push(config);
    prefetch(solver, &all)?;

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let mij = mixed_derivative(solver, config.positions[i], config.positions[j])?;
            let mji = mixed_derivative(solver, config.positions[j], config.positions[i])?;
            let b = PI * config.d(i) * config.d(j) * (mij + mji.transpose());
            h.fixed_view_mut::<2, 2>(2 * i, 2 * j).copy_from(&b);
        }
        for l in 0..2 {
            let g: Vec<Vec2> = (0..4)
                .map(|m| vortex_gradient(solver, &shifted[(i * 2 + l) * 4 + m], i))
                .collect::<Result<_>>()?;
            for k in 0..2 {
                h[(2 * i + k, 2 * i + l)] = fd4(g[0][k], g[1][k], g[2][k], g[3][k], s);
            }
        }
    }
    let norm = h.norm();
    let asymmetry = if norm > 0.0 { (&h - h.transpose()).norm() / norm } else { 0.0 };
    let matrix = 0.5 * (&h + h.transpose());
    Ok(HessianReport { matrix, asymmetry })
}

pub fn predicted_total_energy(config: &VortexConfiguration, w_f: f64) -> f64 {
    PI * config.len() as f64 * config.epsilon.ln().abs() + w_f
}

/// Energy, gradients and Hessian in one report.
pub fn energy_report(solver: &GreenSolver, config: &VortexConfiguration) -> Result<EnergyReport> {
    let e = renormalized_energy(solver, config)?;
    let euclidean = euclidean_gradient(solver, config)?;
    let gradient = finsler_gradient(solver.grid().structure(), config, &euclidean)?;
    let hess = hessian_wf(solver, config)?;
    let hessian = hess.matrix.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(EnergyReport {
        w_f: e.w_f,
        gradient,
        euclidean_gradient: euclidean,
        hessian,
        hessian_asymmetry: hess.asymmetry,
        predicted_total: predicted_total_energy(config, e.w_f),
        pairs: e.pairs,
        selves: e.selves,
    })
}

fn check_admissible(config: &VortexConfiguration, v: &[Vec2]) -> Result<()> {
    if v.len() != config.len() {
        return Err(Error::InvalidConfiguration(format!("{} displacements for {} vortices", v.len(), config.len())));
    }
    let total: Vec2 = v.iter().enumerate().map(|(i, vi)| config.d(i) * vi).sum();
    let scale = v.iter().map(|x| x.norm()).sum::<f64>().max(1.0);
    if total.norm() > 1e-9 * scale {
        return Err(Error::InadmissibleVariation(total.norm()));
    }
    Ok(())
}

/// `U = Σ d_i ∂_τ G(·; a_i + τ v_i)` by the central pair with `τ = h`.
pub fn perturbation_potential(solver: &GreenSolver, config: &VortexConfiguration, v: &[Vec2]) -> Result<ScalarField> {
    check_admissible(config, v)?;
    let tau = solver.grid().h();
    let n = solver.grid().n();
    let mut ys = Vec::new();
    for (a, vi) in config.positions.iter().zip(v) {
        if vi.norm() > 0.0 {
            ys.push(a + tau * vi);
            ys.push(a - tau * vi);
        }
    }
    solver.fields(&ys)?;
    let mut u = ScalarField::zeros(n);
    for (i, (a, vi)) in config.positions.iter().zip(v).enumerate() {
        if vi.norm() == 0.0 {
            continue;
        }
        let p = solver.field(a + tau * vi)?;
        let m = solver.field(a - tau * vi)?;
        let c = config.d(i) / (2.0 * tau);
        for ((u, a), b) in u.values.iter_mut().zip(&p.values.values).zip(&m.values.values) {
            *u += c * (a - b);
        }
    }
    Ok(u)
}

/// `π ∫ F*²(dU) dμ` for an admissible displacement.
pub fn second_variation_field(solver: &GreenSolver, config: &VortexConfiguration, v: &[Vec2]) -> Result<f64> {
    let u = perturbation_potential(solver, config, v)?;
    Ok(2.0 * PI * solver.grid().dirichlet_energy(&u))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub residuals: Vec<f64>,
    pub tolerance: f64,
    pub at_equilibrium: bool,
}

/// Per-vortex `F*(a_i, Σ_{j≠i} d_j ∂_x G(a_i; a_j) + d_i ∂_x H(a_i, a_i))`, where
/// the first-slot derivative of `H` on the diagonal is half the derivative of
/// `x ↦ H(x, x)`.
pub fn equilibrium_residual(solver: &GreenSolver, config: &VortexConfiguration) -> Result<EquilibriumReport> {
    config.validate()?;
    check_separation(solver, config)?;
    prefetch(solver, &[config])?;
    let structure = solver.grid().structure();
    let residuals = (0..config.len())
        .map(|i| {
            let ai = config.positions[i];
            let mut e = 0.5 * config.d(i) * solver.regular_gradient(ai)?;
            for j in (0..config.len()).filter(|&j| j != i) {
                let field = solver.field(config.positions[j])?;
                e += config.d(j) * solver.value_and_gradient(&field, ai).1;
            }
            structure.dual_norm(ai, e)
        })
        .collect::<Result<Vec<_>>>()?;
    let at_equilibrium = residuals.iter().all(|&r| r <= EQUILIBRIUM_TOL);
    Ok(EquilibriumReport { residuals, tolerance: EQUILIBRIUM_TOL, at_equilibrium })
}

/// `−T_F(a_i, ξ_i) ξ_i` with `ξ_i` the interaction covector.
pub fn effective_force(solver: &GreenSolver, config: &VortexConfiguration, i: usize) -> Result<Vec2> {
    config.validate()?;
    check_separation(solver, config)?;
    let xi = interaction_covector(solver, config, i)?;
    if xi.norm() == 0.0 {
        return Ok(Vec2::zeros());
    }
    Ok(-(solver.grid().structure().hessian_tensor(config.positions[i], xi)? * xi))
}

/// `𝓛_{a_i}(ξ_i)`, the interaction part of the Finsler gradient.
pub fn interaction_gradient(solver: &GreenSolver, config: &VortexConfiguration, i: usize) -> Result<Vec2> {
    let xi = interaction_covector(solver, config, i)?;
    solver.grid().structure().legendre_map(config.positions[i], xi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    /// `Σ_j d_j (I − A_β) ∇_α G_α(a_i, a_j)`.
    pub residuals: Vec<Vec2>,
    /// The same sum without the `A_β` correction.
    pub isotropic: Vec<Vec2>,
    /// `(A_β)_{21}` at each vortex.
    pub rotation_rate: Vec<f64>,
    /// Unit eigenvector of the symmetric part of `∇b` with the largest
    /// eigenvalue magnitude (zero where that part vanishes).
    pub strain_axis: Vec<Vec2>,
}

const ALIGNMENT_BETA_MAX: f64 = 0.2;

/// Checks that `structure` is Randers with `‖b‖ ≤ 0.2` on a sample lattice and
/// that `alpha_solver` carries its α part.
pub(crate) fn check_first_order_inputs(structure: &FinslerStructure, alpha_solver: &GreenSolver) -> Result<()> {
    if structure.kind != Kind::Randers {
        return Err(Error::NotRanders);
    }
    if *alpha_solver.grid().structure() != structure.alpha_part() {
        return Err(Error::InvalidConfiguration("first-order comparison needs the kernel of the α part".into()));
    }
    let m = 32;
    let beta_max = (0..m * m)
        .map(|k| structure.local(Vec2::new((k % m) as f64 / m as f64, (k / m) as f64 / m as f64)).beta_norm())
        .fold(0.0, f64::max);
    if beta_max > ALIGNMENT_BETA_MAX {
        return Err(Error::InvalidConfiguration(format!("‖b‖ = {beta_max} exceeds {ALIGNMENT_BETA_MAX}")));
    }
    Ok(())
}

/// First-order alignment residual for a Randers structure, using the kernel of
/// its α part (`alpha_solver`).
pub fn alignment_residual(
    structure: &FinslerStructure,
    alpha_solver: &GreenSolver,
    config: &VortexConfiguration,
) -> Result<AlignmentReport> {
    check_first_order_inputs(structure, alpha_solver)?;
    config.validate()?;
    check_separation(alpha_solver, config)?;
    let fields = alpha_solver.fields(&config.positions)?;
    let mut report =
        AlignmentReport { residuals: vec![], isotropic: vec![], rotation_rate: vec![], strain_axis: vec![] };
    for i in 0..config.len() {
        let ai = config.positions[i];
        let a_inv = structure.local(ai).a_inv;
        let mut iso = Vec2::zeros();
        for j in (0..config.len()).filter(|&j| j != i) {
            iso += config.d(j) * (a_inv * alpha_solver.value_and_gradient(&fields[j], ai).1);
        }
        let ab = structure.a_beta(ai);
        report.residuals.push((Mat2::identity() - ab) * iso);
        report.isotropic.push(iso);
        report.rotation_rate.push(ab[(1, 0)]);
        let j = structure.beta.jacobian(ai);
        let sym = 0.5 * (j + j.transpose());
        let eig = SymmetricEigen::new(sym);
        let k = if eig.eigenvalues[0].abs() >= eig.eigenvalues[1].abs() { 0 } else { 1 };
        let axis = if eig.eigenvalues[k].abs() > 1e-14 { eig.eigenvectors.column(k).into_owned() } else { Vec2::zeros() };
        report.strain_axis.push(axis);
    }
    Ok(report)
}

/// Relative gap between one multi-source solve and the pairwise sum
/// `Σ d_i G(·; a_i)`, over nodes at least `8h` from every vortex. Zero up to
/// solver tolerance for Riemannian structures.
pub fn superposition_defect(solver: &GreenSolver, config: &VortexConfiguration) -> Result<f64> {
    config.validate()?;
    let sources: Vec<(Vec2, f64)> = config.positions.iter().zip(&config.degrees).map(|(&p, &d)| (p, d as f64)).collect();
    let joint = solver.solve_combination(&sources)?;
    let fields = solver.fields(&config.positions)?;
    let grid = solver.grid();
    let far = 8.0 * grid.h();
    let mut gap: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for idx in 0..grid.n() * grid.n() {
        let x = grid.node(idx);
        if config.positions.iter().any(|&p| wrap(x - p).norm() < far) {
            continue;
        }
        let sum: f64 = fields.iter().zip(&config.degrees).map(|(f, &d)| d as f64 * f.values.values[idx]).sum();
        gap = gap.max((joint.values.values[idx] - sum).abs());
        scale = scale.max(sum.abs());
    }
    Ok(if scale > 0.0 { gap / scale } else { gap })
}
