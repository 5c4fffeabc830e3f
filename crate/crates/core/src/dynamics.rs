//! Gradient flow `ȧ_i = −𝓛_{a_i}(∂_{a_i} W_F)` of vortex positions.
//!
//! The integrator is an explicit Heun scheme with an embedded Euler error
//! estimate. A step is halved when the estimate exceeds the tolerance or when
//! the energy fails to decrease, so every accepted step lowers `W_F`. Errors
//! are measured in units of the torus period.

use serde::{Deserialize, Serialize};

use crate::energy::{check_first_order_inputs, euclidean_gradient, renormalized_energy, VortexConfiguration};
use crate::error::{Error, Result};
use crate::field::TINY_COVECTOR;
use crate::geometry::{wrap, FinslerStructure, Vec2};
use crate::green::{GreenSolver, CORE_MULTIPLE};

/// Default local error tolerance per step.
pub const FLOW_RTOL: f64 = 1e-6;
/// Steps below this size abort the run.
pub const MIN_STEP: f64 = 1e-12;
/// Velocities below this are treated as rest.
pub const REST_SPEED: f64 = 1e-8;
/// Cached kernels kept by [`GreenFlow`] before it trims the cache.
pub const FLOW_CACHE_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityLaw {
    /// `−𝓛(ξ)`, the Finsler gradient.
    LegendreGradient,
    /// `−T_F(ξ)⁻¹ ξ`.
    InverseResponse,
    /// `−(T_F(ξ) + A_β) ξ`.
    AdditiveMobility,
}

impl MobilityLaw {
    pub const ALL: [MobilityLaw; 3] =
        [MobilityLaw::LegendreGradient, MobilityLaw::InverseResponse, MobilityLaw::AdditiveMobility];
}

/// Velocity of a vortex at `x` whose energy covector is `xi`.
pub fn law_velocity(structure: &FinslerStructure, x: Vec2, xi: Vec2, law: MobilityLaw) -> Result<Vec2> {
    if xi.norm() < TINY_COVECTOR {
        return Ok(Vec2::zeros());
    }
    Ok(match law {
        MobilityLaw::LegendreGradient => -structure.legendre_map(x, xi)?,
        MobilityLaw::InverseResponse => -(structure.mobility_inverse(x, xi)? * xi),
        MobilityLaw::AdditiveMobility => -(structure.mobility_additive(x, xi)? * xi),
    })
}

/// Energy covectors, velocities and dual norms of the covectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub covectors: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub norms: Vec<f64>,
}

impl Velocity {
    /// `dW/dt = Σ ⟨∂W, ȧ⟩`.
    pub fn rate(&self) -> f64 {
        self.covectors.iter().zip(&self.velocities).map(|(x, v)| x.dot(v)).sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_norm(&self) -> f64 {
        self.norms.iter().copied().fold(0.0, f64::max)
    }
}

/// What the integrator needs from an energy model.
pub trait FlowModel: Sync {
    fn energy(&self, config: &VortexConfiguration) -> Result<f64>;
    fn velocity(&self, config: &VortexConfiguration) -> Result<Velocity>;
    /// Pairs at or below this distance end the run.
    fn collapse_distance(&self) -> f64;
    /// Hook run after every accepted step.
    fn accepted(&self) {}
}

/// Flow of `W_F` computed from the kernels of `solver`.
pub struct GreenFlow<'a> {
    pub solver: &'a GreenSolver,
    pub law: MobilityLaw,
}

impl<'a> GreenFlow<'a> {
    pub fn new(solver: &'a GreenSolver) -> Self {
        GreenFlow { solver, law: MobilityLaw::LegendreGradient }
    }
}

impl FlowModel for GreenFlow<'_> {
    fn energy(&self, config: &VortexConfiguration) -> Result<f64> {
        Ok(renormalized_energy(self.solver, config)?.w_f)
    }

    fn velocity(&self, config: &VortexConfiguration) -> Result<Velocity> {
        let structure = self.solver.grid().structure();
        let covectors = euclidean_gradient(self.solver, config)?;
        let mut velocities = Vec::with_capacity(covectors.len());
        let mut norms = Vec::with_capacity(covectors.len());
        for (&a, &xi) in config.positions.iter().zip(&covectors) {
            velocities.push(law_velocity(structure, a, xi, self.law)?);
            norms.push(structure.dual_norm(a, xi)?);
        }
        Ok(Velocity { covectors, velocities, norms })
    }

    fn collapse_distance(&self) -> f64 {
        CORE_MULTIPLE * self.solver.grid().h()
    }

    fn accepted(&self) {
        if self.solver.cached_count() > FLOW_CACHE_LIMIT {
            self.solver.clear_cache();
        }
    }
}

fn advance(config: &VortexConfiguration, v: &[Vec2], dt: f64) -> VortexConfiguration {
    config.displaced(v, dt)
}

fn midpoint(a: &VortexConfiguration, b: &VortexConfiguration) -> VortexConfiguration {
    let mut c = a.clone();
    c.positions.iter_mut().zip(&b.positions).for_each(|(p, q)| *p += 0.5 * wrap(q - *p));
    c
}

/// One fixed Heun step from `config` with initial velocity `v0`. Returns the
/// new configuration and the Heun/Euler gap.
pub fn heun_step<M: FlowModel>(
    model: &M,
    config: &VortexConfiguration,
    v0: &[Vec2],
    dt: f64,
    t: f64,
) -> Result<(VortexConfiguration, f64)> {
    let euler = advance(config, v0, dt);
    if euler.min_separation() <= model.collapse_distance() {
        return Err(Error::PairCollapse { t });
    }
    let k2 = model.velocity(&euler)?.velocities;
    let avg: Vec<Vec2> = v0.iter().zip(&k2).map(|(a, b)| 0.5 * (a + b)).collect();
    let error = v0.iter().zip(&k2).map(|(a, b)| 0.5 * dt * (b - a).norm()).fold(0.0, f64::max);
    Ok((advance(config, &avg, dt), error))
}

/// An accepted adaptive step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowStep {
    pub config: VortexConfiguration,
    pub dt: f64,
    pub dt_next: f64,
    pub rejected: usize,
    pub error: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

/// Adaptive step from a state whose velocity and energy are known.
fn adaptive_step<M: FlowModel>(
    model: &M,
    config: &VortexConfiguration,
    v0: &Velocity,
    w0: f64,
    t: f64,
    dt: f64,
    rtol: f64,
) -> Result<FlowStep> {
    let speed = v0.max_speed();
    if speed < REST_SPEED {
        return Ok(FlowStep {
            config: config.clone(),
            dt,
            dt_next: dt,
            rejected: 0,
            error: 0.0,
            energy_before: w0,
            energy_after: w0,
        });
    }
    // a collapse is only believed once the step moves less than a sixteenth of the threshold
    let resolved = |dt: f64| dt * speed <= model.collapse_distance() / 16.0;
    let mut dt = dt;
    let mut rejected = 0;
    loop {
        if dt < MIN_STEP {
            return Err(Error::StepUnderflow(dt));
        }
        let (next, error) = match heun_step(model, config, &v0.velocities, dt, t) {
            Err(Error::PairCollapse { .. }) if !resolved(dt) => {
                dt *= 0.5;
                rejected += 1;
                continue;
            }
            r => r?,
        };
        if error > rtol {
            dt *= 0.5;
            rejected += 1;
            continue;
        }
        if next.min_separation() <= model.collapse_distance() {
            if resolved(dt) {
                return Err(Error::PairCollapse { t: t + dt });
            }
            dt *= 0.5;
            rejected += 1;
            continue;
        }
        let w1 = model.energy(&next)?;
        if w1 >= w0 {
            dt *= 0.5;
            rejected += 1;
            continue;
        }
        let grow = if error > 0.0 { (0.9 * (rtol / error).sqrt()).clamp(0.2, 2.0) } else { 2.0 };
        return Ok(FlowStep { config: next, dt, dt_next: dt * grow, rejected, error, energy_before: w0, energy_after: w1 });
    }
}

/// One accepted adaptive step starting from trial size `dt` at time `t`.
pub fn flow_step<M: FlowModel>(model: &M, config: &VortexConfiguration, t: f64, dt: f64, rtol: f64) -> Result<FlowStep> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfiguration(format!("time step {dt} must be positive")));
    }
    config.validate()?;
    let v0 = model.velocity(config)?;
    let w0 = model.energy(config)?;
    adaptive_step(model, config, &v0, w0, t, dt, rtol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientBelowTol,
    MaxTime,
    PairCollapse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowOptions {
    pub t_max: f64,
    /// Stop once every gradient has dual norm at most this.
    pub grad_tol: f64,
    pub rtol: f64,
    pub initial_dt: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { t_max: 0.1, grad_tol: 1e-6, rtol: FLOW_RTOL, initial_dt: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub dt: f64,
    pub rejected: usize,
    pub error: f64,
    /// Largest gradient dual norm at the start of the step.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<VortexConfiguration>,
    pub energies: Vec<f64>,
    /// Gradient dual norm of every vortex at each stored state.
    pub grad_norms: Vec<Vec<f64>>,
    /// `(W(t + Δt) − W(t)) / Δt` per accepted step.
    pub dissipation_lhs: Vec<f64>,
    /// `Σ ⟨∂W, ȧ⟩` at the step midpoint.
    pub dissipation_rhs: Vec<f64>,
    pub steps: Vec<StepDiagnostics>,
    pub termination: Termination,
}

impl FlowTrajectory {
    pub fn final_state(&self) -> &VortexConfiguration {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Integrates until every gradient is below `grad_tol`, `t_max` is reached, or
/// a pair collapses.
pub fn run_flow<M: FlowModel>(model: &M, config: &VortexConfiguration, options: &FlowOptions) -> Result<FlowTrajectory> {
    config.validate()?;
    let mut current = config.clone();
    let mut v = model.velocity(&current)?;
    let mut w = model.energy(&current)?;
    let mut traj = FlowTrajectory {
        times: vec![0.0],
        states: vec![current.clone()],
        energies: vec![w],
        grad_norms: vec![v.norms.clone()],
        dissipation_lhs: vec![],
        dissipation_rhs: vec![],
        steps: vec![],
        termination: Termination::MaxTime,
    };
    let mut t = 0.0;
    let mut dt = options.initial_dt;
    loop {
        let grad_norm = v.max_norm();
        if grad_norm <= options.grad_tol {
            traj.termination = Termination::GradientBelowTol;
            break;
        }
        let remaining = options.t_max - t;
        if remaining <= 1e-12 * options.t_max.max(1.0) {
            traj.termination = Termination::MaxTime;
            break;
        }
        let step = match adaptive_step(model, &current, &v, w, t, dt.min(remaining), options.rtol) {
            Err(Error::PairCollapse { .. }) => {
                traj.termination = Termination::PairCollapse;
                break;
            }
            r => r?,
        };
        if step.energy_after == step.energy_before {
            // at rest: nothing more will happen
            traj.termination = Termination::GradientBelowTol;
            break;
        }
        let rate = model.velocity(&midpoint(&current, &step.config))?.rate();
        t += step.dt;
        current = step.config;
        w = step.energy_after;
        v = model.velocity(&current)?;
        traj.dissipation_lhs.push((step.energy_after - step.energy_before) / step.dt);
        traj.dissipation_rhs.push(rate);
        traj.steps.push(StepDiagnostics { dt: step.dt, rejected: step.rejected, error: step.error, grad_norm });
        traj.times.push(t);
        traj.states.push(current.clone());
        traj.energies.push(w);
        traj.grad_norms.push(v.norms.clone());
        // a step shortened only to land on t_max says nothing about the next size
        if !(remaining < dt && step.rejected == 0) {
            dt = step.dt_next;
        }
        model.accepted();
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DissipationRow {
    pub t: f64,
    pub dt: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs − rhs| / |rhs|`, zero when both sides vanish.
    pub defect: f64,
}

fn relative_defect(lhs: f64, rhs: f64) -> f64 {
    let gap = (lhs - rhs).abs();
    if gap == 0.0 {
        0.0
    } else {
        gap / rhs.abs().max(f64::MIN_POSITIVE)
    }
}

/// Per-step comparison of the secant energy slope with the midpoint rate.
pub fn dissipation_check(traj: &FlowTrajectory) -> Vec<DissipationRow> {
    traj.steps
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (lhs, rhs) = (traj.dissipation_lhs[k], traj.dissipation_rhs[k]);
            DissipationRow { t: traj.times[k], dt: s.dt, lhs, rhs, defect: relative_defect(lhs, rhs) }
        })
        .collect()
}

/// Dissipation defect of a single fixed Heun step of size `dt`.
pub fn step_dissipation<M: FlowModel>(model: &M, config: &VortexConfiguration, dt: f64) -> Result<DissipationRow> {
    let v0 = model.velocity(config)?;
    let (next, _) = heun_step(model, config, &v0.velocities, dt, 0.0)?;
    let lhs = (model.energy(&next)? - model.energy(config)?) / dt;
    let rhs = model.velocity(&midpoint(config, &next))?.rate();
    Ok(DissipationRow { t: 0.0, dt, lhs, rhs, defect: relative_defect(lhs, rhs) })
}

/// Velocity of vortex `i` under `law`.
pub fn mobility_velocity(
    solver: &GreenSolver,
    config: &VortexConfiguration,
    i: usize,
    law: MobilityLaw,
) -> Result<Vec2> {
    let g = euclidean_gradient(solver, config)?;
    law_velocity(solver.grid().structure(), config.positions[i], g[i], law)
}

/// All three laws side by side, one entry per vortex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MobilityComparison {
    pub legendre: Vec<Vec2>,
    pub inverse: Vec<Vec2>,
    pub additive: Vec<Vec2>,
}

pub fn mobility_comparison(solver: &GreenSolver, config: &VortexConfiguration) -> Result<MobilityComparison> {
    let g = euclidean_gradient(solver, config)?;
    let s = solver.grid().structure();
    let per_law = |law| -> Result<Vec<Vec2>> {
        config.positions.iter().zip(&g).map(|(&a, &xi)| law_velocity(s, a, xi, law)).collect()
    };
    Ok(MobilityComparison {
        legendre: per_law(MobilityLaw::LegendreGradient)?,
        inverse: per_law(MobilityLaw::InverseResponse)?,
        additive: per_law(MobilityLaw::AdditiveMobility)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftTerm {
    /// `−∇_α W_α`.
    pub isotropic: Vec2,
    /// `A_β ∇_α W_α`.
    pub transverse: Vec2,
    pub predicted: Vec2,
    /// Randers velocity `−𝓛(∂W_F)`.
    pub measured: Vec2,
    /// `S_β(∂W_α) ∂W_α`, the symmetric first-order correction.
    pub symmetric_correction: Vec2,
    /// `|measured − predicted|`.
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub terms: Vec<DriftTerm>,
    pub max_defect: f64,
    pub max_transverse: f64,
    pub max_symmetric_correction: f64,
}

/// Splits the Randers velocity into the α-flow and the antisymmetric drift.
/// `alpha_solver` must carry the α part of the structure of `solver`.
pub fn drift_decomposition(
    solver: &GreenSolver,
    alpha_solver: &GreenSolver,
    config: &VortexConfiguration,
) -> Result<DriftReport> {
    let structure = solver.grid().structure();
    check_first_order_inputs(structure, alpha_solver)?;
    let g_alpha = euclidean_gradient(alpha_solver, config)?;
    let g = euclidean_gradient(solver, config)?;
    let mut terms = Vec::with_capacity(config.len());
    for (i, &a) in config.positions.iter().enumerate() {
        let l = structure.local(a);
        let grad_alpha = l.a_inv * g_alpha[i];
        let isotropic = -grad_alpha;
        let transverse = structure.a_beta(a) * grad_alpha;
        let predicted = isotropic + transverse;
        let measured = law_velocity(structure, a, g[i], MobilityLaw::LegendreGradient)?;
        let symmetric_correction =
            if g_alpha[i].norm() < TINY_COVECTOR { Vec2::zeros() } else { l.s_beta(g_alpha[i])? * g_alpha[i] };
        terms.push(DriftTerm {
            isotropic,
            transverse,
            predicted,
            measured,
            symmetric_correction,
            defect: (measured - predicted).norm(),
        });
    }
    let max = |f: fn(&DriftTerm) -> f64| terms.iter().map(f).fold(0.0, f64::max);
    Ok(DriftReport {
        max_defect: max(|t| t.defect),
        max_transverse: max(|t| t.transverse.norm()),
        max_symmetric_correction: max(|t| t.symmetric_correction.norm()),
        terms,
    })
}
