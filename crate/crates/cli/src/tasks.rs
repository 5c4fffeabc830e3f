//! Task pipelines. Each returns its headline numbers as JSON and its CSV
//! artifacts as strings; nothing here touches the filesystem.

use std::sync::Arc;

use finsler_vortex::dynamics::{dissipation_check, drift_decomposition, run_flow, FlowOptions, GreenFlow};
use finsler_vortex::energy::{
    energy_report, equilibrium_residual, euclidean_gradient, hessian_wf, EnergyReport, VortexConfiguration,
};
use finsler_vortex::field::TorusGrid;
use finsler_vortex::geometry::{wrap, FinslerStructure, Mat2, Vec2};
use finsler_vortex::green::GreenSolver;
use finsler_vortex::stability::{expansion_remainders, quadratic_forms, stability_spectrum};
use finsler_vortex_oracle as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::scenario::{Scenario, ScenarioError, Task};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] finsler_vortex::Error),
    #[error("oracle failure: {0}")]
    Oracle(#[from] oracle::OracleError),
}

/// A named CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub results: Value,
    pub artifacts: Vec<Artifact>,
}

/// Builds a CSV table in memory.
struct Table {
    out: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Table {
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(header).expect("in-memory write");
        Table { out }
    }

    fn row(&mut self, fields: &[String]) {
        self.out.write_record(fields).expect("in-memory write");
    }

    fn finish(self, name: &str) -> Artifact {
        let bytes = self.out.into_inner().expect("in-memory flush");
        Artifact { name: name.into(), contents: String::from_utf8(bytes).expect("csv is utf-8") }
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn solver(structure: FinslerStructure, n: usize) -> Result<GreenSolver, RunError> {
    Ok(GreenSolver::new(Arc::new(TorusGrid::new(structure, n)?)))
}

fn vec_json(v: &[Vec2]) -> Value {
    json!(v.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>())
}

fn random_displacement(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec2> {
    (0..n).map(|_| Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

/// Removes `Σ d_i v_i` so the displacement is admissible.
fn make_admissible(v: &mut [Vec2], config: &VortexConfiguration) {
    let d: Vec<f64> = config.degrees.iter().map(|&d| d as f64).collect();
    let total: Vec2 = v.iter().zip(&d).map(|(vi, di)| *di * vi).sum();
    let norm: f64 = d.iter().map(|x| x * x).sum();
    v.iter_mut().zip(&d).for_each(|(vi, di)| *vi -= (*di / norm) * total);
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, RunError> {
    let structure = scenario.structure()?;
    let config = scenario.configuration()?;
    match &scenario.task {
        Task::Energy => energy_task(structure, scenario.grid.n, &config),
        Task::Stability { t_list, probes } => {
            stability_task(structure, scenario.grid.n, &config, t_list, *probes, scenario.seed)
        }
        Task::Flow { t_max, grad_tol, rtol, initial_dt, law } => {
            let options = FlowOptions { t_max: *t_max, grad_tol: *grad_tol, rtol: *rtol, initial_dt: *initial_dt };
            flow_task(structure, scenario.grid.n, &config, &options, *law)
        }
        Task::RandersDrift { ladder } => drift_task(scenario, &config, ladder),
        Task::Convergence { grids, min_separation } => convergence_task(&config, grids, *min_separation),
    }
}

fn energy_json(sv: &GreenSolver, config: &VortexConfiguration, report: &EnergyReport) -> Result<Value, RunError> {
    let eq = equilibrium_residual(sv, config)?;
    let warnings = config.separation_warnings(sv.grid().structure());
    Ok(json!({
        "w_f": report.w_f,
        "predicted_total_energy": report.predicted_total,
        "finsler_gradient": vec_json(&report.gradient),
        "euclidean_gradient": vec_json(&report.euclidean_gradient),
        "hessian": report.hessian,
        "hessian_asymmetry": report.hessian_asymmetry,
        "equilibrium_residuals": eq.residuals,
        "max_equilibrium_residual": eq.residuals.iter().cloned().fold(0.0, f64::max),
        "equilibrium_tolerance": eq.tolerance,
        "at_equilibrium": eq.at_equilibrium,
        "self_terms": report.selves,
        "separation_warnings": warnings,
    }))
}

fn pairs_csv(report: &EnergyReport, config: &VortexConfiguration) -> Artifact {
    let mut t = Table::new(&["i", "j", "G_ij", "contribution"]);
    for p in &report.pairs {
        let dd = std::f64::consts::PI * (config.degrees[p.i] * config.degrees[p.j]) as f64;
        t.row(&[p.i.to_string(), p.j.to_string(), num(p.g_ij), num(dd * p.g_ij)]);
        t.row(&[p.j.to_string(), p.i.to_string(), num(p.g_ji), num(dd * p.g_ji)]);
    }
    t.finish("pairs.csv")
}

fn energy_task(structure: FinslerStructure, n: usize, config: &VortexConfiguration) -> Result<RunOutput, RunError> {
    let sv = solver(structure, n)?;
    let report = energy_report(&sv, config)?;
    Ok(RunOutput { results: energy_json(&sv, config, &report)?, artifacts: vec![pairs_csv(&report, config)] })
}

fn stability_task(
    structure: FinslerStructure,
    n: usize,
    config: &VortexConfiguration,
    t_list: &[f64],
    probes: usize,
    seed: u64,
) -> Result<RunOutput, RunError> {
    let sv = solver(structure, n)?;
    let report = energy_report(&sv, config)?;
    let mut results = energy_json(&sv, config, &report)?;
    let h = hessian_wf(&sv, config)?;
    let spectrum = stability_spectrum(&sv, config, &h.matrix)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut expansion = Vec::new();
    for _ in 0..probes {
        let v = random_displacement(&mut rng, config.len());
        let e = expansion_remainders(&sv, config, &h.matrix, &v, t_list)?;
        expansion.push(json!({ "displacement": vec_json(&v), "order": e.order, "remainders": e.remainders }));
    }
    results["stability"] = json!({
        "eigenvalues": spectrum.eigenvalues,
        "zero_mode_count": spectrum.zero_mode_count,
        "stable": spectrum.stable,
        "tol_zero": spectrum.tol_zero,
        "reconstruction_error": spectrum.reconstruction_error,
        "orthonormality_error": spectrum.orthonormality_error,
        "expansion": expansion,
    });
    let mut t = Table::new(&["k", "lambda"]);
    for (k, l) in spectrum.eigenvalues.iter().enumerate() {
        t.row(&[k.to_string(), num(*l)]);
    }
    Ok(RunOutput { results, artifacts: vec![pairs_csv(&report, config), t.finish("spectrum.csv")] })
}

fn flow_task(
    structure: FinslerStructure,
    n: usize,
    config: &VortexConfiguration,
    options: &FlowOptions,
    law: finsler_vortex::dynamics::MobilityLaw,
) -> Result<RunOutput, RunError> {
    let sv = solver(structure, n)?;
    let model = GreenFlow { solver: &sv, law };
    let traj = run_flow(&model, config, options)?;
    let mut t = Table::new(&["t", "i", "x1", "x2", "d", "W", "grad_norm", "diss_lhs", "diss_rhs"]);
    for (k, state) in traj.states.iter().enumerate() {
        let (lhs, rhs) = match k {
            0 => (String::new(), String::new()),
            _ => (num(traj.dissipation_lhs[k - 1]), num(traj.dissipation_rhs[k - 1])),
        };
        for (i, p) in state.positions.iter().enumerate() {
            t.row(&[
                num(traj.times[k]),
                i.to_string(),
                num(p.x),
                num(p.y),
                state.degrees[i].to_string(),
                num(traj.energies[k]),
                num(traj.grad_norms[k][i]),
                lhs.clone(),
                rhs.clone(),
            ]);
        }
    }
    let rows = dissipation_check(&traj);
    let defects: Vec<f64> = rows.iter().map(|r| r.defect).collect();
    let integrated: f64 = rows.iter().map(|r| r.dt * r.rhs).sum();
    let drop = traj.energies.last().unwrap() - traj.energies[0];
    let results = json!({
        "termination": traj.termination,
        "accepted_steps": traj.steps.len(),
        "rejected_steps": traj.steps.iter().map(|s| s.rejected).sum::<usize>(),
        "final_time": traj.times.last(),
        "initial_energy": traj.energies[0],
        "final_energy": traj.energies.last(),
        "energy_strictly_decreasing": traj.energies.windows(2).all(|w| w[1] < w[0]),
        "final_positions": vec_json(&traj.final_state().positions),
        "final_max_gradient_norm": traj.grad_norms.last().map(|g| g.iter().cloned().fold(0.0, f64::max)),
        "max_dissipation_defect": defects.iter().cloned().fold(0.0, f64::max),
        "mean_dissipation_defect": if defects.is_empty() { 0.0 } else { defects.iter().sum::<f64>() / defects.len() as f64 },
        "energy_drop": drop,
        "integrated_dissipation": integrated,
    });
    Ok(RunOutput { results, artifacts: vec![t.finish("flow.csv")] })
}

/// `max_i |T_F(a_i, ξ_i) − (a⁻¹ − S_β(ξ_i))|` over the vortex covectors.
fn response_defect(structure: &FinslerStructure, config: &VortexConfiguration, xi: &[Vec2]) -> Result<f64, RunError> {
    let mut worst: f64 = 0.0;
    for (&a, &x) in config.positions.iter().zip(xi) {
        let exact: Mat2 = structure.hessian_tensor(a, x)?;
        let first = structure.randers_first_order(a, x)?.t_first_order;
        worst = worst.max((exact - first).norm());
    }
    Ok(worst)
}

fn fit(ladder: &[f64], defects: &[f64]) -> Value {
    let pairs: Vec<(f64, f64)> = ladder.iter().cloned().zip(defects.iter().cloned()).collect();
    match oracle::order_fit(&pairs) {
        Ok(p) => json!(p),
        Err(e) => json!(e.to_string()),
    }
}

fn drift_task(scenario: &Scenario, config: &VortexConfiguration, ladder: &[f64]) -> Result<RunOutput, RunError> {
    let n = scenario.grid.n;
    let alpha = scenario.structure()?.alpha_part();
    let alpha_solver = solver(alpha, n)?;
    let xi_alpha = euclidean_gradient(&alpha_solver, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut v = random_displacement(&mut rng, config.len());
    make_admissible(&mut v, config);

    let mut drift = Table::new(&[
        "b",
        "i",
        "isotropic_x",
        "isotropic_y",
        "transverse_x",
        "transverse_y",
        "predicted_x",
        "predicted_y",
        "measured_x",
        "measured_y",
        "symmetric_x",
        "symmetric_y",
        "defect",
    ]);
    let mut ladder_csv = Table::new(&["b", "response_defect", "elasticity_defect", "drift_defect"]);
    let (mut tf, mut el, mut dr) = (Vec::new(), Vec::new(), Vec::new());
    for &b in ladder {
        let structure = scenario.structure.with_beta_magnitude(b)?.build()?;
        let sv = solver(structure, n)?;
        let report = drift_decomposition(&sv, &alpha_solver, config)?;
        for (i, t) in report.terms.iter().enumerate() {
            let mut row = vec![num(b), i.to_string()];
            for w in [t.isotropic, t.transverse, t.predicted, t.measured, t.symmetric_correction] {
                row.push(num(w.x));
                row.push(num(w.y));
            }
            row.push(num(t.defect));
            drift.row(&row);
        }
        let q = quadratic_forms(&sv, config, &v)?;
        let r = response_defect(&structure, config, &xi_alpha)?;
        let e = (q.first_order_elasticity - q.second_variation).abs();
        ladder_csv.row(&[num(b), num(r), num(e), num(report.max_defect)]);
        tf.push(r);
        el.push(e);
        dr.push(report.max_defect);
    }
    let results = json!({
        "ladder": ladder,
        "elasticity_displacement": vec_json(&v),
        "response_defects": tf,
        "elasticity_defects": el,
        "drift_defects": dr,
        "response_order": fit(ladder, &tf),
        "elasticity_order": fit(ladder, &el),
        "drift_order": fit(ladder, &dr),
    });
    Ok(RunOutput { results, artifacts: vec![drift.finish("drift.csv"), ladder_csv.finish("ladder.csv")] })
}

/// Largest deviation of the identity-structure kernel from the lattice sum,
/// over nodes at least `min_separation` from the source.
pub fn oracle_kernel_error(sv: &GreenSolver, y: Vec2, min_separation: f64) -> Result<f64, RunError> {
    let f = sv.field(y)?;
    let grid = sv.grid();
    let mut worst: f64 = 0.0;
    for idx in 0..grid.n() * grid.n() {
        let x = grid.node(idx);
        let r = wrap(x - y).norm();
        if r < min_separation {
            continue;
        }
        let want = oracle::iso_green([x.x, x.y], [y.x, y.y], oracle::terms_for_separation(r, oracle::K_VALUES))?;
        worst = worst.max((f.values.values[idx] - want).abs());
    }
    Ok(worst)
}

fn convergence_task(config: &VortexConfiguration, grids: &[usize], min_separation: f64) -> Result<RunOutput, RunError> {
    let y = config.positions[0];
    let mut t = Table::new(&["n", "h", "green_error", "regular_part", "w_f"]);
    let mut pairs = Vec::new();
    let mut rows = Vec::new();
    for &n in grids {
        let sv = solver(FinslerStructure::identity(), n)?;
        let err = oracle_kernel_error(&sv, y, min_separation)?;
        let (h_reg, _) = sv.regular_value(y)?;
        let w = finsler_vortex::energy::renormalized_energy(&sv, config)?.w_f;
        let h = sv.grid().h();
        t.row(&[n.to_string(), num(h), num(err), num(h_reg), num(w)]);
        pairs.push((h, err));
        rows.push(json!({ "n": n, "green_error": err, "regular_part": h_reg, "w_f": w }));
    }
    let order = oracle::order_fit(&pairs)?;
    let results = json!({
        "grids": rows,
        "green_order": order,
        "oracle_regular_part": oracle::iso_regular_part(oracle::K_VALUES),
    });
    Ok(RunOutput { results, artifacts: vec![t.finish("convergence.csv")] })
}
