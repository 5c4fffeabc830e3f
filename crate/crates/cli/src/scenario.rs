//! Scenario documents: JSON schema, defaults and validation.
//!
//! Every field has an explicit default, and the parsed scenario serializes
//! with all of them filled in, so the echo in `summary.json` re-parses to the
//! same value.

use std::collections::BTreeMap;

use finsler_vortex::dynamics::{MobilityLaw, FLOW_RTOL};
use finsler_vortex::energy::VortexConfiguration;
use finsler_vortex::geometry::{AlphaField, BetaField, FinslerStructure, Kind, MeasureKind, Vec2};
use finsler_vortex::stability::EXPANSION_STEPS;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Identity,
    Diagonal,
    Modulated,
    #[serde(alias = "constant-randers")]
    ConstantRanders,
    #[serde(alias = "shear-randers")]
    ShearRanders,
}

impl Preset {
    pub const ALL: [Preset; 5] =
        [Preset::Identity, Preset::Diagonal, Preset::Modulated, Preset::ConstantRanders, Preset::ShearRanders];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Identity => "identity",
            Preset::Diagonal => "diagonal",
            Preset::Modulated => "modulated",
            Preset::ConstantRanders => "constant_randers",
            Preset::ShearRanders => "shear_randers",
        }
    }

    /// Parameter names with their defaults.
    pub fn parameters(self) -> &'static [(&'static str, f64)] {
        match self {
            Preset::Identity => &[],
            Preset::Diagonal => &[("l1", 4.0), ("l2", 1.0)],
            Preset::Modulated => &[("amp", 0.3)],
            Preset::ConstantRanders => &[("b1", 0.2), ("b2", 0.0)],
            Preset::ShearRanders => &[("kappa", 0.2)],
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::Identity => "Euclidean metric",
            Preset::Diagonal => "constant Riemannian metric diag(l1, l2)",
            Preset::Modulated => "Riemannian diag(1 + amp cos 2πy, 1 + amp cos 2πx)",
            Preset::ConstantRanders => "Euclidean α with constant one-form b = (b1, b2)",
            Preset::ShearRanders => "Euclidean α with periodic shear b = (0, κ sin(2πx)/2π)",
        }
    }

    pub fn is_randers(self) -> bool {
        matches!(self, Preset::ConstantRanders | Preset::ShearRanders)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub preset: Preset,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default = "default_measure")]
    pub measure: MeasureKind,
}

fn default_measure() -> MeasureKind {
    MeasureKind::HolmesThompson
}

impl StructureSpec {
    fn fill_defaults(&mut self) -> Result<(), ScenarioError> {
        let known = self.preset.parameters();
        if let Some(k) = self.params.keys().find(|k| !known.iter().any(|(n, _)| n == k)) {
            return Err(invalid(format!("preset {} has no parameter {k:?}", self.preset.name())));
        }
        for &(name, value) in known {
            self.params.entry(name.to_string()).or_insert(value);
        }
        Ok(())
    }

    fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    pub fn build(&self) -> Result<FinslerStructure, ScenarioError> {
        let (kind, alpha, beta) = match self.preset {
            Preset::Identity => (Kind::Riemannian, AlphaField::Identity, BetaField::Zero),
            Preset::Diagonal => (
                Kind::Riemannian,
                AlphaField::Diagonal { l1: self.param("l1"), l2: self.param("l2") },
                BetaField::Zero,
            ),
            Preset::Modulated => (Kind::Riemannian, AlphaField::Modulated { amp: self.param("amp") }, BetaField::Zero),
            Preset::ConstantRanders => (
                Kind::Randers,
                AlphaField::Identity,
                BetaField::Constant { b1: self.param("b1"), b2: self.param("b2") },
            ),
            Preset::ShearRanders => {
                (Kind::Randers, AlphaField::Identity, BetaField::Shear { kappa: self.param("kappa") })
            }
        };
        FinslerStructure::new(kind, alpha, beta, self.measure).map_err(|e| invalid(format!("structure: {e}")))
    }

    /// The same preset with one-form magnitude `b`.
    pub fn with_beta_magnitude(&self, b: f64) -> Result<StructureSpec, ScenarioError> {
        let mut s = self.clone();
        match self.preset {
            Preset::ConstantRanders => {
                let (b1, b2) = (self.param("b1"), self.param("b2"));
                let norm = b1.hypot(b2);
                let (u1, u2) = if norm > 0.0 { (b1 / norm, b2 / norm) } else { (1.0, 0.0) };
                s.params.insert("b1".into(), b * u1);
                s.params.insert("b2".into(), b * u2);
            }
            Preset::ShearRanders => {
                s.params.insert("kappa".into(), b);
            }
            _ => return Err(invalid(format!("preset {} has no one-form", self.preset.name()))),
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_n")]
    pub n: usize,
}

fn default_n() -> usize {
    128
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n: default_n() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VortexSpec {
    pub positions: Vec<[f64; 2]>,
    pub degrees: Vec<i32>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_alpha")]
    pub separation_exponent: f64,
    #[serde(default = "default_c")]
    pub separation_constant: f64,
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_alpha() -> f64 {
    0.5
}
fn default_c() -> f64 {
    1.0
}

impl VortexSpec {
    pub fn configuration(&self) -> Result<VortexConfiguration, ScenarioError> {
        let positions = self.positions.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        VortexConfiguration::with_core(
            positions,
            self.degrees.clone(),
            self.epsilon,
            self.separation_exponent,
            self.separation_constant,
        )
        .map_err(|e| invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Energy,
    Stability {
        #[serde(default = "default_t_list")]
        t_list: Vec<f64>,
        /// Random displacements probed by the expansion check.
        #[serde(default = "default_probes")]
        probes: usize,
    },
    Flow {
        #[serde(default = "default_t_max")]
        t_max: f64,
        #[serde(default = "default_grad_tol")]
        grad_tol: f64,
        #[serde(default = "default_rtol")]
        rtol: f64,
        #[serde(default = "default_initial_dt")]
        initial_dt: f64,
        #[serde(default = "default_law")]
        law: MobilityLaw,
    },
    RandersDrift {
        #[serde(default = "default_ladder")]
        ladder: Vec<f64>,
    },
    Convergence {
        #[serde(default = "default_grids")]
        grids: Vec<usize>,
        /// Nodes closer than this to the source are left out of the error.
        #[serde(default = "default_min_separation")]
        min_separation: f64,
    },
}

fn default_t_list() -> Vec<f64> {
    EXPANSION_STEPS.to_vec()
}
fn default_probes() -> usize {
    3
}
fn default_t_max() -> f64 {
    0.1
}
fn default_grad_tol() -> f64 {
    1e-6
}
fn default_rtol() -> f64 {
    FLOW_RTOL
}
fn default_initial_dt() -> f64 {
    1e-4
}
fn default_law() -> MobilityLaw {
    MobilityLaw::LegendreGradient
}
fn default_ladder() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}
fn default_grids() -> Vec<usize> {
    vec![32, 64, 128]
}
fn default_min_separation() -> f64 {
    0.125
}
fn default_task() -> Task {
    Task::Energy
}
fn default_version() -> u32 {
    SPEC_VERSION
}
fn default_output() -> String {
    "out".into()
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Energy => "energy",
            Task::Stability { .. } => "stability",
            Task::Flow { .. } => "flow",
            Task::RandersDrift { .. } => "randers_drift",
            Task::Convergence { .. } => "convergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_version", alias = "schema_version")]
    pub spec_version: u32,
    pub structure: StructureSpec,
    #[serde(default)]
    pub grid: GridSpec,
    pub vortices: VortexSpec,
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub seed: u64,
}

fn check_grid(n: usize) -> Result<(), ScenarioError> {
    if n < 16 || n % 2 != 0 {
        return Err(invalid(format!("grid size {n} must be even and at least 16")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<(), ScenarioError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid(format!("{name} = {v} must be positive")));
    }
    Ok(())
}

impl Scenario {
    /// Fills preset defaults and checks every invariant.
    pub fn validate(&mut self) -> Result<(), ScenarioError> {
        if self.spec_version != SPEC_VERSION {
            return Err(invalid(format!("spec_version {} is not supported (expected {SPEC_VERSION})", self.spec_version)));
        }
        self.structure.fill_defaults()?;
        self.structure.build()?;
        check_grid(self.grid.n)?;
        let v = &self.vortices;
        if v.positions.len() != v.degrees.len() {
            return Err(invalid(format!("{} positions but {} degrees", v.positions.len(), v.degrees.len())));
        }
        let total: i32 = v.degrees.iter().sum();
        if total != 0 {
            return Err(invalid(format!("degrees sum to {total}, expected 0")));
        }
        if !(v.epsilon > 0.0 && v.epsilon < 1.0) {
            return Err(invalid(format!("epsilon = {} must lie in (0, 1)", v.epsilon)));
        }
        v.configuration()?;
        match &self.task {
            Task::Energy => {}
            Task::Stability { t_list, .. } => {
                if t_list.len() < 2 {
                    return Err(invalid("t_list needs at least two steps"));
                }
                for &t in t_list {
                    check_positive("t_list entry", t)?;
                }
            }
            Task::Flow { t_max, grad_tol, rtol, initial_dt, .. } => {
                check_positive("t_max", *t_max)?;
                check_positive("grad_tol", *grad_tol)?;
                check_positive("rtol", *rtol)?;
                check_positive("initial_dt", *initial_dt)?;
            }
            Task::RandersDrift { ladder } => {
                if !self.structure.preset.is_randers() {
                    return Err(invalid(format!("randers_drift needs a Randers preset, got {}", self.structure.preset.name())));
                }
                if ladder.len() < 3 {
                    return Err(invalid("the b ladder needs at least three values"));
                }
                for &b in ladder {
                    if !(b > 0.0 && b <= 0.2) {
                        return Err(invalid(format!("ladder value {b} must lie in (0, 0.2]")));
                    }
                }
            }
            Task::Convergence { grids, min_separation } => {
                if self.structure.preset != Preset::Identity {
                    return Err(invalid("convergence compares against the Euclidean oracle and needs the identity preset"));
                }
                if grids.len() < 3 {
                    return Err(invalid("the grid ladder needs at least three sizes"));
                }
                for &n in grids {
                    check_grid(n)?;
                }
                check_positive("min_separation", *min_separation)?;
            }
        }
        Ok(())
    }

    pub fn structure(&self) -> Result<FinslerStructure, ScenarioError> {
        self.structure.build()
    }

    pub fn configuration(&self) -> Result<VortexConfiguration, ScenarioError> {
        self.vortices.configuration()
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let mut scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}
