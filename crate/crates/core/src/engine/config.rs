//! Scenario configuration: TOML schema, resolution, validation.
//!
//! A scenario file is a nested table document. Matrices accept either a
//! scalar (meaning scalar * identity) or explicit row lists; per-side
//! defaults can be overridden per agent. `validate` returns every
//! violation it can find rather than stopping at the first.

use crate::costs::{self, AltruismParams, CostWeights, WeightSet};
use crate::dynamics::{AgentModel, DynamicsError, ModelSet};
use crate::learning::SampleBox;
use crate::targeting::TargetingParams;
use crate::topology::{BiLayerTopology, CommGraph, CrossGraph};
use crate::{PlayerId, Side};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration:\n{}", violations.join("\n"))]
    Invalid { violations: Vec<String> },
    #[error("override error: {0}")]
    Override(String),
}

/// Scalar-times-identity or explicit rows.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn resolve(&self, dim: usize) -> Result<DMatrix<f64>, String> {
        match self {
            MatrixSpec::Scalar(s) => Ok(DMatrix::identity(dim, dim) * *s),
            MatrixSpec::Rows(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(format!("matrix must be {dim}x{dim}"));
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
            }
        }
    }

    /// Resolve possibly non-square rows, inferring shape.
    pub fn resolve_rect(&self, rows_hint: usize) -> Result<DMatrix<f64>, String> {
        match self {
            MatrixSpec::Scalar(s) => Ok(DMatrix::identity(rows_hint, rows_hint) * *s),
            MatrixSpec::Rows(rows) => {
                let r = rows.len();
                if r == 0 {
                    return Err("matrix has no rows".into());
                }
                let c = rows[0].len();
                if rows.iter().any(|row| row.len() != c) {
                    return Err("ragged matrix rows".into());
                }
                Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
            }
        }
    }
}

/// Uniform scalar or explicit list.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    List(Vec<f64>),
}

impl VectorSpec {
    pub fn resolve(&self, dim: usize) -> Result<DVector<f64>, String> {
        match self {
            VectorSpec::Scalar(s) => Ok(DVector::from_element(dim, *s)),
            VectorSpec::List(v) => {
                if v.len() != dim {
                    return Err(format!("vector must have {dim} entries"));
                }
                Ok(DVector::from_row_slice(v))
            }
        }
    }
}

/// Team graph: named preset with uniform weight, or explicit weights.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum GraphSpec {
    Preset { preset: String, #[serde(default = "one")] weight: f64 },
    Explicit { explicit: Vec<Vec<f64>> },
}

fn one() -> f64 {
    1.0
}

impl GraphSpec {
    fn resolve_team(&self, n: usize) -> Result<DMatrix<f64>, String> {
        match self {
            GraphSpec::Explicit { explicit } => {
                if explicit.len() != n || explicit.iter().any(|r| r.len() != n) {
                    return Err(format!("team graph must be {n}x{n}"));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| explicit[i][j]))
            }
            GraphSpec::Preset { preset, weight } => {
                let mut w = DMatrix::zeros(n, n);
                match preset.as_str() {
                    "complete" => {
                        w.fill(*weight);
                        w.fill_diagonal(0.0);
                    }
                    "ring" => {
                        for i in 0..n {
                            if n > 1 {
                                w[(i, (i + 1) % n)] = *weight;
                                w[(i, (i + n - 1) % n)] = *weight;
                            }
                        }
                    }
                    "star" => {
                        for i in 1..n {
                            w[(0, i)] = *weight;
                            w[(i, 0)] = *weight;
                        }
                    }
                    "empty" => {}
                    other => return Err(format!("unknown team graph preset {other:?}")),
                }
                Ok(w)
            }
        }
    }

    fn resolve_cross(&self, rows: usize, cols: usize) -> Result<DMatrix<f64>, String> {
        match self {
            GraphSpec::Explicit { explicit } => {
                if explicit.len() != rows || explicit.iter().any(|r| r.len() != cols) {
                    return Err(format!("cross graph must be {rows}x{cols}"));
                }
                Ok(DMatrix::from_fn(rows, cols, |i, j| explicit[i][j]))
            }
            GraphSpec::Preset { preset, weight } => match preset.as_str() {
                "complete" => Ok(DMatrix::from_element(rows, cols, *weight)),
                "empty" => Ok(DMatrix::zeros(rows, cols)),
                other => Err(format!("unknown cross graph preset {other:?}")),
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopologySpec {
    pub pursuer_graph: GraphSpec,
    pub evader_graph: GraphSpec,
    pub pe: GraphSpec,
    pub ep: GraphSpec,
}

/// Per-agent overrides of the side defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentOverride {
    pub index: usize,
    pub input_bound: Option<f64>,
    pub a_matrix: Option<MatrixSpec>,
    pub b_matrix: Option<MatrixSpec>,
    pub lambda_team: Option<MatrixSpec>,
    pub lambda_cross: Option<MatrixSpec>,
    pub r: Option<VectorSpec>,
    pub cross_q_team: Option<f64>,
    pub cross_q_opp: Option<f64>,
    pub terminal_scale: Option<f64>,
    pub mu: Option<f64>,
    pub eta: Option<f64>,
    pub gamma: Option<MatrixSpec>,
    pub rho: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideSpec {
    pub count: usize,
    pub state_dim: usize,
    #[serde(default = "zero_matrix")]
    pub a_matrix: MatrixSpec,
    #[serde(default = "identity_matrix")]
    pub b_matrix: MatrixSpec,
    pub input_bound: f64,
    /// Distances use this many leading state coordinates.
    pub position_dim: Option<usize>,
    #[serde(default = "identity_matrix")]
    pub lambda_team: MatrixSpec,
    #[serde(default = "identity_matrix")]
    pub lambda_cross: MatrixSpec,
    #[serde(default = "unit_vector")]
    pub r: VectorSpec,
    /// Cross-error weight against each teammate neighbor (sigma * I).
    #[serde(default)]
    pub cross_q_team: f64,
    /// Cross-error weight against each opponent neighbor (sigma * I).
    #[serde(default)]
    pub cross_q_opp: f64,
    #[serde(default = "one")]
    pub terminal_scale: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "zero_matrix")]
    pub gamma: MatrixSpec,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub overrides: Vec<AgentOverride>,
}

fn zero_matrix() -> MatrixSpec {
    MatrixSpec::Scalar(0.0)
}

fn identity_matrix() -> MatrixSpec {
    MatrixSpec::Scalar(1.0)
}

fn unit_vector() -> VectorSpec {
    VectorSpec::Scalar(1.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSpec {
    #[serde(default = "one")]
    pub critic_rate: f64,
    #[serde(default = "one")]
    pub actor_rate: f64,
    #[serde(default = "default_stabilizer")]
    pub stabilizer: f64,
    #[serde(default = "default_true")]
    pub include_neighbors: bool,
    /// Exploration noise amplitude as a fraction of each bound.
    #[serde(default = "default_exploration")]
    pub exploration_amplitude: f64,
    /// Noise decays linearly to zero at this fraction of the horizon.
    #[serde(default = "default_exploration_end")]
    pub exploration_end_frac: f64,
    /// Pseudo-horizon of the Riccati warm start.
    pub warm_start_horizon: Option<f64>,
}

impl Default for LearningSpec {
    fn default() -> Self {
        LearningSpec {
            critic_rate: 1.0,
            actor_rate: 1.0,
            stabilizer: default_stabilizer(),
            include_neighbors: true,
            exploration_amplitude: default_exploration(),
            exploration_end_frac: default_exploration_end(),
            warm_start_horizon: None,
        }
    }
}

fn default_stabilizer() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

fn default_exploration() -> f64 {
    0.05
}

fn default_exploration_end() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetingSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "one")]
    pub interval: f64,
    #[serde(default = "default_chi")]
    pub chi: f64,
    #[serde(default = "default_capture_radius")]
    pub capture_radius: f64,
    #[serde(default = "default_quadrature_step")]
    pub quadrature_step: f64,
}

impl Default for TargetingSpec {
    fn default() -> Self {
        TargetingSpec {
            enabled: false,
            interval: 1.0,
            chi: default_chi(),
            capture_radius: default_capture_radius(),
            quadrature_step: default_quadrature_step(),
        }
    }
}

fn default_chi() -> f64 {
    0.05
}

fn default_capture_radius() -> f64 {
    0.1
}

fn default_quadrature_step() -> f64 {
    0.01
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub pursuer_positions: Option<Vec<Vec<f64>>>,
    pub evader_positions: Option<Vec<Vec<f64>>>,
    pub pursuer_box: Option<BoxSpec>,
    pub evader_box: Option<BoxSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_pi_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_pi_iters")]
    pub max_iters: usize,
    /// Damping of the evaluation refit (1 = undamped).
    #[serde(default = "default_relaxation")]
    pub relaxation: f64,
    pub pursuer_box: Option<BoxSpec>,
    pub evader_box: Option<BoxSpec>,
}

impl Default for PiSpec {
    fn default() -> Self {
        PiSpec {
            samples: default_samples(),
            tolerance: default_pi_tolerance(),
            max_iters: default_pi_iters(),
            relaxation: default_relaxation(),
            pursuer_box: None,
            evader_box: None,
        }
    }
}

fn default_relaxation() -> f64 {
    1.0
}

fn default_samples() -> usize {
    1500
}

fn default_pi_tolerance() -> f64 {
    1e-3
}

fn default_pi_iters() -> usize {
    50
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Online,
    OfflinePi,
    FixedPolicy,
}

/// The whole scenario file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub seed: u64,
    pub mode: Mode,
    /// Horizon t_f, seconds.
    pub horizon: f64,
    /// Integration step h, seconds.
    pub step: f64,
    pub topology: TopologySpec,
    pub pursuers: SideSpec,
    pub evaders: SideSpec,
    #[serde(default)]
    pub learning: LearningSpec,
    #[serde(default)]
    pub targeting: TargetingSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub pi: PiSpec,
}

fn default_version() -> u32 {
    1
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides with dotted keys onto the parsed
    /// document, then re-deserializes.
    pub fn with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut value: toml::Value = toml::from_str(text)?;
        for (key, raw) in overrides {
            let parsed: toml::Value = match raw.parse::<i64>() {
                Ok(v) => toml::Value::Integer(v),
                Err(_) => match raw.parse::<f64>() {
                    Ok(v) => toml::Value::Float(v),
                    Err(_) => match raw.as_str() {
                        "true" => toml::Value::Boolean(true),
                        "false" => toml::Value::Boolean(false),
                        other => toml::Value::String(other.to_string()),
                    },
                },
            };
            let mut cursor = &mut value;
            let parts: Vec<&str> = key.split('.').collect();
            for part in &parts[..parts.len() - 1] {
                cursor = cursor
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Override(format!("{key}: not a table at {part}")))?
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
            cursor
                .as_table_mut()
                .ok_or_else(|| ConfigError::Override(format!("{key}: parent is not a table")))?
                .insert(parts[parts.len() - 1].to_string(), parsed);
        }
        Ok(value.try_into()?)
    }

    /// SHA-256 of the canonical serialized form.
    pub fn canonical_hash(&self) -> String {
        let canonical = toml::to_string(self).unwrap_or_default();
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything resolved into runtime types.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub topology: BiLayerTopology,
    pub models: ModelSet,
    pub weights: WeightSet,
    pub targeting: TargetingParams,
    pub targeting_enabled: bool,
    pub config_hash: String,
}

impl Scenario {
    pub fn position_dim(&self) -> usize {
        self.targeting.position_dim
    }
}

fn resolve_side(
    spec: &SideSpec,
    side: Side,
    opponent_count: usize,
    violations: &mut Vec<String>,
) -> Option<(Vec<AgentModel>, Vec<CostWeights>)> {
    let n = spec.state_dim;
    let label = match side {
        Side::Pursuer => "pursuers",
        Side::Evader => "evaders",
    };
    if spec.count == 0 {
        violations.push(format!("{label}: count must be at least 1"));
        return None;
    }
    let mut models = Vec::new();
    let mut weights = Vec::new();
    for index in 0..spec.count {
        let over = spec.overrides.iter().find(|o| o.index == index);
        if let Some(o) = spec.overrides.iter().find(|o| o.index >= spec.count) {
            violations.push(format!("{label}: override index {} out of range", o.index));
            return None;
        }
        let pick_m = |base: &MatrixSpec, o: Option<&MatrixSpec>| o.unwrap_or(base).clone();
        let a_spec = pick_m(&spec.a_matrix, over.and_then(|o| o.a_matrix.as_ref()));
        let b_spec = pick_m(&spec.b_matrix, over.and_then(|o| o.b_matrix.as_ref()));
        let a = match a_spec.resolve(n) {
            Ok(a) => a,
            Err(e) => {
                violations.push(format!("{label}[{index}].a_matrix: {e}"));
                return None;
            }
        };
        let b = match b_spec {
            MatrixSpec::Scalar(s) => DMatrix::identity(n, n) * s,
            rows => match rows.resolve_rect(n) {
                Ok(b) if b.nrows() == n => b,
                Ok(b) => {
                    violations.push(format!(
                        "{label}[{index}].b_matrix: has {} rows, state dim is {n}",
                        b.nrows()
                    ));
                    return None;
                }
                Err(e) => {
                    violations.push(format!("{label}[{index}].b_matrix: {e}"));
                    return None;
                }
            },
        };
        let bound = over.and_then(|o| o.input_bound).unwrap_or(spec.input_bound);
        let id = PlayerId { side, index };
        match AgentModel::new(a, b, bound, side, id) {
            Ok(model) => models.push(model),
            Err(DynamicsError::NotControllable(_)) => {
                violations.push(format!("{label}[{index}]: (A, B) is not controllable"));
                return None;
            }
            Err(e) => {
                violations.push(format!("{label}[{index}]: {e}"));
                return None;
            }
        }

        let m = models[index].input_dim();
        let r_spec = over.and_then(|o| o.r.clone()).unwrap_or_else(|| spec.r.clone());
        let r_diag = match r_spec.resolve(m) {
            Ok(r) => r,
            Err(e) => {
                violations.push(format!("{label}[{index}].r: {e}"));
                return None;
            }
        };
        if r_diag.iter().any(|v| *v <= 0.0) {
            violations.push(format!("{label}[{index}].r: entries must be strictly positive"));
        }
        let resolve_sym = |what: &str, ms: &MatrixSpec, violations: &mut Vec<String>| {
            match ms.resolve(n) {
                Ok(mat) => {
                    if (mat.clone() - mat.transpose()).amax() > 1e-12 {
                        violations.push(format!("{label}[{index}].{what}: must be symmetric"));
                    }
                    Some(mat)
                }
                Err(e) => {
                    violations.push(format!("{label}[{index}].{what}: {e}"));
                    None
                }
            }
        };
        let lambda_team = resolve_sym(
            "lambda_team",
            over.and_then(|o| o.lambda_team.as_ref()).unwrap_or(&spec.lambda_team),
            violations,
        )?;
        let lambda_cross = resolve_sym(
            "lambda_cross",
            over.and_then(|o| o.lambda_cross.as_ref()).unwrap_or(&spec.lambda_cross),
            violations,
        )?;
        let gamma = resolve_sym(
            "gamma",
            over.and_then(|o| o.gamma.as_ref()).unwrap_or(&spec.gamma),
            violations,
        )?;
        let sigma_team = over.and_then(|o| o.cross_q_team).unwrap_or(spec.cross_q_team);
        let sigma_opp = over.and_then(|o| o.cross_q_opp).unwrap_or(spec.cross_q_opp);
        let mut q_cross_team = HashMap::new();
        if sigma_team != 0.0 {
            for k in 0..spec.count {
                if k != index {
                    q_cross_team.insert(k, DMatrix::identity(2 * n, 2 * n) * sigma_team);
                }
            }
        }
        let mut q_cross_opp = HashMap::new();
        if sigma_opp != 0.0 {
            for j in 0..opponent_count {
                q_cross_opp.insert(j, DMatrix::identity(2 * n, 2 * n) * sigma_opp);
            }
        }
        weights.push(CostWeights {
            lambda_team,
            lambda_cross,
            r_diag,
            q_cross_team,
            q_cross_opp,
            terminal_scale: over.and_then(|o| o.terminal_scale).unwrap_or(spec.terminal_scale),
            altruism: AltruismParams {
                mu: over.and_then(|o| o.mu).unwrap_or(spec.mu),
                eta: over.and_then(|o| o.eta).unwrap_or(spec.eta),
                gamma,
                rho: over.and_then(|o| o.rho).unwrap_or(spec.rho),
            },
        });
    }
    Some((models, weights))
}

fn resolve_box(spec: &BoxSpec, n: usize, what: &str, violations: &mut Vec<String>) -> Option<SampleBox> {
    if spec.low.len() != n || spec.high.len() != n {
        violations.push(format!("{what}: box bounds must have {n} entries"));
        return None;
    }
    if spec.low.iter().zip(&spec.high).any(|(l, h)| l > h) {
        violations.push(format!("{what}: low must not exceed high"));
        return None;
    }
    Some(SampleBox {
        low: DVector::from_row_slice(&spec.low),
        high: DVector::from_row_slice(&spec.high),
    })
}

/// Initial-condition source of one side.
#[derive(Clone, Debug)]
pub enum SideInit {
    Explicit(Vec<DVector<f64>>),
    Box(SampleBox),
}

/// Initial-condition source resolved from the config.
#[derive(Clone, Debug)]
pub struct InitSource {
    pub pursuers: SideInit,
    pub evaders: SideInit,
}

pub struct Resolved {
    pub scenario: Scenario,
    pub init: InitSource,
    pub pi_boxes: Option<(SampleBox, SampleBox)>,
}

/// Checks every invariant the runtime relies on; returns all violations.
pub fn validate(config: &ScenarioConfig) -> Vec<String> {
    match resolve(config) {
        Ok(_) => Vec::new(),
        Err(ConfigError::Invalid { violations }) => violations,
        Err(other) => vec![other.to_string()],
    }
}

/// Resolves the config into runtime types, collecting violations.
pub fn resolve(config: &ScenarioConfig) -> Result<Resolved, ConfigError> {
    let mut violations = Vec::new();
    if config.version != 1 {
        violations.push(format!("version: expected 1, got {}", config.version));
    }
    if config.step <= 0.0 {
        violations.push("step: must be positive".into());
    }
    if config.horizon < 0.0 {
        violations.push("horizon: must be nonnegative".into());
    }
    if config.horizon > 0.0 && config.step > 0.0 {
        let steps = config.horizon / config.step;
        if (steps - steps.round()).abs() > 1e-9 {
            violations.push("horizon: must be an integer multiple of step".into());
        }
    }
    if config.targeting.enabled {
        let t = config.targeting.interval;
        if !(config.step <= t && t <= config.horizon.max(config.step)) {
            violations.push("targeting.interval: need step <= interval <= horizon".into());
        }
        if config.step > 0.0 {
            let k = t / config.step;
            if (k - k.round()).abs() > 1e-9 {
                violations.push("targeting.interval: must be an integer multiple of step".into());
            }
        }
        if config.targeting.chi <= 0.0 {
            violations.push("targeting.chi: must be positive".into());
        }
        if config.targeting.quadrature_step <= 0.0 {
            violations.push("targeting.quadrature_step: must be positive".into());
        }
    }
    if config.targeting.capture_radius <= 0.0 {
        violations.push("targeting.capture_radius: must be positive".into());
    }
    if config.pursuers.state_dim != config.evaders.state_dim {
        violations.push("state_dim: pursuers and evaders must share one state dimension".into());
    }
    if config.learning.exploration_amplitude < 0.0 {
        violations.push("learning.exploration_amplitude: must be nonnegative".into());
    }
    if !(0.0..=1.0).contains(&config.learning.exploration_end_frac) {
        violations.push("learning.exploration_end_frac: must lie in [0, 1]".into());
    }
    if config.learning.critic_rate <= 0.0 || config.learning.actor_rate <= 0.0 {
        violations.push("learning rates must be positive".into());
    }

    let resolved_p = resolve_side(&config.pursuers, Side::Pursuer, config.evaders.count, &mut violations);
    let resolved_e = resolve_side(&config.evaders, Side::Evader, config.pursuers.count, &mut violations);
    let (models, weights) = match (resolved_p, resolved_e) {
        (Some((mp, wp)), Some((me, we))) => {
            match ModelSet::new(mp, me) {
                Ok(models) => (Some(models), Some(WeightSet { pursuers: wp, evaders: we })),
                Err(e) => {
                    violations.push(e.to_string());
                    (None, None)
                }
            }
        }
        _ => (None, None),
    };

    let n_p = config.pursuers.count;
    let n_e = config.evaders.count;
    let topology = (|| {
        let gp = CommGraph::new(config.topology.pursuer_graph.resolve_team(n_p).map_err(|e| format!("topology.pursuer_graph: {e}")).ok()?)
            .map_err(|e| violations.push(format!("topology.pursuer_graph: {e}")))
            .ok()?;
        let ge = CommGraph::new(config.topology.evader_graph.resolve_team(n_e).map_err(|e| format!("topology.evader_graph: {e}")).ok()?)
            .map_err(|e| violations.push(format!("topology.evader_graph: {e}")))
            .ok()?;
        let pe = config
            .topology
            .pe
            .resolve_cross(n_p, n_e)
            .map_err(|e| violations.push(format!("topology.pe: {e}")))
            .ok()?;
        let ep = config
            .topology
            .ep
            .resolve_cross(n_e, n_p)
            .map_err(|e| violations.push(format!("topology.ep: {e}")))
            .ok()?;
        let cross = CrossGraph::new(pe, ep)
            .map_err(|e| violations.push(format!("topology: {e}")))
            .ok()?;
        BiLayerTopology::new(gp, ge, cross)
            .map_err(|e| violations.push(format!("topology: {e}")))
            .ok()
    })();

    // assembled state weights must be positive definite for pursuers
    if let (Some(top), Some(w)) = (&topology, &weights) {
        for i in 0..n_p {
            let id = PlayerId::pursuer(i);
            let q = costs::q_tilde_for(id, w, top);
            if let Err(e) = costs::validate_q_tilde(id, &q) {
                violations.push(e.to_string());
            }
        }
    }

    let n = config.pursuers.state_dim;
    let side_init = |explicit: &Option<Vec<Vec<f64>>>,
                         boxed: &Option<BoxSpec>,
                         count: usize,
                         what: &str,
                         violations: &mut Vec<String>|
     -> Option<SideInit> {
        match (explicit, boxed) {
            (Some(_), Some(_)) => {
                violations.push(format!("init.{what}: give positions or a box, not both"));
                None
            }
            (Some(ps), None) => {
                if ps.len() != count || ps.iter().any(|x| x.len() != n) {
                    violations
                        .push(format!("init.{what}_positions: need {count} vectors of {n} entries"));
                    return None;
                }
                Some(SideInit::Explicit(ps.iter().map(|x| DVector::from_row_slice(x)).collect()))
            }
            (None, Some(b)) => {
                resolve_box(b, n, &format!("init.{what}_box"), violations).map(SideInit::Box)
            }
            (None, None) => {
                violations.push(format!("init.{what}: provide positions or a box"));
                None
            }
        }
    };
    let init_p = side_init(
        &config.init.pursuer_positions,
        &config.init.pursuer_box,
        n_p,
        "pursuer",
        &mut violations,
    );
    let init_e = side_init(
        &config.init.evader_positions,
        &config.init.evader_box,
        n_e,
        "evader",
        &mut violations,
    );
    let init = match (init_p, init_e) {
        (Some(p), Some(e)) => Some(InitSource { pursuers: p, evaders: e }),
        _ => None,
    };

    let pi_boxes = {
        let from = |b: &Option<BoxSpec>, fallback: Option<&SampleBox>, what: &str, v: &mut Vec<String>| {
            match b {
                Some(spec) => resolve_box(spec, n, what, v),
                None => fallback.cloned(),
            }
        };
        let fallback_p = match &init {
            Some(InitSource { pursuers: SideInit::Box(b), .. }) => Some(b),
            _ => None,
        };
        let fallback_e = match &init {
            Some(InitSource { evaders: SideInit::Box(b), .. }) => Some(b),
            _ => None,
        };
        let p = from(&config.pi.pursuer_box, fallback_p, "pi.pursuer_box", &mut violations);
        let e = from(&config.pi.evader_box, fallback_e, "pi.evader_box", &mut violations);
        match (p, e) {
            (Some(p), Some(e)) => Some((p, e)),
            _ => None,
        }
    };
    if config.mode == Mode::OfflinePi && pi_boxes.is_none() {
        violations.push("pi: offline_pi mode needs sampling boxes (pi.* or init.* boxes)".into());
    }
    if config.pi.samples == 0 {
        violations.push("pi.samples: must be positive".into());
    }
    if !(0.0 < config.pi.relaxation && config.pi.relaxation <= 1.0) {
        violations.push("pi.relaxation: must lie in (0, 1]".into());
    }

    if !violations.is_empty() {
        return Err(ConfigError::Invalid { violations });
    }
    let (models, weights, topology, init) =
        (models.unwrap(), weights.unwrap(), topology.unwrap(), init.unwrap());
    let position_dim = config
        .pursuers
        .position_dim
        .or(config.evaders.position_dim)
        .unwrap_or(n)
        .min(n);
    let targeting = TargetingParams {
        interval: config.targeting.interval,
        chi: config.targeting.chi,
        capture_radius: config.targeting.capture_radius,
        quadrature_step: config.targeting.quadrature_step,
        position_dim,
    };
    let scenario = Scenario {
        config_hash: config.canonical_hash(),
        config: config.clone(),
        topology,
        models,
        weights,
        targeting,
        targeting_enabled: config.targeting.enabled,
    };
    Ok(Resolved { scenario, init, pi_boxes })
}
