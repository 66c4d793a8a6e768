//! Experiment configuration: strict JSON schema, materialized defaults, ε fan-out.

use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    #[serde(rename = "double_well_1d")]
    DoubleWell1d,
    #[serde(rename = "maier_stein_2d")]
    MaierStein2d,
    #[serde(rename = "mv_mean_field_1d")]
    MvMeanField1d,
}

impl PresetName {
    pub fn dim(self) -> usize {
        match self {
            Self::MaierStein2d => 2,
            _ => 1,
        }
    }
}

/// A single noise level or a grid of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsSpec {
    Single(f64),
    Grid(Vec<f64>),
}

impl EpsSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::Single(e) => vec![*e],
            Self::Grid(g) => g.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PresetParams {
    /// Maier–Stein non-gradient strength.
    pub beta: f64,
    /// Mean-field attraction strength.
    pub theta: f64,
    pub sigma: f64,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            theta: 0.5,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval { lo: f64, hi: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKindName {
    Oscillatory,
    Decaying,
    BoundaryPush,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppliesToName {
    Drift,
    Diffusion,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub kind: PerturbationKindName,
    /// Defaults to the experiment `kappa`.
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default = "unit")]
    pub frequency: f64,
    #[serde(default = "unit")]
    pub rate: f64,
    /// Defaults to the first coordinate axis.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    #[serde(default = "both")]
    pub applies_to: AppliesToName,
}

fn unit() -> f64 {
    1.0
}

fn both() -> AppliesToName {
    AppliesToName::Both
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingConfig {
    pub delta: f64,
    pub t_end: f64,
    /// Defaults to the experiment `x0`.
    pub x0: Option<Vec<f64>>,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            delta: 0.25,
            t_end: 5.0,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CyclesConfig {
    /// Inner ball radius; defaults to `0.45 · dist(a, ∂𝒟)`.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MvConfig {
    pub n_particles: usize,
    pub kappa: f64,
    /// Analytic preset values when absent.
    pub c_tilde1: Option<f64>,
    pub k_tilde: Option<f64>,
    pub k_tilde1: Option<f64>,
    pub r: f64,
    pub m_bound: f64,
    pub p: f64,
    /// Forcing of the ψ comparison; defaults to `eps`.
    pub alpha: Option<f64>,
    /// Defaults to `ξ(0) = 0`.
    pub psi0: Option<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub monitor_every: usize,
    /// Reported survival window `e^{2(H + δ′)/ε}`.
    pub delta_prime: f64,
    pub run_exit: bool,
    pub exit_particles: usize,
    /// Time cap of the exit run; defaults to `e^{2(H + eta + 0.3)/ε}`.
    pub exit_horizon: Option<f64>,
}

impl Default for MvConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            kappa: 0.1,
            c_tilde1: None,
            k_tilde: None,
            k_tilde1: None,
            r: 0.1,
            m_bound: 2.0,
            p: 2.0,
            alpha: None,
            psi0: None,
            dt: 5e-3,
            horizon: 100.0,
            monitor_every: 10,
            delta_prime: 0.05,
            run_exit: false,
            exit_particles: 200,
            exit_horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionConfig {
    pub nodes: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    pub accept_decrement: f64,
    pub fd_step: f64,
    pub initial_step: f64,
    /// Boundary samples of the height scan; defaults to 2 in d = 1 and 256 otherwise.
    pub n_boundary: Option<usize>,
    /// Extra interior points whose quasipotential is reported.
    pub targets: Vec<Vec<f64>>,
}

impl Default for ActionConfig {
    fn default() -> Self {
        let o = quasiexit_core::action::OptimizerConfig::default();
        Self {
            nodes: 200,
            max_iters: o.max_iters,
            rel_tol: o.rel_tol,
            grad_tol: o.grad_tol,
            accept_decrement: o.accept_decrement,
            fd_step: o.fd_step,
            initial_step: o.initial_step,
            n_boundary: None,
            targets: Vec::new(),
        }
    }
}

impl ActionConfig {
    pub fn optimizer(&self) -> quasiexit_core::action::OptimizerConfig {
        quasiexit_core::action::OptimizerConfig {
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            grad_tol: self.grad_tol,
            accept_decrement: self.accept_decrement,
            fd_step: self.fd_step,
            initial_step: self.initial_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: PresetName,
    #[serde(default)]
    pub preset_params: PresetParams,
    /// Overrides the preset domain; the preset attractor is kept.
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    pub eps: EpsSpec,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Barrier height for brackets and horizons; resolved from the preset when absent.
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default = "default_replicates")]
    pub n_replicates: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Simulation cap; `e^{2(H + eta + 0.3)/ε}` when absent.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_store_every")]
    pub store_every: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Seed label; replicate `k` at noise `ε` uses stream `(master_seed, "<label>:eps=<ε>", k)`.
    #[serde(default = "default_label")]
    pub label: String,
    /// Defaults to the attractor.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default = "default_boot")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub coupling: CouplingConfig,
    #[serde(default)]
    pub cycles: CyclesConfig,
    #[serde(default)]
    pub mv: MvConfig,
    #[serde(default)]
    pub action: ActionConfig,
}

fn default_eta() -> f64 {
    0.15
}
fn default_replicates() -> usize {
    100
}
fn default_dt() -> f64 {
    1e-3
}
fn default_store_every() -> usize {
    1
}
fn default_label() -> String {
    "quasiexit".to_string()
}
fn default_bins() -> usize {
    16
}
fn default_boot() -> usize {
    1000
}

/// Converts a serde path into a JSON pointer such as `/mv/n_particles` or `/eps/0`.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses, validates and normalizes a JSON configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        pointer: json_pointer(e.path()),
        message: e.inner().to_string(),
    })?;
    let cfg = cfg.normalized();
    cfg.validate()?;
    Ok(cfg)
}

fn invalid(pointer: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Minimal configuration with every default materialized.
    pub fn new(preset: PresetName, eps: f64) -> Self {
        let text = serde_json::json!({ "preset": preset, "eps": eps }).to_string();
        parse_config(&text).expect("default configuration is valid")
    }

    pub fn attractor(&self) -> Vec<f64> {
        match self.preset {
            PresetName::MaierStein2d => vec![-1.0, 0.0],
            _ => vec![-1.0],
        }
    }

    /// Fills every default that does not depend on a computed quantity.
    pub fn normalized(mut self) -> Self {
        let a = self.attractor();
        if self.x0.is_none() {
            self.x0 = Some(a.clone());
        }
        if self.coupling.x0.is_none() {
            self.coupling.x0 = self.x0.clone();
        }
        if let Some(p) = self.perturbation.as_mut() {
            if p.amplitude.is_none() {
                p.amplitude = Some(self.kappa);
            }
            if p.direction.is_none() {
                let mut e1 = vec![0.0; a.len()];
                e1[0] = 1.0;
                p.direction = Some(e1);
            }
        }
        if self.action.n_boundary.is_none() {
            self.action.n_boundary = Some(quasiexit_core::domain::default_boundary_count(a.len()));
        }
        if self.mv.psi0.is_none() {
            self.mv.psi0 = Some(0.0);
        }
        if self.preset == PresetName::MvMeanField1d {
            let theta = self.preset_params.theta;
            self.mv.k_tilde.get_or_insert(2.0 + theta);
            self.mv.k_tilde1.get_or_insert(theta);
            self.mv.c_tilde1.get_or_insert(theta);
        }
        if let EpsSpec::Single(e) = self.eps {
            self.mv.alpha.get_or_insert(e);
        }
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = self.preset.dim();
        let eps = self.eps.values();
        if eps.is_empty() {
            return Err(invalid("/eps", "eps grid must not be empty"));
        }
        for (i, e) in eps.iter().enumerate() {
            if !(*e >= 0.0 && e.is_finite()) {
                let p = if matches!(self.eps, EpsSpec::Grid(_)) { format!("/eps/{i}") } else { "/eps".into() };
                return Err(invalid(&p, format!("eps must be finite and >= 0, got {e}")));
            }
        }
        if !(self.kappa >= 0.0) {
            return Err(invalid("/kappa", "kappa must be >= 0"));
        }
        if !(self.eta > 0.0) {
            return Err(invalid("/eta", "eta must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("/dt", "dt must be positive"));
        }
        if let Some(h) = self.horizon {
            if !(h >= self.dt && h.is_finite()) {
                return Err(invalid("/horizon", "horizon must be finite and >= dt"));
            }
        }
        if self.store_every == 0 {
            return Err(invalid("/store_every", "store_every must be >= 1"));
        }
        if self.n_replicates == 0 {
            return Err(invalid("/n_replicates", "n_replicates must be >= 1"));
        }
        if self.x0.as_ref().is_some_and(|x| x.len() != d) {
            return Err(invalid("/x0", format!("x0 must have dimension {d}")));
        }
        if self.coupling.x0.as_ref().is_some_and(|x| x.len() != d) {
            return Err(invalid("/coupling/x0", format!("x0 must have dimension {d}")));
        }
        if let Some(p) = &self.perturbation {
            if p.direction.as_ref().is_some_and(|u| u.len() != d) {
                return Err(invalid("/perturbation/direction", format!("direction must have dimension {d}")));
            }
        }
        if self.mv.n_particles == 0 || self.mv.exit_particles == 0 {
            return Err(invalid("/mv/n_particles", "particle counts must be >= 1"));
        }
        if self.mv.monitor_every == 0 {
            return Err(invalid("/mv/monitor_every", "monitor_every must be >= 1"));
        }
        if self.action.nodes < 2 {
            return Err(invalid("/action/nodes", "need at least 2 nodes"));
        }
        Ok(())
    }

    /// One configuration per ε value, each with a single `eps`.
    pub fn fan_out(&self) -> Vec<ExperimentConfig> {
        self.eps
            .values()
            .into_iter()
            .map(|e| {
                let mut c = self.clone();
                c.eps = EpsSpec::Single(e);
                if matches!(self.eps, EpsSpec::Grid(_)) && self.mv.alpha.is_none() {
                    c.mv.alpha = Some(e);
                }
                c
            })
            .collect()
    }

    pub fn single_eps(&self) -> f64 {
        self.eps.values()[0]
    }

    /// Seed label for the sub-experiment at `eps`.
    pub fn stream_label(&self, eps: f64) -> String {
        format!("{}:eps={}", self.label, eps)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_json_compact(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
