//! Versioned experiment configuration.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{BudgetOptimalConfig, GradientConfig};
use crate::error::{Error, Result};
use crate::feasibility::CostMode;
use crate::network::{random_network, AgentParams, Network};
use crate::online::OnlineParams;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    Random {
        n: usize,
        #[serde(default = "default_density")]
        density: f64,
        #[serde(default = "default_lambda_range")]
        lambda_range: (f64, f64),
        #[serde(default = "default_h_range")]
        h_range: (f64, f64),
        seed: u64,
    },
    /// Path to a JSON [`NetworkSpec`]; relative paths resolve against the
    /// config file's directory.
    File { path: PathBuf },
    Inline(NetworkSpec),
}

fn default_density() -> f64 {
    0.3
}

fn default_lambda_range() -> (f64, f64) {
    (0.1, 0.9)
}

fn default_h_range() -> (f64, f64) {
    (0.2, 0.9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Row `i` lists the weights `a_ij` agent `i` gives to agent `j`.
    pub adjacency: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub h: Vec<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
}

impl NetworkSpec {
    pub fn build(&self) -> Result<Network> {
        let n = self.adjacency.len();
        if let Some(i) = self.adjacency.iter().position(|r| r.len() != n) {
            return Err(Error::config(
                format!("adjacency[{i}]"),
                format!("expected {n} entries, got {}", self.adjacency[i].len()),
            ));
        }
        let adj = DMatrix::from_fn(n, n, |i, j| self.adjacency[i][j]);
        let lo = self.h_min.unwrap_or_else(|| self.h.iter().cloned().fold(f64::INFINITY, f64::min));
        let hi = self.h_max.unwrap_or_else(|| self.h.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let params = AgentParams::new(self.lambda.clone(), self.h.clone(), lo, hi)?;
        Network::from_adjacency(&adj, params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Explicit { values: Vec<f64> },
    /// Uniform on `[0, 1]^n`.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    /// Exponential schedule with the true `h`. With `a`/`b` unset the
    /// schedule comes from the feasibility solver when `eps` is set, and
    /// otherwise from the fixed-budget planner.
    KnownAnalytic {
        a: Option<f64>,
        b: Option<f64>,
        eps: Option<f64>,
        #[serde(default)]
        cost_mode: CostMode,
    },
    AdaptiveOnline {
        #[serde(default)]
        params: OnlineParams,
    },
    GradientBaseline {
        #[serde(default)]
        params: GradientConfig,
    },
    BudgetOptimal {
        #[serde(default)]
        params: BudgetOptimalConfig,
    },
    /// Identification only: fixed-level excitation control.
    PeProbe {
        alpha: f64,
        psi: Option<f64>,
        theta_hat0: Option<Vec<f64>>,
    },
}

impl ControllerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerConfig::KnownAnalytic { .. } => "known_analytic",
            ControllerConfig::AdaptiveOnline { .. } => "adaptive_online",
            ControllerConfig::GradientBaseline { .. } => "gradient_baseline",
            ControllerConfig::BudgetOptimal { .. } => "budget_optimal",
            ControllerConfig::PeProbe { .. } => "pe_probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub scenario: Scenario,
    pub target: f64,
    pub x0: InitialState,
    pub controller: ControllerConfig,
    pub horizon: usize,
    #[serde(default)]
    pub budget: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config; a `file` scenario path is resolved against the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub(crate) fn resolve_paths(&mut self, base: &Path) {
        if let Scenario::File { path } = &mut self.scenario {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        if !(0.0..=1.0).contains(&self.target) {
            return Err(Error::config("target", format!("{} outside [0, 1]", self.target)));
        }
        if let Some(c) = self.budget {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::config("budget", format!("{c} must be finite and nonnegative")));
            }
        }
        if let InitialState::Explicit { values } = &self.x0 {
            if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::config(format!("x0.values[{i}]"), format!("{} outside [0, 1]", values[i])));
            }
        }
        match &self.controller {
            ControllerConfig::KnownAnalytic { a, b, eps, .. } => {
                if a.is_some() != b.is_some() {
                    return Err(Error::config("controller.a", "a and b must be given together"));
                }
                if a.is_none() && self.budget.is_none() {
                    return Err(Error::config(
                        "budget",
                        "known_analytic without (a, b) needs a budget to plan against",
                    ));
                }
                if let Some(e) = eps {
                    if !(*e > 0.0) {
                        return Err(Error::config("controller.eps", format!("{e} must be positive")));
                    }
                }
            }
            ControllerConfig::AdaptiveOnline { params } => {
                params.validate().map_err(|e| Error::config("controller.params", e.to_string()))?;
            }
            ControllerConfig::GradientBaseline { params } => {
                params.validate().map_err(|e| Error::config("controller.params", e.to_string()))?;
            }
            ControllerConfig::BudgetOptimal { .. } => {
                if self.budget.is_none() {
                    return Err(Error::config("budget", "budget_optimal requires a budget"));
                }
            }
            ControllerConfig::PeProbe { alpha, .. } => {
                if !(*alpha > 0.0) {
                    return Err(Error::config("controller.alpha", format!("{alpha} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// `--seed` override: replaces the random scenario and initial-state seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Scenario::Random { seed: s, .. } = &mut self.scenario {
            *s = seed;
        }
        if let InitialState::Random { seed: s } = &mut self.x0 {
            *s = seed;
        }
        self
    }

    pub fn build_network(&self) -> Result<Network> {
        match &self.scenario {
            Scenario::Random { n, density, lambda_range, h_range, seed } => {
                let (g, p) = random_network(*n, *density, *lambda_range, *h_range, *seed)?;
                Network::new(g, p)
            }
            Scenario::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let spec: NetworkSpec = serde_json::from_str(&text)
                    .map_err(|e| Error::config("scenario.path", format!("{}: {e}", path.display())))?;
                spec.build()
            }
            Scenario::Inline(spec) => spec.build(),
        }
    }

    pub fn initial_state(&self, n: usize) -> Result<DVector<f64>> {
        match &self.x0 {
            InitialState::Explicit { values } => {
                if values.len() != n {
                    return Err(Error::config("x0.values", format!("expected {n} entries, got {}", values.len())));
                }
                Ok(DVector::from_column_slice(values))
            }
            InitialState::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok(DVector::from_fn(n, |_, _| rng.gen::<f64>()))
            }
        }
    }

    /// SHA-256 of the canonical (key-sorted, compact) JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        let canonical = serde_json::to_string(&value).expect("value serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// A sweep: explicit runs plus an optional `base` expanded over
/// `controllers × budgets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub version: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub runs: Vec<ExperimentConfig>,
    #[serde(default)]
    pub base: Option<ExperimentConfig>,
    #[serde(default)]
    pub controllers: Vec<ControllerConfig>,
    #[serde(default)]
    pub budgets: Vec<f64>,
}

fn default_parallelism() -> usize {
    1
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: SweepConfig =
            serde_json::from_str(&text).map_err(|e| Error::config("<document>", e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", cfg.version),
            ));
        }
        if cfg.parallelism == 0 {
            return Err(Error::config("parallelism", "must be at least 1"));
        }
        let base_dir = path.parent().unwrap_or(Path::new("."));
        for run in cfg.runs.iter_mut().chain(cfg.base.iter_mut()) {
            run.resolve_paths(base_dir);
        }
        Ok(cfg)
    }

    /// Flattened run list: `runs`, then `base` for each controller (outer)
    /// and budget (inner).
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let mut out = self.runs.clone();
        if let Some(base) = &self.base {
            let controllers = if self.controllers.is_empty() {
                vec![base.controller.clone()]
            } else {
                self.controllers.clone()
            };
            let budgets: Vec<Option<f64>> = if self.budgets.is_empty() {
                vec![base.budget]
            } else {
                self.budgets.iter().map(|b| Some(*b)).collect()
            };
            for c in &controllers {
                for b in &budgets {
                    let mut cfg = base.clone();
                    cfg.controller = c.clone();
                    cfg.budget = *b;
                    out.push(cfg);
                }
            }
        }
        out
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.runs = self.runs.into_iter().map(|r| r.with_seed(seed)).collect();
        self.base = self.base.map(|b| b.with_seed(seed));
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "version": 1,
        "scenario": {"kind": "random", "n": 5, "seed": 3},
        "target": 0.6,
        "x0": {"kind": "random", "seed": 4},
        "controller": {"kind": "known_analytic", "a": 0.5, "b": 0.9},
        "horizon": 50,
        "budget": 20.0
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        let net = cfg.build_network().unwrap();
        assert_eq!(net.n(), 5);
        let x0 = cfg.initial_state(5).unwrap();
        assert!(x0.iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(x0, cfg.initial_state(5).unwrap());
    }

    #[test]
    fn hash_stable_across_round_trip() {
        let cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let again = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.hash().len(), 64);
        assert_ne!(cfg.hash(), cfg.clone().with_seed(99).hash());
    }

    #[test]
    fn field_level_errors() {
        let bad = SAMPLE.replace("\"target\": 0.6", "\"target\": 1.5");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "target"),
            other => panic!("{other:?}"),
        }
        let bad = SAMPLE.replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::ConfigInvalid { .. })));
        let bad = SAMPLE.replace("\"horizon\": 50", "\"horizon\": 50, \"extra\": 1");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::ConfigInvalid { .. })));
        let bad = SAMPLE.replace("\"a\": 0.5, \"b\": 0.9", "\"a\": 0.5");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::ConfigInvalid { .. })));
    }

    #[test]
    fn sweep_expansion_order() {
        let base = ExperimentConfig::from_json(SAMPLE).unwrap();
        let sweep = SweepConfig {
            version: 1,
            parallelism: 2,
            runs: vec![],
            base: Some(base.clone()),
            controllers: vec![
                base.controller.clone(),
                ControllerConfig::GradientBaseline { params: GradientConfig::default() },
            ],
            budgets: vec![10.0, 20.0],
        };
        let runs = sweep.expand();
        let tags: Vec<_> = runs.iter().map(|r| (r.controller.name(), r.budget.unwrap())).collect();
        assert_eq!(
            tags,
            vec![
                ("known_analytic", 10.0),
                ("known_analytic", 20.0),
                ("gradient_baseline", 10.0),
                ("gradient_baseline", 20.0)
            ]
        );
    }
}
