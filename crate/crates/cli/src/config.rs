//! Flat key=value experiment configuration.
//!
//! One decoder, no nesting: each non-empty line is `key = value`, `#` starts
//! a comment. Unknown keys are rejected so typos cannot silently fall back to
//! defaults. The configuration hash binds every emitted CSV to its inputs.

use crate::CliError;
use chaos_spde::basis::TimeBasis;
use chaos_spde::chaos::{ChaosModel, ModelKind, TrainingGrid, Truncation};
use chaos_spde::nets::SampleLaw;
use chaos_spde::spde::{SpdeProblem, ZakaiRefConfig};
use chaos_spde::wick::GaussianPanel;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemName {
    Heat,
    Hjm,
    Zakai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    RandomFeature,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Supervised,
    Unsupervised,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemName,
    pub space_dim: usize,
    pub horizon: f64,
    pub heat_sigma: f64,
    pub hjm_r0: f64,
    pub hjm_mu: f64,
    pub hjm_kappa: f64,
    pub hjm_sigma: f64,

    pub trunc_i: usize,
    pub trunc_j: usize,
    pub trunc_k: u32,
    /// Optional chaos-order sweep for training; empty means train `trunc_k` only.
    pub k_sweep: Vec<u32>,

    pub model: ModelChoice,
    pub neurons: usize,
    pub feature_law: SampleLaw,
    pub shared_features: bool,

    pub scenarios: usize,
    pub time_steps: usize,
    pub spatial_points: usize,
    pub train_fraction: f64,

    pub mode: Mode,
    pub seed: u64,

    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub ridge: f64,

    pub zakai_particles: usize,
    pub zakai_se_threshold: f64,

    pub rate_c_s: f64,
    pub rate_c_fb: f64,

    /// Canonical key=value lines (after seed override), hashed into outputs.
    canonical: String,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str, seed_override: Option<u64>) -> Result<Self, CliError> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key = value", line_no + 1)))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                return Err(bad(format!("duplicate key '{key}'")));
            }
        }
        if let Some(seed) = seed_override {
            map.insert("seed".into(), seed.to_string());
        }

        let known = [
            "problem", "space_dim", "horizon", "heat_sigma", "hjm_r0", "hjm_mu", "hjm_kappa",
            "hjm_sigma", "trunc_i", "trunc_j", "trunc_k", "k_sweep", "model", "neurons",
            "feature_law", "feature_radius", "shared_features", "scenarios", "time_steps",
            "spatial_points", "train_fraction", "mode", "seed", "learning_rate", "epochs",
            "batch", "ridge", "zakai_particles", "zakai_se_threshold", "rate_c_s", "rate_c_fb",
        ];
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                return Err(bad(format!("unknown key '{key}'")));
            }
        }

        let get = |key: &str| map.get(key).map(|s| s.as_str());
        let required = |key: &str| get(key).ok_or_else(|| bad(format!("missing key '{key}'")));
        let parse_f64 = |key: &str, default: f64| -> Result<f64, CliError> {
            match get(key) {
                None => Ok(default),
                Some(v) => v.parse().map_err(|_| bad(format!("key '{key}': not a number"))),
            }
        };
        let parse_usize = |key: &str, default: usize| -> Result<usize, CliError> {
            match get(key) {
                None => Ok(default),
                Some(v) => v.parse().map_err(|_| bad(format!("key '{key}': not an integer"))),
            }
        };

        let problem = match required("problem")? {
            "heat" => ProblemName::Heat,
            "hjm" => ProblemName::Hjm,
            "zakai" => ProblemName::Zakai,
            other => return Err(bad(format!("unknown problem '{other}'"))),
        };
        let model = match get("model").unwrap_or("random-feature") {
            "random-feature" => ModelChoice::RandomFeature,
            "deterministic" => ModelChoice::Deterministic,
            other => return Err(bad(format!("unknown model '{other}'"))),
        };
        let mode = match get("mode").unwrap_or("supervised") {
            "supervised" => Mode::Supervised,
            "unsupervised" => Mode::Unsupervised,
            other => return Err(bad(format!("unknown mode '{other}'"))),
        };
        let feature_law = match get("feature_law").unwrap_or("uniform") {
            "uniform" => SampleLaw::UniformBox { radius: parse_f64("feature_radius", 2.0)? },
            "student-t" => SampleLaw::StudentT,
            other => return Err(bad(format!("unknown feature law '{other}'"))),
        };
        let seed: u64 = required("seed")?
            .parse()
            .map_err(|_| bad("key 'seed': not an integer"))?;

        let k_sweep = match get("k_sweep") {
            None => Vec::new(),
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse::<u32>().map_err(|_| bad("key 'k_sweep': bad entry")))
                .collect::<Result<Vec<_>, _>>()?,
        };

        let default_horizon = if problem == ProblemName::Zakai { 0.5 } else { 1.0 };
        let default_m = if problem == ProblemName::Hjm { 1 } else { 1 };
        let default_lr = if problem == ProblemName::Heat { 2e-3 } else { 5e-4 };

        let cfg = ExperimentConfig {
            problem,
            space_dim: parse_usize("space_dim", default_m)?,
            horizon: parse_f64("horizon", default_horizon)?,
            heat_sigma: parse_f64("heat_sigma", 6.0)?,
            hjm_r0: parse_f64("hjm_r0", 4.0)?,
            hjm_mu: parse_f64("hjm_mu", 4.0)?,
            hjm_kappa: parse_f64("hjm_kappa", 0.9)?,
            hjm_sigma: parse_f64("hjm_sigma", 0.5)?,
            trunc_i: parse_usize("trunc_i", 1)?,
            trunc_j: parse_usize("trunc_j", 5)?,
            trunc_k: parse_usize("trunc_k", 1)? as u32,
            k_sweep,
            model,
            neurons: parse_usize("neurons", 75)?,
            feature_law,
            shared_features: match get("shared_features").unwrap_or("true") {
                "true" => true,
                "false" => false,
                _ => return Err(bad("key 'shared_features': expected true or false")),
            },
            scenarios: parse_usize("scenarios", 50)?,
            time_steps: parse_usize("time_steps", 20)?,
            spatial_points: parse_usize("spatial_points", 200)?,
            train_fraction: parse_f64("train_fraction", 0.8)?,
            mode,
            seed,
            learning_rate: parse_f64("learning_rate", default_lr)?,
            epochs: parse_usize("epochs", 2_000)?,
            batch: parse_usize("batch", 40)?,
            ridge: parse_f64("ridge", 1e-8)?,
            zakai_particles: parse_usize("zakai_particles", 10_000)?,
            zakai_se_threshold: parse_f64("zakai_se_threshold", 0.1)?,
            rate_c_s: parse_f64("rate_c_s", 1.0)?,
            rate_c_fb: parse_f64("rate_c_fb", 1.0)?,
            canonical: map
                .iter()
                .map(|(k, v)| format!("{k} = {v}"))
                .collect::<Vec<_>>()
                .join("\n"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.space_dim == 0
            || self.trunc_i == 0
            || self.trunc_j == 0
            || self.neurons == 0
            || self.scenarios == 0
            || self.time_steps == 0
            || self.spatial_points == 0
            || self.epochs == 0
            || self.batch == 0
        {
            return Err(bad("all sizes must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(bad("horizon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(bad("train_fraction must lie in [0, 1]"));
        }
        if self.problem == ProblemName::Hjm && self.space_dim != 1 {
            return Err(bad("the forward-rate problem is one-dimensional in space"));
        }
        if self.problem != ProblemName::Zakai && self.trunc_i > 1 {
            return Err(bad("heat and hjm carry a single noise coordinate; trunc_i must be 1"));
        }
        if self.problem == ProblemName::Zakai && self.trunc_i > 2 * self.space_dim {
            return Err(bad("trunc_i exceeds the problem's noise dimension"));
        }
        Ok(())
    }

    /// First 16 hex characters of the SHA-256 of the canonical key=value text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical.as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn canonical_text(&self) -> &str {
        &self.canonical
    }

    pub fn build_problem(&self) -> Result<SpdeProblem, CliError> {
        match self.problem {
            ProblemName::Heat => SpdeProblem::heat(self.space_dim, self.heat_sigma, self.horizon),
            ProblemName::Hjm => SpdeProblem::hjm(
                self.hjm_r0,
                self.hjm_mu,
                self.hjm_kappa,
                self.hjm_sigma,
                self.horizon,
            ),
            ProblemName::Zakai => SpdeProblem::zakai(self.space_dim, self.horizon),
        }
        .map_err(CliError::from)
    }

    pub fn build_basis(&self) -> Result<TimeBasis, CliError> {
        TimeBasis::new(self.horizon, self.trunc_j).map_err(CliError::from)
    }

    pub fn build_panel(&self, problem: &SpdeProblem) -> Result<GaussianPanel, CliError> {
        GaussianPanel::generate(self.seed, problem.noise_dim(), self.trunc_j, self.scenarios)
            .map_err(CliError::from)
    }

    pub fn build_grid(&self, problem: &SpdeProblem) -> Result<TrainingGrid, CliError> {
        let times: Vec<f64> = (0..=self.time_steps)
            .map(|k| self.horizon * k as f64 / self.time_steps as f64)
            .collect();
        let points = problem.sample_points(self.seed, self.spatial_points)?;
        TrainingGrid::new(problem, times, points, self.scenarios, self.train_fraction)
            .map_err(CliError::from)
    }

    pub fn truncation(&self, order: u32) -> Truncation {
        Truncation { i_count: self.trunc_i, j_count: self.trunc_j, order }
    }

    pub fn build_model(&self, problem: &SpdeProblem, order: u32) -> Result<ChaosModel, CliError> {
        let trunc = self.truncation(order);
        let model = match self.model {
            ModelChoice::RandomFeature => ChaosModel::random_feature(
                trunc,
                self.neurons,
                problem.space_dim,
                problem.out_dim,
                self.seed,
                self.feature_law,
                self.shared_features,
            ),
            ModelChoice::Deterministic => ChaosModel::deterministic(
                trunc,
                self.neurons,
                problem.space_dim,
                problem.out_dim,
                self.seed,
            ),
        }?;
        Ok(model)
    }

    pub fn zakai_ref_config(&self) -> ZakaiRefConfig {
        ZakaiRefConfig {
            particles: self.zakai_particles,
            bandwidth: None,
            se_threshold: self.zakai_se_threshold,
        }
    }

    /// Chaos orders to train: the sweep if given, otherwise just `trunc_k`.
    pub fn train_orders(&self) -> Vec<u32> {
        if self.k_sweep.is_empty() {
            vec![self.trunc_k]
        } else {
            self.k_sweep.clone()
        }
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.model {
            ModelChoice::RandomFeature => ModelKind::RandomFeature { shared: self.shared_features },
            ModelChoice::Deterministic => ModelKind::Deterministic,
        }
    }
}
