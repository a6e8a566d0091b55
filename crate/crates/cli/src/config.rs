//! Experiment configuration: presets, TOML loading and validation.
//!
//! A config file is a TOML document whose tables mirror [`ExperimentConfig`].
//! Keys that are absent keep the value of the chosen preset. Unknown keys
//! and type errors are reported with their line and column.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stalefl_core::{BoConfig, FixedPointConfig, GameError, Params};
use stalefl_sim::{SensitivityScaling, SimError, StreamConfig, TrainingConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{location}{field}: {reason}")]
    Invalid {
        field: String,
        reason: String,
        location: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Five clients, thirty rounds: every command finishes in seconds.
    Desk,
    /// Fifteen clients, a hundred rounds, a thousand initial samples each.
    Paper,
}

/// How client profiles are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub num_clients: usize,
    pub horizon: usize,
    pub initial_volume: f64,
    /// `α_k ~ U(lo, hi)`
    pub collect_cost: [f64; 2],
    /// `β_k ~ U(lo, hi)`
    pub train_cost: [f64; 2],
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            num_clients: 5,
            horizon: 30,
            initial_volume: 200.0,
            collect_cost: [1e-4, 1e-3],
            train_cost: [5e-6, 5e-5],
        }
    }
}

/// Server-cost weights; `N` and `T` come from the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub tradeoff: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub noise_scale: f64,
    pub time_sensitivity: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            tradeoff: 1e-4,
            kappa1: 1.0,
            kappa2: 1.0,
            kappa3: 1e-2,
            noise_scale: 10.0,
            time_sensitivity: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Volume-matched random plans drawn per client.
    pub random_trials: usize,
    /// `θ* + offset` ablations at the chosen payment, clamped to `[0, 1]`.
    pub theta_offsets: Vec<f64>,
    /// `factor · R*` ablations at the chosen conservation rate.
    pub payment_factors: Vec<f64>,
    /// Also train a model under every baseline.
    pub train: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            random_trials: 200,
            theta_offsets: vec![-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3],
            payment_factors: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            train: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sigmas: Vec<f64>,
    /// Train the chosen strategy and the no-update baseline at every `σ`.
    pub train: bool,
    /// Parallel sweep jobs; 0 uses every available core.
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.41, 0.42, 0.5, 0.75, 1.0, 1.25],
            train: true,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Points per axis of the dense `(R, θ)` grid.
    pub resolution: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { resolution: 101 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// Drives profile sampling, the optimizer and the data stream.
    pub seed: u64,
    /// Where outputs go; not part of the config hash.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub population: PopulationConfig,
    pub server: ServerConfig,
    pub bo: BoConfig,
    pub fixed_point: FixedPointConfig,
    pub stream: StreamConfig,
    pub sensitivity: SensitivityScaling,
    pub training: TrainingConfig,
    pub baselines: BaselineConfig,
    pub sweep: SweepConfig,
    pub grid: GridConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = Self {
            scenario: "desk".into(),
            seed: 42,
            output_dir: PathBuf::from("out"),
            population: PopulationConfig::default(),
            server: ServerConfig::default(),
            bo: BoConfig::default(),
            fixed_point: FixedPointConfig::default(),
            stream: StreamConfig::default(),
            sensitivity: SensitivityScaling::default(),
            training: TrainingConfig::default(),
            baselines: BaselineConfig::default(),
            sweep: SweepConfig::default(),
            grid: GridConfig::default(),
        };
        match preset {
            Preset::Desk => desk,
            Preset::Paper => Self {
                scenario: "paper".into(),
                population: PopulationConfig {
                    num_clients: 15,
                    horizon: 100,
                    initial_volume: 1000.0,
                    ..PopulationConfig::default()
                },
                stream: StreamConfig {
                    class_ramp_rounds: 100,
                    ..StreamConfig::default()
                },
                baselines: BaselineConfig {
                    train: false,
                    ..BaselineConfig::default()
                },
                sweep: SweepConfig {
                    sigmas: vec![0.41, 0.42, 0.5, 0.75, 1.0, 1.25],
                    train: false,
                    workers: 0,
                },
                ..desk
            },
        }
    }

    /// Server-cost parameters at the configured `σ`.
    pub fn server_params(&self) -> Params {
        self.server_params_at(self.server.time_sensitivity)
    }

    pub fn server_params_at(&self, sigma: f64) -> Params {
        Params {
            tradeoff: self.server.tradeoff,
            kappa1: self.server.kappa1,
            kappa2: self.server.kappa2,
            kappa3: self.server.kappa3,
            noise_scale: self.server.noise_scale,
            time_sensitivity: sigma,
            num_clients: self.population.num_clients,
            horizon: self.population.horizon,
        }
    }

    /// Optimizer settings with the global seed applied.
    pub fn bo_config(&self) -> BoConfig {
        BoConfig {
            seed: self.seed,
            ..self.bo.clone()
        }
    }

    /// Stream at `σ`, with the global seed applied.
    pub fn stream_at(&self, sigma: f64) -> StreamConfig {
        StreamConfig {
            seed: self.seed,
            ..self.stream.with_sensitivity(sigma, &self.sensitivity)
        }
    }

    /// Canonical TOML form; the config hash is computed over it.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// [`validate`](Self::validate) as a [`ConfigError`], for configs not read from a file.
    pub fn checked(self) -> Result<Self, ConfigError> {
        finish(self, None)
    }

    pub fn validate(&self) -> Result<(), (String, String)> {
        let fail = |field: &str, reason: String| Err((field.to_string(), reason));
        let p = &self.population;
        if p.num_clients == 0 {
            return fail("population.num_clients", "must be at least 1".into());
        }
        if p.horizon == 0 {
            return fail("population.horizon", "must be at least 1".into());
        }
        if !(p.initial_volume >= 0.0 && p.initial_volume.is_finite()) {
            return fail(
                "population.initial_volume",
                "must be finite and nonnegative".into(),
            );
        }
        for (name, [lo, hi]) in [
            ("population.collect_cost", p.collect_cost),
            ("population.train_cost", p.train_cost),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return fail(name, format!("need 0 < lo <= hi, got [{lo}, {hi}]"));
            }
        }
        if let Err(e) = self.server_params().validate() {
            return fail(&game_field("server", &e), e.to_string());
        }
        if let Err(e) = self.bo.validate() {
            return fail(&game_field("bo", &e), e.to_string());
        }
        if let Err(e) = self.fixed_point.validate() {
            return fail(&game_field("fixed_point", &e), e.to_string());
        }
        if let Err(e) = self.stream.validate() {
            return fail(&sim_field("stream", &e), e.to_string());
        }
        if let Err(e) = self.training.local.validate() {
            return fail(&sim_field("training.local", &e), e.to_string());
        }
        let s = &self.sensitivity;
        if !(s.drift_per_unit >= 0.0 && s.aging_noise >= 0.0 && s.class_fraction_drop >= 0.0) {
            return fail("sensitivity", "scalings must be nonnegative".into());
        }
        if !(s.min_class_fraction > 0.0 && s.min_class_fraction <= 1.0) {
            return fail(
                "sensitivity.min_class_fraction",
                "must lie in (0, 1]".into(),
            );
        }
        if self
            .sweep
            .sigmas
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return fail("sweep.sigmas", "must be finite and nonnegative".into());
        }
        if self.grid.resolution < 2 {
            return fail("grid.resolution", "must be at least 2".into());
        }
        Ok(())
    }
}

fn game_field(section: &str, e: &GameError) -> String {
    match e {
        GameError::InvalidParameter { name, .. } => format!("{section}.{name}"),
        _ => section.to_string(),
    }
}

fn sim_field(section: &str, e: &SimError) -> String {
    match e {
        SimError::InvalidConfig { name, .. } => format!("{section}.{name}"),
        _ => section.to_string(),
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Line (1-based) of the first assignment to the last segment of `field`.
fn line_of(text: &str, field: &str) -> Option<usize> {
    let leaf = field.rsplit('.').next()?;
    text.lines()
        .position(|line| {
            let t = line.trim_start();
            t.strip_prefix(leaf)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
                || t == format!("[{field}]")
        })
        .map(|i| i + 1)
}

/// Resolves a preset with an optional TOML overlay and validates the result.
pub fn load_config(preset: Preset, path: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    let base = ExperimentConfig::preset(preset);
    let Some(path) = path else {
        return finish(base, None);
    };
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |e: toml::de::Error| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let overlay: toml::Table = toml::from_str(&text).map_err(parse_err)?;
    // Schema check against the document itself, for line-accurate diagnostics.
    toml::from_str::<ExperimentConfig>(&text).map_err(parse_err)?;

    let mut merged = toml::Table::try_from(&base).expect("preset serializes");
    merge(&mut merged, overlay.clone());
    let mut config: ExperimentConfig = merged.try_into().map_err(parse_err)?;
    config.output_dir = match overlay.get("output_dir").and_then(|v| v.as_str()) {
        Some(dir) => PathBuf::from(dir),
        None => base.output_dir,
    };
    finish(config, Some((path, &text)))
}

fn finish(
    config: ExperimentConfig,
    source: Option<(&Path, &str)>,
) -> Result<ExperimentConfig, ConfigError> {
    match config.validate() {
        Ok(()) => Ok(config),
        Err((field, reason)) => {
            let location = match source {
                Some((path, text)) => match line_of(text, &field) {
                    Some(line) => format!("{}:{line}: ", path.display()),
                    None => format!("{}: ", path.display()),
                },
                None => String::new(),
            };
            Err(ConfigError::Invalid {
                field,
                reason,
                location,
            })
        }
    }
}
