//! Experiment configuration: a single JSON document whose top-level keys can
//! be overridden from the command line. Everything is validated in
//! [`Experiment::resolve`] before any sampling starts.

use std::fs;
use std::path::{Path, PathBuf};

use langevin_core::analysis::DEFAULT_RADIUS_COEF;
use langevin_core::conditional::{PatchLayout, PerturbationMode};
use langevin_core::samplers::{
    build_geometric_levels, run_annealed_observed, run_chained_observed, run_vanilla_observed, ChainBatch,
    ChainedOptions, InitSpec, NoiseSchedule, Observer, SamplerConfig, StepSchedule, DEFAULT_EPS_BASE,
};
use langevin_core::MixtureModel;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, HarnessResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Vanilla,
    Annealed,
    Chained,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 3] = [SamplerKind::Vanilla, SamplerKind::Annealed, SamplerKind::Chained];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Vanilla => "vanilla",
            SamplerKind::Annealed => "annealed",
            SamplerKind::Chained => "chained",
        }
    }
}

/// Geometric noise levels `λ_1 … λ_L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub lambda_first: f64,
    pub lambda_last: f64,
    pub levels: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            lambda_first: 1.0,
            lambda_last: 0.01,
            levels: 10,
        }
    }
}

/// A model given inline or as a path to a JSON file. Inline models are kept
/// as raw JSON so that the echoed config reproduces them exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(Value),
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Inline(synthetic_model_json(100))
    }
}

impl ModelSource {
    pub fn load(&self, base: Option<&Path>) -> HarnessResult<MixtureModel> {
        let value = match self {
            ModelSource::Inline(v) => v.clone(),
            ModelSource::Path(p) => {
                let path = match base {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                let text = fs::read_to_string(&path)
                    .map_err(|e| HarnessError::config(format!("cannot read model {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| HarnessError::config(format!("model {}: {e}", path.display())))?
            }
        };
        serde_json::from_value(value).map_err(|e| HarnessError::config(format!("model: {e}")))
    }
}

/// JSON for `0.2 N(0, 3I) + 0.4 N(1, I) + 0.4 N(-1, I)` in dimension `dim`.
pub fn synthetic_model_json(dim: usize) -> Value {
    three_mode_json(dim, 1.0)
}

pub fn three_mode_json(dim: usize, offset: f64) -> Value {
    serde_json::json!({
        "dim": dim,
        "weights": [0.2, 0.4, 0.4],
        "components": [
            {"mean": {"fill": 0.0}, "variance": 3.0},
            {"mean": {"fill": offset}, "variance": 1.0},
            {"mean": {"fill": -offset}, "variance": 1.0}
        ]
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub sampler: SamplerKind,
    /// Patch size `Q`, chained dynamics only.
    pub patch_size: Option<usize>,
    /// Total iterations `T`; chained dynamics spends `T Q / d` per patch.
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub eps_base: f64,
    pub init: InitSpec,
    pub record_every: usize,
    pub radius_coef: f64,
    pub conditional_mode: PerturbationMode,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSource::default(),
            sampler: SamplerKind::Chained,
            patch_size: Some(10),
            iterations: 10_000,
            batch: 1000,
            seed: 0,
            noise: NoiseSpec::default(),
            eps_base: DEFAULT_EPS_BASE,
            init: InitSpec::Component(0),
            record_every: 0,
            radius_coef: DEFAULT_RADIUS_COEF,
            conditional_mode: PerturbationMode::CleanPrefix,
            out: None,
        }
    }
}

/// Top-level key overrides of the form `key=value`, where `value` is JSON or,
/// failing that, a bare string.
pub fn parse_override(arg: &str) -> HarnessResult<(String, Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| HarnessError::config(format!("override {arg:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(HarnessError::config(format!("override {arg:?} has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Reads a config file. A run manifest is accepted too, in which case its
/// echoed config is used.
pub fn read_config_value(path: &Path) -> HarnessResult<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| HarnessError::config(format!("config {}: {e}", path.display())))?;
    match value {
        Value::Object(ref map) if map.contains_key("manifest_version") => map
            .get("config")
            .cloned()
            .ok_or_else(|| HarnessError::config("manifest has no config")),
        Value::Object(_) => Ok(value),
        _ => Err(HarnessError::config("config must be a JSON object")),
    }
}

/// Applies overrides to a config document and deserializes it.
pub fn build_config(base: Option<Value>, overrides: &[(String, Value)]) -> HarnessResult<ExperimentConfig> {
    let mut value = base.unwrap_or_else(|| Value::Object(Default::default()));
    let map = value
        .as_object_mut()
        .ok_or_else(|| HarnessError::config("config must be a JSON object"))?;
    for (k, v) in overrides {
        map.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| HarnessError::config(format!("config: {e}")))
}

/// Per-run schedules: for chained dynamics they cover one patch.
#[derive(Debug, Clone)]
pub struct Schedules {
    pub noise: NoiseSchedule,
    pub steps: StepSchedule,
}

/// A validated, ready-to-run experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: MixtureModel,
    pub sampler: SamplerConfig,
    pub layout: Option<PatchLayout>,
    pub schedules: Schedules,
}

impl Experiment {
    /// Checks every constraint of the config against the model and builds
    /// the schedules. `base` resolves relative model paths.
    pub fn resolve(config: ExperimentConfig, base: Option<&Path>) -> HarnessResult<Self> {
        let model = config.model.load(base)?;
        if !(config.radius_coef > 0.0 && config.radius_coef.is_finite()) {
            return Err(HarnessError::config(format!(
                "radius_coef must be positive, got {}",
                config.radius_coef
            )));
        }
        let sampler = SamplerConfig {
            iterations: config.iterations,
            seed: config.seed,
            batch: config.batch,
            init: config.init.clone(),
            record_every: config.record_every,
        };
        sampler.validate(&model)?;

        let (layout, schedule_len) = match config.sampler {
            SamplerKind::Chained => {
                let q = config
                    .patch_size
                    .ok_or_else(|| HarnessError::config("chained sampler needs patch_size"))?;
                let layout = PatchLayout::new(model.dim(), q)?;
                if config.iterations % layout.num_patches() != 0 {
                    return Err(HarnessError::config(format!(
                        "iterations {} not divisible by the {} patches",
                        config.iterations,
                        layout.num_patches()
                    )));
                }
                (Some(layout), config.iterations / layout.num_patches())
            }
            _ => (None, config.iterations),
        };
        let n = config.noise;
        let levels = build_geometric_levels(n.lambda_first, n.lambda_last, n.levels)?;
        let (noise, steps) = if schedule_len == 0 {
            // No steps: the run returns its initial states.
            (NoiseSchedule::unperturbed(0), StepSchedule::constant(config.eps_base, 0)?)
        } else {
            let noise = NoiseSchedule::expand(&levels, schedule_len).map_err(|e| match config.sampler {
                SamplerKind::Chained => HarnessError::config(format!("per-patch schedule: {e}")),
                _ => HarnessError::from(e),
            })?;
            let steps = StepSchedule::build(&noise, config.eps_base)?;
            (noise, steps)
        };
        Ok(Self {
            config,
            model,
            sampler,
            layout,
            schedules: Schedules { noise, steps },
        })
    }

    /// Runs the configured sampler on the current rayon pool.
    pub fn execute<O: Observer>(&self, observer: &O) -> HarnessResult<(ChainBatch, Vec<O::Trace>)> {
        let Schedules { noise, steps } = &self.schedules;
        let out = match (self.config.sampler, self.layout) {
            (SamplerKind::Vanilla, _) => run_vanilla_observed(&self.model, &self.sampler, steps, observer)?,
            (SamplerKind::Annealed, _) => run_annealed_observed(&self.model, &self.sampler, noise, steps, observer)?,
            (SamplerKind::Chained, Some(layout)) => {
                let options = ChainedOptions {
                    mode: self.config.conditional_mode,
                };
                run_chained_observed(&self.model, &self.sampler, layout, noise, steps, options, observer)?
            }
            (SamplerKind::Chained, None) => unreachable!("resolve sets a layout for chained runs"),
        };
        Ok(out)
    }
}
