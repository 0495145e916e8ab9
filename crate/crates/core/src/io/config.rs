//! Run configuration file.

use std::path::{Path, PathBuf};

use crate::enkf::LocalizationSpec;
use crate::error::{Error, Result};
use crate::io::keyvalue::KeyValues;
use crate::io::preset::load_preset;
use crate::pipeline::{AssimilationConfig, ExperimentSpec, ObsNoiseChoice};

pub const CONFIG_VERSION: u32 = 1;

/// Every accepted key.
pub const CONFIG_KEYS: &[&str] = &[
    "format_version",
    "preset",
    "seed",
    "ensemble.members",
    "ensemble.noise_sigma",
    "ensemble.noise_is_variance",
    "obs.sigma",
    "obs.noise_model",
    "localization.enabled",
    "localization.radius_days",
    "inflation.enabled",
    "lstm.epochs",
    "lstm.learning_rate",
    "lstm.batch_size",
    "lstm.hidden",
    "lstm.beta1",
    "lstm.beta2",
    "lstm.epsilon",
    "lstm.clip_norm",
    "lstm.input",
    "lstm.lai_scale",
    "experiment.seasons",
    "experiment.eval_seasons",
    "paths.weather",
    "paths.observations",
    "paths.truth",
    "paths.weights",
    "paths.out_dir",
];

/// Optional input and output locations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub weather: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Shipped preset name or preset file path.
    pub preset: String,
    pub assimilation: AssimilationConfig,
    pub seasons: Option<usize>,
    pub eval_seasons: Option<usize>,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "rice".to_string(),
            assimilation: AssimilationConfig::default(),
            seasons: None,
            eval_seasons: None,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text, path)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::read(path)?)
    }

    fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(CONFIG_KEYS)?;
        kv.check_version(CONFIG_VERSION)?;
        let mut cfg = RunConfig::default();
        let a = &mut cfg.assimilation;
        if let Some(p) = kv.get("preset")? {
            cfg.preset = p;
        }
        if let Some(seed) = kv.get("seed")? {
            a.seed = seed;
            a.train.seed = seed;
        }
        a.ensemble_size = kv.get_or("ensemble.members", a.ensemble_size)?;
        a.noise_sigma = kv.get_or("ensemble.noise_sigma", a.noise_sigma)?;
        a.noise_is_variance = kv.get_or("ensemble.noise_is_variance", a.noise_is_variance)?;
        a.obs_sigma = kv.get("obs.sigma")?;
        if let Some(model) = kv.get::<String>("obs.noise_model")? {
            a.obs_noise = match model.as_str() {
                "diagonal" => ObsNoiseChoice::Diagonal,
                "ensemble" => ObsNoiseChoice::Ensemble,
                other => {
                    return Err(Error::format(
                        kv.path(),
                        0,
                        format!("key `obs.noise_model`: expected diagonal or ensemble, got `{other}`"),
                    ))
                }
            };
        }
        a.localization = LocalizationSpec {
            enabled: kv.get_or("localization.enabled", a.localization.enabled)?,
            radius_days: kv.get_or("localization.radius_days", a.localization.radius_days)?,
        };
        a.inflation = kv.get_or("inflation.enabled", a.inflation)?;
        let t = &mut a.train;
        t.epochs = kv.get_or("lstm.epochs", t.epochs)?;
        t.learning_rate = kv.get_or("lstm.learning_rate", t.learning_rate)?;
        t.batch_size = kv.get_or("lstm.batch_size", t.batch_size)?;
        if let Some(h) = kv.get_list("lstm.hidden")? {
            t.hidden = h;
        }
        t.beta1 = kv.get_or("lstm.beta1", t.beta1)?;
        t.beta2 = kv.get_or("lstm.beta2", t.beta2)?;
        t.adam_eps = kv.get_or("lstm.epsilon", t.adam_eps)?;
        t.clip_norm = kv.get_or("lstm.clip_norm", t.clip_norm)?;
        if let Some(input) = kv.get::<String>("lstm.input")? {
            a.ensemble_input = match input.as_str() {
                "mean" => false,
                "ensemble" => true,
                other => {
                    return Err(Error::format(
                        kv.path(),
                        0,
                        format!("key `lstm.input`: expected mean or ensemble, got `{other}`"),
                    ))
                }
            };
        }
        a.lai_scale = kv.get_or("lstm.lai_scale", a.lai_scale)?;
        cfg.seasons = kv.get("experiment.seasons")?;
        cfg.eval_seasons = kv.get("experiment.eval_seasons")?;
        cfg.paths = Paths {
            weather: kv.get("paths.weather")?,
            observations: kv.get("paths.observations")?,
            truth: kv.get("paths.truth")?,
            weights: kv.get("paths.weights")?,
            out_dir: kv.get("paths.out_dir")?,
        };
        cfg.assimilation
            .validate()
            .map_err(|e| Error::format(kv.path(), 0, e.to_string()))?;
        Ok(cfg)
    }

    /// Overrides the seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.assimilation.seed = seed;
        self.assimilation.train.seed = seed;
    }

    /// The experiment preset with this config's overrides applied.
    pub fn experiment(&self) -> Result<ExperimentSpec> {
        let mut spec = load_preset(&self.preset)?;
        if let Some(n) = self.seasons {
            spec.seasons = n;
        }
        if let Some(n) = self.eval_seasons {
            spec.eval_seasons = n;
        }
        spec.validate()?;
        Ok(spec)
    }
}
