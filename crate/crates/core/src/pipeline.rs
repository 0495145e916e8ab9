//! Twin experiments: synthetic seasons, corrupted observations, and the
//! open-loop / EnKF / EnKF-LSTM methods run end to end.

use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{
    derive_seed, draw_noise_vector, seeded_rng, to_sentinel_matrix_per_day, EnsembleMatrix,
    Observation, ObservationMatrix, ObservationSeries, TimeGrid,
};
use crate::crop::{forecast_ensemble, forecast_member, CropParams, LaiModel, LaiSurrogate, PerturbedParamSet, WeatherDay};
use crate::enkf::{enkf_update, EnkfSettings, LocalizationSpec, ObsNoiseKind, StepDiagnostics};
use crate::error::{Error, Result};
use crate::lstm::{Emulator, InputEncoding, SeasonInputs, TrainConfig};
use crate::metrics::{metric_table, MetricReport};

/// Assimilation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "open-loop")]
    OpenLoop,
    #[serde(rename = "enkf")]
    Enkf,
    #[serde(rename = "enkf-lstm")]
    EnkfLstm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::OpenLoop, Method::Enkf, Method::EnkfLstm];

    pub fn name(&self) -> &'static str {
        match self {
            Method::OpenLoop => "open-loop",
            Method::Enkf => "enkf",
            Method::EnkfLstm => "enkf-lstm",
        }
    }

    /// Row label used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            Method::OpenLoop => "Initial",
            Method::Enkf => "EnKF",
            Method::EnkfLstm => "EnKF-LSTM",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "open-loop" | "openloop" | "initial" => Ok(Method::OpenLoop),
            "enkf" => Ok(Method::Enkf),
            "enkf-lstm" => Ok(Method::EnkfLstm),
            other => Err(Error::invalid(format!(
                "unknown method `{other}` (expected open-loop, enkf or enkf-lstm)"
            ))),
        }
    }
}

/// Seeded stochastic weather generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherGenerator {
    /// Annual mean of daily mean temperature, degC.
    pub temp_mean: f64,
    /// Amplitude of the annual cycle, degC.
    pub temp_amplitude: f64,
    /// Day of year of the warmest day.
    pub warmest_doy: f64,
    /// Standard deviation of the AR(1) daily anomaly innovations, degC.
    pub temp_noise: f64,
    /// AR(1) coefficient of the daily anomaly.
    pub temp_persistence: f64,
    /// Mean diurnal temperature range, degC.
    pub diurnal_range: f64,
    /// Radiation on an average dry day, J/m2/day.
    pub irrad_base: f64,
    /// Radiation change per degC of anomaly, J/m2/day.
    pub irrad_per_degree: f64,
    pub irrad_noise: f64,
    pub rain_probability: f64,
    /// Mean rain on wet days, cm/day.
    pub rain_mean: f64,
    /// Mean wind speed, m/s.
    pub wind_mean: f64,
}

impl WeatherGenerator {
    pub fn generate(&self, start: NaiveDate, n_days: usize, seed: u64) -> Vec<WeatherDay> {
        let mut rng = seeded_rng(seed, 7);
        let rain = Exp::new(1.0 / self.rain_mean.max(1e-9)).expect("positive rate");
        let start_doy = f64::from(start.ordinal());
        let mut anomaly = 0.0;
        (0..n_days)
            .map(|d| {
                let doy = start_doy + d as f64;
                let phase = 2.0 * std::f64::consts::PI * (doy - self.warmest_doy) / 365.0;
                let z: f64 = StandardNormal.sample(&mut rng);
                anomaly = self.temp_persistence * anomaly + self.temp_noise * z;
                let mean = self.temp_mean + self.temp_amplitude * phase.cos() + anomaly;
                let zr: f64 = StandardNormal.sample(&mut rng);
                let range = (self.diurnal_range + zr).max(1.0);
                let wet = rng.random::<f64>() < self.rain_probability;
                let rain_cm = if wet { rain.sample(&mut rng) } else { 0.0 };
                let zi: f64 = StandardNormal.sample(&mut rng);
                let mut irrad = self.irrad_base
                    + self.irrad_per_degree * (mean - self.temp_mean)
                    + self.irrad_noise * zi;
                if wet {
                    irrad *= 0.6;
                }
                let tmin = mean - 0.5 * range;
                let zw: f64 = StandardNormal.sample(&mut rng);
                WeatherDay {
                    tmax: mean + 0.5 * range,
                    tmin,
                    irrad: irrad.max(0.0),
                    vap: 6.108 * (17.27 * tmin / (tmin + 237.3)).exp(),
                    wind: (self.wind_mean + zw).abs(),
                    rain: rain_cm,
                }
            })
            .collect()
    }
}

/// Multiplicative offsets between the true crop and the model used for assimilation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBias {
    pub rgrlai: f64,
    pub lai_max: f64,
    pub tsum_emergence: f64,
}

impl ModelBias {
    pub fn none() -> Self {
        Self {
            rgrlai: 1.0,
            lai_max: 1.0,
            tsum_emergence: 1.0,
        }
    }

    pub fn apply(&self, p: &CropParams) -> Result<CropParams> {
        let out = CropParams {
            rgrlai: p.rgrlai * self.rgrlai,
            lai_max: p.lai_max * self.lai_max,
            tsum_emergence: p.tsum_emergence * self.tsum_emergence,
            ..*p
        };
        out.validate()?;
        Ok(out)
    }
}

/// A single abnormal observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub day: usize,
    pub factor: f64,
}

/// Everything that defines a twin experiment family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub crop_name: String,
    pub variety: String,
    pub start_date: NaiveDate,
    pub n_days: usize,
    pub truth_params: CropParams,
    pub model_bias: ModelBias,
    pub weather: WeatherGenerator,
    /// Seasons generated for emulator training.
    pub seasons: usize,
    /// Held-out seasons for evaluation.
    pub eval_seasons: usize,
    pub seed: u64,
    /// Observation spacing range in days (inclusive).
    pub interval: (usize, usize),
    /// First and last day on which observations may be taken.
    pub obs_window: (usize, usize),
    pub obs_sigma: f64,
    /// Inclusive day ranges forced missing.
    pub missing_windows: Vec<(usize, usize)>,
    pub outlier: Option<Outlier>,
    pub methods: Vec<Method>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        TimeGrid::new(self.start_date, self.n_days)?;
        self.truth_params.validate()?;
        self.model_bias.apply(&self.truth_params)?;
        if self.seasons == 0 || self.eval_seasons == 0 {
            return Err(Error::invalid("season counts must be >= 1"));
        }
        let (lo, hi) = self.interval;
        if lo == 0 || lo > hi || hi > self.n_days {
            return Err(Error::invalid(format!(
                "observation interval {lo}-{hi} must satisfy 1 <= min <= max <= {}",
                self.n_days
            )));
        }
        if self.obs_window.0 > self.obs_window.1 {
            return Err(Error::invalid("observation window start is after its end"));
        }
        if !(self.obs_sigma >= 0.0) {
            return Err(Error::invalid("observation sigma must be >= 0"));
        }
        for &(a, b) in &self.missing_windows {
            if a > b {
                return Err(Error::invalid(format!("missing window {a}-{b} is reversed")));
            }
        }
        if let Some(o) = self.outlier {
            if o.day >= self.n_days || !(o.factor >= 0.0) {
                return Err(Error::invalid("outlier day must be on the grid with factor >= 0"));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("experiment needs at least one method"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.start_date, self.n_days)
    }

    pub fn model_params(&self) -> Result<CropParams> {
        self.model_bias.apply(&self.truth_params)
    }
}

/// Which observation-error covariance the filter uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsNoiseChoice {
    Diagonal,
    Ensemble,
}

/// Filter, ensemble and emulator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssimilationConfig {
    pub ensemble_size: usize,
    /// Parameter perturbation scale.
    pub noise_sigma: f64,
    /// Read `noise_sigma` as a variance instead of a standard deviation.
    pub noise_is_variance: bool,
    /// Observation error standard deviation; `None` uses the experiment's.
    pub obs_sigma: Option<f64>,
    pub obs_noise: ObsNoiseChoice,
    pub localization: LocalizationSpec,
    pub inflation: bool,
    pub train: TrainConfig,
    pub ensemble_input: bool,
    pub lai_scale: f64,
    pub seed: u64,
}

impl Default for AssimilationConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 50,
            noise_sigma: 0.1,
            noise_is_variance: false,
            obs_sigma: None,
            obs_noise: ObsNoiseChoice::Diagonal,
            localization: LocalizationSpec::default(),
            inflation: true,
            train: TrainConfig::default(),
            ensemble_input: false,
            lai_scale: 5.0,
            seed: 42,
        }
    }
}

impl AssimilationConfig {
    pub fn noise_std(&self) -> f64 {
        if self.noise_is_variance {
            self.noise_sigma.sqrt()
        } else {
            self.noise_sigma
        }
    }

    pub fn encoding(&self) -> InputEncoding {
        if self.ensemble_input {
            InputEncoding::Ensemble {
                members: self.ensemble_size,
            }
        } else {
            InputEncoding::Mean
        }
    }

    pub fn enkf_settings(&self, obs_sigma: f64) -> EnkfSettings {
        EnkfSettings {
            obs_noise: match self.obs_noise {
                ObsNoiseChoice::Diagonal => ObsNoiseKind::Diagonal {
                    sigma: self.obs_sigma.unwrap_or(obs_sigma),
                },
                ObsNoiseChoice::Ensemble => ObsNoiseKind::Ensemble,
            },
            localization: self.localization,
            inflation: self.inflation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::invalid("ensemble size must be >= 2"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be >= 0"));
        }
        if let Some(s) = self.obs_sigma {
            if !(s >= 0.0) {
                return Err(Error::invalid("observation sigma must be >= 0"));
            }
        }
        LocalizationSpec::new(self.localization.enabled, self.localization.radius_days)?;
        self.train.validate()?;
        if !(self.lai_scale > 0.0) {
            return Err(Error::invalid("lai scale must be > 0"));
        }
        Ok(())
    }
}

/// One synthetic season.
#[derive(Debug, Clone, PartialEq)]
pub struct Season {
    pub index: usize,
    pub seed: u64,
    pub weather: Vec<WeatherDay>,
    pub truth: Vec<f64>,
}

const TRAIN_TAG: u64 = 1;
const EVAL_TAG: u64 = 2;

fn season_seed(spec_seed: u64, role: u64, index: usize) -> u64 {
    derive_seed(derive_seed(spec_seed, role), index as u64)
}

fn make_season(spec: &ExperimentSpec, role: u64, index: usize) -> Result<Season> {
    let seed = season_seed(spec.seed, role, index);
    let weather = spec.weather.generate(spec.start_date, spec.n_days, seed);
    let truth = forecast_member(&LaiSurrogate, &spec.truth_params, &weather, spec.n_days - 1, None)?;
    Ok(Season {
        index,
        seed,
        weather,
        truth,
    })
}

/// Generates `spec.seasons` training seasons with truth from the unperturbed parameters.
pub fn generate_seasons(spec: &ExperimentSpec) -> Result<Vec<Season>> {
    spec.validate()?;
    (0..spec.seasons)
        .into_par_iter()
        .map(|i| make_season(spec, TRAIN_TAG, i))
        .collect()
}

/// Evaluation season `index`, as produced by [`generate_eval_seasons`].
pub fn eval_season(spec: &ExperimentSpec, index: usize) -> Result<Season> {
    spec.validate()?;
    make_season(spec, EVAL_TAG, index)
}

/// Held-out evaluation seasons, disjoint from [`generate_seasons`].
pub fn generate_eval_seasons(spec: &ExperimentSpec) -> Result<Vec<Season>> {
    spec.validate()?;
    (0..spec.eval_seasons)
        .into_par_iter()
        .map(|i| make_season(spec, EVAL_TAG, i))
        .collect()
}

/// Corrupts a truth trajectory into sparse noisy observations.
pub fn synthesize_observations(truth: &[f64], spec: &ExperimentSpec, seed: u64) -> Result<ObservationSeries> {
    let mut rng = seeded_rng(seed, 11);
    let n = truth.len();
    let (lo, hi) = spec.interval;
    let mut obs = vec![Observation::Missing; n];
    let in_gap = |d: usize| spec.missing_windows.iter().any(|&(a, b)| d >= a && d <= b);
    let noisy = |v: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let z: f64 = StandardNormal.sample(rng);
        (v + spec.obs_sigma * z).max(0.0)
    };

    let last = spec.obs_window.1.min(n.saturating_sub(1));
    let mut day = spec.obs_window.0 + rng.random_range(0..lo);
    while day <= last {
        let value = noisy(truth[day], &mut rng);
        if !in_gap(day) {
            obs[day] = Observation::Value(value);
        }
        day += rng.random_range(lo..=hi);
    }
    if let Some(o) = spec.outlier {
        if o.day < n && !in_gap(o.day) {
            let base = match obs[o.day] {
                Observation::Value(v) => v,
                Observation::Missing => noisy(truth[o.day], &mut rng),
            };
            obs[o.day] = Observation::Value(base * o.factor);
        }
    }
    ObservationSeries::new(obs)
}

/// Perturbed ensemble parameters for one season.
pub fn perturbed_params(base: &CropParams, cfg: &AssimilationConfig, seed: u64) -> Result<PerturbedParamSet> {
    let noise = draw_noise_vector(derive_seed(seed, 0xE5), cfg.ensemble_size, cfg.noise_std())?;
    PerturbedParamSet::new(*base, &noise)
}

/// Ensemble forecast with no assimilation.
pub struct OpenLoopRun {
    pub trajectory: Vec<f64>,
    pub ensemble: EnsembleMatrix,
}

pub fn run_open_loop(weather: &[WeatherDay], params: &PerturbedParamSet) -> Result<OpenLoopRun> {
    if weather.is_empty() {
        return Err(Error::invalid("open-loop run needs weather"));
    }
    let ensemble = forecast_ensemble(&LaiSurrogate, params, weather, weather.len() - 1)?;
    Ok(OpenLoopRun {
        trajectory: ensemble.mean_trajectory(),
        ensemble,
    })
}

/// Output of the sequential filter.
#[derive(Debug, Clone)]
pub struct EnkfRun {
    /// Analysis mean of each day at the step that day was added.
    pub trajectory: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Perturbed observations used by the filter.
    pub obs_matrix: ObservationMatrix,
}

/// Sequential EnKF: each day the members advance one step from their own
/// analysis, the trajectory-so-far is updated with the newly available
/// observation, and the analysis becomes the next forecast's initial state.
pub fn run_enkf(
    weather: &[WeatherDay],
    params: &PerturbedParamSet,
    obs: &ObservationSeries,
    settings: &EnkfSettings,
    obs_sigma: f64,
    seed: u64,
) -> Result<EnkfRun> {
    let n = obs.len();
    if weather.len() < n || n == 0 {
        return Err(Error::invalid(format!(
            "EnKF run needs {n} >= 1 weather days, got {}",
            weather.len()
        )));
    }
    let m = params.members();
    if m < 2 {
        return Err(Error::invalid("EnKF run needs M >= 2"));
    }
    let obs_matrix = to_sentinel_matrix_per_day(obs, m, |day| {
        draw_noise_vector(derive_seed(seed, 0x0B5 + day as u64), m, obs_sigma)
    })?;

    let model = LaiSurrogate;
    let member_params: Vec<CropParams> = (0..m).map(|i| params.member_params(i)).collect();
    let mut states: Vec<_> = (0..m).map(|_| model.initial_state()).collect();
    let mut members: Vec<Vec<f64>> = vec![Vec::with_capacity(n); m];
    let mut trajectory = Vec::with_capacity(n);
    let mut diagnostics = Vec::new();

    for day in 0..n {
        if day > 0 {
            states = states
                .par_iter()
                .zip(&member_params)
                .map(|(s, p)| model.advance(s, &weather[day - 1], p))
                .collect::<Result<Vec<_>>>()?;
        }
        for (traj, s) in members.iter_mut().zip(&states) {
            traj.push(model.lai(s));
        }
        if !obs_matrix.is_observed(day) {
            trajectory.push(members.iter().map(|t| t[day]).sum::<f64>() / m as f64);
            continue;
        }
        let forecast = EnsembleMatrix::from_members(&members)?;
        let (analysis, diag) = enkf_update(&forecast, &obs_matrix.prefix(day + 1), settings, day)?;
        diagnostics.push(diag);
        for (i, (traj, state)) in members.iter_mut().zip(states.iter_mut()).enumerate() {
            for (d, v) in traj.iter_mut().enumerate() {
                *v = analysis.get(d, i).max(0.0);
            }
            let floor = model.lai_floor(state, &member_params[i]);
            let current = traj[day].max(floor);
            traj[day] = current;
            *state = model.with_lai(*state, current);
        }
        trajectory.push(members.iter().map(|t| t[day]).sum::<f64>() / m as f64);
    }
    Ok(EnkfRun {
        trajectory,
        diagnostics,
        obs_matrix,
    })
}

/// Applies a trained emulator to one season.
pub fn run_enkf_lstm(emulator: &Emulator, inputs: &SeasonInputs) -> Result<Vec<f64>> {
    emulator.emulate(inputs)
}

/// Per-season outputs of every requested method.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub season: usize,
    pub seed: u64,
    pub truth: Vec<f64>,
    pub observations: ObservationSeries,
    pub open_loop: Option<Vec<f64>>,
    pub enkf: Option<Vec<f64>>,
    pub enkf_lstm: Option<Vec<f64>>,
    pub metrics: Vec<MetricReport>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub elapsed_ms: u128,
}

impl RunResult {
    pub fn series(&self, method: Method) -> Option<&[f64]> {
        match method {
            Method::OpenLoop => self.open_loop.as_deref(),
            Method::Enkf => self.enkf.as_deref(),
            Method::EnkfLstm => self.enkf_lstm.as_deref(),
        }
    }

    pub fn metric(&self, method: Method) -> Option<&MetricReport> {
        self.metrics.iter().find(|r| r.method == method.label())
    }
}

/// Summary of emulator training.
#[derive(Debug, Clone)]
pub struct TrainingSummary {
    pub emulator: Emulator,
    pub loss_curve: Vec<f64>,
    pub validation_curve: Vec<f64>,
    pub train_rmse: f64,
    pub train_seasons: usize,
    pub validation_seasons: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunResult>,
    /// Metrics pooled over every evaluation day.
    pub table: Vec<MetricReport>,
    pub training: Option<TrainingSummary>,
}

/// Synthetic observations of a generated season.
pub fn season_observations(spec: &ExperimentSpec, season: &Season) -> Result<ObservationSeries> {
    synthesize_observations(&season.truth, spec, derive_seed(season.seed, 0x0B))
}

/// Open-loop and (optionally) EnKF results for one season's inputs.
pub struct Prepared {
    pub observations: ObservationSeries,
    pub open_loop: OpenLoopRun,
    pub enkf: Option<EnkfRun>,
}

impl Prepared {
    pub fn emulator_inputs(&self, with_ensemble: bool) -> Result<SeasonInputs> {
        let mut inputs = SeasonInputs::new(self.open_loop.trajectory.clone(), self.observations.clone())?;
        if with_ensemble {
            let enkf = self
                .enkf
                .as_ref()
                .ok_or_else(|| Error::invalid("ensemble input needs the EnKF observation matrix"))?;
            inputs.ensemble = Some((self.open_loop.ensemble.clone(), enkf.obs_matrix.clone()));
        }
        Ok(inputs)
    }
}

/// Runs the open loop and, when asked, the EnKF on one season's inputs.
/// `seed` fixes the parameter and observation perturbations.
pub fn prepare(
    spec: &ExperimentSpec,
    cfg: &AssimilationConfig,
    weather: &[WeatherDay],
    observations: ObservationSeries,
    seed: u64,
    with_enkf: bool,
) -> Result<Prepared> {
    if weather.len() != observations.len() {
        return Err(Error::invalid(format!(
            "weather has {} days but observations have {}",
            weather.len(),
            observations.len()
        )));
    }
    let params = perturbed_params(&spec.model_params()?, cfg, derive_seed(seed, cfg.seed))?;
    let open_loop = run_open_loop(weather, &params)?;
    let enkf = if with_enkf {
        let sigma = cfg.obs_sigma.unwrap_or(spec.obs_sigma);
        Some(run_enkf(
            weather,
            &params,
            &observations,
            &cfg.enkf_settings(spec.obs_sigma),
            sigma,
            derive_seed(seed, cfg.seed ^ 0xA5),
        )?)
    } else {
        None
    };
    Ok(Prepared {
        observations,
        open_loop,
        enkf,
    })
}

/// Outputs of the requested methods on one season.
#[derive(Debug, Clone)]
pub struct Assimilated {
    pub outputs: Vec<(Method, Vec<f64>)>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Runs `methods` on one season; EnKF-LSTM needs `emulator`.
pub fn assimilate(
    spec: &ExperimentSpec,
    cfg: &AssimilationConfig,
    weather: &[WeatherDay],
    observations: ObservationSeries,
    methods: &[Method],
    emulator: Option<&Emulator>,
    seed: u64,
) -> Result<Assimilated> {
    let needs_enkf =
        methods.contains(&Method::Enkf) || (methods.contains(&Method::EnkfLstm) && cfg.ensemble_input);
    let p = prepare(spec, cfg, weather, observations, seed, needs_enkf)?;
    let mut outputs = Vec::with_capacity(methods.len());
    for &m in methods {
        let series = match m {
            Method::OpenLoop => p.open_loop.trajectory.clone(),
            Method::Enkf => p.enkf.as_ref().expect("enkf computed").trajectory.clone(),
            Method::EnkfLstm => {
                let emu = emulator.ok_or_else(|| Error::invalid("enkf-lstm needs a trained emulator"))?;
                run_enkf_lstm(emu, &p.emulator_inputs(cfg.ensemble_input)?)?
            }
        };
        outputs.push((m, series));
    }
    Ok(Assimilated {
        outputs,
        diagnostics: p.enkf.map(|e| e.diagnostics).unwrap_or_default(),
    })
}

fn with_season(index: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NumericalFailure { day, reason } => Error::NumericalFailure {
            day,
            reason: format!("season {index}: {reason}"),
        },
        Error::InvalidArgument(msg) => Error::InvalidArgument(format!("season {index}: {msg}")),
        other => other,
    }
}

/// Stage one and two of the emulator: EnKF targets on training seasons, then training.
pub fn train_stage(spec: &ExperimentSpec, cfg: &AssimilationConfig) -> Result<TrainingSummary> {
    cfg.validate()?;
    let seasons = generate_seasons(spec)?;
    let pairs = seasons
        .into_par_iter()
        .map(|s| {
            let obs = season_observations(spec, &s)?;
            let p = prepare(spec, cfg, &s.weather, obs, s.seed, true).map_err(with_season(s.index))?;
            let inputs = p.emulator_inputs(cfg.ensemble_input)?;
            Ok((inputs, p.enkf.expect("enkf computed").trajectory))
        })
        .collect::<Result<Vec<_>>>()?;
    // Split by whole seasons: the last 20% validate.
    let n_val = if pairs.len() >= 5 { pairs.len() / 5 } else { 0 };
    let (train, val) = pairs.split_at(pairs.len() - n_val);
    let trained = Emulator::train(train, val, cfg.encoding(), cfg.lai_scale, &cfg.train)?;
    Ok(TrainingSummary {
        emulator: trained.emulator,
        loss_curve: trained.loss_curve,
        validation_curve: trained.validation_curve,
        train_rmse: trained.train_rmse,
        train_seasons: train.len(),
        validation_seasons: val.len(),
    })
}

/// Runs every requested method on the evaluation seasons.
pub fn run_experiment(spec: &ExperimentSpec, cfg: &AssimilationConfig) -> Result<ExperimentResult> {
    run_experiment_with(spec, cfg, None)
}

/// Like [`run_experiment`], reusing an already trained emulator when given.
pub fn run_experiment_with(
    spec: &ExperimentSpec,
    cfg: &AssimilationConfig,
    emulator: Option<TrainingSummary>,
) -> Result<ExperimentResult> {
    spec.validate()?;
    cfg.validate()?;
    let training = if spec.methods.contains(&Method::EnkfLstm) {
        Some(match emulator {
            Some(t) => t,
            None => train_stage(spec, cfg)?,
        })
    } else {
        None
    };
    let eval = generate_eval_seasons(spec)?;
    let runs = eval
        .into_par_iter()
        .map(|season| {
            let started = Instant::now();
            let obs = season_observations(spec, &season)?;
            let out = assimilate(
                spec,
                cfg,
                &season.weather,
                obs.clone(),
                &spec.methods,
                training.as_ref().map(|t| &t.emulator),
                season.seed,
            )
            .map_err(with_season(season.index))?;
            let named: Vec<(&str, &[f64])> = out.outputs.iter().map(|(m, s)| (m.label(), s.as_slice())).collect();
            let metrics = metric_table(&season.truth, &named)?;
            let take = |m: Method| out.outputs.iter().find(|(x, _)| *x == m).map(|(_, s)| s.clone());
            Ok(RunResult {
                season: season.index,
                seed: season.seed,
                open_loop: take(Method::OpenLoop),
                enkf: take(Method::Enkf),
                enkf_lstm: take(Method::EnkfLstm),
                truth: season.truth,
                observations: obs,
                metrics,
                diagnostics: out.diagnostics,
                elapsed_ms: started.elapsed().as_millis(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let truth: Vec<f64> = runs.iter().flat_map(|r| r.truth.iter().copied()).collect();
    let pooled: Vec<(&str, Vec<f64>)> = spec
        .methods
        .iter()
        .map(|&m| {
            (
                m.label(),
                runs.iter()
                    .flat_map(|r| r.series(m).unwrap_or(&[]).iter().copied())
                    .collect(),
            )
        })
        .collect();
    let table = metric_table(&truth, &pooled)?;
    Ok(ExperimentResult {
        runs,
        table,
        training,
    })
}

/// Median of a sample (mean of the two middle values for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::preset::shipped_preset;

    fn rice() -> ExperimentSpec {
        shipped_preset("rice").unwrap()
    }

    #[test]
    fn full_season_set_has_25200_rows() {
        let seasons = generate_seasons(&rice()).unwrap();
        assert_eq!(seasons.len(), 150);
        assert_eq!(seasons.iter().map(|s| s.truth.len()).sum::<usize>(), 25200);
        assert!(seasons.iter().all(|s| s.weather.len() == 168));
    }

    #[test]
    fn seasons_are_reproducible_and_distinct() {
        let mut spec = rice();
        spec.seasons = 2;
        let a = generate_seasons(&spec).unwrap();
        let b = generate_seasons(&spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].truth, a[1].truth);
        let eval = generate_eval_seasons(&spec).unwrap();
        assert_ne!(eval[0].truth, a[0].truth);
    }

    #[test]
    fn truth_is_nonnegative_with_one_peak() {
        for name in ["rice", "maize", "soybean"] {
            let mut spec = shipped_preset(name).unwrap();
            spec.seasons = 30;
            for s in generate_seasons(&spec).unwrap() {
                assert!(s.truth.iter().all(|&v| v >= 0.0));
                let peak = s.truth.iter().cloned().fold(f64::MIN, f64::max);
                assert!(peak > 1.0, "{name}: peak {peak}");
                // Warm spells make the plateau wobble, but there is no second growth phase.
                let mut low = f64::MAX;
                let mut worst: f64 = 0.0;
                let top = s.truth.iter().position(|&v| v == peak).unwrap();
                for &v in &s.truth[top..] {
                    low = low.min(v);
                    worst = worst.max(v - low);
                }
                assert!(worst < 0.1 * peak, "{name}: rebound {worst}");
            }
        }
    }

    #[test]
    fn noiseless_dense_observations_equal_truth() {
        let mut spec = rice();
        spec.obs_sigma = 0.0;
        spec.interval = (1, 1);
        spec.obs_window = (0, 167);
        let truth: Vec<f64> = (0..168).map(|d| d as f64 * 0.01).collect();
        let obs = synthesize_observations(&truth, &spec, 3).unwrap();
        assert_eq!(obs.as_options(), truth.iter().map(|&v| Some(v)).collect::<Vec<_>>());
    }

    #[test]
    fn missing_window_over_everything_empties_series() {
        let mut spec = rice();
        spec.missing_windows = vec![(0, 167)];
        let truth = vec![1.0; 168];
        assert!(synthesize_observations(&truth, &spec, 3).unwrap().observed_days().is_empty());
    }

    #[test]
    fn maize_observations_stay_mid_season() {
        let spec = shipped_preset("maize").unwrap();
        let truth = vec![2.0; 168];
        for seed in 0..20 {
            let days = synthesize_observations(&truth, &spec, seed).unwrap().observed_days();
            assert!(!days.is_empty());
            assert!(days.iter().all(|&d| (48..=82).contains(&d)), "{days:?}");
            assert!(days.windows(2).all(|w| (2..=7).contains(&(w[1] - w[0]))));
        }
    }

    #[test]
    fn outlier_is_scaled() {
        let mut spec = shipped_preset("soybean").unwrap();
        spec.obs_sigma = 0.0;
        let truth = vec![2.0; 168];
        let obs = synthesize_observations(&truth, &spec, 1).unwrap();
        assert_eq!(obs.get(75).value(), Some(3.2));
    }

    #[test]
    fn open_loop_without_spread_is_the_single_forecast() {
        let spec = rice();
        let season = &generate_eval_seasons(&spec).unwrap()[0];
        let base = spec.model_params().unwrap();
        let params = PerturbedParamSet::from_offsets(base, vec![0.0; 5]).unwrap();
        let ol = run_open_loop(&season.weather, &params).unwrap();
        let single = forecast_member(&LaiSurrogate, &base, &season.weather, 167, None).unwrap();
        for (a, b) in ol.trajectory.iter().zip(&single) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(ol.trajectory, crate::crop::forecast_ensemble(&LaiSurrogate, &params, &season.weather, 167).unwrap().mean_trajectory());
    }

    #[test]
    fn enkf_without_observations_is_open_loop() {
        let spec = rice();
        let cfg = AssimilationConfig::default();
        let season = &generate_eval_seasons(&spec).unwrap()[0];
        let params = perturbed_params(&spec.model_params().unwrap(), &cfg, 9).unwrap();
        let ol = run_open_loop(&season.weather, &params).unwrap();
        let run = run_enkf(
            &season.weather,
            &params,
            &ObservationSeries::all_missing(168),
            &cfg.enkf_settings(0.2),
            0.2,
            4,
        )
        .unwrap();
        assert_eq!(run.trajectory, ol.trajectory);
        assert!(run.diagnostics.is_empty());
    }

    #[test]
    fn enkf_tracks_precise_dense_observations() {
        let mut spec = rice();
        spec.obs_sigma = 1e-3;
        spec.interval = (1, 1);
        spec.obs_window = (40, 160);
        let season = &generate_eval_seasons(&spec).unwrap()[0];
        let obs = season_observations(&spec, season).unwrap();
        let cfg = AssimilationConfig::default();
        let p = prepare(&spec, &cfg, &season.weather, obs.clone(), 1, true).unwrap();
        let enkf = p.enkf.unwrap().trajectory;
        for d in obs.observed_days() {
            assert!((enkf[d] - season.truth[d]).abs() < 0.02, "day {d}: {} vs {}", enkf[d], season.truth[d]);
        }
    }

    #[test]
    fn open_loop_only_gives_one_row() {
        let mut spec = rice();
        spec.methods = vec![Method::OpenLoop];
        spec.eval_seasons = 2;
        let res = run_experiment(&spec, &AssimilationConfig::default()).unwrap();
        assert_eq!(res.table.len(), 1);
        assert_eq!(res.table[0].method, "Initial");
        assert!(res.training.is_none());
        assert!(res.runs.iter().all(|r| r.enkf.is_none() && r.truth.len() == 168));
    }

    #[test]
    fn lstm_requires_emulator() {
        let spec = rice();
        let season = &generate_eval_seasons(&spec).unwrap()[0];
        let obs = season_observations(&spec, season).unwrap();
        let err = assimilate(&spec, &AssimilationConfig::default(), &season.weather, obs, &[Method::EnkfLstm], None, 1);
        assert!(err.is_err());
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
