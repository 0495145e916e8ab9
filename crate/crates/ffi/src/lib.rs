//! C interface to `cropda`.
//!
//! Every fallible function returns a [`CropdaStatus`]; on failure the message
//! is available from [`cropda_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cropda::base::{derive_seed, ObservationSeries, TimeGrid};
use cropda::crop::WeatherDay;
use cropda::enkf::gaspari_cohn;
use cropda::io::config::RunConfig;
use cropda::io::csv::{read_observations_csv, read_trajectory_csv, read_weather_csv};
use cropda::io::preset::load_preset;
use cropda::lstm::{format as weights, Emulator};
use cropda::metrics::MetricReport;
use cropda::pipeline::{assimilate, eval_season, season_observations, train_stage, AssimilationConfig, ExperimentSpec, Method};
use cropda::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropdaStatus {
    Ok = 0,
    InvalidArgument = 1,
    NumericalFailure = 2,
    TrainingFailure = 3,
    Format = 4,
    Io = 5,
    NullPointer = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Assimilation method selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropdaMethod {
    OpenLoop = 0,
    Enkf = 1,
    EnkfLstm = 2,
}

impl From<CropdaMethod> for Method {
    fn from(m: CropdaMethod) -> Self {
        match m {
            CropdaMethod::OpenLoop => Method::OpenLoop,
            CropdaMethod::Enkf => Method::Enkf,
            CropdaMethod::EnkfLstm => Method::EnkfLstm,
        }
    }
}

/// Error metrics of one prediction.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CropdaMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
}

/// Experiment preset plus assimilation settings.
pub struct CropdaExperiment {
    spec: ExperimentSpec,
    config: AssimilationConfig,
}

/// One season of weather and observations, with optional truth.
pub struct CropdaSeason {
    weather: Vec<WeatherDay>,
    observations: ObservationSeries,
    truth: Option<Vec<f64>>,
    seed: u64,
}

/// A trained assimilation emulator.
pub struct CropdaEmulator(Emulator);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(CropdaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => CropdaStatus::InvalidArgument,
            Error::NumericalFailure { .. } => CropdaStatus::NumericalFailure,
            Error::TrainingFailure { .. } => CropdaStatus::TrainingFailure,
            Error::Format { .. } | Error::Json(_) => CropdaStatus::Format,
            Error::Io { .. } => CropdaStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CropdaStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic for `cropda_last_error`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CropdaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CropdaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CropdaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CropdaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn fill(out: *mut f64, len: usize, values: &[f64]) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        return Err(Failure(
            CropdaStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cropda_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread (empty after success).
/// Valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn cropda_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a preset (shipped name or file) and an optional config file.
/// The preset argument takes precedence over the config's `preset` key.
///
/// # Safety
/// `preset` must be a valid C string; `config_path` may be null.
#[no_mangle]
pub unsafe extern "C" fn cropda_experiment_new(
    preset: *const c_char,
    config_path: *const c_char,
    out: *mut *mut CropdaExperiment,
) -> CropdaStatus {
    guard(|| {
        let preset = str_arg(preset, "preset")?;
        let (spec, config) = match opt_str_arg(config_path, "config path")? {
            Some(path) => {
                let mut run = RunConfig::read(Path::new(path))?;
                run.preset = preset.to_string();
                (run.experiment()?, run.assimilation)
            }
            None => (load_preset(preset)?, AssimilationConfig::default()),
        };
        put(out, CropdaExperiment { spec, config })
    })
}

/// # Safety
/// `exp` must come from `cropda_experiment_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn cropda_experiment_free(exp: *mut CropdaExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Sets the seed of season generation and of all perturbations.
///
/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cropda_experiment_set_seed(exp: *mut CropdaExperiment, seed: u64) -> CropdaStatus {
    guard(|| {
        let exp = exp.as_mut().ok_or_else(|| null("experiment"))?;
        exp.spec.seed = seed;
        exp.config.seed = seed;
        exp.config.train.seed = seed;
        Ok(())
    })
}

/// Overrides the number of training seasons and LSTM epochs (0 keeps the current value).
///
/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cropda_experiment_set_training(
    exp: *mut CropdaExperiment,
    seasons: usize,
    epochs: usize,
) -> CropdaStatus {
    guard(|| {
        let exp = exp.as_mut().ok_or_else(|| null("experiment"))?;
        if seasons > 0 {
            exp.spec.seasons = seasons;
        }
        if epochs > 0 {
            exp.config.train.epochs = epochs;
        }
        Ok(())
    })
}

/// Season length of the experiment, or 0 for a null handle.
///
/// # Safety
/// `exp` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cropda_experiment_n_days(exp: *const CropdaExperiment) -> usize {
    exp.as_ref().map(|e| e.spec.n_days).unwrap_or(0)
}

/// Generates evaluation season `index` with synthetic observations.
///
/// # Safety
/// `exp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cropda_season_generate(
    exp: *const CropdaExperiment,
    index: usize,
    out: *mut *mut CropdaSeason,
) -> CropdaStatus {
    guard(|| {
        let exp = handle(exp, "experiment")?;
        let season = eval_season(&exp.spec, index)?;
        let observations = season_observations(&exp.spec, &season)?;
        put(
            out,
            CropdaSeason {
                observations,
                seed: season.seed,
                weather: season.weather,
                truth: Some(season.truth),
            },
        )
    })
}

/// Loads a season from weather and observation CSV files; `truth_path` may be null.
/// Perturbations are seeded from `seed` exactly as the command-line tool does.
///
/// # Safety
/// Paths must be valid C strings (except the nullable truth path).
#[no_mangle]
pub unsafe extern "C" fn cropda_season_load(
    weather_path: *const c_char,
    observations_path: *const c_char,
    truth_path: *const c_char,
    seed: u64,
    out: *mut *mut CropdaSeason,
) -> CropdaStatus {
    guard(|| {
        let weather = read_weather_csv(Path::new(str_arg(weather_path, "weather path")?))?;
        let grid = TimeGrid::new(weather.start_date, weather.days.len())?;
        let observations = read_observations_csv(Path::new(str_arg(observations_path, "observations path")?), &grid)?;
        let truth = match opt_str_arg(truth_path, "truth path")? {
            Some(p) => Some(read_trajectory_csv(Path::new(p), &grid)?),
            None => None,
        };
        put(
            out,
            CropdaSeason {
                weather: weather.days,
                observations,
                truth,
                seed: derive_seed(seed, 0xC11),
            },
        )
    })
}

/// # Safety
/// `season` must come from a season constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn cropda_season_free(season: *mut CropdaSeason) {
    if !season.is_null() {
        drop(Box::from_raw(season));
    }
}

/// Number of days in a season, or 0 for a null handle.
///
/// # Safety
/// `season` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cropda_season_n_days(season: *const CropdaSeason) -> usize {
    season.as_ref().map(|s| s.weather.len()).unwrap_or(0)
}

/// Copies the true trajectory into `out[0..len)`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cropda_season_truth(season: *const CropdaSeason, out: *mut f64, len: usize) -> CropdaStatus {
    guard(|| {
        let season = handle(season, "season")?;
        let truth = season
            .truth
            .as_ref()
            .ok_or_else(|| Failure(CropdaStatus::InvalidArgument, "season has no truth".to_string()))?;
        fill(out, len, truth)
    })
}

/// Copies observations into `out[0..len)`, with NaN on missing days.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cropda_season_observations(
    season: *const CropdaSeason,
    out: *mut f64,
    len: usize,
) -> CropdaStatus {
    guard(|| {
        let season = handle(season, "season")?;
        let values: Vec<f64> = season
            .observations
            .iter()
            .map(|o| o.value().unwrap_or(f64::NAN))
            .collect();
        fill(out, len, &values)
    })
}

/// Runs one method on a season and writes its daily LAI into `out[0..len)`.
/// `emulator` is required for `CROPDA_METHOD_ENKF_LSTM` and ignored otherwise.
///
/// # Safety
/// Handles must be live (emulator may be null); `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cropda_run(
    exp: *const CropdaExperiment,
    season: *const CropdaSeason,
    method: CropdaMethod,
    emulator: *const CropdaEmulator,
    out: *mut f64,
    len: usize,
) -> CropdaStatus {
    guard(|| {
        let exp = handle(exp, "experiment")?;
        let season = handle(season, "season")?;
        let emulator = emulator.as_ref().map(|e| &e.0);
        let result = assimilate(
            &exp.spec,
            &exp.config,
            &season.weather,
            season.observations.clone(),
            &[method.into()],
            emulator,
            season.seed,
        )?;
        fill(out, len, &result.outputs[0].1)
    })
}

/// Generates training seasons, runs the EnKF on them and trains an emulator.
///
/// # Safety
/// `exp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cropda_emulator_train(
    exp: *const CropdaExperiment,
    out: *mut *mut CropdaEmulator,
) -> CropdaStatus {
    guard(|| {
        let exp = handle(exp, "experiment")?;
        let summary = train_stage(&exp.spec, &exp.config)?;
        put(out, CropdaEmulator(summary.emulator))
    })
}

/// # Safety
/// `path` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cropda_emulator_load(path: *const c_char, out: *mut *mut CropdaEmulator) -> CropdaStatus {
    guard(|| {
        let emulator = weights::load(Path::new(str_arg(path, "path")?))?;
        put(out, CropdaEmulator(emulator))
    })
}

/// # Safety
/// `emulator` must be live and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn cropda_emulator_save(emulator: *const CropdaEmulator, path: *const c_char) -> CropdaStatus {
    guard(|| {
        let emulator = handle(emulator, "emulator")?;
        weights::save(&emulator.0, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `emulator` must come from a constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn cropda_emulator_free(emulator: *mut CropdaEmulator) {
    if !emulator.is_null() {
        drop(Box::from_raw(emulator));
    }
}

/// Localization taper at `distance` days for radius `radius`; NaN on invalid input.
#[no_mangle]
pub extern "C" fn cropda_gaspari_cohn(distance: f64, radius: f64) -> f64 {
    gaspari_cohn(distance, radius).unwrap_or(f64::NAN)
}

/// MSE, RMSE and MAE of `pred` against `truth`, both of length `n`.
///
/// # Safety
/// `truth` and `pred` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cropda_metrics(
    truth: *const f64,
    pred: *const f64,
    n: usize,
    out: *mut CropdaMetrics,
) -> CropdaStatus {
    guard(|| {
        let truth = slice_arg(truth, n, "truth")?;
        let pred = slice_arg(pred, n, "prediction")?;
        let out = out.as_mut().ok_or_else(|| null("output"))?;
        let r = MetricReport::compute("", truth, pred)?;
        *out = CropdaMetrics {
            mse: r.mse,
            rmse: r.rmse,
            mae: r.mae,
        };
        Ok(())
    })
}
