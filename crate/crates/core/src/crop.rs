//! Daily LAI forecast model and the parameter-perturbed ensemble forecast.
//!
//! The shipped model is a reduced-form surrogate: a temperature-sum gate for
//! emergence, logistic leaf growth driven by effective temperature, and a
//! linear leaf-ageing loss once leaves outlive their span.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{EnsembleMatrix, NoiseVector};
use crate::error::{Error, Result};

/// Daily weather drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherDay {
    /// Maximum temperature, degC.
    pub tmax: f64,
    /// Minimum temperature, degC.
    pub tmin: f64,
    /// Daily total radiation, J/m2/day.
    pub irrad: f64,
    /// Vapour pressure, hPa.
    pub vap: f64,
    /// Wind speed, m/s.
    pub wind: f64,
    /// Precipitation, cm/day.
    pub rain: f64,
}

impl WeatherDay {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.tmax, self.tmin, self.irrad, self.vap, self.wind, self.rain];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("weather values must be finite"));
        }
        if self.tmax < self.tmin {
            return Err(Error::invalid(format!(
                "tmax {} is below tmin {}",
                self.tmax, self.tmin
            )));
        }
        if self.irrad < 0.0 || self.rain < 0.0 || self.wind < 0.0 {
            return Err(Error::invalid("irrad, rain and wind must be non-negative"));
        }
        Ok(())
    }

    pub fn mean_temperature(&self) -> f64 {
        0.5 * (self.tmax + self.tmin)
    }
}

/// Static crop parameters of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    /// Lower temperature threshold for development and growth, degC.
    pub tbase: f64,
    /// Effective temperature sum needed for emergence, degC d.
    pub tsum_emergence: f64,
    /// Maximum relative LAI increase per effective degree-day.
    pub rgrlai: f64,
    /// Leaf life span, days.
    pub span: f64,
    /// Carrying-capacity LAI.
    pub lai_max: f64,
    /// LAI at emergence.
    pub lai_init: f64,
}

impl CropParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.tbase,
            self.tsum_emergence,
            self.rgrlai,
            self.span,
            self.lai_max,
            self.lai_init,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("crop parameters must be finite"));
        }
        if self.rgrlai <= 0.0 {
            return Err(Error::invalid(format!("rgrlai must be > 0, got {}", self.rgrlai)));
        }
        if self.span <= 0.0 {
            return Err(Error::invalid(format!("span must be > 0, got {}", self.span)));
        }
        if self.tsum_emergence < 0.0 {
            return Err(Error::invalid("tsum_emergence must be >= 0"));
        }
        if !(self.lai_max > self.lai_init && self.lai_init >= 0.0) {
            return Err(Error::invalid(format!(
                "need lai_max > lai_init >= 0, got lai_max={} lai_init={}",
                self.lai_max, self.lai_init
            )));
        }
        Ok(())
    }

    /// Scales the perturbable subset (rgrlai, lai_max, tsum_emergence) by `1 + eps`.
    pub fn perturbed(&self, eps: f64) -> Result<CropParams> {
        let factor = (1.0 + eps).max(MIN_PERTURBATION_FACTOR);
        let p = CropParams {
            rgrlai: self.rgrlai * factor,
            lai_max: self.lai_max * factor,
            tsum_emergence: self.tsum_emergence * factor,
            ..*self
        };
        p.validate()?;
        Ok(p)
    }
}

/// Lower bound on `1 + eps` so perturbed rates stay positive.
const MIN_PERTURBATION_FACTOR: f64 = 0.1;

/// Developmental state carried between days.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhenologyState {
    /// Accumulated effective temperature, degC d.
    pub temp_sum: f64,
    /// Days since emergence; `None` before emergence.
    pub days_since_emergence: Option<u32>,
}

impl PhenologyState {
    pub fn emerged(&self) -> bool {
        self.days_since_emergence.is_some()
    }
}

/// Effective temperature above `tbase`.
pub fn effective_temperature(weather: &WeatherDay, tbase: f64) -> f64 {
    (weather.mean_temperature() - tbase).max(0.0)
}

/// Advances LAI and phenology by one day.
pub fn step_lai(
    lai: f64,
    weather: &WeatherDay,
    params: &CropParams,
    phenology: PhenologyState,
) -> Result<(f64, PhenologyState)> {
    if !lai.is_finite() || lai < 0.0 {
        return Err(Error::invalid(format!("lai must be finite and >= 0, got {lai}")));
    }
    if !phenology.temp_sum.is_finite() {
        return Err(Error::invalid("phenology temperature sum must be finite"));
    }
    let temps = [weather.tmax, weather.tmin];
    if temps.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("weather temperatures must be finite"));
    }
    let teff = effective_temperature(weather, params.tbase);
    let temp_sum = phenology.temp_sum + teff;

    match phenology.days_since_emergence {
        None => {
            if temp_sum >= params.tsum_emergence {
                Ok((
                    params.lai_init,
                    PhenologyState {
                        temp_sum,
                        days_since_emergence: Some(0),
                    },
                ))
            } else {
                Ok((
                    0.0,
                    PhenologyState {
                        temp_sum,
                        days_since_emergence: None,
                    },
                ))
            }
        }
        Some(days) => {
            let growth = params.rgrlai * teff * lai * (1.0 - lai / params.lai_max);
            let senescence = if f64::from(days) > params.span {
                lai / params.span
            } else {
                0.0
            };
            let next = (lai + growth - senescence).max(0.0);
            Ok((
                next,
                PhenologyState {
                    temp_sum,
                    days_since_emergence: Some(days + 1),
                },
            ))
        }
    }
}

/// A daily LAI forecast operator. The assimilation code only sees LAI through
/// this interface, so another crop model can replace the surrogate.
pub trait LaiModel: Send + Sync {
    type State: Clone + Send + Sync;

    /// State at day 0 (LAI = 0).
    fn initial_state(&self) -> Self::State;

    fn lai(&self, state: &Self::State) -> f64;

    /// Overwrites the LAI held by a state, keeping the rest.
    fn with_lai(&self, state: Self::State, lai: f64) -> Self::State;

    /// Smallest LAI an analysis may leave in this state.
    fn lai_floor(&self, _state: &Self::State, _params: &CropParams) -> f64 {
        0.0
    }

    fn advance(
        &self,
        state: &Self::State,
        weather: &WeatherDay,
        params: &CropParams,
    ) -> Result<Self::State>;
}

/// The shipped temperature-gated logistic LAI surrogate.
#[derive(Debug, Clone, Copy, Default)]
pub struct LaiSurrogate;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurrogateState {
    pub lai: f64,
    pub phenology: PhenologyState,
}

impl LaiModel for LaiSurrogate {
    type State = SurrogateState;

    fn initial_state(&self) -> SurrogateState {
        SurrogateState::default()
    }

    fn lai(&self, state: &SurrogateState) -> f64 {
        state.lai
    }

    fn with_lai(&self, state: SurrogateState, lai: f64) -> SurrogateState {
        SurrogateState { lai, ..state }
    }

    /// An emerged canopy keeps at least its initial leaf area.
    fn lai_floor(&self, state: &SurrogateState, params: &CropParams) -> f64 {
        if state.phenology.days_since_emergence.is_some() {
            params.lai_init
        } else {
            0.0
        }
    }

    fn advance(
        &self,
        state: &SurrogateState,
        weather: &WeatherDay,
        params: &CropParams,
    ) -> Result<SurrogateState> {
        let (lai, phenology) = step_lai(state.lai, weather, params, state.phenology)?;
        Ok(SurrogateState { lai, phenology })
    }
}

/// Base parameters plus one fixed season-long offset per ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedParamSet {
    base: CropParams,
    offsets: Vec<f64>,
}

impl PerturbedParamSet {
    pub fn new(base: CropParams, noise: &NoiseVector) -> Result<Self> {
        Self::from_offsets(base, noise.as_slice().to_vec())
    }

    pub fn from_offsets(base: CropParams, offsets: Vec<f64>) -> Result<Self> {
        base.validate()?;
        for &e in &offsets {
            base.perturbed(e)?;
        }
        Ok(Self { base, offsets })
    }

    pub fn base(&self) -> &CropParams {
        &self.base
    }

    pub fn members(&self) -> usize {
        self.offsets.len()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn member_params(&self, member: usize) -> CropParams {
        self.base
            .perturbed(self.offsets[member])
            .expect("offsets validated at construction")
    }
}

/// Runs one member from day 0 to `up_to_day` inclusive.
///
/// With `assimilated_prefix`, the supplied values replace the model's own LAI
/// on days `0..prefix.len()`; phenology still follows the weather.
pub fn forecast_member<M: LaiModel>(
    model: &M,
    params: &CropParams,
    weather: &[WeatherDay],
    up_to_day: usize,
    assimilated_prefix: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if weather.len() < up_to_day + 1 {
        return Err(Error::invalid(format!(
            "forecast to day {up_to_day} needs {} weather days, got {}",
            up_to_day + 1,
            weather.len()
        )));
    }
    let prefix = assimilated_prefix.unwrap_or(&[]);
    if prefix.len() > up_to_day + 1 {
        return Err(Error::invalid(format!(
            "assimilated prefix of length {} exceeds forecast horizon {}",
            prefix.len(),
            up_to_day + 1
        )));
    }
    if prefix.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("assimilated prefix must be finite and non-negative"));
    }

    let mut state = model.initial_state();
    if let Some(&first) = prefix.first() {
        state = model.with_lai(state, first);
    }
    let mut trajectory = Vec::with_capacity(up_to_day + 1);
    trajectory.push(model.lai(&state));
    for day in 1..=up_to_day {
        state = model.advance(&state, &weather[day - 1], params)?;
        if let Some(&v) = prefix.get(day) {
            state = model.with_lai(state, v);
        }
        trajectory.push(model.lai(&state));
    }
    Ok(trajectory)
}

/// Forecasts every perturbed member; columns come back in member order.
pub fn forecast_ensemble<M: LaiModel>(
    model: &M,
    params: &PerturbedParamSet,
    weather: &[WeatherDay],
    up_to_day: usize,
) -> Result<EnsembleMatrix> {
    if params.members() < 2 {
        return Err(Error::invalid(format!(
            "ensemble forecast needs M >= 2, got {}",
            params.members()
        )));
    }
    let members = (0..params.members())
        .into_par_iter()
        .map(|i| forecast_member(model, &params.member_params(i), weather, up_to_day, None))
        .collect::<Result<Vec<_>>>()?;
    EnsembleMatrix::from_members(&members)
}

/// Mean over members on one day.
pub fn ensemble_mean(ens: &EnsembleMatrix, day: usize) -> Result<f64> {
    if day >= ens.state_dim() {
        return Err(Error::invalid(format!(
            "day {day} is outside the ensemble's {} days",
            ens.state_dim()
        )));
    }
    let row = ens.as_matrix().row(day);
    Ok(row.iter().sum::<f64>() / ens.members() as f64)
}
