//! Input encoding and the trained assimilation emulator.

use serde::{Deserialize, Serialize};

use super::network::LstmNetwork;
use super::train::{train_with_validation, TrainConfig, TrainingSample};
use crate::base::{EnsembleMatrix, Observation, ObservationMatrix, ObservationSeries, MISSING_SENTINEL};
use crate::error::{Error, Result};

/// How each day is presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputEncoding {
    /// `[forecast mean, observation or -1, observed flag]`.
    Mean,
    /// `[M member forecasts, M perturbed observations or -1, observed flag]`.
    Ensemble { members: usize },
}

impl InputEncoding {
    pub fn input_dim(&self) -> usize {
        match self {
            InputEncoding::Mean => 3,
            InputEncoding::Ensemble { members } => 2 * members + 1,
        }
    }
}

/// One season's emulator inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonInputs {
    pub forecast_mean: Vec<f64>,
    pub observations: ObservationSeries,
    /// Member forecasts and perturbed observations, needed for [`InputEncoding::Ensemble`].
    pub ensemble: Option<(EnsembleMatrix, ObservationMatrix)>,
}

impl SeasonInputs {
    pub fn new(forecast_mean: Vec<f64>, observations: ObservationSeries) -> Result<Self> {
        if forecast_mean.len() != observations.len() {
            return Err(Error::invalid(format!(
                "forecast has {} days but observations have {}",
                forecast_mean.len(),
                observations.len()
            )));
        }
        Ok(Self {
            forecast_mean,
            observations,
            ensemble: None,
        })
    }

    pub fn len(&self) -> usize {
        self.forecast_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forecast_mean.is_empty()
    }

    /// Encodes every day; LAI values are divided by `scale`, sentinels stay `-1`.
    pub fn encode(&self, encoding: InputEncoding, scale: f64) -> Result<Vec<Vec<f64>>> {
        match encoding {
            InputEncoding::Mean => Ok(self
                .forecast_mean
                .iter()
                .zip(self.observations.iter())
                .map(|(&f, o)| match o {
                    Observation::Value(v) => vec![f / scale, v / scale, 1.0],
                    Observation::Missing => vec![f / scale, MISSING_SENTINEL, 0.0],
                })
                .collect()),
            InputEncoding::Ensemble { members } => {
                let (ens, obs) = self.ensemble.as_ref().ok_or_else(|| {
                    Error::invalid("ensemble encoding needs member forecasts and perturbed observations")
                })?;
                if ens.members() != members || obs.members() != members {
                    return Err(Error::invalid(format!(
                        "ensemble encoding expects {members} members, got {} and {}",
                        ens.members(),
                        obs.members()
                    )));
                }
                if ens.state_dim() != self.len() || obs.days() != self.len() {
                    return Err(Error::invalid("ensemble inputs do not cover every day"));
                }
                Ok((0..self.len())
                    .map(|d| {
                        let mut x = Vec::with_capacity(2 * members + 1);
                        x.extend((0..members).map(|m| ens.get(d, m) / scale));
                        if obs.is_observed(d) {
                            x.extend((0..members).map(|m| obs.as_matrix()[(d, m)] / scale));
                            x.push(1.0);
                        } else {
                            x.extend(std::iter::repeat_n(MISSING_SENTINEL, members));
                            x.push(0.0);
                        }
                        x
                    })
                    .collect())
            }
        }
    }
}

/// A network plus the fixed LAI scaling it was trained with.
///
/// The network predicts the assimilation increment over the forecast mean;
/// the emulated LAI is `forecast + scale * output`, floored at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Emulator {
    pub network: LstmNetwork,
    pub encoding: InputEncoding,
    pub lai_scale: f64,
}

/// A trained emulator and its training record.
#[derive(Debug, Clone)]
pub struct TrainedEmulator {
    pub emulator: Emulator,
    /// Mean per-epoch loss in scaled units.
    pub loss_curve: Vec<f64>,
    pub validation_curve: Vec<f64>,
    /// Training-set RMSE in LAI units after the final epoch.
    pub train_rmse: f64,
}

impl Emulator {
    pub fn new(network: LstmNetwork, encoding: InputEncoding, lai_scale: f64) -> Result<Self> {
        if !(lai_scale > 0.0) || !lai_scale.is_finite() {
            return Err(Error::invalid(format!("LAI scale must be > 0, got {lai_scale}")));
        }
        if network.input_dim() != encoding.input_dim() {
            return Err(Error::invalid(format!(
                "network input dimension {} does not match encoding dimension {}",
                network.input_dim(),
                encoding.input_dim()
            )));
        }
        Ok(Self {
            network,
            encoding,
            lai_scale,
        })
    }

    fn sample(
        encoding: InputEncoding,
        scale: f64,
        inputs: &SeasonInputs,
        target: &[f64],
    ) -> Result<TrainingSample> {
        if target.len() != inputs.len() {
            return Err(Error::invalid("targets must align with inputs"));
        }
        TrainingSample::new(
            inputs.encode(encoding, scale)?,
            target
                .iter()
                .zip(&inputs.forecast_mean)
                .map(|(t, f)| (t - f) / scale)
                .collect(),
        )
    }

    /// Trains on `(inputs, EnKF target)` seasons.
    pub fn train(
        training: &[(SeasonInputs, Vec<f64>)],
        validation: &[(SeasonInputs, Vec<f64>)],
        encoding: InputEncoding,
        lai_scale: f64,
        cfg: &TrainConfig,
    ) -> Result<TrainedEmulator> {
        let to_samples = |set: &[(SeasonInputs, Vec<f64>)]| {
            set.iter()
                .map(|(i, t)| Self::sample(encoding, lai_scale, i, t))
                .collect::<Result<Vec<_>>>()
        };
        let train_samples = to_samples(training)?;
        let val_samples = to_samples(validation)?;
        let trained = train_with_validation(&train_samples, &val_samples, cfg)?;
        let emulator = Emulator::new(trained.network, encoding, lai_scale)?;
        let mut sq = 0.0;
        let mut n = 0usize;
        for (inputs, target) in training {
            let out = emulator.emulate(inputs)?;
            sq += out.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            n += target.len();
        }
        Ok(TrainedEmulator {
            emulator,
            loss_curve: trained.loss_curve,
            validation_curve: trained.validation_curve,
            train_rmse: (sq / n as f64).sqrt(),
        })
    }

    /// Per-day assimilated estimate for every day of the season.
    pub fn emulate(&self, inputs: &SeasonInputs) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let encoded = inputs.encode(self.encoding, self.lai_scale)?;
        let cache = self.network.forward(&encoded)?;
        Ok(cache
            .outputs()
            .iter()
            .zip(&inputs.forecast_mean)
            .map(|(y, f)| (f + y * self.lai_scale).max(0.0))
            .collect())
    }
}

/// Runs a trained emulator on a forecast-mean series and its observations.
pub fn emulate_assimilation(
    emulator: &Emulator,
    forecast_means: &[f64],
    obs: &ObservationSeries,
) -> Result<Vec<f64>> {
    emulator.emulate(&SeasonInputs::new(forecast_means.to_vec(), obs.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::seeded_rng;

    #[test]
    fn mean_encoding_marks_gaps() {
        let obs = ObservationSeries::from_options(&[Some(2.0), None]).unwrap();
        let inputs = SeasonInputs::new(vec![1.0, 3.0], obs).unwrap();
        let enc = inputs.encode(InputEncoding::Mean, 2.0).unwrap();
        assert_eq!(enc, vec![vec![0.5, 1.0, 1.0], vec![1.5, -1.0, 0.0]]);
    }

    #[test]
    fn output_covers_every_day_even_without_observations() {
        let mut rng = seeded_rng(1, 0);
        let net = LstmNetwork::init_random(3, &[4], &mut rng).unwrap();
        let emu = Emulator::new(net, InputEncoding::Mean, 5.0).unwrap();
        let forecast: Vec<f64> = (0..30).map(|d| d as f64 * 0.1).collect();
        let out = emulate_assimilation(&emu, &forecast, &ObservationSeries::all_missing(30)).unwrap();
        assert_eq!(out.len(), 30);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn learns_identity_on_consistent_pairs() {
        let seasons: Vec<(SeasonInputs, Vec<f64>)> = (0..6)
            .map(|s| {
                let f: Vec<f64> = (0..25)
                    .map(|d| 3.0 * (1.0 - (-(d as f64) / (8.0 + s as f64)).exp()))
                    .collect();
                let obs = ObservationSeries::from_options(&f.iter().map(|&v| Some(v)).collect::<Vec<_>>())
                    .unwrap();
                (SeasonInputs::new(f.clone(), obs).unwrap(), f)
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 400,
            learning_rate: 0.01,
            batch_size: 3,
            hidden: vec![8],
            seed: 2,
            ..TrainConfig::default()
        };
        let trained = Emulator::train(&seasons, &[], InputEncoding::Mean, 5.0, &cfg).unwrap();
        assert!(trained.train_rmse < 0.1, "rmse {}", trained.train_rmse);
        let (inputs, target) = &seasons[2];
        let out = trained.emulator.emulate(inputs).unwrap();
        let err = out.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / 25.0;
        assert!(err < 0.1, "mean error {err}");
    }

    #[test]
    fn zero_network_returns_forecast() {
        let emu = Emulator::new(LstmNetwork::zeros(3, &[4]).unwrap(), InputEncoding::Mean, 5.0).unwrap();
        let forecast = vec![0.0, 0.5, 2.0, 4.5];
        let obs = ObservationSeries::from_options(&[None, Some(1.0), None, Some(9.0)]).unwrap();
        assert_eq!(emulate_assimilation(&emu, &forecast, &obs).unwrap(), forecast);
    }

    #[test]
    fn mismatched_encoding_rejected() {
        let net = LstmNetwork::zeros(2, &[3]).unwrap();
        assert!(Emulator::new(net, InputEncoding::Mean, 1.0).is_err());
        let net = LstmNetwork::zeros(3, &[3]).unwrap();
        assert!(Emulator::new(net, InputEncoding::Mean, 0.0).is_err());
    }
}
