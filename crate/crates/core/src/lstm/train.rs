//! Mini-batch Adam training with BPTT gradients.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{loss_and_gradient, LstmNetwork};
use crate::base::seeded_rng;
use crate::error::{Error, Result};

/// An encoded input sequence with its per-day targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl TrainingSample {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("training sample is empty"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::invalid(format!(
                "sample has {} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("training targets must be finite"));
        }
        let dim = inputs[0].len();
        if inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::invalid("sample inputs have inconsistent dimensions"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.001,
            batch_size: 10,
            hidden: vec![64, 32, 16],
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden sizes must be non-empty and positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("gradient clip norm must be > 0"));
        }
        Ok(())
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Training result: the network and per-epoch mean losses.
#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    pub network: LstmNetwork,
    pub loss_curve: Vec<f64>,
    pub validation_curve: Vec<f64>,
}

/// Mean sequence loss over a set of samples, evaluated in sample order.
pub fn mean_loss(net: &LstmNetwork, samples: &[TrainingSample]) -> Result<f64> {
    let losses = samples
        .par_iter()
        .map(|s| {
            let out = net.forward(&s.inputs)?;
            super::network::sequence_mse(out.outputs(), &s.targets).map(|(l, _)| l)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn clip(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
}

/// Trains a freshly initialized network on `samples`.
pub fn train_emulator(samples: &[TrainingSample], cfg: &TrainConfig) -> Result<TrainedNetwork> {
    train_with_validation(samples, &[], cfg)
}

/// Like [`train_emulator`], also tracking the mean loss on `validation` each epoch.
pub fn train_with_validation(
    samples: &[TrainingSample],
    validation: &[TrainingSample],
    cfg: &TrainConfig,
) -> Result<TrainedNetwork> {
    cfg.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("training needs at least one sample"))?;
    let input_dim = first.inputs[0].len();
    if samples
        .iter()
        .chain(validation)
        .any(|s| s.is_empty() || s.inputs[0].len() != input_dim)
    {
        return Err(Error::invalid("all samples must be non-empty with equal input dimension"));
    }
    let mut init_rng = seeded_rng(cfg.seed, 0);
    let net = LstmNetwork::init_random(input_dim, &cfg.hidden, &mut init_rng)?;
    continue_training(net, samples, validation, cfg)
}

/// Runs `cfg.epochs` of training starting from an existing network.
pub fn continue_training(
    mut net: LstmNetwork,
    samples: &[TrainingSample],
    validation: &[TrainingSample],
    cfg: &TrainConfig,
) -> Result<TrainedNetwork> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    let mut adam = Adam::new(
        net.num_params(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.adam_eps,
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut validation_curve = Vec::new();

    for epoch in 0..cfg.epochs {
        let mut rng = seeded_rng(cfg.seed, 1 + epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| loss_and_gradient(&net, &samples[i].inputs, &samples[i].targets))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; net.num_params()];
            for (loss, g) in &results {
                epoch_loss += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingFailure {
                    epoch,
                    loss: f64::NAN,
                });
            }
            clip(&mut grad, cfg.clip_norm);
            adam.step(net.params_mut(), &grad);
        }
        let mean = epoch_loss / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingFailure { epoch, loss: mean });
        }
        loss_curve.push(mean);
        if !validation.is_empty() {
            validation_curve.push(mean_loss(&net, validation)?);
        }
        log::trace!("epoch {epoch}: loss {mean}");
    }
    Ok(TrainedNetwork {
        network: net,
        loss_curve,
        validation_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sample(shift: f64, steps: usize) -> TrainingSample {
        let inputs: Vec<Vec<f64>> = (0..steps)
            .map(|t| vec![(t as f64 / steps as f64) + shift, 1.0])
            .collect();
        let targets = (0..steps).map(|t| 0.5 * (t as f64 / steps as f64) + shift).collect();
        TrainingSample::new(inputs, targets).unwrap()
    }

    fn small_cfg(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: lr,
            batch_size: 2,
            hidden: vec![6, 4],
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let samples = vec![toy_sample(0.0, 10), toy_sample(0.2, 10)];
        let cfg = small_cfg(5, 0.0);
        let mut rng = seeded_rng(cfg.seed, 0);
        let initial = LstmNetwork::init_random(2, &cfg.hidden, &mut rng).unwrap();
        let trained = train_emulator(&samples, &cfg).unwrap();
        assert_eq!(trained.network.params(), initial.params());
    }

    #[test]
    fn training_is_deterministic() {
        let samples: Vec<_> = (0..5).map(|i| toy_sample(0.1 * i as f64, 12)).collect();
        let cfg = small_cfg(20, 0.01);
        let a = train_emulator(&samples, &cfg).unwrap();
        let b = train_emulator(&samples, &cfg).unwrap();
        let bits = |n: &LstmNetwork| n.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.network), bits(&b.network));
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn loss_decreases_on_toy_problem() {
        let samples: Vec<_> = (0..4).map(|i| toy_sample(0.1 * i as f64, 15)).collect();
        let trained = train_emulator(&samples, &small_cfg(300, 0.01)).unwrap();
        let curve = &trained.loss_curve;
        let head: f64 = curve[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = curve[curve.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < 0.2 * head, "head {head} tail {tail}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(train_emulator(&[], &small_cfg(1, 0.01)).is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..small_cfg(1, 0.01)
        };
        assert!(train_emulator(&[toy_sample(0.0, 3)], &bad).is_err());
        assert!(TrainingSample::new(vec![vec![1.0]], vec![1.0, 2.0]).is_err());
        assert!(TrainingSample::new(vec![vec![1.0]], vec![f64::NAN]).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let inputs = vec![vec![1e200, 1.0]; 3];
        let sample = TrainingSample::new(inputs, vec![1e200; 3]).unwrap();
        let err = train_emulator(&[sample], &small_cfg(3, 0.01)).unwrap_err();
        assert!(matches!(err, Error::TrainingFailure { epoch: 0, .. }), "{err}");
    }
}
