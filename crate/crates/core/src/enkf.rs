//! Perturbed-observation ensemble Kalman filter over the augmented trajectory
//! state, with Gaspari-Cohn localization and adaptive multiplicative inflation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::base::{EnsembleMatrix, ObservationMatrix, MISSING_SENTINEL};
use crate::error::{Error, Result};

/// Row selection onto days holding a valid, not-yet-assimilated observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationOperator {
    selected_days: Vec<usize>,
    state_dim: usize,
}

impl ObservationOperator {
    pub fn new(selected_days: Vec<usize>, state_dim: usize) -> Result<Self> {
        if selected_days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("selected days must be strictly increasing"));
        }
        if selected_days.last().is_some_and(|&d| d >= state_dim) {
            return Err(Error::invalid("selected day outside the state"));
        }
        Ok(Self {
            selected_days,
            state_dim,
        })
    }

    /// Selects observed rows of `obs` on days `>= first_day`.
    pub fn pending_from(obs: &ObservationMatrix, first_day: usize) -> Self {
        let selected_days = (first_day..obs.days()).filter(|&d| obs.is_observed(d)).collect();
        Self {
            selected_days,
            state_dim: obs.days(),
        }
    }

    pub fn selected_days(&self) -> &[usize] {
        &self.selected_days
    }

    /// Number of selected observations `k`.
    pub fn len(&self) -> usize {
        self.selected_days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_days.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// The `k x t` selection matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.len(), self.state_dim);
        for (row, &day) in self.selected_days.iter().enumerate() {
            h[(row, day)] = 1.0;
        }
        h
    }

    /// Selected rows of a `t x n` matrix.
    pub fn select_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.select_rows(self.selected_days.iter())
    }
}

/// Builds the selection operator over every observed row of `obs`.
pub fn build_observation_operator(obs: &ObservationMatrix) -> ObservationOperator {
    ObservationOperator::pending_from(obs, 0)
}

/// Observation-error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsNoiseModel {
    pub sigma_obs: f64,
    pub re: DMatrix<f64>,
}

impl ObsNoiseModel {
    pub fn diagonal(sigma_obs: f64, k: usize) -> Self {
        Self {
            sigma_obs,
            re: DMatrix::from_diagonal_element(k, k, sigma_obs * sigma_obs),
        }
    }

    /// Sample covariance of the drawn perturbations, `E E^T / (M - 1)`, where
    /// `E` holds the selected rows of `obs` minus their row means.
    pub fn from_perturbations(obs: &ObservationMatrix, h: &ObservationOperator) -> Result<Self> {
        let m = obs.members();
        if m < 2 {
            return Err(Error::invalid("perturbation covariance needs M >= 2"));
        }
        let e = anomalies(&h.select_rows(obs.as_matrix()));
        let re = &e * e.transpose() / (m as f64 - 1.0);
        let sigma_obs = if re.nrows() > 0 {
            (re.trace() / re.nrows() as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { sigma_obs, re })
    }
}

/// Localization radius in days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSpec {
    pub enabled: bool,
    pub radius_days: f64,
}

impl LocalizationSpec {
    pub fn new(enabled: bool, radius_days: f64) -> Result<Self> {
        if enabled && !(radius_days > 0.0 && radius_days.is_finite()) {
            return Err(Error::invalid(format!(
                "localization radius must be > 0, got {radius_days}"
            )));
        }
        Ok(Self {
            enabled,
            radius_days,
        })
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            radius_days: 10.0,
        }
    }

    /// Taper weight between two day indices.
    pub fn weight(&self, a: usize, b: usize) -> f64 {
        if !self.enabled {
            return 1.0;
        }
        let e = a.abs_diff(b) as f64;
        gaspari_cohn(e, self.radius_days).expect("radius validated at construction")
    }
}

impl Default for LocalizationSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            radius_days: 10.0,
        }
    }
}

/// Current inflation factor (never below 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationState {
    pub enabled: bool,
    pub lambda: f64,
}

impl InflationState {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            lambda: 1.0,
        }
    }
}

/// Observation-error model selection for the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObsNoiseKind {
    /// `Re = sigma^2 I`.
    Diagonal { sigma: f64 },
    /// `Re` estimated from the drawn observation perturbations.
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnkfSettings {
    pub obs_noise: ObsNoiseKind,
    pub localization: LocalizationSpec,
    pub inflation: bool,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub day: usize,
    pub k: usize,
    pub lambda: f64,
    pub gain_norm: f64,
    pub innovation_rms: f64,
}

/// Canonical fifth-order Gaspari-Cohn taper with support `[0, 2l]`.
pub fn gaspari_cohn(e: f64, l: f64) -> Result<f64> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::invalid(format!("localization radius must be > 0, got {l}")));
    }
    if !(e >= 0.0) {
        return Err(Error::invalid(format!("distance must be >= 0, got {e}")));
    }
    let c = e / l;
    let rho = if c <= 1.0 {
        1.0 - 5.0 / 3.0 * c.powi(2) + 5.0 / 8.0 * c.powi(3) + 0.5 * c.powi(4) - 0.25 * c.powi(5)
    } else if c < 2.0 {
        4.0 - 5.0 * c + 5.0 / 3.0 * c.powi(2) + 5.0 / 8.0 * c.powi(3) - 0.5 * c.powi(4)
            + c.powi(5) / 12.0
            - 2.0 / (3.0 * c)
    } else {
        0.0
    };
    Ok(rho.clamp(0.0, 1.0))
}

/// Members minus the per-row ensemble mean.
fn anomalies(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols() as f64;
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.iter().sum::<f64>() / n;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

/// Sample covariance across members, `A' A'^T / (M - 1)`.
pub fn forecast_covariance(ens: &EnsembleMatrix) -> Result<DMatrix<f64>> {
    let m = ens.members();
    if m < 2 {
        return Err(Error::invalid(format!("covariance needs M >= 2, got {m}")));
    }
    let a = anomalies(ens.as_matrix());
    Ok(&a * a.transpose() / (m as f64 - 1.0))
}

fn localize_cross(pht: &mut DMatrix<f64>, h: &ObservationOperator, loc: &LocalizationSpec) {
    if !loc.enabled {
        return;
    }
    for (j, &obs_day) in h.selected_days().iter().enumerate() {
        for i in 0..pht.nrows() {
            pht[(i, j)] *= loc.weight(i, obs_day);
        }
    }
}

fn localize_obs(hpht: &mut DMatrix<f64>, h: &ObservationOperator, loc: &LocalizationSpec) {
    if !loc.enabled {
        return;
    }
    let days = h.selected_days();
    for (i, &a) in days.iter().enumerate() {
        for (j, &b) in days.iter().enumerate() {
            hpht[(i, j)] *= loc.weight(a, b);
        }
    }
}

/// Inverts the innovation covariance after a relative diagonal jitter.
fn invert_innovation(mut s: DMatrix<f64>, day: usize) -> Result<DMatrix<f64>> {
    let k = s.nrows();
    let trace = s.trace();
    if trace.is_finite() && trace > 0.0 {
        let jitter = 1e-10 * trace / k as f64;
        for i in 0..k {
            s[(i, i)] += jitter;
        }
    }
    if let Some(chol) = s.clone().cholesky() {
        return Ok(chol.inverse());
    }
    s.try_inverse().ok_or_else(|| Error::NumericalFailure {
        day,
        reason: "innovation covariance is singular".into(),
    })
}

fn gain_from_parts(
    mut pht: DMatrix<f64>,
    mut hpht: DMatrix<f64>,
    h: &ObservationOperator,
    re: &DMatrix<f64>,
    loc: &LocalizationSpec,
) -> Result<DMatrix<f64>> {
    if re.nrows() != h.len() || re.ncols() != h.len() {
        return Err(Error::invalid(format!(
            "Re is {}x{} but there are {} observations",
            re.nrows(),
            re.ncols(),
            h.len()
        )));
    }
    localize_cross(&mut pht, h, loc);
    localize_obs(&mut hpht, h, loc);
    let day = h.state_dim().saturating_sub(1);
    let s_inv = invert_innovation(hpht + re, day)?;
    Ok(pht * s_inv)
}

/// `K = (rho o P H^T) (rho o H P H^T + Re)^-1`; with localization disabled rho is 1.
pub fn kalman_gain(
    pe: &DMatrix<f64>,
    h: &ObservationOperator,
    re: &DMatrix<f64>,
    loc: &LocalizationSpec,
) -> Result<DMatrix<f64>> {
    let t = h.state_dim();
    if pe.nrows() != t || pe.ncols() != t {
        return Err(Error::invalid(format!(
            "Pe is {}x{} but the state has {t} days",
            pe.nrows(),
            pe.ncols()
        )));
    }
    if h.is_empty() {
        return Ok(DMatrix::zeros(t, 0));
    }
    let ht = h.matrix().transpose();
    let pht = pe * &ht;
    let hpht = h.select_rows(&pht);
    gain_from_parts(pht, hpht, h, re, loc)
}

/// Adaptive inflation factor from the innovation statistics:
/// `max(1, (d^T Re^-1 d - k) / tr(Re^-1/2 H Pe H^T Re^-1/2))`.
pub fn inflation_factor(
    d: &DVector<f64>,
    re: &DMatrix<f64>,
    h: &ObservationOperator,
    pe: &DMatrix<f64>,
) -> f64 {
    let hpht = h.select_rows(&h.select_rows(pe).transpose());
    inflation_from_obs_space(d, re, &hpht)
}

fn inflation_from_obs_space(d: &DVector<f64>, re: &DMatrix<f64>, hpht: &DMatrix<f64>) -> f64 {
    let k = d.len();
    if k == 0 {
        return 1.0;
    }
    let Some(chol) = re.clone().cholesky() else {
        log::debug!("inflation skipped: observation covariance is not positive definite");
        return 1.0;
    };
    let re_inv_d = chol.solve(d);
    let normalized = d.dot(&re_inv_d);
    // tr(Re^-1/2 S Re^-1/2) = tr(Re^-1 S)
    let denom = chol.solve(hpht).trace();
    if !(denom.abs() > 0.0) || !denom.is_finite() {
        log::debug!("inflation skipped: zero forecast spread in observation space");
        return 1.0;
    }
    let lambda = (normalized - k as f64) / denom;
    if lambda.is_finite() {
        lambda.max(1.0)
    } else {
        1.0
    }
}

/// Scales anomalies by `sqrt(lambda)` around the ensemble mean.
pub fn inflate(ens: &EnsembleMatrix, lambda: f64) -> Result<EnsembleMatrix> {
    if !(lambda >= 1.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("inflation factor must be >= 1, got {lambda}")));
    }
    if lambda == 1.0 {
        return Ok(ens.clone());
    }
    let scale = lambda.sqrt();
    let m = ens.members() as f64;
    let mut values = ens.as_matrix().clone();
    for mut row in values.row_iter_mut() {
        let mean = row.iter().sum::<f64>() / m;
        row.iter_mut().for_each(|v| *v = scale * (*v - mean) + mean);
    }
    EnsembleMatrix::from_matrix(values)
}

/// One analysis step: selects pending observations on days `>= first_pending_day`,
/// optionally inflates, then applies the perturbed-observation Kalman update to
/// every member.
pub fn enkf_update(
    ens: &EnsembleMatrix,
    obs: &ObservationMatrix,
    settings: &EnkfSettings,
    first_pending_day: usize,
) -> Result<(EnsembleMatrix, StepDiagnostics)> {
    let t = ens.state_dim();
    let m = ens.members();
    if obs.days() != t {
        return Err(Error::invalid(format!(
            "observation matrix has {} days but the ensemble has {t}",
            obs.days()
        )));
    }
    if obs.members() != m {
        return Err(Error::invalid(format!(
            "observation matrix has {} columns but the ensemble has {m} members",
            obs.members()
        )));
    }
    let day = t.saturating_sub(1);
    let h = ObservationOperator::pending_from(obs, first_pending_day);
    let k = h.len();
    if k == 0 {
        return Ok((
            ens.clone(),
            StepDiagnostics {
                day,
                k: 0,
                lambda: 1.0,
                gain_norm: 0.0,
                innovation_rms: 0.0,
            },
        ));
    }
    if m < 2 {
        return Err(Error::invalid(format!("EnKF update needs M >= 2, got {m}")));
    }

    let v_sel = h.select_rows(obs.as_matrix());
    debug_assert!(
        v_sel.row_iter().all(|r| !r.iter().all(|&v| v == MISSING_SENTINEL)),
        "sentinel row reached the innovation"
    );
    let re = match settings.obs_noise {
        ObsNoiseKind::Diagonal { sigma } => ObsNoiseModel::diagonal(sigma, k).re,
        ObsNoiseKind::Ensemble => ObsNoiseModel::from_perturbations(obs, &h)?.re,
    };

    let denom = m as f64 - 1.0;
    let mut lambda = 1.0;
    let forecast = if settings.inflation {
        let a = anomalies(ens.as_matrix());
        let ha = h.select_rows(&a);
        let hpht = &ha * ha.transpose() / denom;
        let mean_obs = DVector::from_iterator(k, v_sel.row_iter().map(|r| r.mean()));
        let mean_fc = DVector::from_iterator(
            k,
            h.select_rows(ens.as_matrix()).row_iter().map(|r| r.mean()),
        );
        lambda = inflation_from_obs_space(&(mean_obs - mean_fc), &re, &hpht);
        inflate(ens, lambda)?
    } else {
        ens.clone()
    };

    let a = anomalies(forecast.as_matrix());
    let ha = h.select_rows(&a);
    let pht = &a * ha.transpose() / denom;
    let hpht = &ha * ha.transpose() / denom;
    let gain = gain_from_parts(pht, hpht, &h, &re, &settings.localization)?;

    let innovations = v_sel - h.select_rows(forecast.as_matrix());
    let innovation_rms = (innovations.norm_squared() / innovations.len() as f64).sqrt();
    let analysis = forecast.as_matrix() + &gain * &innovations;
    if analysis.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure {
            day,
            reason: "analysis produced non-finite values".into(),
        });
    }
    Ok((
        EnsembleMatrix::from_matrix(analysis)?,
        StepDiagnostics {
            day,
            k,
            lambda,
            gain_norm: gain.norm(),
            innovation_rms,
        },
    ))
}

/// Per-day ensemble mean of an analysis.
pub fn assimilated_trajectory(assimilated: &EnsembleMatrix) -> Vec<f64> {
    assimilated.mean_trajectory()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{draw_noise_vector, to_sentinel_matrix, NoiseVector, ObservationSeries, Observation};
    use crate::crop::ensemble_mean;
    use approx::assert_relative_eq;

    fn obs_matrix_from_rows(rows: &[Option<f64>], m: usize) -> ObservationMatrix {
        let mut v = DMatrix::from_element(rows.len(), m, MISSING_SENTINEL);
        for (d, r) in rows.iter().enumerate() {
            if let Some(x) = r {
                v.row_mut(d).fill(*x);
            }
        }
        ObservationMatrix::from_raw(v)
    }

    fn random_ensemble(seed: u64, days: usize, m: usize) -> EnsembleMatrix {
        let members: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                draw_noise_vector(seed * 1000 + i as u64, days, 1.0)
                    .unwrap()
                    .as_slice()
                    .iter()
                    .map(|v| 3.0 + v)
                    .collect()
            })
            .collect();
        EnsembleMatrix::from_members(&members).unwrap()
    }

    #[test]
    fn operator_selects_observed_days() {
        let rows = [None, None, Some(1.0), None, None, Some(2.0)];
        let h = build_observation_operator(&obs_matrix_from_rows(&rows, 3));
        let mut expected = DMatrix::zeros(2, 6);
        expected[(0, 2)] = 1.0;
        expected[(1, 5)] = 1.0;
        assert_eq!(h.matrix(), expected);
    }

    #[test]
    fn operator_empty_when_all_missing() {
        let h = build_observation_operator(&obs_matrix_from_rows(&[None; 6], 3));
        assert_eq!(h.matrix().shape(), (0, 6));
    }

    #[test]
    fn operator_identity_when_fully_observed() {
        let h = build_observation_operator(&obs_matrix_from_rows(&[Some(1.0); 6], 3));
        assert_eq!(h.matrix(), DMatrix::identity(6, 6));
    }

    #[test]
    fn covariance_of_identical_members_is_zero() {
        let ens = EnsembleMatrix::from_members(&vec![vec![1.0, 2.0, 3.0]; 4]).unwrap();
        assert_eq!(forecast_covariance(&ens).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn covariance_two_members_hand_value() {
        let ens = EnsembleMatrix::from_members(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(forecast_covariance(&ens).unwrap(), DMatrix::from_element(1, 1, 2.0));
    }

    #[test]
    fn covariance_matches_two_pass_oracle() {
        let ens = random_ensemble(5, 7, 12);
        let pe = forecast_covariance(&ens).unwrap();
        let (t, m) = (7, 12);
        for i in 0..t {
            for j in 0..t {
                let mi: f64 = (0..m).map(|c| ens.get(i, c)).sum::<f64>() / m as f64;
                let mj: f64 = (0..m).map(|c| ens.get(j, c)).sum::<f64>() / m as f64;
                let mut acc = 0.0;
                for c in 0..m {
                    acc += (ens.get(i, c) - mi) * (ens.get(j, c) - mj);
                }
                assert!((pe[(i, j)] - acc / (m as f64 - 1.0)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn covariance_needs_two_members() {
        let ens = EnsembleMatrix::from_members(&[vec![1.0]]).unwrap();
        assert!(forecast_covariance(&ens).is_err());
    }

    fn scalar_operator() -> ObservationOperator {
        ObservationOperator::new(vec![0], 1).unwrap()
    }

    #[test]
    fn scalar_gains() {
        let h = scalar_operator();
        let one = DMatrix::from_element(1, 1, 1.0);
        let k = kalman_gain(&one, &h, &one, &LocalizationSpec::disabled()).unwrap();
        assert_relative_eq!(k[(0, 0)], 0.5, epsilon = 1e-9);
        let four = DMatrix::from_element(1, 1, 4.0);
        let k = kalman_gain(&four, &h, &one, &LocalizationSpec::disabled()).unwrap();
        assert_relative_eq!(k[(0, 0)], 0.8, epsilon = 1e-9);
    }

    #[test]
    fn perfect_observation_gain_is_identity() {
        let ens = random_ensemble(9, 4, 30);
        let pe = forecast_covariance(&ens).unwrap();
        let h = ObservationOperator::new(vec![0, 1, 2, 3], 4).unwrap();
        let re = DMatrix::from_diagonal_element(4, 4, 1e-12);
        let k = kalman_gain(&pe, &h, &re, &LocalizationSpec::disabled()).unwrap();
        assert!((k - DMatrix::<f64>::identity(4, 4)).amax() < 1e-6);
    }

    #[test]
    fn anomaly_route_matches_explicit_gain() {
        let ens = random_ensemble(2, 9, 15);
        let obs = obs_matrix_from_rows(
            &[Some(1.0), None, Some(2.0), None, None, Some(3.0), None, Some(1.5), None],
            15,
        );
        let h = build_observation_operator(&obs);
        let re = DMatrix::from_diagonal_element(h.len(), h.len(), 0.3);
        let loc = LocalizationSpec::new(true, 2.0).unwrap();
        let explicit = kalman_gain(&forecast_covariance(&ens).unwrap(), &h, &re, &loc).unwrap();
        let a = anomalies(ens.as_matrix());
        let ha = h.select_rows(&a);
        let via_anomalies = gain_from_parts(
            &a * ha.transpose() / 14.0,
            &ha * ha.transpose() / 14.0,
            &h,
            &re,
            &loc,
        )
        .unwrap();
        assert!((explicit - via_anomalies).amax() < 1e-10);
    }

    #[test]
    fn localization_zeroes_distant_gain() {
        let ens = random_ensemble(4, 30, 10);
        let mut rows = vec![None; 30];
        rows[29] = Some(3.0);
        let h = build_observation_operator(&obs_matrix_from_rows(&rows, 10));
        let re = DMatrix::from_element(1, 1, 0.1);
        let loc = LocalizationSpec::new(true, 5.0).unwrap();
        let k = kalman_gain(&forecast_covariance(&ens).unwrap(), &h, &re, &loc).unwrap();
        for day in 0..=19 {
            assert_eq!(k[(day, 0)], 0.0, "day {day}");
        }
        assert!(k[(29, 0)] != 0.0);
    }

    #[test]
    fn gaspari_cohn_cases() {
        assert_eq!(gaspari_cohn(0.0, 3.0).unwrap(), 1.0);
        assert_eq!(gaspari_cohn(6.0, 3.0).unwrap(), 0.0);
        assert_eq!(gaspari_cohn(7.5, 3.0).unwrap(), 0.0);
        assert!((gaspari_cohn(3.0, 3.0).unwrap() - 5.0 / 24.0).abs() < 1e-12);
        assert!(gaspari_cohn(1.0, 0.0).is_err());
        assert!(gaspari_cohn(1.0, -2.0).is_err());
    }

    #[test]
    fn inflation_scalar_value() {
        let h = scalar_operator();
        let one = DMatrix::from_element(1, 1, 1.0);
        let d = DVector::from_element(1, 2.0);
        assert_relative_eq!(inflation_factor(&d, &one, &h, &one), 3.0, epsilon = 1e-12);
        let zero = DVector::from_element(1, 0.0);
        assert_eq!(inflation_factor(&zero, &one, &h, &one), 1.0);
        let empty = ObservationOperator::new(vec![], 1).unwrap();
        assert_eq!(
            inflation_factor(&DVector::zeros(0), &DMatrix::zeros(0, 0), &empty, &one),
            1.0
        );
        // Zero spread: denominator vanishes.
        let flat = DMatrix::from_element(1, 1, 0.0);
        assert_eq!(inflation_factor(&d, &one, &h, &flat), 1.0);
    }

    #[test]
    fn inflate_cases() {
        let ens = EnsembleMatrix::from_members(&[vec![1.0], vec![3.0]]).unwrap();
        let same = inflate(&ens, 1.0).unwrap();
        assert_eq!(same, ens);
        let wide = inflate(&ens, 4.0).unwrap();
        assert_eq!(wide.member(0), vec![0.0]);
        assert_eq!(wide.member(1), vec![4.0]);
        assert!(inflate(&ens, 0.5).is_err());
    }

    #[test]
    fn inflate_preserves_mean_and_scales_covariance() {
        let ens = random_ensemble(8, 5, 20);
        let pe = forecast_covariance(&ens).unwrap();
        for lambda in [1.0, 2.0, 4.0] {
            let out = inflate(&ens, lambda).unwrap();
            for (a, b) in ens.mean_trajectory().iter().zip(out.mean_trajectory()) {
                assert!((a - b).abs() < 1e-12);
            }
            let scaled = forecast_covariance(&out).unwrap();
            assert!((scaled - &pe * lambda).amax() / pe.amax() < 1e-10);
        }
    }

    fn settings(sigma: f64, loc: bool, inf: bool) -> EnkfSettings {
        EnkfSettings {
            obs_noise: ObsNoiseKind::Diagonal { sigma },
            localization: LocalizationSpec {
                enabled: loc,
                radius_days: 10.0,
            },
            inflation: inf,
        }
    }

    #[test]
    fn update_without_observations_is_identity() {
        let ens = random_ensemble(1, 6, 8);
        let obs = obs_matrix_from_rows(&[None; 6], 8);
        let (out, diag) = enkf_update(&ens, &obs, &settings(0.2, true, true), 0).unwrap();
        assert_eq!(out, ens);
        assert_eq!(diag.k, 0);
        assert_eq!(diag.lambda, 1.0);
    }

    #[test]
    fn perfect_observations_replace_members() {
        let ens = random_ensemble(3, 4, 25);
        let series = ObservationSeries::new(vec![Observation::Value(2.0); 4]).unwrap();
        let noise = draw_noise_vector(17, 25, 0.3).unwrap();
        let obs = to_sentinel_matrix(&series, 25, &noise).unwrap();
        let (out, _) = enkf_update(&ens, &obs, &settings(1e-6, false, false), 0).unwrap();
        assert!((out.as_matrix() - obs.as_matrix()).amax() < 1e-6);
    }

    #[test]
    fn scalar_analysis_mean() {
        // Two members at -1 and 1 give mean 0 and Pe = 2; shift to Pe = 1 with sqrt(1/2).
        let s = 0.5f64.sqrt();
        let ens = EnsembleMatrix::from_members(&[vec![-s], vec![s]]).unwrap();
        let noise = NoiseVector::from_values(vec![0.0, 0.0], 1.0).unwrap();
        let series = ObservationSeries::new(vec![Observation::Value(2.0)]).unwrap();
        let obs = to_sentinel_matrix(&series, 2, &noise).unwrap();
        let (out, diag) = enkf_update(&ens, &obs, &settings(1.0, false, false), 0).unwrap();
        assert_relative_eq!(ensemble_mean(&out, 0).unwrap(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(diag.gain_norm, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn analysis_mean_between_forecast_and_observation() {
        for seed in 0..20 {
            let ens = random_ensemble(seed + 100, 1, 30);
            let target = 3.0 + (seed as f64 - 10.0) * 0.4;
            let obs = obs_matrix_from_rows(&[Some(target)], 30);
            let (out, _) = enkf_update(&ens, &obs, &settings(0.7, false, false), 0).unwrap();
            let f = ens.mean_trajectory()[0];
            let a = out.mean_trajectory()[0];
            assert!((a - f.min(target)) >= -1e-12 && (f.max(target) - a) >= -1e-12);
        }
    }

    #[test]
    fn pending_day_skips_assimilated_rows() {
        let ens = random_ensemble(6, 5, 10);
        let obs = obs_matrix_from_rows(&[Some(1.0), None, Some(2.0), None, None], 10);
        let (out, diag) = enkf_update(&ens, &obs, &settings(0.2, false, false), 3).unwrap();
        assert_eq!(diag.k, 0);
        assert_eq!(out, ens);
    }

    #[test]
    fn ensemble_noise_model_matches_sample_variance() {
        let series = ObservationSeries::new(vec![Observation::Value(2.0)]).unwrap();
        let noise = draw_noise_vector(5, 40, 0.3).unwrap();
        let obs = to_sentinel_matrix(&series, 40, &noise).unwrap();
        let model = ObsNoiseModel::from_perturbations(&obs, &build_observation_operator(&obs)).unwrap();
        let xs = noise.as_slice();
        let mean = xs.iter().sum::<f64>() / 40.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 39.0;
        assert!((model.re[(0, 0)] - var).abs() < 1e-12);
    }

    #[test]
    fn assimilated_trajectory_is_mean() {
        let single = EnsembleMatrix::from_members(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(assimilated_trajectory(&single), vec![1.0, 2.0]);
        let pair = EnsembleMatrix::from_members(&[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(assimilated_trajectory(&pair), vec![2.0]);
        let ens = random_ensemble(12, 6, 9);
        let traj = assimilated_trajectory(&ens);
        for (d, v) in traj.iter().enumerate() {
            assert_eq!(*v, ensemble_mean(&ens, d).unwrap());
        }
    }
}
