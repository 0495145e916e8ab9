//! Time grid, ensemble and observation containers, and seeded noise.

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Value written into every ensemble copy of a day without an observation.
pub const MISSING_SENTINEL: f64 = -1.0;

/// Daily simulation calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    start_date: NaiveDate,
    n_days: usize,
}

impl TimeGrid {
    pub fn new(start_date: NaiveDate, n_days: usize) -> Result<Self> {
        if n_days == 0 {
            return Err(Error::invalid("time grid needs at least one day"));
        }
        start_date
            .checked_add_days(Days::new(n_days as u64 - 1))
            .ok_or_else(|| Error::invalid("time grid runs past the supported calendar"))?;
        Ok(Self { start_date, n_days })
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn end_date(&self) -> NaiveDate {
        self.date(self.n_days - 1).expect("grid is non-empty")
    }

    /// Calendar date of a day index.
    pub fn date(&self, day: usize) -> Option<NaiveDate> {
        if day >= self.n_days {
            return None;
        }
        self.start_date.checked_add_days(Days::new(day as u64))
    }

    /// Day index of a calendar date, if it falls on the grid.
    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start_date).num_days();
        if offset < 0 || offset as usize >= self.n_days {
            None
        } else {
            Some(offset as usize)
        }
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.n_days).map(|d| self.date(d).expect("index in range"))
    }
}

/// Convenience wrapper over [`TimeGrid::new`].
pub fn make_time_grid(start_date: NaiveDate, n_days: usize) -> Result<TimeGrid> {
    TimeGrid::new(start_date, n_days)
}

/// M ensemble members, stored as a `days x M` matrix (one column per member).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMatrix {
    values: DMatrix<f64>,
}

impl EnsembleMatrix {
    /// Builds an ensemble from a `days x M` matrix.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::invalid("ensemble needs at least one member"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("ensemble holds non-finite value {bad}")));
        }
        Ok(Self { values })
    }

    /// Builds an ensemble from per-member trajectories.
    pub fn from_members(members: &[Vec<f64>]) -> Result<Self> {
        let m = members.len();
        if m == 0 {
            return Err(Error::invalid("ensemble needs at least one member"));
        }
        let days = members[0].len();
        if let Some((i, bad)) = members.iter().enumerate().find(|(_, c)| c.len() != days) {
            return Err(Error::invalid(format!(
                "member {i} has length {} but member 0 has length {days}",
                bad.len()
            )));
        }
        Self::from_matrix(DMatrix::from_fn(days, m, |r, c| members[c][r]))
    }

    /// Number of days held (the trajectory length).
    pub fn state_dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn members(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, day: usize, member: usize) -> f64 {
        self.values[(day, member)]
    }

    pub fn member(&self, member: usize) -> Vec<f64> {
        self.values.column(member).iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    /// Per-day ensemble mean.
    pub fn mean_trajectory(&self) -> Vec<f64> {
        let m = self.members() as f64;
        self.values.row_iter().map(|row| row.iter().sum::<f64>() / m).collect()
    }
}

/// One day's observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Value(f64),
    Missing,
}

impl Observation {
    pub fn value(self) -> Option<f64> {
        match self {
            Observation::Value(v) => Some(v),
            Observation::Missing => None,
        }
    }

    pub fn is_missing(self) -> bool {
        matches!(self, Observation::Missing)
    }
}

/// Per-day LAI observations with structurally-tagged gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    values: Vec<Observation>,
}

impl ObservationSeries {
    pub fn new(values: Vec<Observation>) -> Result<Self> {
        for (day, obs) in values.iter().enumerate() {
            if let Observation::Value(v) = obs {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::invalid(format!(
                        "observation on day {day} must be finite and non-negative, got {v}"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn all_missing(days: usize) -> Self {
        Self {
            values: vec![Observation::Missing; days],
        }
    }

    /// Builds a series from optional values (`None` is a gap).
    pub fn from_options(values: &[Option<f64>]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|v| v.map_or(Observation::Missing, Observation::Value))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, day: usize) -> Observation {
        self.values[day]
    }

    pub fn iter(&self) -> impl Iterator<Item = Observation> + '_ {
        self.values.iter().copied()
    }

    pub fn observed_days(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(d, o)| (!o.is_missing()).then_some(d))
            .collect()
    }

    pub fn as_options(&self) -> Vec<Option<f64>> {
        self.values.iter().map(|o| o.value()).collect()
    }
}

/// M Gaussian draws sharing one standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    epsilons: Vec<f64>,
    sigma: f64,
}

impl NoiseVector {
    /// Wraps explicit draws.
    pub fn from_values(epsilons: Vec<f64>, sigma: f64) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(Error::invalid("noise vector needs at least one entry"));
        }
        if epsilons.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("noise vector entries must be finite"));
        }
        Ok(Self { epsilons, sigma })
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.epsilons
    }
}

/// Seeded ChaCha stream. Distinct `stream` values give independent sequences
/// for the same seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a tag into a seed (splitmix64 finalizer) to derive independent sub-seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `m` independent N(0, sigma^2) values, reproducible for a fixed seed.
pub fn draw_noise_vector(seed: u64, m: usize, sigma: f64) -> Result<NoiseVector> {
    if m == 0 {
        return Err(Error::invalid("noise vector length M must be at least 1"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    let mut rng = seeded_rng(seed, 0);
    let epsilons = (0..m)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect();
    Ok(NoiseVector { epsilons, sigma })
}

/// Observation matrix `V` (days x M): perturbed observations per member, with
/// gap rows filled by [`MISSING_SENTINEL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    values: DMatrix<f64>,
    observed: Vec<bool>,
}

impl ObservationMatrix {
    /// Interprets a raw matrix; a row is missing when every entry equals the sentinel.
    pub fn from_raw(values: DMatrix<f64>) -> Self {
        let observed = values
            .row_iter()
            .map(|row| !row.iter().all(|&v| v == MISSING_SENTINEL))
            .collect();
        Self { values, observed }
    }

    pub fn days(&self) -> usize {
        self.values.nrows()
    }

    pub fn members(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_observed(&self, day: usize) -> bool {
        self.observed[day]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// The first `days` rows.
    pub fn prefix(&self, days: usize) -> ObservationMatrix {
        ObservationMatrix {
            values: self.values.rows(0, days).into_owned(),
            observed: self.observed[..days].to_vec(),
        }
    }
}

/// Lowers an observation series to the `days x M` perturbed-observation matrix.
///
/// Observed days become `v(t) + eps_i` per member; gaps become a row of sentinels.
pub fn to_sentinel_matrix(
    obs: &ObservationSeries,
    m: usize,
    noise: &NoiseVector,
) -> Result<ObservationMatrix> {
    if noise.len() != m {
        return Err(Error::invalid(format!(
            "noise vector has length {} but M is {m}",
            noise.len()
        )));
    }
    let eps = noise.as_slice();
    let mut values = DMatrix::from_element(obs.len(), m, MISSING_SENTINEL);
    let mut observed = vec![false; obs.len()];
    for (day, o) in obs.iter().enumerate() {
        if let Observation::Value(v) = o {
            observed[day] = true;
            for (i, e) in eps.iter().enumerate() {
                values[(day, i)] = v + e;
            }
        }
    }
    Ok(ObservationMatrix { values, observed })
}

/// Like [`to_sentinel_matrix`] but with an independent noise vector per observed day.
pub fn to_sentinel_matrix_per_day(
    obs: &ObservationSeries,
    m: usize,
    noise_for_day: impl Fn(usize) -> Result<NoiseVector>,
) -> Result<ObservationMatrix> {
    let mut values = DMatrix::from_element(obs.len(), m, MISSING_SENTINEL);
    let mut observed = vec![false; obs.len()];
    for (day, o) in obs.iter().enumerate() {
        if let Observation::Value(v) = o {
            let noise = noise_for_day(day)?;
            if noise.len() != m {
                return Err(Error::invalid(format!(
                    "noise vector for day {day} has length {} but M is {m}",
                    noise.len()
                )));
            }
            observed[day] = true;
            for (i, e) in noise.as_slice().iter().enumerate() {
                values[(day, i)] = v + e;
            }
        }
    }
    Ok(ObservationMatrix { values, observed })
}
