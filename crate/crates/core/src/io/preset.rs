//! Crop and experiment presets.

use std::path::Path;

use chrono::NaiveDate;

use crate::crop::CropParams;
use crate::error::{Error, Result};
use crate::io::keyvalue::KeyValues;
use crate::pipeline::{ExperimentSpec, Method, ModelBias, Outlier, WeatherGenerator};

pub const PRESET_VERSION: u32 = 1;

const SHIPPED: [(&str, &str); 3] = [
    ("rice", include_str!("../../presets/rice.conf")),
    ("maize", include_str!("../../presets/maize.conf")),
    ("soybean", include_str!("../../presets/soybean.conf")),
];

const KEYS: &[&str] = &[
    "format_version",
    "crop",
    "variety",
    "start_date",
    "n_days",
    "tbase",
    "tsum_emergence",
    "rgrlai",
    "span",
    "lai_max",
    "lai_init",
    "bias.rgrlai",
    "bias.lai_max",
    "bias.tsum_emergence",
    "weather.temp_mean",
    "weather.temp_amplitude",
    "weather.warmest_doy",
    "weather.temp_noise",
    "weather.temp_persistence",
    "weather.diurnal_range",
    "weather.irrad_base",
    "weather.irrad_per_degree",
    "weather.irrad_noise",
    "weather.rain_probability",
    "weather.rain_mean",
    "weather.wind_mean",
    "seasons",
    "eval_seasons",
    "seed",
    "obs.interval_min",
    "obs.interval_max",
    "obs.first_day",
    "obs.last_day",
    "obs.sigma",
    "obs.missing",
    "obs.outlier_day",
    "obs.outlier_factor",
    "methods",
];

/// Names of the presets compiled into the library.
pub fn shipped_presets() -> Vec<&'static str> {
    SHIPPED.iter().map(|(n, _)| *n).collect()
}

/// A shipped preset by name.
pub fn shipped_preset(name: &str) -> Result<ExperimentSpec> {
    let (_, text) = SHIPPED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| {
            Error::invalid(format!(
                "unknown preset `{name}` (shipped: {})",
                shipped_presets().join(", ")
            ))
        })?;
    parse_preset(text, Path::new(&format!("<preset {name}>")))
}

/// A shipped preset name, or else a path to a preset file.
pub fn load_preset(name_or_path: &str) -> Result<ExperimentSpec> {
    if SHIPPED.iter().any(|(n, _)| *n == name_or_path) || !Path::new(name_or_path).exists() {
        return shipped_preset(name_or_path);
    }
    let kv = KeyValues::read(Path::new(name_or_path))?;
    from_key_values(&kv)
}

pub fn parse_preset(text: &str, path: &Path) -> Result<ExperimentSpec> {
    from_key_values(&KeyValues::parse(text, path)?)
}

fn from_key_values(kv: &KeyValues) -> Result<ExperimentSpec> {
    kv.check_keys(KEYS)?;
    kv.check_version(PRESET_VERSION)?;
    let start_date = kv.get_or("start_date", NaiveDate::from_ymd_opt(2022, 5, 1).expect("valid date"))?;
    let methods = match kv.get_list::<String>("methods")? {
        Some(names) => names.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?,
        None => Method::ALL.to_vec(),
    };
    let outlier = match (kv.get::<usize>("obs.outlier_day")?, kv.get::<f64>("obs.outlier_factor")?) {
        (Some(day), Some(factor)) => Some(Outlier { day, factor }),
        (None, None) => None,
        _ => {
            return Err(Error::format(
                kv.path(),
                0,
                "obs.outlier_day and obs.outlier_factor must be given together",
            ))
        }
    };
    let n_days = kv.get_or("n_days", 168usize)?;
    let spec = ExperimentSpec {
        crop_name: kv.require("crop")?,
        variety: kv.get_or("variety", String::new())?,
        start_date,
        n_days,
        truth_params: CropParams {
            tbase: kv.require("tbase")?,
            tsum_emergence: kv.require("tsum_emergence")?,
            rgrlai: kv.require("rgrlai")?,
            span: kv.require("span")?,
            lai_max: kv.require("lai_max")?,
            lai_init: kv.require("lai_init")?,
        },
        model_bias: ModelBias {
            rgrlai: kv.get_or("bias.rgrlai", 1.0)?,
            lai_max: kv.get_or("bias.lai_max", 1.0)?,
            tsum_emergence: kv.get_or("bias.tsum_emergence", 1.0)?,
        },
        weather: WeatherGenerator {
            temp_mean: kv.get_or("weather.temp_mean", 9.0)?,
            temp_amplitude: kv.get_or("weather.temp_amplitude", 15.0)?,
            warmest_doy: kv.get_or("weather.warmest_doy", 200.0)?,
            temp_noise: kv.get_or("weather.temp_noise", 2.0)?,
            temp_persistence: kv.get_or("weather.temp_persistence", 0.7)?,
            diurnal_range: kv.get_or("weather.diurnal_range", 10.0)?,
            irrad_base: kv.get_or("weather.irrad_base", 15.0e6)?,
            irrad_per_degree: kv.get_or("weather.irrad_per_degree", 0.3e6)?,
            irrad_noise: kv.get_or("weather.irrad_noise", 2.0e6)?,
            rain_probability: kv.get_or("weather.rain_probability", 0.25)?,
            rain_mean: kv.get_or("weather.rain_mean", 0.8)?,
            wind_mean: kv.get_or("weather.wind_mean", 3.0)?,
        },
        seasons: kv.get_or("seasons", 150)?,
        eval_seasons: kv.get_or("eval_seasons", 20)?,
        seed: kv.get_or("seed", 2022)?,
        interval: (kv.get_or("obs.interval_min", 2)?, kv.get_or("obs.interval_max", 7)?),
        obs_window: (kv.get_or("obs.first_day", 0)?, kv.get_or("obs.last_day", n_days.saturating_sub(1))?),
        obs_sigma: kv.get_or("obs.sigma", 0.2)?,
        missing_windows: kv.get_ranges("obs.missing")?.unwrap_or_default(),
        outlier,
        methods,
    };
    spec.validate()
        .map_err(|e| Error::format(kv.path(), 0, e.to_string()))?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_presets_parse() {
        for name in shipped_presets() {
            let spec = shipped_preset(name).unwrap();
            assert_eq!(spec.crop_name, name);
            assert_eq!(spec.n_days, 168);
            assert_eq!(spec.seasons, 150);
        }
    }

    #[test]
    fn maize_observes_mid_season_only() {
        let spec = shipped_preset("maize").unwrap();
        assert_eq!(spec.obs_window, (48, 82));
        assert_eq!(spec.start_date + chrono::Days::new(48), NaiveDate::from_ymd_opt(2022, 6, 18).unwrap());
        assert_eq!(spec.start_date + chrono::Days::new(82), NaiveDate::from_ymd_opt(2022, 7, 22).unwrap());
    }

    #[test]
    fn soybean_outlier_on_july_15() {
        let spec = shipped_preset("soybean").unwrap();
        let o = spec.outlier.unwrap();
        assert_eq!(spec.start_date + chrono::Days::new(o.day as u64), NaiveDate::from_ymd_opt(2022, 7, 15).unwrap());
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{}\nbogus = 1\n", SHIPPED[0].1);
        let err = parse_preset(&text, Path::new("x.conf")).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn unknown_preset_lists_shipped() {
        let err = load_preset("wheat").unwrap_err().to_string();
        assert!(err.contains("wheat"), "{err}");
    }
}
