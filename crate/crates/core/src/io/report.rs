//! Run reports and plot data.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::base::{ObservationSeries, TimeGrid};
use crate::enkf::StepDiagnostics;
use crate::error::{Error, Result};
use crate::metrics::{metric_table, MetricReport};
use crate::pipeline::{AssimilationConfig, ExperimentSpec, Method};

pub const REPORT_FORMAT: &str = "cropda-report";
pub const REPORT_VERSION: u32 = 1;
pub const PLOT_VERSION: u32 = 1;
/// Timestamp written under `--deterministic`.
pub const ZERO_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

/// One day of every series; absent values are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub truth: Option<f64>,
    pub obs: Option<f64>,
    pub open_loop: Option<f64>,
    pub enkf: Option<f64>,
    pub enkf_lstm: Option<f64>,
}

impl DayRecord {
    pub fn series(&self, method: Method) -> Option<f64> {
        match method {
            Method::OpenLoop => self.open_loop,
            Method::Enkf => self.enkf,
            Method::EnkfLstm => self.enkf_lstm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub generated_at: String,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub spec: ExperimentSpec,
    pub config: AssimilationConfig,
    pub days: Vec<DayRecord>,
    pub metrics: Vec<MetricReport>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub elapsed_ms: u64,
}

/// Inputs for assembling a report.
pub struct ReportParts<'a> {
    pub spec: &'a ExperimentSpec,
    pub config: &'a AssimilationConfig,
    pub grid: &'a TimeGrid,
    pub truth: Option<&'a [f64]>,
    pub observations: &'a ObservationSeries,
    pub outputs: &'a [(Method, Vec<f64>)],
    pub diagnostics: Vec<StepDiagnostics>,
    pub elapsed_ms: u64,
    pub deterministic: bool,
}

impl RunReport {
    pub fn build(parts: ReportParts<'_>) -> Result<Self> {
        let n = parts.grid.n_days();
        let check = |what: &str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} has {len} days, grid has {n}")))
            }
        };
        check("observations", parts.observations.len())?;
        if let Some(t) = parts.truth {
            check("truth", t.len())?;
        }
        for (m, s) in parts.outputs {
            check(m.name(), s.len())?;
        }
        let pick = |method: Method, day: usize| {
            parts
                .outputs
                .iter()
                .find(|(m, _)| *m == method)
                .map(|(_, s)| s[day])
        };
        let days = parts
            .grid
            .dates()
            .enumerate()
            .map(|(d, date)| DayRecord {
                date,
                truth: parts.truth.map(|t| t[d]),
                obs: parts.observations.get(d).value(),
                open_loop: pick(Method::OpenLoop, d),
                enkf: pick(Method::Enkf, d),
                enkf_lstm: pick(Method::EnkfLstm, d),
            })
            .collect();
        let metrics = match parts.truth {
            Some(t) => metric_table(
                t,
                &parts
                    .outputs
                    .iter()
                    .map(|(m, s)| (m.label(), s.as_slice()))
                    .collect::<Vec<_>>(),
            )?,
            None => Vec::new(),
        };
        let generated_at = if parts.deterministic {
            ZERO_TIMESTAMP.to_string()
        } else {
            chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string()
        };
        Ok(RunReport {
            format: REPORT_FORMAT.to_string(),
            version: REPORT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            generated_at,
            seed: parts.config.seed,
            methods: parts.outputs.iter().map(|(m, _)| *m).collect(),
            spec: parts.spec.clone(),
            config: parts.config.clone(),
            days,
            metrics,
            diagnostics: parts.diagnostics,
            elapsed_ms: if parts.deterministic { 0 } else { parts.elapsed_ms },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let report: RunReport = serde_json::from_str(text).map_err(|e| Error::format(path, e.line(), e.to_string()))?;
        if report.format != REPORT_FORMAT {
            return Err(Error::format(path, 0, format!("not a run report (format `{}`)", report.format)));
        }
        if report.version != REPORT_VERSION {
            return Err(Error::format(path, 0, format!("unsupported report version {}", report.version)));
        }
        Ok(report)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Tidy `day,series,value` rows for external plotting.
    pub fn plot_csv(&self) -> String {
        let mut out = format!("# cropda-plot {PLOT_VERSION}\nday,series,value\n");
        for (d, rec) in self.days.iter().enumerate() {
            let series = [
                ("truth", rec.truth),
                ("obs", rec.obs),
                ("open_loop", rec.open_loop),
                ("enkf", rec.enkf),
                ("enkf_lstm", rec.enkf_lstm),
            ];
            for (name, value) in series {
                if let Some(v) = value {
                    let _ = writeln!(out, "{d},{name},{v}");
                }
            }
        }
        out
    }
}

/// Metrics pooled over every day of every report that has truth.
pub fn evaluate_reports(reports: &[RunReport]) -> Result<Vec<MetricReport>> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to evaluate"));
    }
    let mut methods: Vec<Method> = Vec::new();
    for r in reports {
        for m in &r.methods {
            if !methods.contains(m) {
                methods.push(*m);
            }
        }
    }
    methods.sort_by_key(|m| Method::ALL.iter().position(|x| x == m));
    let mut truth = Vec::new();
    let mut preds: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    for (i, r) in reports.iter().enumerate() {
        for rec in &r.days {
            let Some(t) = rec.truth else {
                return Err(Error::invalid(format!("report {} has no truth on {}", i + 1, rec.date)));
            };
            truth.push(t);
            for (k, m) in methods.iter().enumerate() {
                let v = rec.series(*m).ok_or_else(|| {
                    Error::invalid(format!("report {} lacks method {} on {}", i + 1, m.name(), rec.date))
                })?;
                preds[k].push(v);
            }
        }
    }
    let named: Vec<(&str, &[f64])> = methods
        .iter()
        .zip(&preds)
        .map(|(m, p)| (m.label(), p.as_slice()))
        .collect();
    metric_table(&truth, &named)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::preset::shipped_preset;

    fn sample(deterministic: bool) -> RunReport {
        let spec = shipped_preset("rice").unwrap();
        let grid = TimeGrid::new(spec.start_date, 4).unwrap();
        let obs = ObservationSeries::from_options(&[None, Some(0.3), None, Some(1.0 / 3.0)]).unwrap();
        let truth = [0.0, 0.25, 0.5, 0.1 + 0.2];
        RunReport::build(ReportParts {
            spec: &spec,
            config: &AssimilationConfig::default(),
            grid: &grid,
            truth: Some(&truth),
            observations: &obs,
            outputs: &[
                (Method::OpenLoop, vec![0.0, 0.1, 0.2, 0.3]),
                (Method::Enkf, vec![0.0, 0.29, 0.45, 1e-17]),
            ],
            diagnostics: Vec::new(),
            elapsed_ms: 12,
            deterministic,
        })
        .unwrap()
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let r = sample(true);
        let text = r.to_json().unwrap();
        let back = RunReport::from_json(&text, Path::new("r.json")).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn deterministic_zeroes_time() {
        let r = sample(true);
        assert_eq!(r.generated_at, ZERO_TIMESTAMP);
        assert_eq!(r.elapsed_ms, 0);
        assert_ne!(sample(false).generated_at, ZERO_TIMESTAMP);
    }

    #[test]
    fn missing_values_are_null() {
        let text = sample(true).to_json().unwrap();
        assert!(text.contains("\"obs\": null"));
        assert!(text.contains("\"enkf_lstm\": null"));
    }

    #[test]
    fn plot_rows_are_tidy() {
        let csv = sample(true).plot_csv();
        let mut lines = csv.lines().skip(1);
        assert_eq!(lines.next(), Some("day,series,value"));
        assert!(csv.contains("\n1,obs,0.3\n"));
        assert!(!csv.contains("0,obs"));
        assert!(lines.all(|l| l.split(',').count() == 3));
    }

    #[test]
    fn evaluate_pools_reports() {
        let r = sample(true);
        let table = evaluate_reports(&[r.clone(), r.clone()]).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table[0].method, "Initial");
        assert_eq!(table[0].n, 8);
        assert!((table[0].mse - r.metrics[0].mse).abs() < 1e-15);
    }

    #[test]
    fn wrong_format_rejected() {
        let text = sample(true).to_json().unwrap().replace(REPORT_FORMAT, "other");
        assert!(RunReport::from_json(&text, Path::new("r.json")).is_err());
    }
}
