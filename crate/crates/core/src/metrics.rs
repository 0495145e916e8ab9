//! Point-error metrics and result tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

fn check(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::invalid("metrics need at least one value"));
    }
    if truth.len() != pred.len() {
        return Err(Error::invalid(format!(
            "truth has {} values but prediction has {}",
            truth.len(),
            pred.len()
        )));
    }
    Ok(())
}

pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let sum: f64 = truth.iter().zip(pred).map(|(y, f)| (y - f).powi(2)).sum();
    Ok(sum / truth.len() as f64)
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    mse(truth, pred).map(f64::sqrt)
}

pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let sum: f64 = truth.iter().zip(pred).map(|(y, f)| (y - f).abs()).sum();
    Ok(sum / truth.len() as f64)
}

impl MetricReport {
    pub fn compute(method: impl Into<String>, truth: &[f64], pred: &[f64]) -> Result<Self> {
        let mse = mse(truth, pred)?;
        Ok(Self {
            method: method.into(),
            mse,
            rmse: mse.sqrt(),
            mae: mae(truth, pred)?,
            n: truth.len(),
        })
    }

    /// `method, mse, rmse, mae` CSV row.
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.method, self.mse, self.rmse, self.mae)
    }

    /// Same fields separated by `", "` for display.
    pub fn display_row(&self) -> String {
        format!("{}, {}, {}, {}", self.method, self.mse, self.rmse, self.mae)
    }
}

/// One report per method, in the order given.
pub fn metric_table<S: AsRef<str>, P: AsRef<[f64]>>(
    truth: &[f64],
    predictions: &[(S, P)],
) -> Result<Vec<MetricReport>> {
    predictions
        .iter()
        .map(|(name, pred)| MetricReport::compute(name.as_ref(), truth, pred.as_ref()))
        .collect()
}

pub const CSV_HEADER: &str = "method,mse,rmse,mae";

/// Renders a table as CSV with the fixed column order.
pub fn table_to_csv(table: &[MetricReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in table {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct JsonRow<'a> {
    method: &'a str,
    mse: f64,
    rmse: f64,
    mae: f64,
}

/// Renders a table as a JSON array of `{method, mse, rmse, mae}` objects.
pub fn table_to_json(table: &[MetricReport]) -> Result<String> {
    let rows: Vec<JsonRow<'_>> = table
        .iter()
        .map(|r| JsonRow {
            method: &r.method,
            mse: r.mse,
            rmse: r.rmse,
            mae: r.mae,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)?)
}
