//! Weather, observation and trajectory CSV files.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;

use crate::base::{Observation, ObservationSeries, TimeGrid};
use crate::crop::WeatherDay;
use crate::error::{Error, Result};

pub const CSV_VERSION: u32 = 1;

const WEATHER_COLUMNS: [&str; 7] = ["date", "tmax", "tmin", "irrad", "vap", "wind", "rain"];
const DATE_FORMAT: &str = "%Y-%m-%d";

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Checks a leading `# cropda-<kind> <version>` comment when there is one.
fn check_version_comment(text: &str, kind: &str, path: &Path) -> Result<()> {
    let Some(first) = text.lines().next() else {
        return Ok(());
    };
    let Some(rest) = first.trim().strip_prefix('#') else {
        return Ok(());
    };
    let mut words = rest.split_whitespace();
    if words.next() != Some(&format!("cropda-{kind}")[..]) {
        return Ok(());
    }
    match words.next().map(str::parse::<u32>) {
        Some(Ok(v)) if v == CSV_VERSION => Ok(()),
        _ => Err(Error::format(path, 1, format!("unsupported {kind} file version `{}`", rest.trim()))),
    }
}

/// Parsed rows with their 1-based file line numbers.
struct Table {
    columns: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table(text: &str, path: &Path, required: &[&str]) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let header_line = reader.position().line().saturating_sub(1).max(1) as usize;
    for &col in required {
        if !columns.iter().any(|c| c == col) {
            return Err(Error::format(path, header_line, format!("missing column `{col}`")));
        }
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::format(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec));
    }
    Ok(Table { columns, rows })
}

impl Table {
    fn index(&self, name: &str) -> usize {
        self.columns.iter().position(|c| c == name).expect("column checked")
    }
}

fn parse_date(s: &str, path: &Path, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, DATE_FORMAT)
        .map_err(|e| Error::format(path, line, format!("bad date `{s}`: {e}")))
}

fn parse_f64(s: &str, column: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::format(path, line, format!("column `{column}`: cannot parse `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::format(path, line, format!("column `{column}`: value `{s}` is not finite")));
    }
    Ok(v)
}

/// Weather rows with their start date.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    pub start_date: NaiveDate,
    pub days: Vec<WeatherDay>,
}

pub fn parse_weather_csv(text: &str, path: &Path) -> Result<WeatherSeries> {
    check_version_comment(text, "weather", path)?;
    let table = read_table(text, path, &WEATHER_COLUMNS)?;
    let idx: Vec<usize> = WEATHER_COLUMNS.iter().map(|c| table.index(c)).collect();
    let mut start = None;
    let mut prev: Option<NaiveDate> = None;
    let mut days = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let date = parse_date(field(0), path, line)?;
        if let Some(p) = prev {
            if date != p + chrono::Days::new(1) {
                return Err(Error::format(
                    path,
                    line,
                    format!("date {date} does not follow {p} (rows must be sorted and gap-free)"),
                ));
            }
        }
        let mut v = [0.0; 6];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = parse_f64(field(k + 1), WEATHER_COLUMNS[k + 1], path, line)?;
        }
        let day = WeatherDay {
            tmax: v[0],
            tmin: v[1],
            irrad: v[2],
            vap: v[3],
            wind: v[4],
            rain: v[5],
        };
        day.validate().map_err(|e| Error::format(path, line, e.to_string()))?;
        start.get_or_insert(date);
        prev = Some(date);
        days.push(day);
    }
    let start_date = start.ok_or_else(|| Error::format(path, 0, "weather file has no rows"))?;
    Ok(WeatherSeries { start_date, days })
}

pub fn read_weather_csv(path: &Path) -> Result<WeatherSeries> {
    parse_weather_csv(&read_text(path)?, path)
}

pub fn weather_to_csv(start_date: NaiveDate, days: &[WeatherDay]) -> String {
    let mut out = format!("# cropda-weather {CSV_VERSION}\n{}\n", WEATHER_COLUMNS.join(","));
    for (i, w) in days.iter().enumerate() {
        let date = start_date + chrono::Days::new(i as u64);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            date.format(DATE_FORMAT),
            w.tmax,
            w.tmin,
            w.irrad,
            w.vap,
            w.wind,
            w.rain
        );
    }
    out
}

pub fn write_weather_csv(path: &Path, start_date: NaiveDate, days: &[WeatherDay]) -> Result<()> {
    write_text(path, &weather_to_csv(start_date, days))
}

/// Reads `date,lai`; days without a row are missing.
pub fn parse_observations_csv(text: &str, path: &Path, grid: &TimeGrid) -> Result<ObservationSeries> {
    check_version_comment(text, "observations", path)?;
    let table = read_table(text, path, &["date", "lai"])?;
    let (di, li) = (table.index("date"), table.index("lai"));
    let mut values = vec![Observation::Missing; grid.n_days()];
    let mut seen_on = vec![0usize; grid.n_days()];
    for (line, rec) in &table.rows {
        let line = *line;
        let date = parse_date(rec.get(di).unwrap_or(""), path, line)?;
        let day = grid.day_index(date).ok_or_else(|| {
            Error::format(
                path,
                line,
                format!("date {date} is outside {}..={}", grid.start_date(), grid.end_date()),
            )
        })?;
        if seen_on[day] != 0 {
            return Err(Error::format(
                path,
                line,
                format!("duplicate date {date} (first on line {})", seen_on[day]),
            ));
        }
        let lai = parse_f64(rec.get(li).unwrap_or(""), "lai", path, line)?;
        if lai < 0.0 {
            return Err(Error::format(path, line, format!("negative lai {lai}")));
        }
        seen_on[day] = line;
        values[day] = Observation::Value(lai);
    }
    ObservationSeries::new(values)
}

pub fn read_observations_csv(path: &Path, grid: &TimeGrid) -> Result<ObservationSeries> {
    parse_observations_csv(&read_text(path)?, path, grid)
}

/// Writes observed days only.
pub fn observations_to_csv(grid: &TimeGrid, obs: &ObservationSeries) -> String {
    let mut out = format!("# cropda-observations {CSV_VERSION}\ndate,lai\n");
    for (day, o) in obs.iter().enumerate() {
        if let (Observation::Value(v), Some(date)) = (o, grid.date(day)) {
            let _ = writeln!(out, "{},{v}", date.format(DATE_FORMAT));
        }
    }
    out
}

pub fn write_observations_csv(path: &Path, grid: &TimeGrid, obs: &ObservationSeries) -> Result<()> {
    write_text(path, &observations_to_csv(grid, obs))
}

/// A complete daily LAI trajectory in observation format.
pub fn write_trajectory_csv(path: &Path, grid: &TimeGrid, lai: &[f64]) -> Result<()> {
    let obs = ObservationSeries::from_options(&lai.iter().map(|&v| Some(v)).collect::<Vec<_>>())?;
    write_observations_csv(path, grid, &obs)
}

/// Reads a trajectory that must cover every day of the grid.
pub fn read_trajectory_csv(path: &Path, grid: &TimeGrid) -> Result<Vec<f64>> {
    let obs = read_observations_csv(path, grid)?;
    obs.iter()
        .enumerate()
        .map(|(day, o)| {
            o.value().ok_or_else(|| {
                Error::format(path, 0, format!("trajectory has no value for {}", grid.date(day).expect("on grid")))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("w.csv")
    }

    fn weather_text(n: usize) -> String {
        let day = WeatherDay {
            tmax: 25.0,
            tmin: 15.0,
            irrad: 1.5e7,
            vap: 15.0,
            wind: 2.0,
            rain: 0.1,
        };
        weather_to_csv(NaiveDate::from_ymd_opt(2022, 5, 1).unwrap(), &vec![day; n])
    }

    #[test]
    fn weather_round_trip() {
        let text = weather_text(168);
        let w = parse_weather_csv(&text, p()).unwrap();
        assert_eq!(w.days.len(), 168);
        assert_eq!(weather_to_csv(w.start_date, &w.days), text);
    }

    #[test]
    fn tmin_above_tmax_names_line() {
        // Line 1 comment, line 2 header, data rows from line 3.
        let mut lines: Vec<String> = weather_text(10).lines().map(str::to_string).collect();
        lines[6] = "2022-05-05,10,20,1.5e7,15,2,0".to_string();
        let err = parse_weather_csv(&lines.join("\n"), p()).unwrap_err().to_string();
        assert!(err.starts_with("w.csv:7:"), "{err}");
    }

    #[test]
    fn missing_column_named() {
        let text = "date,tmax,tmin,irrad,wind,rain\n2022-05-01,1,0,1,1,0\n";
        let err = parse_weather_csv(text, p()).unwrap_err().to_string();
        assert!(err.contains("`vap`"), "{err}");
    }

    #[test]
    fn gaps_and_bad_numbers_rejected() {
        let text = "date,tmax,tmin,irrad,vap,wind,rain\n2022-05-01,1,0,1,1,1,0\n2022-05-03,1,0,1,1,1,0\n";
        assert!(parse_weather_csv(text, p()).unwrap_err().to_string().contains(":3:"));
        let text = "date,tmax,tmin,irrad,vap,wind,rain\n2022-05-01,x,0,1,1,1,0\n";
        assert!(parse_weather_csv(text, p()).unwrap_err().to_string().contains("tmax"));
    }

    #[test]
    fn future_version_rejected() {
        let text = "# cropda-weather 9\ndate,tmax,tmin,irrad,vap,wind,rain\n";
        assert!(parse_weather_csv(text, p()).is_err());
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(NaiveDate::from_ymd_opt(2022, 5, 1).unwrap(), 168).unwrap()
    }

    #[test]
    fn empty_observations_are_all_missing() {
        let obs = parse_observations_csv("date,lai\n", p(), &grid()).unwrap();
        assert_eq!(obs.len(), 168);
        assert!(obs.observed_days().is_empty());
    }

    #[test]
    fn sparse_rows_leave_gaps() {
        let text = "date,lai\n2022-05-03,0.5\n2022-05-08,1.0\n";
        let obs = parse_observations_csv(text, p(), &grid()).unwrap();
        assert_eq!(obs.observed_days(), vec![2, 7]);
        let again = parse_observations_csv(&observations_to_csv(&grid(), &obs), p(), &grid()).unwrap();
        assert_eq!(again, obs);
    }

    #[test]
    fn observation_errors_carry_lines() {
        let dup = "date,lai\n2022-05-03,0.5\n2022-05-03,0.6\n";
        let err = parse_observations_csv(dup, p(), &grid()).unwrap_err().to_string();
        assert!(err.contains(":3:") && err.contains("duplicate"), "{err}");
        let neg = "date,lai\n2022-05-03,-0.5\n";
        assert!(parse_observations_csv(neg, p(), &grid()).unwrap_err().to_string().contains(":2:"));
        let off = "date,lai\n2023-05-03,0.5\n";
        assert!(parse_observations_csv(off, p(), &grid()).unwrap_err().to_string().contains("outside"));
    }
}
