use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode::EpisodeResult;
use super::metrics::MetricsRow;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "scenario,variant,episodes,success_pct,timeout_pct,collision_pct,tracking_failure_pct,total_failure_pct,mean_time_to_grasp_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

fn hundredths(v: u32) -> String {
    format!("{}.{:02}", v / 100, v % 100)
}

fn parse_hundredths(s: &str) -> Option<u32> {
    let (int, frac) = s.split_once('.')?;
    if frac.len() != 2 {
        return None;
    }
    Some(int.parse::<u32>().ok()? * 100 + frac.parse::<u32>().ok()?)
}

/// JSON mirror of a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonRow {
    scenario: String,
    variant: String,
    episodes: usize,
    success_pct: f64,
    timeout_pct: f64,
    collision_pct: f64,
    tracking_failure_pct: f64,
    total_failure_pct: f64,
    mean_time_to_grasp_s: Option<f64>,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub fn render_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let mean = r
            .mean_time_to_grasp_s
            .map(|m| format!("{m:.2}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.variant,
            r.episodes,
            hundredths(r.success),
            hundredths(r.timeout),
            hundredths(r.collision),
            hundredths(r.tracking_failure),
            hundredths(r.total_failure()),
            mean
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let bad = |line: usize, what: &str| Error::InvalidConfig(format!("csv line {line}: {what}"));
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad(i + 2, "expected 9 fields"));
        }
        let pct = |s: &str| parse_hundredths(s).ok_or_else(|| bad(i + 2, "bad percentage"));
        let row = MetricsRow {
            scenario: f[0].to_string(),
            variant: f[1].to_string(),
            episodes: f[2].parse().map_err(|_| bad(i + 2, "bad episode count"))?,
            success: pct(f[3])?,
            timeout: pct(f[4])?,
            collision: pct(f[5])?,
            tracking_failure: pct(f[6])?,
            mean_time_to_grasp_s: if f[8].is_empty() {
                None
            } else {
                Some(f[8].parse().map_err(|_| bad(i + 2, "bad mean time"))?)
            },
        };
        if pct(f[7])? != row.total_failure() {
            return Err(bad(i + 2, "total_failure does not match its components"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn render_json(rows: &[MetricsRow]) -> String {
    let json: Vec<JsonRow> = rows
        .iter()
        .map(|r| JsonRow {
            scenario: r.scenario.clone(),
            variant: r.variant.clone(),
            episodes: r.episodes,
            success_pct: MetricsRow::pct(r.success),
            timeout_pct: MetricsRow::pct(r.timeout),
            collision_pct: MetricsRow::pct(r.collision),
            tracking_failure_pct: MetricsRow::pct(r.tracking_failure),
            total_failure_pct: MetricsRow::pct(r.total_failure()),
            mean_time_to_grasp_s: r.mean_time_to_grasp_s.map(round2),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&json).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn render(rows: &[MetricsRow], format: Format) -> String {
    match format {
        Format::Csv => render_csv(rows),
        Format::Json => render_json(rows),
    }
}

pub fn emit_results(rows: &[MetricsRow], format: Format, path: &Path) -> Result<()> {
    std::fs::write(path, render(rows, format)).map_err(|e| Error::io(path, e))
}

/// Writes one JSON-lines file per episode into `dir`.
pub fn write_traces(dir: &Path, prefix: &str, results: &[EpisodeResult]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, r) in results.iter().enumerate() {
        let Some(trace) = &r.trace else { continue };
        let path = dir.join(format!("{prefix}_{i:05}.jsonl"));
        let mut text = String::new();
        for rec in trace {
            text.push_str(&serde_json::to_string(rec).expect("plain data serializes"));
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> MetricsRow {
        MetricsRow {
            scenario: "speed_sweep/3cm_s".into(),
            variant: "ekf".into(),
            episodes: 450,
            success: 9689,
            timeout: 200,
            collision: 11,
            tracking_failure: 100,
            mean_time_to_grasp_s: Some(9.871),
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(render_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn two_decimal_percentages() {
        let text = render_csv(&[row()]);
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line, "speed_sweep/3cm_s,ekf,450,96.89,2.00,0.11,1.00,3.11,9.87");
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn csv_round_trip() {
        let mut r = row();
        r.mean_time_to_grasp_s = Some(9.87);
        let back = parse_csv(&render_csv(std::slice::from_ref(&r))).unwrap();
        assert_eq!(back, vec![r]);
        let mut none = row();
        none.mean_time_to_grasp_s = None;
        assert_eq!(parse_csv(&render_csv(std::slice::from_ref(&none))).unwrap(), vec![none]);
    }

    #[test]
    fn json_mirrors_schema() {
        let text = render_json(&[row()]);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let obj = v[0].as_object().unwrap();
        let keys: Vec<&str> = CSV_HEADER.split(',').collect();
        assert_eq!(obj.len(), keys.len());
        for k in keys {
            assert!(obj.contains_key(k), "{k}");
        }
        assert_eq!(obj["success_pct"], 96.89);
        assert_eq!(obj["total_failure_pct"], 3.11);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn write_failure_reports_path() {
        let err = emit_results(&[], Format::Csv, Path::new("/nonexistent/dir/out.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/out.csv"));
    }
}
