// SPDX-License-Identifier: Apache-2.0

//! CSV schemas. Floats are written in Rust's shortest round-trip form, so
//! parsing a file recovers the in-memory values exactly.
//!
//! * `rounds.csv`: `t,acc,lr,loss_kind,selected`, where `selected` is the
//!   `;`-joined ascending client ids.
//! * `pred_heatmap.csv` and `sample_heatmap.csv`: `t,1,2,...,C`, one row per
//!   round, one column per 1-based label.
//! * `speedup.csv`: `method,best_acc,target,baseline_rounds,method_rounds,speedup`,
//!   where a method that never reaches the target has an empty
//!   `method_rounds` and `speedup = Failed`.

use std::str::FromStr;

use super::{RoundRecord, SpeedupReport};
use crate::error::{Error, Result};
use crate::losses::LossKind;

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::format("<csv>", e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

fn parse_field<T: FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::format("<csv>", format!("bad {what} field {field:?}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundsRow {
    pub t: usize,
    pub acc: f64,
    pub lr: f64,
    pub loss_kind: LossKind,
    pub selected: Vec<usize>,
}

impl From<&RoundRecord> for RoundsRow {
    fn from(r: &RoundRecord) -> Self {
        RoundsRow {
            t: r.round,
            acc: r.accuracy,
            lr: r.lr,
            loss_kind: r.loss_kind,
            selected: r.selected.clone(),
        }
    }
}

pub fn rounds_csv(records: &[RoundRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "acc", "lr", "loss_kind", "selected"])
        .map_err(csv_err)?;
    for r in records {
        let selected: Vec<String> = r.selected.iter().map(usize::to_string).collect();
        w.write_record([
            r.round.to_string(),
            r.accuracy.to_string(),
            r.lr.to_string(),
            r.loss_kind.to_string(),
            selected.join(";"),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_rounds_csv(path: &std::path::Path, records: &[RoundRecord]) -> Result<()> {
    std::fs::write(path, rounds_csv(records)?).map_err(|e| Error::io(path, e))
}

pub fn parse_rounds_csv(text: &str) -> Result<Vec<RoundsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 5 {
            return Err(Error::format("<csv>", format!("rounds row has {} fields", rec.len())));
        }
        let selected = if rec[4].is_empty() {
            Vec::new()
        } else {
            rec[4]
                .split(';')
                .map(|s| parse_field(s, "selected"))
                .collect::<Result<_>>()?
        };
        out.push(RoundsRow {
            t: parse_field(&rec[0], "t")?,
            acc: parse_field(&rec[1], "acc")?,
            lr: parse_field(&rec[2], "lr")?,
            loss_kind: rec[3].parse()?,
            selected,
        });
    }
    Ok(out)
}

/// Which per-class count a heatmap holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapKind {
    Predictions,
    SelectedSamples,
}

/// Rows of `(round, per-class counts)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heatmap {
    pub classes: usize,
    pub rows: Vec<(usize, Vec<usize>)>,
}

impl Heatmap {
    pub fn from_records(records: &[RoundRecord], classes: usize, kind: HeatmapKind) -> Self {
        let rows = records
            .iter()
            .map(|r| {
                let counts = match kind {
                    HeatmapKind::Predictions => &r.prediction_counts,
                    HeatmapKind::SelectedSamples => &r.selected_sample_counts,
                };
                (r.round, counts.clone())
            })
            .collect();
        Heatmap { classes, rows }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.classes).map(|c| c.to_string()))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for (t, counts) in &self.rows {
            if counts.len() != self.classes {
                return Err(Error::Shape(format!(
                    "heatmap row {t} has {} columns, expected {}",
                    counts.len(),
                    self.classes
                )));
            }
            let row: Vec<String> = std::iter::once(t.to_string())
                .chain(counts.iter().map(usize::to_string))
                .collect();
            w.write_record(&row).map_err(csv_err)?;
        }
        finish(w)
    }
}

pub fn write_heatmap(path: &std::path::Path, map: &Heatmap) -> Result<()> {
    std::fs::write(path, map.to_csv()?).map_err(|e| Error::io(path, e))
}

pub fn parse_heatmap(text: &str) -> Result<Heatmap> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let classes = r.headers().map_err(csv_err)?.len().saturating_sub(1);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let t = parse_field(&rec[0], "t")?;
        let counts = rec
            .iter()
            .skip(1)
            .map(|s| parse_field(s, "count"))
            .collect::<Result<_>>()?;
        rows.push((t, counts));
    }
    Ok(Heatmap { classes, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupRow {
    pub method: String,
    pub best_accuracy: f64,
    pub report: SpeedupReport,
}

pub fn speedup_csv(rows: &[SpeedupRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "best_acc",
        "target",
        "baseline_rounds",
        "method_rounds",
        "speedup",
    ])
    .map_err(csv_err)?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            row.method.clone(),
            row.best_accuracy.to_string(),
            r.target.to_string(),
            r.baseline_rounds.to_string(),
            r.method_rounds.map(|m| m.to_string()).unwrap_or_default(),
            r.ratio().map(|s| format!("{s:.2}")).unwrap_or_else(|| "Failed".into()),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::super::tests::record;
    use super::*;

    #[test]
    fn rounds_round_trip() {
        let mut recs = vec![record(0, 0.1234567890123), record(1, 1.0 / 3.0)];
        recs[1].selected.clear();
        recs[1].lr = 0.01 * 0.99f64.powi(1);
        let text = rounds_csv(&recs).unwrap();
        assert!(text.starts_with("t,acc,lr,loss_kind,selected\n0,0.1234567890123,0.01,lmd,0;2\n"));
        let back = parse_rounds_csv(&text).unwrap();
        let want: Vec<RoundsRow> = recs.iter().map(RoundsRow::from).collect();
        assert_eq!(back, want);
    }

    #[test]
    fn heatmap_round_trip_and_empty() {
        let recs = vec![record(0, 0.5), record(1, 0.6)];
        for kind in [HeatmapKind::Predictions, HeatmapKind::SelectedSamples] {
            let map = Heatmap::from_records(&recs, 2, kind);
            assert_eq!(parse_heatmap(&map.to_csv().unwrap()).unwrap(), map);
        }
        let empty = Heatmap::from_records(&[], 3, HeatmapKind::Predictions);
        let text = empty.to_csv().unwrap();
        assert_eq!(text, "t,1,2,3\n");
        assert_eq!(parse_heatmap(&text).unwrap(), empty);
    }

    #[test]
    fn failed_speedup_is_spelled_out() {
        let rows = [
            SpeedupRow {
                method: "a".into(),
                best_accuracy: 0.5,
                report: SpeedupReport {
                    target: 0.5,
                    baseline_rounds: 4,
                    method_rounds: Some(2),
                },
            },
            SpeedupRow {
                method: "b".into(),
                best_accuracy: 0.4,
                report: SpeedupReport {
                    target: 0.5,
                    baseline_rounds: 4,
                    method_rounds: None,
                },
            },
        ];
        let text = speedup_csv(&rows).unwrap();
        assert!(text.contains("a,0.5,0.5,4,2,2.00\n"));
        assert!(text.contains("b,0.4,0.5,4,,Failed\n"));
    }
}
