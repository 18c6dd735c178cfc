use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Metric;

use super::experiment::StrategyMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    /// Mean over seeds; metrics that could not be computed are absent.
    pub values: BTreeMap<String, f64>,
    /// Metrics on which this row is best or tied for best.
    pub best: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub metrics: Vec<Metric>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: ReportTable,
    pub text: String,
}

/// One row per strategy, one column per metric; the best value of each
/// column (all of them on a tie) is marked with `*`.
pub fn emit_report(strategies: &[StrategyMetrics], metrics: &[Metric]) -> Result<Report> {
    if metrics.is_empty() {
        return Err(Error::Config("no metrics selected".into()));
    }
    let mut rows: Vec<ReportRow> = strategies
        .iter()
        .map(|s| ReportRow {
            strategy: s.strategy.clone(),
            values: metrics
                .iter()
                .filter_map(|m| s.mean.get(&m.to_string()).map(|v| (m.to_string(), *v)))
                .collect(),
            best: Vec::new(),
        })
        .collect();
    for m in metrics {
        let key = m.to_string();
        let values = rows.iter().filter_map(|r| r.values.get(&key).copied());
        let best = if m.higher_is_better() {
            values.fold(f64::NEG_INFINITY, f64::max)
        } else {
            values.fold(f64::INFINITY, f64::min)
        };
        for r in rows.iter_mut() {
            if r.values.get(&key) == Some(&best) {
                r.best.push(key.clone());
            }
        }
    }

    let headers: Vec<String> = metrics.iter().map(Metric::to_string).collect();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            metrics
                .iter()
                .zip(&headers)
                .map(|(m, key)| match r.values.get(key) {
                    None => "-".to_owned(),
                    Some(v) => {
                        let mark = if r.best.contains(key) { "*" } else { "" };
                        match m {
                            Metric::Uniq(_) => format!("{v:.1}{mark}"),
                            _ => format!("{v:.4}{mark}"),
                        }
                    }
                })
                .collect()
        })
        .collect();
    let name_w = rows
        .iter()
        .map(|r| r.strategy.len())
        .chain(["strategy".len()])
        .max()
        .unwrap();
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| cells.iter().map(|c| c[i].len()).chain([h.len()]).max().unwrap())
        .collect();
    let mut text = String::new();
    write!(text, "{:<name_w$}", "strategy").unwrap();
    for (h, w) in headers.iter().zip(&widths) {
        write!(text, "  {h:>w$}").unwrap();
    }
    text.push('\n');
    for (r, c) in rows.iter().zip(&cells) {
        write!(text, "{:<name_w$}", r.strategy).unwrap();
        for (v, w) in c.iter().zip(&widths) {
            write!(text, "  {v:>w$}").unwrap();
        }
        text.push('\n');
    }
    Ok(Report {
        table: ReportTable {
            metrics: metrics.to_vec(),
            rows,
        },
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricReport;

    fn strategy(name: &str, values: &[(&str, f64)]) -> StrategyMetrics {
        let mean: BTreeMap<String, f64> = values.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        StrategyMetrics {
            strategy: name.into(),
            per_seed: Vec::new(),
            std: mean.keys().map(|k| (k.clone(), 0.0)).collect(),
            mean,
            pooled: MetricReport {
                samples: 0,
                corpus: BTreeMap::new(),
                per_sample: Vec::new(),
            },
        }
    }

    #[test]
    fn single_row() {
        let r = emit_report(&[strategy("greedy", &[("dist2", 0.5)])], &[Metric::Dist(2)]).unwrap();
        assert_eq!(r.table.rows.len(), 1);
        assert_eq!(r.table.rows[0].best, vec!["dist2"]);
        assert_eq!(r.text.lines().count(), 2);
        assert!(r.text.contains("0.5000*"));
    }

    #[test]
    fn ties_and_direction() {
        let rows = [
            strategy("a", &[("dist2", 0.5), ("rep2", 0.1)]),
            strategy("b", &[("dist2", 0.5), ("rep2", 0.3)]),
            strategy("c", &[("dist2", 0.2)]),
        ];
        let r = emit_report(&rows, &[Metric::Dist(2), Metric::Rep(2)]).unwrap();
        assert_eq!(r.table.rows[0].best, vec!["dist2", "rep2"]);
        assert_eq!(r.table.rows[1].best, vec!["dist2"]);
        assert!(r.table.rows[2].best.is_empty());
        assert!(r.text.lines().nth(3).unwrap().trim_end().ends_with('-'));
    }

    #[test]
    fn empty_selection_is_an_error() {
        assert!(emit_report(&[strategy("a", &[])], &[]).is_err());
    }
}
