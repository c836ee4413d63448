use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator), 0 for one value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std })
    }
}

/// Mean ± std of one scope of one method over the scenes where the scope
/// has metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub scope: String,
    pub n_scenes: usize,
    pub p90: MeanStd,
    pub nmad: MeanStd,
    pub rmse: MeanStd,
    pub mae: MeanStd,
    pub valid_pct: MeanStd,
}

/// Aggregate reports by `(method, scope)`, in order of first appearance.
pub fn aggregate_scenes(reports: &[MetricsReport]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in reports {
        for s in &r.scopes {
            let k = (r.method.clone(), s.scope.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys.into_iter()
        .filter_map(|(method, scope)| {
            let present: Vec<_> = reports
                .iter()
                .filter(|r| r.method == method)
                .filter_map(|r| r.scope(&scope))
                .filter_map(|s| s.metrics.map(|m| (m, s.valid_pct)))
                .collect();
            let col = |f: &dyn Fn(&(super::Metrics, f64)) -> f64| {
                MeanStd::of(&present.iter().map(f).collect::<Vec<_>>())
            };
            Some(AggregateRow {
                n_scenes: present.len(),
                p90: col(&|x| x.0.p90)?,
                nmad: col(&|x| x.0.nmad)?,
                rmse: col(&|x| x.0.rmse)?,
                mae: col(&|x| x.0.mae)?,
                valid_pct: col(&|x| x.1)?,
                method,
                scope,
            })
        })
        .collect()
}

/// Human-readable table of aggregated rows.
pub fn format_table(rows: &[AggregateRow]) -> String {
    let cell = |m: &MeanStd| format!("{:.2} ± {:.2}", m.mean, m.std);
    let header = ["Method", "Scope", "n", "P90 (m)", "NMAD (m)", "RMSE (m)", "MAE (m)", "% Valid"];
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.scope.clone(),
                r.n_scenes.to_string(),
                cell(&r.p90),
                cell(&r.nmad),
                cell(&r.rmse),
                cell(&r.mae),
                cell(&r.valid_pct),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, v) in widths.iter_mut().zip(row) {
            *w = (*w).max(v.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (v, &w))| {
                let pad = w - v.chars().count();
                if i < 2 {
                    format!("{v}{}", " ".repeat(pad))
                } else {
                    format!("{}{v}", " ".repeat(pad))
                }
            })
            .collect();
        writeln!(out, "{}", parts.join("  ").trim_end()).unwrap();
    };
    line(&header.map(String::from));
    line(&widths.map(|w| "-".repeat(w)));
    for row in &body {
        line(row);
    }
    out
}
