//! Result aggregation: mean±std tables over folds with best/second-best
//! markers and paired-t-test stars, plus figure emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plots::{line_chart, Series};
use super::RunResult;
use crate::error::Result;
use crate::metrics::paired_ttest;

/// Which scalar a table aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// TPR disparity; lower is better.
    DeltaTpr,
    /// Overall AUC; higher is better.
    Auc,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::DeltaTpr => "delta_tpr",
            Metric::Auc => "auc",
        }
    }

    fn lower_is_better(&self) -> bool {
        matches!(self, Metric::DeltaTpr)
    }
}

/// Per-cell aggregate over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    /// Fold-ordered raw values.
    pub folds: Vec<f64>,
    pub best: bool,
    pub second: bool,
    pub significant: bool,
}

/// `mean±std` with three decimals, e.g. `0.140±0.037`.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.3}\u{b1}{std:.3}")
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// One aggregated table: methods as rows, sweep-axis points as columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryTable {
    pub metric: String,
    /// Axis labels in first-seen order.
    pub columns: Vec<String>,
    /// (method tag, cells aligned with `columns`; `None` marks a gap).
    pub rows: Vec<(String, Vec<Option<CellStats>>)>,
}

/// Aggregate run results into a table for one metric. Within each column
/// the best and second-best methods are marked and the best is starred
/// when a paired t-test (Bonferroni-corrected across the table's columns)
/// separates it from the second at p < 0.05.
pub fn summarize(results: &[RunResult], metric: Metric) -> SummaryTable {
    // (axis label -> column), (method -> row) in first-seen order
    let mut columns: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), Vec<(usize, f64)>> = BTreeMap::new();
    for r in results {
        let Some(report) = &r.report else { continue };
        let axis = r.spec.axis_label();
        let method = r.spec.method.tag().to_string();
        if !columns.contains(&axis) {
            columns.push(axis.clone());
        }
        if !methods.contains(&method) {
            methods.push(method.clone());
        }
        let value = match metric {
            Metric::DeltaTpr => report.delta_tpr,
            Metric::Auc => report.auc,
        };
        cells
            .entry((axis, method))
            .or_default()
            .push((r.spec.fold, value));
    }

    let n_comparisons = columns.len().max(1);
    let mut rows: Vec<(String, Vec<Option<CellStats>>)> = methods
        .iter()
        .map(|m| (m.clone(), vec![None; columns.len()]))
        .collect();

    for (ci, col) in columns.iter().enumerate() {
        // collect (method index, fold-ordered values)
        let mut col_cells: Vec<(usize, Vec<f64>)> = Vec::new();
        for (mi, m) in methods.iter().enumerate() {
            if let Some(folds) = cells.get(&(col.clone(), m.clone())) {
                let mut sorted = folds.clone();
                sorted.sort_by_key(|&(f, _)| f);
                col_cells.push((mi, sorted.into_iter().map(|(_, v)| v).collect()));
            }
        }
        // rank by mean
        let mut ranked: Vec<(usize, f64)> = col_cells
            .iter()
            .map(|(mi, v)| (*mi, v.iter().sum::<f64>() / v.len() as f64))
            .collect();
        ranked.sort_by(|a, b| {
            if metric.lower_is_better() {
                a.1.partial_cmp(&b.1).unwrap()
            } else {
                b.1.partial_cmp(&a.1).unwrap()
            }
        });
        let best_mi = ranked.first().map(|&(mi, _)| mi);
        let second_mi = ranked.get(1).map(|&(mi, _)| mi);
        let significant = match (best_mi, second_mi) {
            (Some(b), Some(s)) => {
                let bv = &col_cells.iter().find(|(mi, _)| *mi == b).unwrap().1;
                let sv = &col_cells.iter().find(|(mi, _)| *mi == s).unwrap().1;
                if bv.len() == sv.len() && bv.len() >= 2 {
                    paired_ttest(bv, sv, n_comparisons)
                        .map(|t| t.significant_at_005)
                        .unwrap_or(false)
                } else {
                    false
                }
            }
            _ => false,
        };
        for (mi, values) in col_cells {
            let stats = CellStats {
                mean: values.iter().sum::<f64>() / values.len() as f64,
                std: population_std(&values),
                folds: values,
                best: Some(mi) == best_mi,
                second: Some(mi) == second_mi,
                significant: Some(mi) == best_mi && significant,
            };
            rows[mi].1[ci] = Some(stats);
        }
    }

    SummaryTable {
        metric: metric.name().to_string(),
        columns,
        rows,
    }
}

impl SummaryTable {
    /// Aligned plain-text rendering; `[x]` best, `(x)` second-best, `*`
    /// statistically significant, `-` missing cell.
    pub fn to_text(&self) -> String {
        let mut grid: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["method".to_string()];
        header.extend(self.columns.iter().cloned());
        grid.push(header);
        for (method, cells) in &self.rows {
            let mut row = vec![method.clone()];
            for cell in cells {
                row.push(match cell {
                    None => "-".to_string(),
                    Some(c) => {
                        let body = format_cell(c.mean, c.std);
                        let marked = if c.best {
                            format!("[{body}]")
                        } else if c.second {
                            format!("({body})")
                        } else {
                            body
                        };
                        if c.significant {
                            format!("{marked}*")
                        } else {
                            marked
                        }
                    }
                });
            }
            grid.push(row);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!(
            "# {} (mean\u{b1}std over folds; [best] (second) *significant at p<0.05, Bonferroni x{})\n",
            self.metric,
            self.columns.len()
        );
        for row in &grid {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:<w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// Delimiter-separated rendering with raw per-fold values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,method,axis,mean,std,n_folds,best,second,significant,folds\n");
        for (method, cells) in &self.rows {
            for (col, cell) in self.columns.iter().zip(cells) {
                match cell {
                    None => out.push_str(&format!("{},{method},{col},,,0,,,,\n", self.metric)),
                    Some(c) => out.push_str(&format!(
                        "{},{method},{col},{:.6},{:.6},{},{},{},{},{}\n",
                        self.metric,
                        c.mean,
                        c.std,
                        c.folds.len(),
                        c.best,
                        c.second,
                        c.significant,
                        c.folds
                            .iter()
                            .map(|v| format!("{v:.6}"))
                            .collect::<Vec<_>>()
                            .join(";")
                    )),
                }
            }
        }
        out
    }
}

fn mean_profile_series(results: &[RunResult], confidence: bool) -> Vec<Series> {
    // method -> tap -> fold values, keyed per axis point collapsed
    let mut by_method: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in results {
        let Some(report) = &r.report else { continue };
        let entry = by_method.entry(r.spec.method.tag().to_string()).or_default();
        for p in &report.per_layer {
            entry
                .entry(p.tap_index)
                .or_default()
                .push(if confidence { p.confidence } else { p.auc });
        }
    }
    by_method
        .into_iter()
        .map(|(name, taps)| {
            let mut points = Vec::new();
            let mut band = Vec::new();
            for (tap, values) in taps {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let std = population_std(&values);
                points.push((tap as f64, mean));
                band.push((tap as f64, mean - std, mean + std));
            }
            Series {
                name,
                points,
                band: Some(band),
            }
        })
        .collect()
}

fn sweep_series(
    results: &[RunResult],
    metric: Metric,
    axis_of: impl Fn(&RunResult) -> Option<f64>,
) -> Vec<Series> {
    let mut by_method: BTreeMap<String, BTreeMap<String, (f64, Vec<f64>)>> = BTreeMap::new();
    for r in results {
        let (Some(report), Some(x)) = (&r.report, axis_of(r)) else {
            continue;
        };
        let v = match metric {
            Metric::DeltaTpr => report.delta_tpr,
            Metric::Auc => report.auc,
        };
        by_method
            .entry(r.spec.method.tag().to_string())
            .or_default()
            .entry(format!("{x:.6}"))
            .or_insert((x, Vec::new()))
            .1
            .push(v);
    }
    by_method
        .into_iter()
        .map(|(name, xs)| {
            let mut pts: Vec<(f64, f64, f64)> = xs
                .into_values()
                .map(|(x, vals)| {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    (x, mean, population_std(&vals))
                })
                .collect();
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            Series {
                name,
                points: pts.iter().map(|&(x, m, _)| (x, m)).collect(),
                band: Some(pts.iter().map(|&(x, m, s)| (x, m - s, m + s)).collect()),
            }
        })
        .collect()
}

/// Emit tables and figures for a completed (possibly partial) run matrix.
/// Returns the paths written.
pub fn emit_reports(results: &[RunResult], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    for metric in [Metric::DeltaTpr, Metric::Auc] {
        let table = summarize(results, metric);
        let txt = out_dir.join(format!("{}.txt", metric.name()));
        fs::write(&txt, table.to_text())?;
        written.push(txt);
        let csv = out_dir.join(format!("{}.csv", metric.name()));
        fs::write(&csv, table.to_csv())?;
        written.push(csv);
    }

    // per-layer figures (series per method, mean over folds)
    for (confidence, stem, y_label) in [
        (true, "layer_confidence", "mean |f - 0.5|"),
        (false, "layer_auc", "probe AUC"),
    ] {
        let series = mean_profile_series(results, confidence);
        if series.iter().any(|s| s.points.len() > 1) {
            let path = out_dir.join(format!("{stem}.svg"));
            line_chart(&path, stem, "tap index", y_label, &series)?;
            written.push(path);
        }
    }

    // sweep figures for every numeric axis with more than one point
    let axes: [(&str, fn(&RunResult) -> Option<f64>); 3] = [
        ("prevalence", |r| r.spec.prevalence),
        ("teacher_fraction", |r| r.spec.teacher_fraction),
        ("contamination", |r| r.spec.contamination),
    ];
    for (axis_name, axis_of) in axes {
        let distinct: std::collections::BTreeSet<String> = results
            .iter()
            .filter_map(|r| axis_of(r).map(|v| format!("{v:.6}")))
            .collect();
        if distinct.len() < 2 {
            continue;
        }
        for metric in [Metric::DeltaTpr, Metric::Auc] {
            let series = sweep_series(results, metric, axis_of);
            let path = out_dir.join(format!("sweep_{axis_name}_{}.svg", metric.name()));
            line_chart(
                &path,
                &format!("{} vs {axis_name}", metric.name()),
                axis_name,
                metric.name(),
                &series,
            )?;
            written.push(path);
        }
    }
    Ok(written)
}
