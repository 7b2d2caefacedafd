//! R², Pearson and Spearman correlation over test-split predictions, and the
//! per-method report tables built from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AffectDimension, Dataset, Split};
use crate::error::{Error, Result};
use crate::stats::{mean, mean_and_sample_variance};

/// R² values below this print as `≪0` in text tables.
pub const R2_FLOOR_DISPLAY: f64 = -10.0;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::MetricUndefined(format!(
            "need at least 2 points, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred)?;
    let m = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    if ss_tot == 0.0 {
        return Err(Error::MetricUndefined("R² of a constant truth vector".into()));
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::MetricUndefined(
            "Pearson correlation with a constant input".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Mean,
    Sd,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Mean => "mean",
            TargetKind::Sd => "sd",
        }
    }
}

/// One run's metrics; `None` marks a metric that is undefined for the data
/// (for example a constant prediction vector).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub r2: Option<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

impl MetricValues {
    pub fn compute(truth: &[f64], pred: &[f64]) -> Result<Self> {
        check_pair(truth, pred)?;
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::MetricUndefined(reason)) => {
                log::debug!("metric undefined: {reason}");
                Ok(None)
            }
            Err(e) => Err(e),
        };
        Ok(Self {
            r2: defined(r2(truth, pred))?,
            pearson: defined(pearson(truth, pred))?,
            spearman: defined(spearman(truth, pred))?,
        })
    }
}

/// Metrics of one stimulus-keyed prediction map against the dataset targets
/// of one dimension, restricted to `split`.
pub fn evaluate(
    dataset: &Dataset,
    split: Split,
    dim: AffectDimension,
    which: TargetKind,
    predictions: &BTreeMap<String, f64>,
) -> Result<MetricValues> {
    let ids = dataset.ids(split);
    if ids.is_empty() {
        return Err(Error::Dataset(format!("{split} split is empty")));
    }
    let mut truth = Vec::with_capacity(ids.len());
    let mut pred = Vec::with_capacity(ids.len());
    for id in ids {
        let p = predictions
            .get(id)
            .ok_or_else(|| Error::Dataset(format!("no prediction for `{id}`")))?;
        let t = dataset.target(id).expect("split ids have targets").dimension(dim);
        truth.push(match which {
            TargetKind::Mean => t.mu,
            TargetKind::Sd => t.sigma,
        });
        pred.push(*p);
    }
    MetricValues::compute(&truth, &pred)
}

/// A metric summarized over runs: the mean, and the across-run SD when more
/// than one run exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub value: Option<f64>,
    pub sd: Option<f64>,
    pub runs: usize,
}

impl Summary {
    pub fn single(value: Option<f64>) -> Self {
        Self {
            value,
            sd: None,
            runs: 1,
        }
    }

    /// Mean and `n - 1` SD over runs. Undefined if any run is undefined.
    pub fn over_runs(values: &[Option<f64>]) -> Self {
        let runs = values.len();
        let defined: Option<Vec<f64>> = values.iter().copied().collect();
        match defined {
            Some(v) if runs >= 2 => {
                let (m, var) = mean_and_sample_variance(&v).expect("two or more runs");
                Self {
                    value: Some(m),
                    sd: Some(var.sqrt()),
                    runs,
                }
            }
            Some(v) if runs == 1 => Self::single(Some(v[0])),
            _ => Self {
                value: None,
                sd: None,
                runs,
            },
        }
    }

    /// `0.61(0.03)`, `0.61`, `≪0` or `n/a`.
    pub fn render(&self, is_r2: bool) -> String {
        match self.value {
            None => "n/a".into(),
            Some(v) if is_r2 && v < R2_FLOOR_DISPLAY => "≪0".into(),
            Some(v) => match self.sd {
                Some(sd) => format!("{v:.2}({sd:.2})"),
                None => format!("{v:.2}"),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub r2: Summary,
    pub pearson: Summary,
    pub spearman: Summary,
}

impl MetricSummary {
    pub fn from_runs(runs: &[MetricValues]) -> Self {
        let pick = |f: fn(&MetricValues) -> Option<f64>| runs.iter().map(f).collect::<Vec<_>>();
        Self {
            r2: Summary::over_runs(&pick(|m| m.r2)),
            pearson: Summary::over_runs(&pick(|m| m.pearson)),
            spearman: Summary::over_runs(&pick(|m| m.spearman)),
        }
    }
}

/// Metrics of one method: `(dimension, target) -> summary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub cells: BTreeMap<String, MetricSummary>,
}

pub fn cell_key(dim: AffectDimension, which: TargetKind) -> String {
    format!("{}_{}", dim.name(), which.name())
}

impl MethodRow {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            cells: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, dim: AffectDimension, which: TargetKind, summary: MetricSummary) {
        self.cells.insert(cell_key(dim, which), summary);
    }

    pub fn get(&self, dim: AffectDimension, which: TargetKind) -> Option<&MetricSummary> {
        self.cells.get(&cell_key(dim, which))
    }
}

/// Published DEAM results used as a side-by-side reference. Values are
/// `(value, sd)` per metric and dimension, `None` for `≪0` entries or
/// entries printed without an SD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: String,
    pub target: TargetKind,
    /// `[r2_v, r2_a, pearson_v, pearson_a, spearman_v, spearman_a]`
    pub values: [Option<(f64, Option<f64>)>; 6],
}

pub fn deam_reference() -> Vec<ReferenceRow> {
    fn v(x: f64, s: f64) -> Option<(f64, Option<f64>)> {
        Some((x, Some(s)))
    }
    fn b(x: f64) -> Option<(f64, Option<f64>)> {
        Some((x, None))
    }
    let row = |method: &str, target, values| ReferenceRow {
        method: method.into(),
        target,
        values,
    };
    use TargetKind::{Mean, Sd};
    vec![
        row(
            "seeds",
            Mean,
            [
                v(0.59, 0.04),
                v(0.62, 0.02),
                v(0.78, 0.02),
                v(0.80, 0.01),
                v(0.78, 0.02),
                v(0.80, 0.01),
            ],
        ),
        row(
            "nll",
            Mean,
            [
                v(0.61, 0.03),
                v(0.61, 0.02),
                v(0.79, 0.02),
                v(0.80, 0.01),
                v(0.79, 0.02),
                v(0.80, 0.01),
            ],
        ),
        row(
            "mse",
            Mean,
            [
                v(0.59, 0.02),
                v(0.62, 0.01),
                v(0.78, 0.02),
                v(0.80, 0.01),
                v(0.78, 0.02),
                v(0.80, 0.01),
            ],
        ),
        row(
            "kld",
            Mean,
            [
                v(0.55, 0.02),
                v(0.62, 0.02),
                v(0.76, 0.01),
                v(0.81, 0.01),
                v(0.76, 0.01),
                v(0.80, 0.01),
            ],
        ),
        row("seeds", Sd, [None, None, b(-0.06), b(0.07), b(-0.05), b(0.08)]),
        row(
            "mc_dropout",
            Sd,
            [None, None, v(0.01, 0.04), v(-0.01, 0.05), v(0.03, 0.03), v(-0.07, 0.05)],
        ),
        row(
            "nll",
            Sd,
            [
                None,
                None,
                v(-0.07, 0.03),
                v(-0.08, 0.02),
                v(-0.02, 0.05),
                v(0.03, 0.04),
            ],
        ),
        row(
            "mse",
            Sd,
            [
                None,
                None,
                v(-0.16, 0.05),
                v(-0.15, 0.02),
                v(-0.16, 0.05),
                v(-0.14, 0.03),
            ],
        ),
        row(
            "kld",
            Sd,
            [
                None,
                None,
                v(-0.12, 0.03),
                v(-0.17, 0.02),
                v(-0.10, 0.03),
                v(-0.16, 0.03),
            ],
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Split,
    pub rows: Vec<MethodRow>,
    pub reference: Vec<ReferenceRow>,
}

impl MetricReport {
    pub fn new(rows: Vec<MethodRow>) -> Self {
        Self {
            split: Split::Test,
            rows,
            reference: deam_reference(),
        }
    }

    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text tables, one for mean targets and one for SD targets, with
    /// the published DEAM numbers underneath each.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for which in [TargetKind::Mean, TargetKind::Sd] {
            let title = match which {
                TargetKind::Mean => "Mean",
                TargetKind::Sd => "Standard Deviation",
            };
            let _ = writeln!(out, "{title} ({} split)", self.split);
            let _ = writeln!(
                out,
                "{:<14}{:>13}{:>13}{:>13}{:>13}{:>13}{:>13}",
                "", "R2 V", "R2 A", "Pearson V", "Pearson A", "Spearman V", "Spearman A"
            );
            for row in &self.rows {
                let mut cells = Vec::with_capacity(6);
                for metric in 0..3 {
                    for dim in AffectDimension::ALL {
                        let cell = row.get(dim, which).map_or("-".to_string(), |s| {
                            let summary = [s.r2, s.pearson, s.spearman][metric];
                            summary.render(metric == 0)
                        });
                        cells.push(cell);
                    }
                }
                if row.cells.keys().any(|k| k.ends_with(which.name())) {
                    let _ = writeln!(out, "{:<14}{}", row.method, fmt_cells(&cells));
                }
            }
            let refs: Vec<&ReferenceRow> = self.reference.iter().filter(|r| r.target == which).collect();
            if !refs.is_empty() {
                let _ = writeln!(out, "published DEAM reference:");
                for r in refs {
                    let cells: Vec<String> = r
                        .values
                        .iter()
                        .enumerate()
                        .map(|(i, v)| match v {
                            None if i < 2 => "≪0".into(),
                            None => "n/a".into(),
                            Some((x, Some(s))) => format!("{x:.2}({s:.2})"),
                            Some((x, None)) => format!("{x:.2}"),
                        })
                        .collect();
                    let _ = writeln!(out, "{:<14}{}", r.method, fmt_cells(&cells));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_cells(cells: &[String]) -> String {
    cells.iter().map(|c| format!("{c:>13}")).collect()
}

/// Writes `stimulus_id,empirical,predicted` rows.
pub fn write_scatter_csv(path: &Path, rows: &[(String, f64, f64)]) -> Result<()> {
    let mut text = String::from("stimulus_id,empirical,predicted\n");
    for (id, e, p) in rows {
        let _ = writeln!(text, "{id},{e},{p}");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Shared-bin histograms of empirical and predicted values:
/// `bin_lo,bin_hi,empirical,predicted`.
pub fn write_histogram_csv(path: &Path, rows: &[(String, f64, f64)], bins: usize) -> Result<()> {
    let values = rows.iter().flat_map(|(_, e, p)| [*e, *p]);
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![(0usize, 0usize); bins];
    let bin_of = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for (_, e, p) in rows {
        counts[bin_of(*e)].0 += 1;
        counts[bin_of(*p)].1 += 1;
    }
    let mut text = String::from("bin_lo,bin_hi,empirical,predicted\n");
    if !rows.is_empty() {
        for (i, (ce, cp)) in counts.iter().enumerate() {
            let a = lo + i as f64 * width;
            let _ = writeln!(text, "{a},{},{ce},{cp}", a + width);
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_examples() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(r2(&t, &t).unwrap(), 1.0);
        assert_eq!(r2(&t, &[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(r2(&t, &[2.0, 1.0, 0.0]).unwrap(), -3.0);
        assert!(matches!(r2(&[1.0, 1.0], &[0.0, 1.0]), Err(Error::MetricUndefined(_))));
        assert!(r2(&[1.0], &[1.0]).is_err());
        assert!(r2(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [0.1, 0.5, -0.3, 2.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 0.5);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let x = [0.3, -1.0, 2.0, 0.7, 1.1];
        let cubed: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        assert_eq!(spearman(&x, &cubed).unwrap(), 1.0);
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(spearman(&x, &rev).unwrap(), -1.0);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn summaries() {
        let one = Summary::over_runs(&[Some(0.5)]);
        assert_eq!(one.sd, None);
        let same = Summary::over_runs(&[Some(0.3); 15]);
        assert_eq!(same.sd, Some(0.0));
        assert_eq!(same.value, Some(0.3));
        assert_eq!(Summary::over_runs(&[Some(0.3), None]).value, None);
        assert_eq!(Summary::single(Some(-25.0)).render(true), "≪0");
        assert_eq!(Summary::single(Some(-25.0)).render(false), "-25.00");
        assert_eq!(
            Summary {
                value: Some(0.61),
                sd: Some(0.03),
                runs: 15
            }
            .render(true),
            "0.61(0.03)"
        );
    }

    #[test]
    fn reference_row_contains_published_nll_numbers() {
        let nll = deam_reference()
            .into_iter()
            .find(|r| r.method == "nll" && r.target == TargetKind::Mean)
            .unwrap();
        assert_eq!(nll.values[0], Some((0.61, Some(0.03))));
        assert_eq!(nll.values[1], Some((0.61, Some(0.02))));
    }

    #[test]
    fn table_renders_rows_and_reference() {
        let mut row = MethodRow::new("nll");
        let s = MetricSummary {
            r2: Summary::single(Some(0.9)),
            pearson: Summary::single(Some(0.95)),
            spearman: Summary::single(Some(0.94)),
        };
        for dim in AffectDimension::ALL {
            row.set(dim, TargetKind::Mean, s);
        }
        let table = MetricReport::new(vec![row]).to_table();
        assert!(table.contains("nll"));
        assert!(table.contains("0.61(0.03)"));
        assert!(table.contains("0.90"));
    }
}
