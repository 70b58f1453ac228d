//! Calibration and interval metrics evaluated at labeled pixels.
//!
//! Everything is computed over a [`LabelTable`]: one row per labeled pixel,
//! holding the label and the N quantile predictions at that pixel. Tables
//! from several scenes can be concatenated, which gives metrics pooled over
//! all labels of a test set. The single-scene functions below build a
//! one-scene table and delegate.

mod report;

pub use report::{
    AsymmetryStats, BinCoverage, CalibrationReport, EvalOptions, IntervalMetrics, PointMetrics, QuantileCoverage,
    DEFAULT_ALPHAS, DEFAULT_BIN_EDGES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::SparseLabels;
use crate::raster::Grid;
use crate::stack::{validate_quantiles, QuantileStack, QUANTILE_MATCH_TOL};
use crate::stats::{pearson, FiveNumber};

/// Labels and quantile predictions gathered at labeled pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    quantiles: Vec<f64>,
    labels: Vec<f64>,
    preds: Vec<f64>,
}

impl LabelTable {
    pub fn new(quantiles: Vec<f64>) -> Result<Self> {
        validate_quantiles(&quantiles)?;
        Ok(LabelTable {
            quantiles,
            labels: Vec::new(),
            preds: Vec::new(),
        })
    }

    pub fn from_scene(stack: &QuantileStack, labels: &SparseLabels) -> Result<Self> {
        let mut t = LabelTable::new(stack.quantiles().to_vec())?;
        t.push_scene(stack, labels)?;
        Ok(t)
    }

    /// Appends one row per label, in label order.
    pub fn push_scene(&mut self, stack: &QuantileStack, labels: &SparseLabels) -> Result<()> {
        if stack.len() != self.quantiles.len()
            || stack
                .quantiles()
                .iter()
                .zip(&self.quantiles)
                .any(|(a, b)| (a - b).abs() > QUANTILE_MATCH_TOL)
        {
            return Err(Error::Validation(
                "stack quantiles differ from the table's quantiles".into(),
            ));
        }
        if labels.grid_height() != stack.height() || labels.grid_width() != stack.width() {
            return Err(Error::Validation(format!(
                "labels grid {}x{} does not match stack {}x{}",
                labels.grid_height(),
                labels.grid_width(),
                stack.height(),
                stack.width()
            )));
        }
        let view = stack.view();
        for p in labels.points() {
            self.labels.push(p.height);
            for n in 0..self.quantiles.len() {
                self.preds.push(view.value(n, p.row, p.col));
            }
        }
        Ok(())
    }

    /// Builds a table from raw rows; `preds` is row-major, one row of N per label.
    pub fn from_rows(quantiles: Vec<f64>, labels: Vec<f64>, preds: Vec<f64>) -> Result<Self> {
        validate_quantiles(&quantiles)?;
        if preds.len() != labels.len() * quantiles.len() {
            return Err(Error::Validation(format!(
                "expected {} predictions, got {}",
                labels.len() * quantiles.len(),
                preds.len()
            )));
        }
        Ok(LabelTable {
            quantiles,
            labels,
            preds,
        })
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.quantiles.len();
        &self.preds[i * n..(i + 1) * n]
    }

    pub fn channel_values(&self, channel: usize) -> impl Iterator<Item = f64> + '_ {
        let n = self.quantiles.len();
        self.preds.iter().skip(channel).step_by(n).copied()
    }

    pub fn require_channel(&self, tau: f64) -> Result<usize> {
        self.quantiles
            .iter()
            .position(|q| (q - tau).abs() <= QUANTILE_MATCH_TOL)
            .ok_or_else(|| Error::Config(format!("no prediction channel for quantile {tau}")))
    }

    /// Copy with the N predictions of every row sorted ascending.
    pub fn monotonized(&self) -> LabelTable {
        let mut t = self.clone();
        let n = self.quantiles.len();
        for row in t.preds.chunks_mut(n) {
            row.sort_by(|a, b| a.total_cmp(b));
        }
        t
    }

    fn require_labels(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::Domain("metric needs at least one label".into()))
        } else {
            Ok(())
        }
    }

    /// Fraction of labels with prediction `>= y` on one channel.
    pub fn empirical_coverage(&self, channel: usize) -> Result<f64> {
        self.require_labels()?;
        if channel >= self.quantiles.len() {
            return Err(Error::Config(format!(
                "channel {channel} out of range for {} quantiles",
                self.quantiles.len()
            )));
        }
        let covered = self
            .channel_values(channel)
            .zip(&self.labels)
            .filter(|(p, y)| p >= *y)
            .count();
        Ok(covered as f64 / self.len() as f64)
    }

    /// Channel indices `(low, high)` of the interval at level `alpha`.
    pub fn interval_channels(&self, alpha: f64) -> Result<(usize, usize)> {
        let (lo, hi) = interval_taus(alpha)?;
        Ok((self.require_channel(lo)?, self.require_channel(hi)?))
    }

    pub fn mpiw(&self, alpha: f64) -> Result<f64> {
        self.require_labels()?;
        let (lo, hi) = self.interval_channels(alpha)?;
        let sum: f64 = (0..self.len()).map(|i| self.row(i)[hi] - self.row(i)[lo]).sum();
        Ok(sum / self.len() as f64)
    }

    pub fn picp(&self, alpha: f64) -> Result<f64> {
        self.require_labels()?;
        let (lo, hi) = self.interval_channels(alpha)?;
        let inside = (0..self.len())
            .filter(|&i| {
                let r = self.row(i);
                let y = self.labels[i];
                r[lo] <= y && y <= r[hi]
            })
            .count();
        Ok(inside as f64 / self.len() as f64)
    }

    /// Per-label interval widths at level `alpha`, in row order.
    pub fn piw_values(&self, alpha: f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.interval_channels(alpha)?;
        Ok((0..self.len()).map(|i| self.row(i)[hi] - self.row(i)[lo]).collect())
    }

    pub fn coverage_by_bin(&self, bin_edges: &[f64], group_by: GroupBy) -> Result<Vec<BinCoverage>> {
        let bins = Bins::new(bin_edges)?;
        let key: Vec<f64> = match group_by {
            GroupBy::Target => self.labels.clone(),
            GroupBy::Prediction => self.channel_values(self.require_channel(0.5)?).collect(),
        };
        let n = self.quantiles.len();
        let mut counts = vec![0usize; bins.len()];
        let mut covered = vec![vec![0usize; n]; bins.len()];
        for (i, &k) in key.iter().enumerate() {
            let b = bins.index(k);
            counts[b] += 1;
            let y = self.labels[i];
            for (c, &p) in self.row(i).iter().enumerate() {
                if p >= y {
                    covered[b][c] += 1;
                }
            }
        }
        Ok((0..bins.len())
            .map(|b| {
                let (lower, upper) = bins.bounds(b);
                BinCoverage {
                    lower,
                    upper,
                    count: counts[b],
                    covered: if counts[b] == 0 { Vec::new() } else { covered[b].clone() },
                    ec: if counts[b] == 0 {
                        Vec::new()
                    } else {
                        covered[b].iter().map(|&c| c as f64 / counts[b] as f64).collect()
                    },
                }
            })
            .collect())
    }

    pub fn interval_asymmetry(&self, alpha: f64) -> Result<AsymmetryStats> {
        self.require_labels()?;
        let m = self.require_channel(0.5)?;
        let (lo, hi) = self.interval_channels(alpha)?;
        let (mut below, mut above) = (Vec::with_capacity(self.len()), Vec::with_capacity(self.len()));
        for i in 0..self.len() {
            let r = self.row(i);
            below.push(r[m] - r[lo]);
            above.push(r[hi] - r[m]);
        }
        Ok(AsymmetryStats {
            alpha,
            median_to_lower: FiveNumber::from_values(&below).expect("non-empty"),
            upper_to_median: FiveNumber::from_values(&above).expect("non-empty"),
        })
    }

    /// Pearson correlation between the median prediction and PIW at `alpha`.
    pub fn pred_uncertainty_correlation(&self, alpha: f64) -> Result<f64> {
        let m = self.require_channel(0.5)?;
        let median: Vec<f64> = self.channel_values(m).collect();
        pearson(&median, &self.piw_values(alpha)?)
    }

    /// MSE, MAE, R² and EC of the median channel against the labels.
    pub fn point_metrics(&self) -> Result<PointMetrics> {
        self.require_labels()?;
        let m = self.require_channel(0.5)?;
        let n = self.len() as f64;
        let mean_y = self.labels.iter().sum::<f64>() / n;
        let (mut se, mut ae, mut tss) = (0.0, 0.0, 0.0);
        for (p, &y) in self.channel_values(m).zip(&self.labels) {
            se += (p - y) * (p - y);
            ae += (p - y).abs();
            tss += (y - mean_y) * (y - mean_y);
        }
        Ok(PointMetrics {
            mse: se / n,
            mae: ae / n,
            r2: (tss > 0.0).then(|| 1.0 - se / tss),
            ec_median: self.empirical_coverage(m)?,
        })
    }
}

/// Interval quantile pair `(0.5 - alpha/2, 0.5 + alpha/2)`.
pub fn interval_taus(alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("interval level {alpha} outside (0, 1)")));
    }
    Ok((0.5 - alpha / 2.0, 0.5 + alpha / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    /// Bin by label height.
    Target,
    /// Bin by the 0.5-quantile prediction at the labeled pixel.
    Prediction,
}

/// Half-open bins `[e_k, e_{k+1})` with `+inf` appended when the last edge
/// is finite. Values below the first edge fall into the first bin.
struct Bins {
    edges: Vec<f64>,
}

impl Bins {
    fn new(edges: &[f64]) -> Result<Self> {
        if edges.is_empty() || edges.iter().any(|e| e.is_nan()) {
            return Err(Error::Config("bin edges must be non-empty numbers".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("bin edges must be strictly increasing".into()));
        }
        let mut edges = edges.to_vec();
        if edges[edges.len() - 1].is_finite() {
            edges.push(f64::INFINITY);
        }
        if edges.len() < 2 {
            return Err(Error::Config("bin edges define no bin".into()));
        }
        Ok(Bins { edges })
    }

    fn len(&self) -> usize {
        self.edges.len() - 1
    }

    fn index(&self, v: f64) -> usize {
        // Number of interior edges <= v.
        self.edges[1..self.edges.len() - 1]
            .iter()
            .take_while(|&&e| e <= v)
            .count()
    }

    fn bounds(&self, b: usize) -> (f64, Option<f64>) {
        let hi = self.edges[b + 1];
        (self.edges[b], hi.is_finite().then_some(hi))
    }
}

/// Interval between the `0.5 - alpha/2` and `0.5 + alpha/2` prediction rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionInterval {
    pub alpha: f64,
    pub tau_low: f64,
    pub tau_high: f64,
    pub lower: Grid,
    pub upper: Grid,
}

impl PredictionInterval {
    pub fn contains(&self, row: usize, col: usize, y: f64) -> bool {
        self.lower.get(row, col) as f64 <= y && y <= self.upper.get(row, col) as f64
    }
}

pub fn make_interval(stack: &QuantileStack, alpha: f64) -> Result<PredictionInterval> {
    let (tau_low, tau_high) = interval_taus(alpha)?;
    let lo = stack.require_channel(tau_low)?;
    let hi = stack.require_channel(tau_high)?;
    Ok(PredictionInterval {
        alpha,
        tau_low,
        tau_high,
        lower: stack.grid(lo),
        upper: stack.grid(hi),
    })
}

pub fn empirical_coverage(pred: &Grid, labels: &SparseLabels) -> Result<f64> {
    check_grid(pred, labels)?;
    let stack = QuantileStack::from_grids(vec![0.5], std::slice::from_ref(pred))?;
    LabelTable::from_scene(&stack, labels)?.empirical_coverage(0)
}

pub fn piw(interval: &PredictionInterval) -> Grid {
    let mut out = interval.upper.clone();
    for (o, l) in out.data_mut().iter_mut().zip(interval.lower.data()) {
        *o -= *l;
    }
    out
}

pub fn mpiw(interval: &PredictionInterval, labels: &SparseLabels) -> Result<f64> {
    interval_table(interval, labels)?.mpiw(interval.alpha)
}

pub fn picp(interval: &PredictionInterval, labels: &SparseLabels) -> Result<f64> {
    interval_table(interval, labels)?.picp(interval.alpha)
}

fn interval_table(interval: &PredictionInterval, labels: &SparseLabels) -> Result<LabelTable> {
    check_grid(&interval.lower, labels)?;
    let stack = QuantileStack::from_grids(
        vec![interval.tau_low, interval.tau_high],
        &[interval.lower.clone(), interval.upper.clone()],
    )?;
    LabelTable::from_scene(&stack, labels)
}

fn check_grid(grid: &Grid, labels: &SparseLabels) -> Result<()> {
    if grid.height() != labels.grid_height() || grid.width() != labels.grid_width() {
        return Err(Error::Validation(format!(
            "prediction grid {}x{} does not match labels grid {}x{}",
            grid.height(),
            grid.width(),
            labels.grid_height(),
            labels.grid_width()
        )));
    }
    Ok(())
}

pub fn coverage_by_bin(
    stack: &QuantileStack,
    labels: &SparseLabels,
    bin_edges: &[f64],
    group_by: GroupBy,
) -> Result<Vec<BinCoverage>> {
    LabelTable::from_scene(stack, labels)?.coverage_by_bin(bin_edges, group_by)
}

pub fn interval_asymmetry(stack: &QuantileStack, labels: &SparseLabels, alphas: &[f64]) -> Result<Vec<AsymmetryStats>> {
    let t = LabelTable::from_scene(stack, labels)?;
    alphas.iter().map(|&a| t.interval_asymmetry(a)).collect()
}

pub fn pred_uncertainty_correlation(stack: &QuantileStack, alpha: f64, labels: &SparseLabels) -> Result<f64> {
    LabelTable::from_scene(stack, labels)?.pred_uncertainty_correlation(alpha)
}

#[cfg(test)]
mod tests;
