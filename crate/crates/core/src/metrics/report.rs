use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{interval_taus, GroupBy, LabelTable};
use crate::error::Result;
use crate::stats::FiveNumber;

/// Table 2 style interval levels.
pub const DEFAULT_ALPHAS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Height bins in meters; a final `[30, inf)` bin is implied.
pub const DEFAULT_BIN_EDGES: [f64; 7] = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub alphas: Vec<f64>,
    pub bin_edges: Vec<f64>,
    /// Level used for the prediction/uncertainty correlation.
    pub correlation_alpha: f64,
    pub monotonize: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            alphas: DEFAULT_ALPHAS.to_vec(),
            bin_edges: DEFAULT_BIN_EDGES.to_vec(),
            correlation_alpha: 0.8,
            monotonize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileCoverage {
    pub tau: f64,
    pub ec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub alpha: f64,
    pub tau_low: f64,
    pub tau_high: f64,
    pub mpiw: f64,
    pub picp: f64,
}

/// Coverage within one bin. `upper` is `None` for the unbounded last bin;
/// `covered` and `ec` are per channel and left empty when `count` is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCoverage {
    pub lower: f64,
    pub upper: Option<f64>,
    pub count: usize,
    pub covered: Vec<usize>,
    pub ec: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryStats {
    pub alpha: f64,
    pub median_to_lower: FiveNumber,
    pub upper_to_median: FiveNumber,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mse: f64,
    pub mae: f64,
    /// `None` when the labels have zero variance.
    pub r2: Option<f64>,
    pub ec_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub label_count: usize,
    pub monotonized: bool,
    pub quantiles: Vec<f64>,
    pub ec_per_quantile: Vec<QuantileCoverage>,
    pub intervals: Vec<IntervalMetrics>,
    pub ec_by_target_bin: Vec<BinCoverage>,
    pub ec_by_prediction_bin: Vec<BinCoverage>,
    pub asymmetry: Vec<AsymmetryStats>,
    pub correlation_alpha: f64,
    /// `None` when either variable has zero variance.
    pub pearson_pred_uncertainty: Option<f64>,
    pub point: PointMetrics,
    /// Mean absolute error of the median prediction against dense true
    /// heights, when ground truth is available.
    pub truth_mae: Option<f64>,
}

impl CalibrationReport {
    /// Alphas whose interval channels are missing are a configuration error.
    pub fn compute(table: &LabelTable, opts: &EvalOptions) -> Result<Self> {
        let mono;
        let t = if opts.monotonize {
            mono = table.monotonized();
            &mono
        } else {
            table
        };
        let ec_per_quantile = t
            .quantiles()
            .iter()
            .enumerate()
            .map(|(c, &tau)| {
                Ok(QuantileCoverage {
                    tau,
                    ec: t.empirical_coverage(c)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let intervals = opts
            .alphas
            .iter()
            .map(|&alpha| {
                let (tau_low, tau_high) = interval_taus(alpha)?;
                Ok(IntervalMetrics {
                    alpha,
                    tau_low,
                    tau_high,
                    mpiw: t.mpiw(alpha)?,
                    picp: t.picp(alpha)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let asymmetry = opts
            .alphas
            .iter()
            .map(|&a| t.interval_asymmetry(a))
            .collect::<Result<Vec<_>>>()?;
        Ok(CalibrationReport {
            label_count: t.len(),
            monotonized: opts.monotonize,
            quantiles: t.quantiles().to_vec(),
            ec_per_quantile,
            intervals,
            ec_by_target_bin: t.coverage_by_bin(&opts.bin_edges, GroupBy::Target)?,
            ec_by_prediction_bin: t.coverage_by_bin(&opts.bin_edges, GroupBy::Prediction)?,
            asymmetry,
            correlation_alpha: opts.correlation_alpha,
            pearson_pred_uncertainty: t.pred_uncertainty_correlation(opts.correlation_alpha).ok(),
            point: t.point_metrics()?,
            truth_mae: None,
        })
    }

    pub fn interval(&self, alpha: f64) -> Option<&IntervalMetrics> {
        self.intervals.iter().find(|m| (m.alpha - alpha).abs() < 1e-9)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| crate::Error::Format(format!("report JSON: {e}")))
    }

    /// Flat table `metric,level,bin_lower,bin_upper,count,value`; `level` is
    /// τ or α depending on the metric, bin columns are empty outside binned
    /// metrics and `bin_upper` is `inf` for the last bin.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "metric,level,bin_lower,bin_upper,count,value")?;
        let n = self.label_count;
        for q in &self.ec_per_quantile {
            writeln!(w, "ec,{},,,{n},{}", q.tau, q.ec)?;
        }
        for m in &self.intervals {
            writeln!(w, "mpiw,{},,,{n},{}", m.alpha, m.mpiw)?;
            writeln!(w, "picp,{},,,{n},{}", m.alpha, m.picp)?;
        }
        for (name, bins) in [
            ("ec_target_bin", &self.ec_by_target_bin),
            ("ec_prediction_bin", &self.ec_by_prediction_bin),
        ] {
            for b in bins {
                let upper = b.upper.map_or("inf".to_string(), |u| u.to_string());
                for (tau, ec) in self.quantiles.iter().zip(&b.ec) {
                    writeln!(w, "{name},{tau},{},{upper},{},{ec}", b.lower, b.count)?;
                }
            }
        }
        for a in &self.asymmetry {
            for (side, s) in [
                ("median_to_lower", &a.median_to_lower),
                ("upper_to_median", &a.upper_to_median),
            ] {
                for (stat, v) in [
                    ("min", s.min),
                    ("q1", s.q1),
                    ("median", s.median),
                    ("q3", s.q3),
                    ("max", s.max),
                ] {
                    writeln!(w, "{side}_{stat},{},,,{},{v}", a.alpha, s.count)?;
                }
            }
        }
        if let Some(r) = self.pearson_pred_uncertainty {
            writeln!(w, "pearson_pred_uncertainty,{},,,{n},{r}", self.correlation_alpha)?;
        }
        writeln!(w, "mse,,,,{n},{}", self.point.mse)?;
        writeln!(w, "mae,,,,{n},{}", self.point.mae)?;
        if let Some(r2) = self.point.r2 {
            writeln!(w, "r2,,,,{n},{r2}")?;
        }
        writeln!(w, "ec_median,0.5,,,{n},{}", self.point.ec_median)?;
        if let Some(m) = self.truth_mae {
            writeln!(w, "truth_mae,,,,,{m}")?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("utf8")
    }
}
