//! Condition-dependent uncertainty analyses: forest borders, terrain slope
//! and implausible labels.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelPoint, SparseLabels};
use crate::metrics::PredictionInterval;
use crate::raster::Grid;
use crate::stack::QuantileStack;
use crate::stats::FiveNumber;

pub const DEFAULT_BORDER_THRESHOLD: f64 = 10.0;
pub const DEFAULT_SLOPE_BIN_EDGES: [f64; 6] = [0.0, 2.0, 5.0, 10.0, 15.0, 20.0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BorderMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BorderMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// `1.0` for border pixels, `0.0` elsewhere.
    pub fn to_grid(&self) -> Grid {
        Grid::from_fn(self.height, self.width, |r, c| if self.get(r, c) { 1.0 } else { 0.0 })
    }
}

/// Border pixels: max - min of the 3x3 neighbourhood (truncated at the grid
/// edge) strictly exceeds `threshold`.
pub fn forest_border_mask(point_pred: &Grid, threshold: f64) -> BorderMask {
    let (h, w) = (point_pred.height(), point_pred.width());
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    let v = point_pred.get(rr, cc);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            data.push((hi - lo) as f64 > threshold);
        }
    }
    BorderMask {
        height: h,
        width: w,
        data,
    }
}

/// Terrain slope in degrees, box-averaged over `window x window` pixels.
///
/// The gradient uses central differences in the interior and one-sided
/// differences on the outermost rows and columns; the box average is
/// truncated at the grid edge.
pub fn slope_from_dem(dem: &Grid, pixel_size: f64, window: usize) -> Result<Grid> {
    if !(pixel_size > 0.0) || !pixel_size.is_finite() {
        return Err(Error::Domain(format!("pixel size {pixel_size} must be positive")));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::Domain(format!("slope window {window} must be odd")));
    }
    let (h, w) = (dem.height(), dem.width());
    let z = |r: usize, c: usize| dem.get(r, c) as f64;
    let diff = |n: usize, i: usize, at: &dyn Fn(usize) -> f64| -> f64 {
        if n < 2 {
            0.0
        } else if i == 0 {
            (at(1) - at(0)) / pixel_size
        } else if i == n - 1 {
            (at(n - 1) - at(n - 2)) / pixel_size
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * pixel_size)
        }
    };
    let mut raw = vec![0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            let gx = diff(w, c, &|k| z(r, k));
            let gy = diff(h, r, &|k| z(k, c));
            raw[r * w + c] = gx.hypot(gy).atan().to_degrees();
        }
    }
    let half = window / 2;
    Ok(Grid::from_fn(h, w, |r, c| {
        let (mut sum, mut n) = (0.0, 0usize);
        for rr in r.saturating_sub(half)..(r + half + 1).min(h) {
            for cc in c.saturating_sub(half)..(c + half + 1).min(w) {
                sum += raw[rr * w + cc];
                n += 1;
            }
        }
        (sum / n as f64) as f32
    }))
}

/// How labeled pixels are split into groups.
#[derive(Debug, Clone, Copy)]
pub enum Grouping<'a> {
    Border(&'a BorderMask),
    /// Half-open slope bins; values below the first edge join the first bin
    /// and the last bin is unbounded.
    Slope {
        slope: &'a Grid,
        edges: &'a [f64],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub count: usize,
    pub fraction: f64,
    pub piw: FiveNumber,
    pub picp: f64,
}

/// PIW distribution and PICP per group over labeled pixels. Groups without
/// labels are omitted.
pub fn grouped_piw_summary(
    interval: &PredictionInterval,
    labels: &SparseLabels,
    grouping: Grouping<'_>,
) -> Result<Vec<GroupSummary>> {
    grouped_piw_summary_pooled(&[(interval, labels, grouping)])
}

/// Same as [`grouped_piw_summary`] with labels pooled over several scenes.
/// Every scene must use the same kind of grouping and the same bin edges.
pub fn grouped_piw_summary_pooled(
    scenes: &[(&PredictionInterval, &SparseLabels, Grouping<'_>)],
) -> Result<Vec<GroupSummary>> {
    let Some((_, _, first)) = scenes.first() else {
        return Ok(Vec::new());
    };
    let names: Vec<(String, Option<f64>, Option<f64>)> = match first {
        Grouping::Border(_) => vec![("interior".into(), None, None), ("border".into(), None, None)],
        Grouping::Slope { edges, .. } => slope_bins(edges)?
            .windows(2)
            .map(|b| {
                let upper = b[1].is_finite().then_some(b[1]);
                let name = match upper {
                    Some(u) => format!("[{}, {})", b[0], u),
                    None => format!("[{}, inf)", b[0]),
                };
                (name, Some(b[0]), upper)
            })
            .collect(),
    };
    let mut widths = vec![Vec::new(); names.len()];
    let mut inside = vec![0usize; names.len()];
    for (interval, labels, grouping) in scenes {
        if interval.lower.height() != labels.grid_height() || interval.lower.width() != labels.grid_width() {
            return Err(Error::Validation("interval and labels grids differ".into()));
        }
        let group_of: Box<dyn Fn(&LabelPoint) -> usize> = match (grouping, first) {
            (Grouping::Border(mask), Grouping::Border(_)) => {
                check_dims(mask.height(), mask.width(), labels)?;
                Box::new(move |p| mask.get(p.row, p.col) as usize)
            }
            (Grouping::Slope { slope, edges }, Grouping::Slope { edges: e0, .. }) if edges == e0 => {
                check_dims(slope.height(), slope.width(), labels)?;
                let bins = slope_bins(edges)?;
                Box::new(move |p| bin_index(&bins, slope.get(p.row, p.col) as f64))
            }
            _ => return Err(Error::Validation("scenes use different groupings".into())),
        };
        for p in labels.points() {
            let g = group_of(p);
            let lo = interval.lower.get(p.row, p.col) as f64;
            let hi = interval.upper.get(p.row, p.col) as f64;
            widths[g].push(hi - lo);
            if lo <= p.height && p.height <= hi {
                inside[g] += 1;
            }
        }
    }
    let total: usize = widths.iter().map(Vec::len).sum();
    Ok(names
        .into_iter()
        .enumerate()
        .filter_map(|(g, (group, lower, upper))| {
            let piw = FiveNumber::from_values(&widths[g])?;
            Some(GroupSummary {
                group,
                lower,
                upper,
                count: piw.count,
                fraction: piw.count as f64 / total as f64,
                piw,
                picp: inside[g] as f64 / piw.count as f64,
            })
        })
        .collect())
}

fn check_dims(h: usize, w: usize, labels: &SparseLabels) -> Result<()> {
    if h != labels.grid_height() || w != labels.grid_width() {
        return Err(Error::Validation(format!(
            "group raster {h}x{w} does not match labels grid {}x{}",
            labels.grid_height(),
            labels.grid_width()
        )));
    }
    Ok(())
}

fn slope_bins(edges: &[f64]) -> Result<Vec<f64>> {
    if edges.is_empty() || edges.iter().any(|e| e.is_nan()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("slope bin edges must be strictly increasing".into()));
    }
    let mut b = edges.to_vec();
    if b[b.len() - 1].is_finite() {
        b.push(f64::INFINITY);
    }
    if b.len() < 2 {
        return Err(Error::Config("slope bin edges define no bin".into()));
    }
    Ok(b)
}

fn bin_index(bins: &[f64], v: f64) -> usize {
    bins[1..bins.len() - 1].iter().take_while(|&&e| e <= v).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuspectRule {
    pub pred_ceiling: f64,
    pub label_floor: f64,
    pub quantile: f64,
}

impl Default for SuspectRule {
    fn default() -> Self {
        SuspectRule {
            pred_ceiling: 10.0,
            label_floor: 30.0,
            quantile: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuspectLabel {
    pub point: LabelPoint,
    pub prediction: f64,
}

/// Labels far above a low upper-quantile prediction.
pub fn detect_suspect_labels(
    stack: &QuantileStack,
    labels: &SparseLabels,
    rule: &SuspectRule,
) -> Result<Vec<SuspectLabel>> {
    let ch = stack.require_channel(rule.quantile)?;
    if stack.height() != labels.grid_height() || stack.width() != labels.grid_width() {
        return Err(Error::Validation("stack and labels grids differ".into()));
    }
    Ok(labels
        .points()
        .iter()
        .filter_map(|p| {
            let pred = stack.value(ch, p.row, p.col) as f64;
            (pred < rule.pred_ceiling && p.height > rule.label_floor).then(|| SuspectLabel {
                point: *p,
                prediction: pred,
            })
        })
        .collect())
}

/// Label CSV columns plus `prediction` and a `reason` naming the rule.
pub fn write_suspects(suspects: &[SuspectLabel], rule: &SuspectRule, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Format(format!("suspect CSV: {e}"));
    out.write_record(["track_id", "row", "col", "height", "prediction", "reason"])
        .map_err(io)?;
    let reason = format!(
        "q{} prediction < {} m and label > {} m",
        rule.quantile, rule.pred_ceiling, rule.label_floor
    );
    for s in suspects {
        out.write_record([
            s.point.track_id.to_string(),
            s.point.row.to_string(),
            s.point.col.to_string(),
            s.point.height.to_string(),
            s.prediction.to_string(),
            reason.clone(),
        ])
        .map_err(io)?;
    }
    out.flush().map_err(|e| Error::Format(format!("suspect CSV: {e}")))?;
    Ok(())
}
