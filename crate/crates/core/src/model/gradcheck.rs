//! Finite-difference check of the analytic gradients.
//!
//! The analytic gradient comes from the single-precision network. The
//! reference is a central difference of the same network evaluated in
//! double precision, which keeps rounding noise of the difference quotient
//! far below the tolerance.

use serde::{Deserialize, Serialize};

use super::network::{Architecture, Grads, LossKind, SurrogateModel, TENSOR_NAMES};
use crate::error::Result;
use crate::labels::{LabelPoint, SparseLabels};
use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub coords_per_tensor: usize,
    pub step: f64,
    /// Denominator floor of the relative error, so that entries whose true
    /// gradient is (near) zero are compared absolutely.
    pub rel_floor: f64,
    pub use_shift: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            channels: 4,
            height: 8,
            width: 8,
            coords_per_tensor: 5,
            step: 1e-5,
            rel_floor: 1e-4,
            use_shift: false,
            seed: 0,
        }
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random toy instance: input, two vertical tracks of labels.
pub fn toy_instance(opts: &GradCheckOptions) -> Result<(Vec<f32>, SparseLabels)> {
    let mut rng = CounterRng::new(opts.seed, 0x7000);
    let x: Vec<f32> = (0..opts.channels * opts.height * opts.width)
        .map(|_| rng.range(-1.0, 1.0) as f32)
        .collect();
    let mut points = Vec::new();
    for (t, col) in [(0u32, 1usize), (1, opts.width.saturating_sub(3))] {
        for row in (1..opts.height.saturating_sub(1)).step_by(2) {
            points.push(LabelPoint::new(t, row, col.min(opts.width - 1), rng.range(2.0, 30.0)));
        }
    }
    points.dedup_by_key(|p| (p.row, p.col));
    Ok((x, SparseLabels::new(points, opts.height, opts.width)?))
}

/// Compares analytic and numeric gradients at `coords_per_tensor` random
/// coordinates of every parameter tensor.
pub fn check_gradients(kind: LossKind, opts: &GradCheckOptions) -> Result<Vec<GradCheckEntry>> {
    let model: SurrogateModel<f32> = SurrogateModel::init(Architecture::new(opts.channels, kind), opts.seed)?;
    let (x, labels) = toy_instance(opts)?;
    let (h, w) = (opts.height, opts.width);
    let mut grads = Grads::zeros(&model, true);
    model.loss_and_grad(&x, h, w, &labels, opts.use_shift, 1.0, None, &mut grads)?;

    let reference: SurrogateModel<f64> = model.cast();
    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mut rng = CounterRng::new(opts.seed, 0x7001);
    let mut entries = Vec::new();
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        let len = model.params[t].len();
        let analytic = grads.tensors[t].as_ref().expect("all tensors trainable");
        for _ in 0..opts.coords_per_tensor {
            let i = rng.below(len as u64) as usize;
            let mut plus = reference.clone();
            plus.params[t][i] += opts.step;
            let mut minus = reference.clone();
            minus.params[t][i] -= opts.step;
            let lp = plus.loss(&x64, h, w, &labels, opts.use_shift)?;
            let lm = minus.loss(&x64, h, w, &labels, opts.use_shift)?;
            let numeric = (lp - lm) / (2.0 * opts.step);
            let a = analytic[i] as f64;
            entries.push(GradCheckEntry {
                tensor: name.to_string(),
                index: i,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric, opts.rel_floor),
            });
        }
    }
    Ok(entries)
}
