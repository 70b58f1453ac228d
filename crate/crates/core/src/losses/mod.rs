//! Training objectives over sparse labels.
//!
//! Every objective is a per-label function of the model outputs at the
//! label's pixel ([`PixelObjective`]). Sparse aggregation averages over the
//! labeled pixels; the shift-resilient variant takes, per track, the minimum
//! of that average over the nine one-pixel translations and then averages
//! over tracks.

mod gaussian;
mod pinball;
mod shift;

pub use gaussian::{
    gaussian_nll, gaussian_nll_grad, log_gaussian_nll, log_gaussian_nll_grad, GaussianParams, LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use pinball::{pinball, pinball_grad};
pub use shift::{shift_track, Shift, ShiftSearchSpace};

use crate::error::{Error, Result};
use crate::labels::{partition_tracks, LabelPoint, SparseLabels, Track};
use crate::raster::Grid;
use crate::stack::{validate_quantiles, QuantileStack, StackView};

/// A loss evaluated at one labeled pixel from the `channels()` model outputs
/// at that pixel.
pub trait PixelObjective: Sync {
    fn channels(&self) -> usize;

    fn pixel_loss(&self, outputs: &[f64], y: f64) -> f64;

    /// Adds `weight * d(loss)/d(outputs)` into `grad`.
    fn pixel_grad(&self, outputs: &[f64], y: f64, weight: f64, grad: &mut [f64]);
}

/// Mean pinball loss over the quantile channels.
#[derive(Debug, Clone)]
pub struct QuantileObjective {
    taus: Vec<f64>,
}

impl QuantileObjective {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        validate_quantiles(&taus)?;
        Ok(QuantileObjective { taus })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
}

impl PixelObjective for QuantileObjective {
    fn channels(&self) -> usize {
        self.taus.len()
    }

    fn pixel_loss(&self, outputs: &[f64], y: f64) -> f64 {
        let s: f64 = self
            .taus
            .iter()
            .zip(outputs)
            .map(|(&t, &o)| pinball::pinball_unchecked(t, y, o))
            .sum();
        s / self.taus.len() as f64
    }

    fn pixel_grad(&self, outputs: &[f64], y: f64, weight: f64, grad: &mut [f64]) {
        let w = weight / self.taus.len() as f64;
        for ((&t, &o), g) in self.taus.iter().zip(outputs).zip(grad.iter_mut()) {
            *g += w * pinball::pinball_grad_unchecked(t, y, o);
        }
    }
}

/// Gaussian NLL on channels `[mu, log_var]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianObjective;

impl PixelObjective for GaussianObjective {
    fn channels(&self) -> usize {
        2
    }

    fn pixel_loss(&self, o: &[f64], y: f64) -> f64 {
        gaussian::gaussian_nll_unchecked(o[0], o[1], y)
    }

    fn pixel_grad(&self, o: &[f64], y: f64, weight: f64, grad: &mut [f64]) {
        let (gm, gv) = gaussian::gaussian_nll_grad_unchecked(o[0], o[1], y);
        grad[0] += weight * gm;
        grad[1] += weight * gv;
    }
}

/// Log-normal NLL on channels `[mu, log_var]` in log-height space.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogGaussianObjective;

impl PixelObjective for LogGaussianObjective {
    fn channels(&self) -> usize {
        2
    }

    fn pixel_loss(&self, o: &[f64], y: f64) -> f64 {
        gaussian::log_gaussian_nll_unchecked(o[0], o[1], y)
    }

    fn pixel_grad(&self, o: &[f64], y: f64, weight: f64, grad: &mut [f64]) {
        let (gm, gv) = gaussian::gaussian_nll_grad_unchecked(o[0], o[1], y.ln());
        grad[0] += weight * gm;
        grad[1] += weight * gv;
    }
}

fn check_view<O: PixelObjective + ?Sized, T>(obj: &O, view: &StackView<'_, T>) -> Result<()> {
    if view.channels != obj.channels() {
        return Err(Error::Config(format!(
            "objective expects {} output channels, got {}",
            obj.channels(),
            view.channels
        )));
    }
    Ok(())
}

#[inline]
fn gather<T: Copy + Into<f64>>(view: &StackView<'_, T>, row: usize, col: usize, out: &mut [f64]) {
    let stride = view.pixel_stride();
    let base = row * view.width + col;
    for (k, o) in out.iter_mut().enumerate() {
        *o = view.data[k * stride + base].into();
    }
}

/// Mean per-label loss over the points that stay on the grid after `shift`.
/// `None` when no point survives.
fn shifted_mean<O: PixelObjective + ?Sized, T: Copy + Into<f64>>(
    obj: &O,
    points: &[LabelPoint],
    shift: Shift,
    view: &StackView<'_, T>,
    buf: &mut [f64],
) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in points {
        if let Some((r, c)) = shift.apply(p.row, p.col, view.height, view.width) {
            gather(view, r, c, buf);
            sum += obj.pixel_loss(buf, p.height);
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Sparse pixelwise loss: mean of the per-label objective over all labels.
pub fn sparse_objective<O: PixelObjective + ?Sized, T: Copy + Into<f64>>(
    obj: &O,
    labels: &SparseLabels,
    view: &StackView<'_, T>,
) -> Result<f64> {
    check_view(obj, view)?;
    if labels.is_empty() {
        return Err(Error::Domain("sparse loss over an empty label set".into()));
    }
    let mut buf = vec![0.0; obj.channels()];
    Ok(shifted_mean(obj, labels.points(), Shift::ZERO, view, &mut buf).expect("unshifted labels are on the grid"))
}

/// Minimum over the nine shifts of the track's mean loss, with the winning
/// shift. Ties resolve to the earliest shift in [`ShiftSearchSpace`] order,
/// which starts with `(0, 0)`.
pub fn shifted_track_objective<O: PixelObjective + ?Sized, T: Copy + Into<f64>>(
    obj: &O,
    track: &Track,
    view: &StackView<'_, T>,
) -> Result<(f64, Shift)> {
    check_view(obj, view)?;
    if track.is_empty() {
        return Err(Error::Domain(format!("track {} is empty", track.track_id)));
    }
    let mut buf = vec![0.0; obj.channels()];
    let mut best: Option<(f64, Shift)> = None;
    for shift in ShiftSearchSpace::offsets() {
        if let Some(l) = shifted_mean(obj, &track.points, shift, view, &mut buf) {
            if best.map_or(true, |(b, _)| l < b) {
                best = Some((l, shift));
            }
        }
    }
    best.ok_or_else(|| Error::Domain(format!("every shift of track {} leaves the grid", track.track_id)))
}

/// Shift-resilient loss: mean over tracks of [`shifted_track_objective`].
pub fn shift_resilient_objective<O: PixelObjective + ?Sized, T: Copy + Into<f64>>(
    obj: &O,
    labels: &SparseLabels,
    view: &StackView<'_, T>,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Domain("shift-resilient loss over an empty label set".into()));
    }
    let tracks = partition_tracks(labels);
    let mut sum = 0.0;
    for t in &tracks {
        sum += shifted_track_objective(obj, t, view)?.0;
    }
    Ok(sum / tracks.len() as f64)
}

/// Loss and its gradient with respect to every output value.
///
/// `grad` has the layout of `view.data` and is accumulated into (scaled by
/// `scale`), so callers can sum several samples. With `use_shift`, the
/// gradient flows only through each track's winning shift. Tracks are
/// processed in ascending id order.
pub fn objective_with_grad<O: PixelObjective + ?Sized, T: Copy + Into<f64>>(
    obj: &O,
    labels: &SparseLabels,
    view: &StackView<'_, T>,
    use_shift: bool,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_view(obj, view)?;
    if labels.is_empty() {
        return Err(Error::Domain("loss over an empty label set".into()));
    }
    debug_assert_eq!(grad.len(), view.data.len());
    let stride = view.pixel_stride();
    let n_ch = obj.channels();
    let mut buf = vec![0.0; n_ch];
    let mut g = vec![0.0; n_ch];

    let mut accumulate = |points: &[LabelPoint], shift: Shift, weight: f64| {
        for p in points {
            if let Some((r, c)) = shift.apply(p.row, p.col, view.height, view.width) {
                gather(view, r, c, &mut buf);
                g.iter_mut().for_each(|v| *v = 0.0);
                obj.pixel_grad(&buf, p.height, weight, &mut g);
                let base = r * view.width + c;
                for k in 0..n_ch {
                    grad[k * stride + base] += g[k];
                }
            }
        }
    };

    if use_shift {
        let tracks = partition_tracks(labels);
        let n_tracks = tracks.len() as f64;
        let mut total = 0.0;
        for t in &tracks {
            let (loss, shift) = shifted_track_objective(obj, t, view)?;
            let survivors = t
                .points
                .iter()
                .filter(|p| shift.apply(p.row, p.col, view.height, view.width).is_some())
                .count();
            accumulate(&t.points, shift, scale / (n_tracks * survivors as f64));
            total += loss;
        }
        Ok(total / n_tracks)
    } else {
        let loss = sparse_objective(obj, labels, view)?;
        accumulate(labels.points(), Shift::ZERO, scale / labels.len() as f64);
        Ok(loss)
    }
}

fn check_stack_taus(taus: &[f64], stack: &QuantileStack) -> Result<()> {
    if taus.len() != stack.len()
        || taus
            .iter()
            .zip(stack.quantiles())
            .any(|(a, b)| (a - b).abs() > crate::stack::QUANTILE_MATCH_TOL)
    {
        return Err(Error::Config(format!(
            "quantile vector {taus:?} does not match stack quantiles {:?}",
            stack.quantiles()
        )));
    }
    Ok(())
}

fn check_grid(labels: &SparseLabels, h: usize, w: usize) -> Result<()> {
    if labels.grid_height() != h || labels.grid_width() != w {
        return Err(Error::Validation(format!(
            "labels on a {}x{} grid, prediction is {h}x{w}",
            labels.grid_height(),
            labels.grid_width()
        )));
    }
    Ok(())
}

/// Mean pinball loss at the labeled pixels of a single prediction grid.
pub fn sparse_pinball(tau: f64, labels: &SparseLabels, pred: &Grid) -> Result<f64> {
    let obj = QuantileObjective::new(vec![tau])?;
    check_grid(labels, pred.height(), pred.width())?;
    let view = StackView::new(1, pred.height(), pred.width(), pred.data());
    sparse_objective(&obj, labels, &view)
}

/// Average over the `N` channels of the sparse pinball loss.
pub fn multi_quantile_loss(taus: &[f64], labels: &SparseLabels, stack: &QuantileStack) -> Result<f64> {
    let obj = QuantileObjective::new(taus.to_vec())?;
    check_stack_taus(taus, stack)?;
    check_grid(labels, stack.height(), stack.width())?;
    sparse_objective(&obj, labels, &stack.view())
}

pub fn shifted_track_loss(taus: &[f64], track: &Track, stack: &QuantileStack) -> Result<f64> {
    let obj = QuantileObjective::new(taus.to_vec())?;
    check_stack_taus(taus, stack)?;
    Ok(shifted_track_objective(&obj, track, &stack.view())?.0)
}

pub fn shift_resilient_loss(taus: &[f64], labels: &SparseLabels, stack: &QuantileStack) -> Result<f64> {
    let obj = QuantileObjective::new(taus.to_vec())?;
    check_stack_taus(taus, stack)?;
    check_grid(labels, stack.height(), stack.width())?;
    shift_resilient_objective(&obj, labels, &stack.view())
}

/// Sparse Gaussian (or log-Gaussian) NLL averaged over labeled pixels.
pub fn sparse_nll(log_space: bool, labels: &SparseLabels, mu: &Grid, log_var: &Grid) -> Result<f64> {
    check_grid(labels, mu.height(), mu.width())?;
    check_grid(labels, log_var.height(), log_var.width())?;
    for p in labels.points() {
        let params = GaussianParams::new(mu.get(p.row, p.col) as f64, log_var.get(p.row, p.col) as f64);
        if log_space {
            log_gaussian_nll(params, p.height)?;
        } else {
            gaussian_nll(params, p.height)?;
        }
    }
    let mut data = mu.data().to_vec();
    data.extend_from_slice(log_var.data());
    let view = StackView::new(2, mu.height(), mu.width(), &data);
    if log_space {
        sparse_objective(&LogGaussianObjective, labels, &view)
    } else {
        sparse_objective(&GaussianObjective, labels, &view)
    }
}

#[cfg(test)]
mod tests;
