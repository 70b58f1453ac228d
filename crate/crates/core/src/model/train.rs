use std::io::Write;

use serde::{Deserialize, Serialize};

use super::network::{BackboneActs, Grads, LossKind, SurrogateModel};
use super::optim::{clip_global_norm, AdamW, LinearSchedule};
use crate::error::{Error, Result};
use crate::labels::{LabelPoint, SparseLabels};
use crate::parallel::{map_ordered, thread_budget};
use crate::raster::Raster;
use crate::rng::CounterRng;

/// Receptive-field radius of the network: context kept around each
/// training tile so that its interior sees the same inputs as in a
/// whole-scene forward pass.
pub const CONTEXT_HALO: usize = 4;

const STREAM_SHUFFLE: u64 = 0x5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub freeze_backbone: bool,
    pub loss_kind: LossKind,
    pub use_shift_loss: bool,
    pub seed: u64,
    pub warmup_fraction: f64,
    /// Side of the square training windows scenes are cut into; 0 trains
    /// on whole scenes.
    pub tile: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
            batch_size: 5,
            epochs: 2,
            freeze_backbone: true,
            loss_kind: LossKind::Quantile,
            use_shift_loss: true,
            seed: 0,
            warmup_fraction: 0.1,
            tile: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) || !(self.grad_clip_norm > 0.0) {
            return bad("weight decay must be >= 0 and gradient clip norm > 0".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup fraction {} outside [0, 1)", self.warmup_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Raster,
    pub labels: SparseLabels,
}

/// Cuts every scene into `tile x tile` cores, each extended by
/// [`CONTEXT_HALO`] pixels of context where the scene allows. Labels are
/// kept only inside the core; windows without labels are skipped.
pub fn tile_samples(samples: &[TrainSample], tile: usize) -> Result<Vec<TrainSample>> {
    if tile == 0 {
        return Ok(samples.iter().filter(|s| !s.labels.is_empty()).cloned().collect());
    }
    let mut out = Vec::new();
    for s in samples {
        let (h, w) = (s.input.height(), s.input.width());
        for r0 in (0..h).step_by(tile) {
            for c0 in (0..w).step_by(tile) {
                let (r1, c1) = ((r0 + tile).min(h), (c0 + tile).min(w));
                let (wr0, wc0) = (r0.saturating_sub(CONTEXT_HALO), c0.saturating_sub(CONTEXT_HALO));
                let (wr1, wc1) = ((r1 + CONTEXT_HALO).min(h), (c1 + CONTEXT_HALO).min(w));
                let points: Vec<LabelPoint> = s
                    .labels
                    .points()
                    .iter()
                    .filter(|p| (r0..r1).contains(&p.row) && (c0..c1).contains(&p.col))
                    .map(|p| LabelPoint::new(p.track_id, p.row - wr0, p.col - wc0, p.height))
                    .collect();
                if points.is_empty() {
                    continue;
                }
                out.push(TrainSample {
                    input: s.input.crop(wr0, wc0, wr1 - wr0, wc1 - wc0)?,
                    labels: SparseLabels::new(points, wr1 - wr0, wc1 - wc0)?,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

pub fn write_trace(trace: &[TraceRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "step,epoch,lr,loss,grad_norm")?;
    for r in trace {
        writeln!(w, "{},{},{},{},{}", r.step, r.epoch, r.lr, r.loss, r.grad_norm)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SurrogateModel,
    pub trace: Vec<TraceRow>,
}

/// Mini-batch training with a seeded shuffle per epoch.
///
/// Per-sample losses and gradients are computed independently (possibly on
/// several threads) and summed in batch order, so results do not depend on
/// the thread count.
pub fn train(mut model: SurrogateModel, dataset: &[TrainSample], config: &TrainerConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.loss_kind != model.loss_kind() {
        return Err(Error::Config(format!(
            "trainer loss {} does not match model head {}",
            config.loss_kind,
            model.loss_kind()
        )));
    }
    let samples = tile_samples(dataset, config.tile)?;
    if samples.is_empty() {
        return Err(Error::Domain("training set has no labels".into()));
    }
    for s in &samples {
        if s.input.channels() != model.arch.c_in {
            return Err(Error::Config(format!(
                "model expects {} input channels, sample has {}",
                model.arch.c_in,
                s.input.channels()
            )));
        }
    }
    let threads = thread_budget();
    let cache: Option<Vec<BackboneActs<f32>>> = if config.freeze_backbone {
        let acts = map_ordered(&samples, threads, |s| {
            model.backbone(s.input.data(), s.input.height(), s.input.width())
        });
        Some(acts.into_iter().collect::<Result<_>>()?)
    } else {
        None
    };

    let n = samples.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let schedule = LinearSchedule::new(
        config.learning_rate,
        config.warmup_fraction,
        config.epochs * steps_per_epoch,
    );
    let lens: Vec<usize> = model.params.iter().map(Vec::len).collect();
    let mut opt = AdamW::new(&lens, config.weight_decay);
    let mut trace = Vec::with_capacity(schedule.total);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        CounterRng::new(config.seed, STREAM_SHUFFLE + epoch as u64).shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let results = map_ordered(batch, threads, |&i| {
                let s = &samples[i];
                let mut g = Grads::zeros(&model, !config.freeze_backbone);
                let loss = model.loss_and_grad(
                    s.input.data(),
                    s.input.height(),
                    s.input.width(),
                    &s.labels,
                    config.use_shift_loss,
                    scale,
                    cache.as_ref().map(|c| &c[i]),
                    &mut g,
                );
                loss.map(|l| (l, g))
            });
            let mut grads = Grads::zeros(&model, !config.freeze_backbone);
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r?;
                loss += l * scale;
                grads.add(&g);
            }
            let grad_norm = clip_global_norm(&mut grads, config.grad_clip_norm);
            if !loss.is_finite() || !grad_norm.is_finite() {
                return Err(Error::Training {
                    step,
                    reason: format!("non-finite loss {loss} or gradient norm {grad_norm}"),
                });
            }
            let lr = schedule.lr(step);
            opt.step(&mut model.params, &grads, lr);
            trace.push(TraceRow {
                step,
                epoch,
                lr,
                loss,
                grad_norm,
            });
            step += 1;
        }
    }
    Ok(TrainOutcome { model, trace })
}
