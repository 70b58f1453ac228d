use serde::{Deserialize, Serialize};

use super::conv::{conv_backward, conv_forward, relu_backward_in_place, relu_in_place, ConvShape};
use super::real::Real;
use crate::error::{Error, Result};
use crate::labels::SparseLabels;
use crate::losses::{objective_with_grad, GaussianObjective, LogGaussianObjective, PixelObjective, QuantileObjective};
use crate::raster::Raster;
use crate::rng::CounterRng;
use crate::stack::{StackView, MEDIAN_CHANNEL, STANDARD_QUANTILES};

pub const BACKBONE_WIDTHS: (usize, usize) = (32, 64);
pub const ARCHITECTURE_NAME: &str = "surrogate-conv2-twohead";

/// Parameter tensors in declaration order.
pub const TENSOR_NAMES: [&str; 12] = [
    "backbone.conv1.weight",
    "backbone.conv1.bias",
    "backbone.conv2.weight",
    "backbone.conv2.bias",
    "point.weight",
    "point.bias",
    "uncertainty.conv1.weight",
    "uncertainty.conv1.bias",
    "uncertainty.conv2.weight",
    "uncertainty.conv2.bias",
    "uncertainty.out.weight",
    "uncertainty.out.bias",
];

/// Tensors `0..BACKBONE_TENSORS` belong to the backbone.
pub const BACKBONE_TENSORS: usize = 4;

const B1: usize = 0;
const B2: usize = 2;
const PT: usize = 4;
const U1: usize = 6;
const U2: usize = 8;
const UO: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Quantile,
    Gaussian,
    LogGaussian,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Quantile => "quantile",
            LossKind::Gaussian => "gaussian",
            LossKind::LogGaussian => "log_gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(LossKind::Quantile),
            "gaussian" => Ok(LossKind::Gaussian),
            "log_gaussian" => Ok(LossKind::LogGaussian),
            _ => Err(Error::Config(format!(
                "unknown loss kind `{s}` (expected quantile, gaussian or log_gaussian)"
            ))),
        }
    }

    /// Output channels of the uncertainty head.
    pub fn uncertainty_channels(self) -> usize {
        match self {
            LossKind::Quantile => STANDARD_QUANTILES.len() - 1,
            LossKind::Gaussian | LossKind::LogGaussian => 1,
        }
    }

    pub fn output_channels(self) -> usize {
        self.uncertainty_channels() + 1
    }

    pub fn channel_names(self) -> Vec<String> {
        match self {
            LossKind::Quantile => STANDARD_QUANTILES.iter().map(|t| format!("q{t}")).collect(),
            LossKind::Gaussian | LossKind::LogGaussian => vec!["mu".into(), "log_var".into()],
        }
    }

    pub fn objective(self) -> Box<dyn PixelObjective> {
        match self {
            LossKind::Quantile => {
                Box::new(QuantileObjective::new(STANDARD_QUANTILES.to_vec()).expect("standard quantiles are valid"))
            }
            LossKind::Gaussian => Box::new(GaussianObjective),
            LossKind::LogGaussian => Box::new(LogGaussianObjective),
        }
    }

    /// Per-channel `(scale, offset)` applied to the raw head outputs, so that
    /// a freshly initialised network starts in a plausible height range.
    pub fn default_output_affine(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            LossKind::Quantile => (vec![10.0; 11], vec![10.0; 11]),
            LossKind::Gaussian => (vec![10.0, 1.0], vec![10.0, 16f64.ln()]),
            LossKind::LogGaussian => (vec![1.0, 1.0], vec![10f64.ln(), 0.1f64.ln()]),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub c_in: usize,
    pub loss_kind: LossKind,
    pub output_scale: Vec<f64>,
    pub output_offset: Vec<f64>,
}

impl Architecture {
    pub fn new(c_in: usize, loss_kind: LossKind) -> Self {
        let (output_scale, output_offset) = loss_kind.default_output_affine();
        Architecture {
            c_in,
            loss_kind,
            output_scale,
            output_offset,
        }
    }

    pub fn conv_shapes(&self) -> [ConvShape; 6] {
        let (w1, w2) = BACKBONE_WIDTHS;
        [
            ConvShape::new(self.c_in, w1, 3),
            ConvShape::new(w1, w2, 3),
            ConvShape::new(w2, 1, 1),
            ConvShape::new(w2, w2, 3),
            ConvShape::new(w2, w2, 3),
            ConvShape::new(w2, self.loss_kind.uncertainty_channels(), 1),
        ]
    }

    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        self.conv_shapes()
            .iter()
            .flat_map(|s| [s.weight_shape(), vec![s.c_out]])
            .collect()
    }

    pub fn output_channels(&self) -> usize {
        self.loss_kind.output_channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 {
            return Err(Error::Config("model needs at least one input channel".into()));
        }
        let n = self.output_channels();
        if self.output_scale.len() != n || self.output_offset.len() != n {
            return Err(Error::Config(format!("output affine must have {n} entries")));
        }
        Ok(())
    }
}

/// Backbone activations, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BackboneActs<T> {
    pub a1: Vec<T>,
    pub features: Vec<T>,
}

#[derive(Debug, Clone)]
struct HeadActs<T> {
    u1: Vec<T>,
    u2: Vec<T>,
    /// Final outputs after merging heads and the output affine.
    out: Vec<T>,
}

/// Gradient buffers; `None` for tensors that receive no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub tensors: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros<U>(model: &SurrogateModel<U>, backbone: bool) -> Self {
        Grads {
            tensors: model
                .params
                .iter()
                .enumerate()
                .map(|(i, p)| (backbone || i >= BACKBONE_TENSORS).then(|| vec![T::zero(); p.len()]))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Grads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if let (Some(a), Some(b)) = (a, b) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .flat_map(|t| t.iter())
            .map(|&g| {
                let g: f64 = g.into();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Small convolutional network with a point head and an uncertainty head.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel<T = f32> {
    pub arch: Architecture,
    pub params: Vec<Vec<T>>,
}

impl<T: Real> SurrogateModel<T> {
    /// Uniform initialisation in `+-sqrt(1 / fan_in)` for weights and biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.conv_shapes();
        let mut params = Vec::with_capacity(12);
        for (i, s) in shapes.iter().enumerate() {
            let bound = (1.0 / s.fan_in() as f64).sqrt();
            for (j, len) in [s.weight_len(), s.c_out].into_iter().enumerate() {
                let mut rng = CounterRng::new(seed, 0x3000 + (2 * i + j) as u64);
                params.push((0..len).map(|_| T::of(rng.range(-bound, bound))).collect());
            }
        }
        Ok(SurrogateModel { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<Vec<T>>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.tensor_shapes();
        if params.len() != shapes.len() {
            return Err(Error::Validation(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (p, s)) in params.iter().zip(&shapes).enumerate() {
            if p.len() != s.iter().product::<usize>() {
                return Err(Error::Validation(format!(
                    "tensor {} has {} values, shape {:?}",
                    TENSOR_NAMES[i],
                    p.len(),
                    s
                )));
            }
        }
        Ok(SurrogateModel { arch, params })
    }

    pub fn cast<U: Real>(&self) -> SurrogateModel<U> {
        SurrogateModel {
            arch: self.arch.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.iter().map(|&v| U::of(v.into())).collect())
                .collect(),
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        self.arch.loss_kind
    }

    pub fn output_channels(&self) -> usize {
        self.arch.output_channels()
    }

    fn check_input(&self, x: &[T], h: usize, w: usize) -> Result<()> {
        if x.len() != self.arch.c_in * h * w {
            return Err(Error::Config(format!(
                "model expects {} input channels, input has {}",
                self.arch.c_in,
                x.len() / (h * w).max(1)
            )));
        }
        Ok(())
    }

    pub fn backbone(&self, x: &[T], h: usize, w: usize) -> Result<BackboneActs<T>> {
        self.check_input(x, h, w)?;
        let s = self.arch.conv_shapes();
        let hw = h * w;
        let mut scratch = Vec::new();
        let mut a1 = vec![T::zero(); s[0].c_out * hw];
        conv_forward(
            s[0],
            &self.params[B1],
            &self.params[B1 + 1],
            x,
            h,
            w,
            &mut a1,
            &mut scratch,
        );
        relu_in_place(&mut a1);
        let mut features = vec![T::zero(); s[1].c_out * hw];
        conv_forward(
            s[1],
            &self.params[B2],
            &self.params[B2 + 1],
            &a1,
            h,
            w,
            &mut features,
            &mut scratch,
        );
        relu_in_place(&mut features);
        Ok(BackboneActs { a1, features })
    }

    fn heads(&self, features: &[T], h: usize, w: usize) -> HeadActs<T> {
        let s = self.arch.conv_shapes();
        let hw = h * w;
        let mut scratch = Vec::new();
        let mut point = vec![T::zero(); hw];
        conv_forward(
            s[2],
            &self.params[PT],
            &self.params[PT + 1],
            features,
            h,
            w,
            &mut point,
            &mut scratch,
        );
        let mut u1 = vec![T::zero(); s[3].c_out * hw];
        conv_forward(
            s[3],
            &self.params[U1],
            &self.params[U1 + 1],
            features,
            h,
            w,
            &mut u1,
            &mut scratch,
        );
        relu_in_place(&mut u1);
        let mut u2 = vec![T::zero(); s[4].c_out * hw];
        conv_forward(
            s[4],
            &self.params[U2],
            &self.params[U2 + 1],
            &u1,
            h,
            w,
            &mut u2,
            &mut scratch,
        );
        relu_in_place(&mut u2);
        let mut unc = vec![T::zero(); s[5].c_out * hw];
        conv_forward(
            s[5],
            &self.params[UO],
            &self.params[UO + 1],
            &u2,
            h,
            w,
            &mut unc,
            &mut scratch,
        );

        let n_out = self.output_channels();
        let mut out = vec![T::zero(); n_out * hw];
        for c in 0..n_out {
            let src = match self.raw_source(c) {
                None => &point[..],
                Some(u) => &unc[u * hw..(u + 1) * hw],
            };
            let scale = T::of(self.arch.output_scale[c]);
            let offset = T::of(self.arch.output_offset[c]);
            for (o, &v) in out[c * hw..(c + 1) * hw].iter_mut().zip(src) {
                *o = scale * v + offset;
            }
        }
        HeadActs { u1, u2, out }
    }

    /// Which raw head channel feeds output channel `c`: `None` for the
    /// point head, `Some(k)` for uncertainty channel `k`.
    fn raw_source(&self, c: usize) -> Option<usize> {
        match self.arch.loss_kind {
            LossKind::Quantile => match c.cmp(&MEDIAN_CHANNEL) {
                std::cmp::Ordering::Less => Some(c),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(c - 1),
            },
            LossKind::Gaussian | LossKind::LogGaussian => (c == 1).then_some(0),
        }
    }

    /// Output tensor `channels x h x w` from a `c_in x h x w` input.
    pub fn forward(&self, x: &[T], h: usize, w: usize) -> Result<Vec<T>> {
        let b = self.backbone(x, h, w)?;
        Ok(self.heads(&b.features, h, w).out)
    }

    /// Loss of one sample; accumulates `scale * d(loss)/d(params)` into
    /// `grads`. With `cached`, the backbone forward is skipped; the
    /// backbone is only differentiated when `grads` holds buffers for it.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad(
        &self,
        x: &[T],
        h: usize,
        w: usize,
        labels: &SparseLabels,
        use_shift: bool,
        scale: f64,
        cached: Option<&BackboneActs<T>>,
        grads: &mut Grads<T>,
    ) -> Result<f64> {
        let owned;
        let bb = match cached {
            Some(b) => b,
            None => {
                owned = self.backbone(x, h, w)?;
                &owned
            }
        };
        let acts = self.heads(&bb.features, h, w);
        let hw = h * w;
        let n_out = self.output_channels();
        let objective = self.arch.loss_kind.objective();
        let view = StackView::new(n_out, h, w, &acts.out);
        let mut g_out = vec![0.0f64; n_out * hw];
        let loss = objective_with_grad(objective.as_ref(), labels, &view, use_shift, scale, &mut g_out)?;

        let s = self.arch.conv_shapes();
        let mut d_point = vec![T::zero(); hw];
        let mut d_unc = vec![T::zero(); s[5].c_out * hw];
        for c in 0..n_out {
            let k = self.arch.output_scale[c];
            let dst = match self.raw_source(c) {
                None => &mut d_point[..],
                Some(u) => &mut d_unc[u * hw..(u + 1) * hw],
            };
            for (d, &g) in dst.iter_mut().zip(&g_out[c * hw..(c + 1) * hw]) {
                *d = T::of(g * k);
            }
        }

        let mut scratch = Vec::new();
        let mut d_feat = vec![T::zero(); s[1].c_out * hw];
        let (head, body) = grads.tensors.split_at_mut(UO);
        let (gw, gb) = body.split_at_mut(1);
        conv_backward(
            s[5],
            &self.params[UO],
            &acts.u2,
            h,
            w,
            &d_unc,
            gw[0].as_mut().expect("head gradient"),
            gb[0].as_mut().expect("head gradient"),
            None,
            &mut scratch,
        );
        let mut d_u2 = vec![T::zero(); s[4].c_out * hw];
        matmul_into_dx(s[5], &self.params[UO], &d_unc, hw, &mut d_u2);
        relu_backward_in_place(&acts.u2, &mut d_u2);

        let mut d_u1 = vec![T::zero(); s[3].c_out * hw];
        {
            let (a, b) = head.split_at_mut(U2 + 1);
            conv_backward(
                s[4],
                &self.params[U2],
                &acts.u1,
                h,
                w,
                &d_u2,
                a[U2].as_mut().expect("head gradient"),
                b[0].as_mut().expect("head gradient"),
                Some(&mut d_u1),
                &mut scratch,
            );
        }
        relu_backward_in_place(&acts.u1, &mut d_u1);
        {
            let (a, b) = head.split_at_mut(U1 + 1);
            conv_backward(
                s[3],
                &self.params[U1],
                &bb.features,
                h,
                w,
                &d_u1,
                a[U1].as_mut().expect("head gradient"),
                b[0].as_mut().expect("head gradient"),
                Some(&mut d_feat),
                &mut scratch,
            );
        }
        {
            let (a, b) = head.split_at_mut(PT + 1);
            conv_backward(
                s[2],
                &self.params[PT],
                &bb.features,
                h,
                w,
                &d_point,
                a[PT].as_mut().expect("head gradient"),
                b[0].as_mut().expect("head gradient"),
                Some(&mut d_feat),
                &mut scratch,
            );
        }

        if head[B1].is_some() {
            self.check_input(x, h, w)?;
            relu_backward_in_place(&bb.features, &mut d_feat);
            let mut d_a1 = vec![T::zero(); s[0].c_out * hw];
            let (a, b) = head.split_at_mut(B2 + 1);
            conv_backward(
                s[1],
                &self.params[B2],
                &bb.a1,
                h,
                w,
                &d_feat,
                a[B2].as_mut().expect("backbone gradient"),
                b[0].as_mut().expect("backbone gradient"),
                Some(&mut d_a1),
                &mut scratch,
            );
            relu_backward_in_place(&bb.a1, &mut d_a1);
            let (a, b) = head.split_at_mut(B1 + 1);
            conv_backward(
                s[0],
                &self.params[B1],
                x,
                h,
                w,
                &d_a1,
                a[B1].as_mut().expect("backbone gradient"),
                b[0].as_mut().expect("backbone gradient"),
                None,
                &mut scratch,
            );
        }
        Ok(loss)
    }

    /// Loss of one sample without gradients.
    pub fn loss(&self, x: &[T], h: usize, w: usize, labels: &SparseLabels, use_shift: bool) -> Result<f64> {
        let out = self.forward(x, h, w)?;
        let objective = self.arch.loss_kind.objective();
        let view = StackView::new(self.output_channels(), h, w, &out);
        let mut sink = vec![0.0; out.len()];
        objective_with_grad(objective.as_ref(), labels, &view, use_shift, 0.0, &mut sink)
    }
}

impl SurrogateModel<f32> {
    pub fn forward_raster(&self, input: &Raster) -> Result<Vec<f32>> {
        if input.channels() != self.arch.c_in {
            return Err(Error::Config(format!(
                "model expects {} input channels, raster has {}",
                self.arch.c_in,
                input.channels()
            )));
        }
        self.forward(input.data(), input.height(), input.width())
    }
}

/// `dx = W^T dy` for a 1x1 convolution.
fn matmul_into_dx<T: Real>(shape: ConvShape, weight: &[T], dy: &[T], hw: usize, dx: &mut [T]) {
    super::real::matmul(shape.c_in, shape.c_out, hw, weight, true, dy, false, dx, true);
}
