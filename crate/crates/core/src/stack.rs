//! Multi-channel prediction outputs.

use crate::error::{Error, Result};
use crate::raster::{Grid, Raster};

/// The trained quantile vector: ten uncertainty quantiles with the median
/// inserted in ascending position.
pub const STANDARD_QUANTILES: [f64; 11] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.5, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Index of the median channel in [`STANDARD_QUANTILES`].
pub const MEDIAN_CHANNEL: usize = 5;

/// Tolerance used when looking up a quantile channel by value.
pub const QUANTILE_MATCH_TOL: f64 = 1e-9;

/// Borrowed `N x H x W` output tensor.
#[derive(Debug, Clone, Copy)]
pub struct StackView<'a, T = f32> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: &'a [T],
}

impl<'a, T: Copy + Into<f64>> StackView<'a, T> {
    pub fn new(channels: usize, height: usize, width: usize, data: &'a [T]) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        StackView {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn value(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col].into()
    }

    #[inline]
    pub fn pixel_stride(&self) -> usize {
        self.height * self.width
    }
}

/// `N` prediction grids paired with a strictly increasing quantile vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileStack {
    quantiles: Vec<f64>,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub(crate) fn validate_quantiles(quantiles: &[f64]) -> Result<()> {
    if quantiles.is_empty() {
        return Err(Error::Domain("quantile vector is empty".into()));
    }
    for &t in quantiles {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!("quantile {t} outside (0, 1)")));
        }
    }
    if quantiles.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(format!(
            "quantiles must be strictly increasing: {quantiles:?}"
        )));
    }
    Ok(())
}

impl QuantileStack {
    pub fn new(quantiles: Vec<f64>, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        validate_quantiles(&quantiles)?;
        if height == 0 || width == 0 {
            return Err(Error::Validation("stack dimensions must be positive".into()));
        }
        if data.len() != quantiles.len() * height * width {
            return Err(Error::Validation(format!(
                "stack holds {} values, expected N*H*W = {}",
                data.len(),
                quantiles.len() * height * width
            )));
        }
        Ok(QuantileStack {
            quantiles,
            height,
            width,
            data,
        })
    }

    pub fn from_grids(quantiles: Vec<f64>, grids: &[Grid]) -> Result<Self> {
        if grids.len() != quantiles.len() {
            return Err(Error::Validation(format!(
                "{} grids for {} quantiles",
                grids.len(),
                quantiles.len()
            )));
        }
        let (h, w) = grids
            .first()
            .map(|g| (g.height(), g.width()))
            .ok_or_else(|| Error::Domain("quantile vector is empty".into()))?;
        let mut data = Vec::with_capacity(grids.len() * h * w);
        for g in grids {
            if g.height() != h || g.width() != w {
                return Err(Error::Validation("stack grids differ in shape".into()));
            }
            data.extend_from_slice(g.data());
        }
        Self::new(quantiles, h, w, data)
    }

    pub fn from_raster(quantiles: Vec<f64>, raster: &Raster) -> Result<Self> {
        if raster.channels() != quantiles.len() {
            return Err(Error::Validation(format!(
                "raster has {} channels for {} quantiles",
                raster.channels(),
                quantiles.len()
            )));
        }
        Self::new(quantiles, raster.height(), raster.width(), raster.data().to_vec())
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    pub fn len(&self) -> usize {
        self.quantiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quantiles.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn view(&self) -> StackView<'_> {
        StackView::new(self.len(), self.height, self.width, &self.data)
    }

    pub fn channel(&self, n: usize) -> &[f32] {
        let s = self.height * self.width;
        &self.data[n * s..(n + 1) * s]
    }

    pub fn grid(&self, n: usize) -> Grid {
        Grid::new(self.height, self.width, self.channel(n).to_vec()).expect("valid stack shape")
    }

    #[inline]
    pub fn value(&self, n: usize, row: usize, col: usize) -> f32 {
        self.data[(n * self.height + row) * self.width + col]
    }

    /// Channel whose quantile equals `tau` within [`QUANTILE_MATCH_TOL`].
    pub fn channel_index(&self, tau: f64) -> Option<usize> {
        self.quantiles
            .iter()
            .position(|&q| (q - tau).abs() <= QUANTILE_MATCH_TOL)
    }

    pub fn require_channel(&self, tau: f64) -> Result<usize> {
        self.channel_index(tau).ok_or_else(|| {
            Error::Config(format!(
                "no prediction channel for quantile {tau} (available: {:?})",
                self.quantiles
            ))
        })
    }

    pub fn to_raster(&self) -> Raster {
        Raster::new(self.len(), self.height, self.width, self.data.clone()).expect("valid stack shape")
    }

    /// Sorts the `N` values at each pixel so channels are non-crossing.
    pub fn monotonized(&self) -> QuantileStack {
        let s = self.height * self.width;
        let n = self.len();
        let mut data = self.data.clone();
        let mut buf = vec![0f32; n];
        for px in 0..s {
            for k in 0..n {
                buf[k] = self.data[k * s + px];
            }
            buf.sort_by(|a, b| a.total_cmp(b));
            for k in 0..n {
                data[k * s + px] = buf[k];
            }
        }
        QuantileStack {
            quantiles: self.quantiles.clone(),
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// True when no pixel has a crossing (`q_k > q_{k+1}`).
    pub fn is_monotone(&self) -> bool {
        let s = self.height * self.width;
        (0..s).all(|px| (1..self.len()).all(|k| self.data[(k - 1) * s + px] <= self.data[k * s + px]))
    }
}
