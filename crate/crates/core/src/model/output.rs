use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{LossKind, SurrogateModel};
use crate::error::{Error, Result};
use crate::losses::{LOG_VAR_MAX, LOG_VAR_MIN};
use crate::raster::{load_raster, save_raster, Grid, Raster};
use crate::stack::{QuantileStack, MEDIAN_CHANNEL, STANDARD_QUANTILES};
use crate::stats::normal_quantile;

/// Network output for one scene, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub kind: LossKind,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ModelOutput {
    pub fn predict(model: &SurrogateModel, input: &Raster) -> Result<Self> {
        Ok(ModelOutput {
            kind: model.loss_kind(),
            height: input.height(),
            width: input.width(),
            data: model.forward_raster(input)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.kind.output_channels()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn to_raster(&self) -> Raster {
        Raster::new(self.channels(), self.height, self.width, self.data.clone()).expect("consistent output")
    }

    /// Point estimate: the median channel, `mu`, or `exp(mu)` for the
    /// log-Gaussian head (the log-normal median).
    pub fn point_estimate(&self) -> Grid {
        let data = match self.kind {
            LossKind::Quantile => self.channel(MEDIAN_CHANNEL).to_vec(),
            LossKind::Gaussian => self.channel(0).to_vec(),
            LossKind::LogGaussian => self.channel(0).iter().map(|m| m.exp()).collect(),
        };
        Grid::new(self.height, self.width, data).expect("consistent output")
    }

    /// Quantile rasters at `taus`. The quantile head must contain every
    /// requested level; Gaussian heads derive them as `mu + z sigma`
    /// (exponentiated for the log-Gaussian head).
    pub fn quantile_stack(&self, taus: &[f64]) -> Result<QuantileStack> {
        match self.kind {
            LossKind::Quantile => {
                let own = QuantileStack::new(STANDARD_QUANTILES.to_vec(), self.height, self.width, self.data.clone())?;
                let grids = taus
                    .iter()
                    .map(|&t| own.require_channel(t).map(|c| own.grid(c)))
                    .collect::<Result<Vec<_>>>()?;
                QuantileStack::from_grids(taus.to_vec(), &grids)
            }
            LossKind::Gaussian | LossKind::LogGaussian => {
                let log_space = self.kind == LossKind::LogGaussian;
                let (mu, lv) = (self.channel(0), self.channel(1));
                let mut data = Vec::with_capacity(taus.len() * mu.len());
                for &t in taus {
                    if !(t > 0.0 && t < 1.0) {
                        return Err(Error::Domain(format!("quantile {t} outside (0, 1)")));
                    }
                    let z = normal_quantile(t);
                    data.extend(mu.iter().zip(lv).map(|(&m, &v)| {
                        let sigma = (0.5 * (v as f64).clamp(LOG_VAR_MIN, LOG_VAR_MAX)).exp();
                        let q = m as f64 + z * sigma;
                        (if log_space { q.exp() } else { q }) as f32
                    }));
                }
                QuantileStack::new(taus.to_vec(), self.height, self.width, data)
            }
        }
    }

    /// The standard 11-level stack used by evaluation.
    pub fn standard_stack(&self) -> Result<QuantileStack> {
        self.quantile_stack(&STANDARD_QUANTILES)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub index: usize,
    pub name: String,
    /// Quantile level; absent for `mu` / `log_var` channels.
    pub tau: Option<f64>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionManifest {
    pub loss_kind: LossKind,
    pub height: usize,
    pub width: usize,
    pub channels: Vec<ChannelEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one single-channel QRG1 raster per output channel and a manifest.
pub fn predict_to_files(
    model: &SurrogateModel,
    input: &Raster,
    out_dir: impl AsRef<Path>,
) -> Result<PredictionManifest> {
    let out = ModelOutput::predict(model, input)?;
    write_output(&out, out_dir)
}

pub fn write_output(out: &ModelOutput, out_dir: impl AsRef<Path>) -> Result<PredictionManifest> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names = out.kind.channel_names();
    let mut channels = Vec::with_capacity(names.len());
    for (index, name) in names.into_iter().enumerate() {
        let file = format!("channel_{index:02}.qrg");
        let r = Raster::new(1, out.height, out.width, out.channel(index).to_vec())?;
        save_raster(&r, dir.join(&file))?;
        channels.push(ChannelEntry {
            index,
            name,
            tau: (out.kind == LossKind::Quantile).then(|| STANDARD_QUANTILES[index]),
            file,
        });
    }
    let manifest = PredictionManifest {
        loss_kind: out.kind,
        height: out.height,
        width: out.width,
        channels,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_output(dir: impl AsRef<Path>) -> Result<ModelOutput> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: PredictionManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.channels.len() != m.loss_kind.output_channels() {
        return Err(Error::Format(format!("manifest lists {} channels", m.channels.len())));
    }
    let mut data = Vec::with_capacity(m.channels.len() * m.height * m.width);
    for (i, c) in m.channels.iter().enumerate() {
        if c.index != i {
            return Err(Error::Format("manifest channels out of order".into()));
        }
        let r = load_raster(dir.join(&c.file))?;
        if r.channels() != 1 || r.height() != m.height || r.width() != m.width {
            return Err(Error::Validation(format!(
                "{} does not match the manifest shape",
                c.file
            )));
        }
        data.extend_from_slice(r.data());
    }
    Ok(ModelOutput {
        kind: m.loss_kind,
        height: m.height,
        width: m.width,
        data,
    })
}
