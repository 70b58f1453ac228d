//! Dense rasters and the `QRG1` binary format.
//!
//! Layout of a `QRG1` file (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "QRG1"
//! 4       4           u32 channels C
//! 8       4           u32 height H
//! 12      4           u32 width W
//! 16      4           u32 timesteps T (metadata only)
//! 20      4*C*H*W     f32 values, channel-major, row-major within a channel
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const RASTER_MAGIC: &[u8; 4] = b"QRG1";
const HEADER_LEN: usize = 20;

/// A `C x H x W` single-precision grid.
///
/// The time axis of multi-temporal inputs is folded into `channels`;
/// `timesteps` is carried along as metadata only.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    channels: usize,
    height: usize,
    width: usize,
    timesteps: usize,
    data: Vec<f32>,
    nodata: f32,
}

impl Raster {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_timesteps(channels, height, width, 1, data)
    }

    pub fn with_timesteps(
        channels: usize,
        height: usize,
        width: usize,
        timesteps: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "raster dimensions must be positive, got C={channels} H={height} W={width}"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::Validation(format!(
                "raster data has {} values, expected C*H*W = {expected}",
                data.len()
            )));
        }
        Ok(Raster {
            channels,
            height,
            width,
            timesteps,
            data,
            nodata: 0.0,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn set_nodata(&mut self, value: f32) {
        self.nodata = value;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// Copy of channel `c` as a standalone grid.
    pub fn channel_grid(&self, c: usize) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }

    /// Crop rows `[row0, row0+h)` and cols `[col0, col0+w)` from every channel.
    pub fn crop(&self, row0: usize, col0: usize, h: usize, w: usize) -> Result<Raster> {
        if row0 + h > self.height || col0 + w > self.width {
            return Err(Error::Validation(format!(
                "crop {h}x{w} at ({row0},{col0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            let ch = self.channel(c);
            for r in row0..row0 + h {
                data.extend_from_slice(&ch[r * self.width + col0..r * self.width + col0 + w]);
            }
        }
        Raster::with_timesteps(self.channels, h, w, self.timesteps, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(RASTER_MAGIC);
        for v in [self.channels, self.height, self.width, self.timesteps] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("raster header truncated: {} bytes", bytes.len())));
        }
        if &bytes[0..4] != RASTER_MAGIC {
            return Err(Error::Format(format!(
                "bad raster magic {:?}, expected \"QRG1\"",
                &bytes[0..4]
            )));
        }
        let word = |i: usize| {
            let off = 4 + 4 * i;
            u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize
        };
        let (channels, height, width, timesteps) = (word(0), word(1), word(2), word(3));
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Format(format!(
                "raster header has zero dimension: C={channels} H={height} W={width}"
            )));
        }
        let count = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Format("raster dimensions overflow".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != count * 4 {
            return Err(Error::Corruption(format!(
                "raster header declares {count} values (C={channels} H={height} W={width}) \
                 but payload holds {} bytes",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Raster::with_timesteps(channels, height, width, timesteps, data)
    }
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Raster::from_bytes(&bytes)
}

pub fn save_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if raster.data.len() != raster.channels * raster.height * raster.width {
        return Err(Error::Validation("raster payload does not match C*H*W".into()));
    }
    fs::write(path, raster.to_bytes()).map_err(|e| Error::io(path, e))
}

/// A single-channel `H x W` grid of meters (predictions, PIW, DEM, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation("grid dimensions must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::Validation(format!(
                "grid data has {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        Ok(Grid { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Grid { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn transpose(&self) -> Grid {
        Grid::from_fn(self.width, self.height, |r, c| self.get(c, r))
    }

    pub fn to_raster(&self) -> Raster {
        Raster::new(1, self.height, self.width, self.data.clone()).expect("grid dimensions are valid")
    }

    pub fn from_raster(raster: &Raster) -> Result<Self> {
        if raster.channels() != 1 {
            return Err(Error::Validation(format!(
                "expected single-channel raster, got {} channels",
                raster.channels()
            )));
        }
        Ok(raster.channel_grid(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grid_round_trips() {
        let r = Raster::zeros(1, 2, 2).unwrap();
        let back = Raster::from_bytes(&r.to_bytes()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn short_payload_is_corruption() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(RASTER_MAGIC);
        for v in [2u32, 3, 4, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for _ in 0..20 {
            bytes.extend_from_slice(&1.0f32.to_le_bytes());
        }
        assert!(matches!(Raster::from_bytes(&bytes), Err(Error::Corruption(_))));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = Raster::zeros(1, 1, 1).unwrap().to_bytes();
        bytes[3] = b'2';
        assert!(matches!(Raster::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(Raster::from_bytes(b"QR"), Err(Error::Format(_))));
    }

    #[test]
    fn mismatched_payload_rejected_before_write() {
        assert!(matches!(Raster::new(2, 2, 2, vec![0.0; 7]), Err(Error::Validation(_))));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let r = Raster::with_timesteps(2, 1, 3, 12, vec![1.5; 6]).unwrap();
        let b = r.to_bytes();
        assert_eq!(&b[0..4], b"QRG1");
        assert_eq!(&b[4..8], &[2, 0, 0, 0]);
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(&b[12..16], &[3, 0, 0, 0]);
        assert_eq!(&b[16..20], &[12, 0, 0, 0]);
        assert_eq!(&b[20..24], &1.5f32.to_le_bytes());
        assert_eq!(b.len(), 20 + 24);
    }

    #[test]
    fn crop_extracts_window() {
        let r = Raster::new(2, 3, 3, (0..18).map(|v| v as f32).collect()).unwrap();
        let c = r.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[4.0, 5.0, 7.0, 8.0, 13.0, 14.0, 16.0, 17.0]);
        assert!(r.crop(2, 2, 2, 2).is_err());
    }
}
