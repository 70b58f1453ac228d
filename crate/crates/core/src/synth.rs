//! Synthetic scenes with known conditional label distributions, and
//! GEDI-like track sampling.
//!
//! Random streams (see [`crate::rng`]) are keyed by the scene seed and a
//! fixed stream id: terrain 1, forest 2, texture 3, distractor channel `k`
//! uses `16 + k`, per-track label noise `0x1000 + track_id` and per-track
//! offsets `0x2000 + track_id`.

use serde::{Deserialize, Serialize};

use crate::analysis::slope_from_dem;
use crate::error::{Error, Result};
use crate::labels::{LabelPoint, SparseLabels};
use crate::losses::{Shift, ShiftSearchSpace};
use crate::raster::{Grid, Raster};
use crate::rng::CounterRng;
use crate::stack::QuantileStack;
use crate::stats::{normal_cdf, normal_quantile, sorted_quantile};

/// Heights are divided by this before being used as feature values.
pub const FEATURE_HEIGHT_SCALE: f64 = 30.0;

const STREAM_TERRAIN: u64 = 1;
const STREAM_FOREST: u64 = 2;
const STREAM_TEXTURE: u64 = 3;
const STREAM_DISTRACTOR: u64 = 16;
const STREAM_NOISE: u64 = 0x1000;
const STREAM_OFFSET: u64 = 0x2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainSpec {
    /// Standard deviation of the elevation field, meters.
    pub amplitude: f64,
    /// Typical wavelength, pixels.
    pub length_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSpec {
    /// Fraction of pixels covered by forest, in `[0, 1]`.
    pub coverage: f64,
    pub mean_height: f64,
    /// Logistic steepness of patch edges; larger gives crisper borders.
    pub edge_sharpness: f64,
    /// Typical patch size, pixels.
    pub patch_scale: f64,
    /// Height of non-forest ground cover, meters; keeps labels positive.
    pub ground_height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    /// Additive normal noise, truncated to positive labels.
    Gaussian {
        sigma: f64,
    },
    /// Multiplicative factor `exp(sigma * z)`.
    LognormalFactor {
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "shifts", rename_all = "snake_case")]
pub enum OffsetMode {
    None,
    /// Uniform over the nine shifts, independently per track.
    Sampled,
    /// One shift per track; tracks beyond the list get `(0, 0)`.
    Fixed(Vec<Shift>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub count: usize,
    /// Columns between neighbouring tracks.
    pub spacing: usize,
    /// Rows between consecutive footprints.
    pub step: usize,
    /// Rows and columns kept free at the grid edge.
    pub margin: usize,
    pub offsets: OffsetMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub n_feature_channels: usize,
    pub pixel_size: f64,
    pub terrain: TerrainSpec,
    pub forest: ForestSpec,
    pub noise: NoiseModel,
    /// Noise scale grows as `sigma * (1 + terrain_gain * slope_deg / 10)`.
    pub terrain_gain: f64,
    pub tracks: TrackSpec,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 128,
            width: 128,
            n_feature_channels: 6,
            pixel_size: 10.0,
            terrain: TerrainSpec {
                amplitude: 30.0,
                length_scale: 32.0,
            },
            forest: ForestSpec {
                coverage: 0.5,
                mean_height: 20.0,
                edge_sharpness: 8.0,
                patch_scale: 16.0,
                ground_height: 1.0,
            },
            noise: NoiseModel::LognormalFactor { sigma: 0.3 },
            terrain_gain: 0.0,
            tracks: TrackSpec {
                count: 8,
                spacing: 6,
                step: 6,
                margin: 1,
                offsets: OffsetMode::None,
            },
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.height == 0 || self.width == 0 {
            return bad("scene must be at least 1x1".into());
        }
        if self.n_feature_channels < 4 {
            return bad(format!(
                "need at least 4 feature channels, got {}",
                self.n_feature_channels
            ));
        }
        if !(0.0..=1.0).contains(&self.forest.coverage) {
            return bad(format!("forest coverage {} outside [0, 1]", self.forest.coverage));
        }
        if !(self.forest.ground_height > 0.0) || !(self.forest.mean_height >= 0.0) {
            return bad("ground height must be positive and mean height non-negative".into());
        }
        if !(self.forest.edge_sharpness > 0.0) || !(self.forest.patch_scale > 0.0) {
            return bad("edge sharpness and patch scale must be positive".into());
        }
        if !(self.terrain.amplitude >= 0.0) || !(self.terrain.length_scale > 0.0) {
            return bad("terrain amplitude must be >= 0 and length scale > 0".into());
        }
        if !(self.pixel_size > 0.0) || !(self.terrain_gain >= 0.0) {
            return bad("pixel size must be positive and terrain gain non-negative".into());
        }
        match self.noise {
            NoiseModel::None => {}
            NoiseModel::Gaussian { sigma } | NoiseModel::LognormalFactor { sigma } => {
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return bad(format!("noise sigma {sigma} must be positive"));
                }
            }
        }
        if self.tracks.spacing == 0 || self.tracks.step == 0 {
            return bad("track spacing and step must be at least 1".into());
        }
        if let OffsetMode::Fixed(shifts) = &self.tracks.offsets {
            if shifts.iter().any(|s| !ShiftSearchSpace::contains(*s)) {
                return bad("fixed offsets must lie in {-1, 0, 1}^2".into());
            }
        }
        self.track_layout().map(|_| ())
    }

    /// Track columns and footprint rows before offsets are applied.
    fn track_layout(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let t = &self.tracks;
        if t.count == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        let span = (t.count - 1) * t.spacing + 1;
        if self.width < 2 * t.margin + span || self.height < 2 * t.margin + 1 {
            return Err(Error::Validation(format!(
                "{} tracks with spacing {} and margin {} do not fit a {}x{} grid",
                t.count, t.spacing, t.margin, self.height, self.width
            )));
        }
        let first = t.margin + (self.width - 2 * t.margin - span) / 2;
        let cols = (0..t.count).map(|i| first + i * t.spacing).collect();
        let rows = (t.margin..self.height - t.margin).step_by(t.step).collect();
        Ok((cols, rows))
    }
}

/// Oracle quantities of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub true_height: Grid,
    pub dem: Grid,
    pub forest_mask: Grid,
    /// Per-pixel noise scale after the terrain gain.
    pub noise_scale: Grid,
    pub noise: NoiseModel,
}

impl GroundTruth {
    /// Conditional `tau`-quantile of a label drawn at `(row, col)`.
    pub fn quantile_at(&self, row: usize, col: usize, tau: f64) -> f64 {
        let h = self.true_height.get(row, col) as f64;
        let s = self.noise_scale.get(row, col) as f64;
        match self.noise {
            NoiseModel::None => h,
            NoiseModel::Gaussian { .. } => {
                let p0 = normal_cdf(-h / s);
                h + s * normal_quantile(p0 + tau * (1.0 - p0))
            }
            NoiseModel::LognormalFactor { .. } => h * (s * normal_quantile(tau)).exp(),
        }
    }

    pub fn quantile_grid(&self, tau: f64) -> Grid {
        let (h, w) = (self.true_height.height(), self.true_height.width());
        Grid::from_fn(h, w, |r, c| self.quantile_at(r, c, tau) as f32)
    }

    pub fn quantile_stack(&self, taus: &[f64]) -> Result<QuantileStack> {
        let grids: Vec<Grid> = taus.iter().map(|&t| self.quantile_grid(t)).collect();
        QuantileStack::from_grids(taus.to_vec(), &grids)
    }

    fn draw(&self, row: usize, col: usize, rng: &mut CounterRng) -> f64 {
        let h = self.true_height.get(row, col) as f64;
        let s = self.noise_scale.get(row, col) as f64;
        match self.noise {
            NoiseModel::None => h,
            NoiseModel::Gaussian { .. } => loop {
                let y = h + s * rng.normal();
                if y > 0.0 {
                    break y;
                }
            },
            NoiseModel::LognormalFactor { .. } => h * (s * rng.normal()).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub features: Raster,
    pub truth: GroundTruth,
}

/// Sum of random plane waves, scaled to unit standard deviation.
fn cosine_field(rng: &mut CounterRng, h: usize, w: usize, waves: usize, scale: f64) -> Vec<f64> {
    let params: Vec<(f64, f64, f64, f64, f64)> = (0..waves)
        .map(|_| {
            let theta = rng.range(0.0, std::f64::consts::TAU);
            let lambda = scale * rng.range(0.6, 1.4);
            let phase = rng.range(0.0, std::f64::consts::TAU);
            let amp = rng.range(0.5, 1.5);
            let k = std::f64::consts::TAU / lambda;
            (k * theta.cos(), k * theta.sin(), phase, amp, 0.0)
        })
        .collect();
    let norm = (params.iter().map(|p| p.3 * p.3).sum::<f64>() / 2.0).sqrt();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let v: f64 = params
                .iter()
                .map(|&(kx, ky, phase, amp, _)| amp * (kx * c as f64 + ky * r as f64 + phase).cos())
                .sum();
            out.push(v / norm);
        }
    }
    out
}

fn box3(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (mut s, mut n) = (0.0, 0);
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    s += values[rr * w + cc];
                    n += 1;
                }
            }
            out[r * w + c] = s / n as f64;
        }
    }
    out
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let n = h * w;

    let mut rng = CounterRng::new(spec.seed, STREAM_TERRAIN);
    let terrain = cosine_field(&mut rng, h, w, 6, spec.terrain.length_scale);
    let dem: Vec<f64> = terrain.iter().map(|v| 200.0 + spec.terrain.amplitude * v).collect();
    let dem_grid = Grid::from_fn(h, w, |r, c| dem[r * w + c] as f32);

    let f = &spec.forest;
    let mut rng = CounterRng::new(spec.seed, STREAM_FOREST);
    let patches = cosine_field(&mut rng, h, w, 8, f.patch_scale);
    let mask: Vec<f64> = if f.coverage <= 0.0 {
        vec![0.0; n]
    } else if f.coverage >= 1.0 {
        vec![1.0; n]
    } else {
        let mut sorted = patches.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let thr = sorted_quantile(&sorted, 1.0 - f.coverage);
        patches
            .iter()
            .map(|&v| 1.0 / (1.0 + (-f.edge_sharpness * (v - thr)).exp()))
            .collect()
    };
    let mut rng = CounterRng::new(spec.seed, STREAM_TEXTURE);
    let texture = cosine_field(&mut rng, h, w, 6, 5.0);
    let height: Vec<f64> = (0..n)
        .map(|i| f.ground_height + mask[i] * f.mean_height * (1.0 + 0.2 * texture[i]).clamp(0.4, 1.6))
        .collect();

    let slope = slope_from_dem(&dem_grid, spec.pixel_size, 3)?;
    let sigma = match spec.noise {
        NoiseModel::None => 0.0,
        NoiseModel::Gaussian { sigma } | NoiseModel::LognormalFactor { sigma } => sigma,
    };
    let noise_scale = Grid::from_fn(h, w, |r, c| {
        (sigma * (1.0 + spec.terrain_gain * slope.get(r, c) as f64 / 10.0)) as f32
    });

    let smooth = box3(&height, h, w);
    let dem_mean = dem.iter().sum::<f64>() / n as f64;
    let dem_scale = spec.terrain.amplitude.max(1.0);
    let mut data = Vec::with_capacity(spec.n_feature_channels * n);
    data.extend(height.iter().map(|v| (v / FEATURE_HEIGHT_SCALE) as f32));
    data.extend(smooth.iter().map(|v| (v / FEATURE_HEIGHT_SCALE) as f32));
    data.extend(slope.data().iter().map(|v| v / 30.0));
    data.extend(dem.iter().map(|v| ((v - dem_mean) / dem_scale) as f32));
    for k in 4..spec.n_feature_channels {
        let mut rng = CounterRng::new(spec.seed, STREAM_DISTRACTOR + k as u64);
        data.extend(cosine_field(&mut rng, h, w, 4, 10.0).iter().map(|&v| v as f32));
    }
    let features = Raster::new(spec.n_feature_channels, h, w, data)?;

    Ok(Scene {
        features,
        truth: GroundTruth {
            true_height: Grid::from_fn(h, w, |r, c| height[r * w + c] as f32),
            dem: dem_grid,
            forest_mask: Grid::from_fn(h, w, |r, c| mask[r * w + c] as f32),
            noise_scale,
            noise: spec.noise,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackOffset {
    pub track_id: u32,
    pub d_row: i32,
    pub d_col: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSample {
    pub labels: SparseLabels,
    pub offsets: Vec<TrackOffset>,
    /// Footprints lost because the offset left the grid or hit an
    /// already-labeled pixel.
    pub dropped: usize,
}

/// Noisy labels along vertical tracks, each track displaced by its
/// geolocation offset.
///
/// Values are drawn at the true footprint and then recorded at the
/// displaced pixel. Footprints that leave the grid, or land on a pixel an
/// earlier track already labeled, are dropped.
pub fn sample_labels(truth: &GroundTruth, spec: &SceneSpec) -> Result<LabelSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    if truth.true_height.height() != h || truth.true_height.width() != w {
        return Err(Error::Validation("ground truth does not match the scene spec".into()));
    }
    let (cols, rows) = spec.track_layout()?;
    let mut taken = vec![false; h * w];
    let mut points = Vec::new();
    let mut offsets = Vec::new();
    let mut dropped = 0;
    for (i, &col) in cols.iter().enumerate() {
        let track_id = i as u32;
        let shift = match &spec.tracks.offsets {
            OffsetMode::None => Shift::ZERO,
            OffsetMode::Fixed(s) => s.get(i).copied().unwrap_or(Shift::ZERO),
            OffsetMode::Sampled => {
                let mut rng = CounterRng::new(spec.seed, STREAM_OFFSET + track_id as u64);
                ShiftSearchSpace::OFFSETS[rng.below(9) as usize]
            }
        };
        offsets.push(TrackOffset {
            track_id,
            d_row: shift.d_row,
            d_col: shift.d_col,
        });
        let mut rng = CounterRng::new(spec.seed, STREAM_NOISE + track_id as u64);
        for &row in &rows {
            let y = truth.draw(row, col, &mut rng);
            match shift.apply(row, col, h, w) {
                Some((r, c)) if !taken[r * w + c] => {
                    taken[r * w + c] = true;
                    points.push(LabelPoint::new(track_id, r, c, y));
                }
                _ => dropped += 1,
            }
        }
    }
    Ok(LabelSample {
        labels: SparseLabels::new(points, h, w)?,
        offsets,
        dropped,
    })
}

/// JSON sidecar written next to a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub spec: SceneSpec,
    pub label_count: usize,
    pub dropped_labels: usize,
    pub offsets: Vec<TrackOffset>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::partition_tracks;
    use crate::losses::{multi_quantile_loss, shifted_track_loss};
    use crate::stack::STANDARD_QUANTILES;

    fn small() -> SceneSpec {
        SceneSpec {
            height: 40,
            width: 48,
            seed: 17,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let a = generate_scene(&small()).unwrap();
        let b = generate_scene(&small()).unwrap();
        assert_eq!(a.features.to_bytes(), b.features.to_bytes());
        assert_eq!(a.truth, b.truth);
        let other = generate_scene(&SceneSpec { seed: 18, ..small() }).unwrap();
        assert_ne!(a.features.to_bytes(), other.features.to_bytes());
    }

    #[test]
    fn zero_coverage_leaves_ground_only() {
        let mut spec = small();
        spec.forest.coverage = 0.0;
        let s = generate_scene(&spec).unwrap();
        assert!(s
            .truth
            .true_height
            .data()
            .iter()
            .all(|&v| v == spec.forest.ground_height as f32));
    }

    #[test]
    fn coverage_fraction_is_respected() {
        let s = generate_scene(&small()).unwrap();
        let forest = s.truth.forest_mask.data().iter().filter(|&&m| m > 0.5).count();
        let frac = forest as f64 / (40.0 * 48.0);
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn lognormal_quantiles_have_closed_form() {
        let s = generate_scene(&small()).unwrap();
        let z = normal_quantile(0.9);
        for (r, c) in [(0, 0), (7, 30), (39, 47)] {
            let h = s.truth.true_height.get(r, c) as f64;
            assert_eq!(s.truth.noise_scale.get(r, c), 0.3f32);
            let want = h * (0.3f32 as f64 * z).exp();
            assert!((s.truth.quantile_at(r, c, 0.9) - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn truncated_gaussian_quantile_inverts_its_cdf() {
        let mut spec = small();
        spec.noise = NoiseModel::Gaussian { sigma: 4.0 };
        let s = generate_scene(&spec).unwrap();
        for tau in [0.05, 0.5, 0.95] {
            let (r, c) = (3, 3);
            let h = s.truth.true_height.get(r, c) as f64;
            let q = s.truth.quantile_at(r, c, tau);
            let p0 = normal_cdf(-h / 4.0);
            let cdf = (normal_cdf((q - h) / 4.0) - p0) / (1.0 - p0);
            assert!(q > 0.0 && (cdf - tau).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_unshifted_labels_equal_truth() {
        let mut spec = small();
        spec.noise = NoiseModel::None;
        let s = generate_scene(&spec).unwrap();
        let l = sample_labels(&s.truth, &spec).unwrap();
        assert!(l.labels.len() > 0 && l.dropped == 0);
        for p in l.labels.points() {
            assert_eq!(p.height, s.truth.true_height.get(p.row, p.col) as f64);
        }
        let stack = s.truth.quantile_stack(&STANDARD_QUANTILES).unwrap();
        assert_eq!(
            multi_quantile_loss(&STANDARD_QUANTILES, &l.labels, &stack).unwrap(),
            0.0
        );
    }

    #[test]
    fn fixed_offset_is_recovered_by_inverse_shift() {
        let mut spec = small();
        spec.noise = NoiseModel::None;
        spec.tracks.offsets = OffsetMode::Fixed(vec![Shift::new(1, 0)]);
        let s = generate_scene(&spec).unwrap();
        let l = sample_labels(&s.truth, &spec).unwrap();
        assert_eq!(
            l.offsets[0],
            TrackOffset {
                track_id: 0,
                d_row: 1,
                d_col: 0
            }
        );
        let stack = s.truth.quantile_stack(&[0.5]).unwrap();
        let tracks = partition_tracks(&l.labels);
        assert_eq!(shifted_track_loss(&[0.5], &tracks[0], &stack).unwrap(), 0.0);
    }

    #[test]
    fn label_count_accounts_for_drops() {
        let mut spec = small();
        spec.tracks.margin = 0;
        spec.tracks.spacing = 1;
        spec.tracks.count = 12;
        spec.tracks.offsets = OffsetMode::Sampled;
        let s = generate_scene(&spec).unwrap();
        let l = sample_labels(&s.truth, &spec).unwrap();
        let rows = (0..40).step_by(6).count();
        assert_eq!(l.labels.len() + l.dropped, 12 * rows);
        assert!(l.labels.points().iter().all(|p| p.height > 0.0));
    }

    #[test]
    fn sampled_offsets_cover_search_space() {
        let mut spec = small();
        spec.tracks.count = 40;
        spec.tracks.spacing = 1;
        spec.tracks.offsets = OffsetMode::Sampled;
        let l = sample_labels(&generate_scene(&spec).unwrap().truth, &spec).unwrap();
        let distinct: std::collections::HashSet<_> = l.offsets.iter().map(|o| (o.d_row, o.d_col)).collect();
        assert_eq!(distinct.len(), 9);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small();
        spec.forest.coverage = 1.5;
        assert!(generate_scene(&spec).is_err());
        let mut spec = small();
        spec.tracks.count = 20;
        assert!(generate_scene(&spec).is_err());
        let mut spec = small();
        spec.n_feature_channels = 3;
        assert!(generate_scene(&spec).is_err());
    }

    #[test]
    fn terrain_gain_scales_noise_with_slope() {
        let mut spec = small();
        spec.terrain_gain = 1.0;
        let s = generate_scene(&spec).unwrap();
        let slope = slope_from_dem(&s.truth.dem, 10.0, 3).unwrap();
        for (sl, sc) in slope.data().iter().zip(s.truth.noise_scale.data()) {
            assert!((sc - 0.3 * (1.0 + sl / 10.0)).abs() < 1e-5);
        }
    }
}
