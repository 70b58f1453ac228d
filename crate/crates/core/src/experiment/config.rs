//! Flat `key = value` experiment configuration.
//!
//! Keys are namespaced as `section.key`; `#` starts a comment. Unknown or
//! repeated keys are rejected. Every key is optional and falls back to the
//! defaults listed by [`ExperimentConfig::to_text`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{SuspectRule, DEFAULT_BORDER_THRESHOLD, DEFAULT_SLOPE_BIN_EDGES};
use crate::error::{Error, Result};
use crate::losses::Shift;
use crate::metrics::EvalOptions;
use crate::model::{LossKind, TrainerConfig};
use crate::synth::{NoiseModel, OffsetMode, SceneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub train_scenes: usize,
    pub eval_scenes: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            train_scenes: 10,
            eval_scenes: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Interval level of the border and slope summaries.
    pub alpha: f64,
    pub border_threshold: f64,
    pub slope_window: usize,
    pub slope_bin_edges: Vec<f64>,
    pub suspect: SuspectRule,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            alpha: 0.8,
            border_threshold: DEFAULT_BORDER_THRESHOLD,
            slope_window: 3,
            slope_bin_edges: DEFAULT_SLOPE_BIN_EDGES.to_vec(),
            suspect: SuspectRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Root seed. Scene seeds, initialization and shuffling derive from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSpec,
    /// Template for every scene; its `seed` field is replaced per scene.
    pub scene: SceneSpec,
    pub trainer: TrainerConfig,
    pub eval: EvalOptions,
    pub analysis: AnalysisOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("run"),
            data: DataSpec::default(),
            scene: SceneSpec::default(),
            trainer: TrainerConfig::default(),
            eval: EvalOptions::default(),
            analysis: AnalysisOptions::default(),
        }
    }
}

/// Recognized keys in canonical order.
pub const CONFIG_KEYS: [&str; 45] = [
    "seed",
    "output.dir",
    "data.train_scenes",
    "data.eval_scenes",
    "scene.height",
    "scene.width",
    "scene.channels",
    "scene.pixel_size",
    "scene.terrain_amplitude",
    "scene.terrain_length_scale",
    "scene.terrain_gain",
    "scene.forest_coverage",
    "scene.forest_mean_height",
    "scene.forest_edge_sharpness",
    "scene.forest_patch_scale",
    "scene.ground_height",
    "scene.noise",
    "scene.noise_sigma",
    "tracks.count",
    "tracks.spacing",
    "tracks.step",
    "tracks.margin",
    "tracks.offsets",
    "tracks.fixed_offsets",
    "train.loss_kind",
    "train.use_shift_loss",
    "train.learning_rate",
    "train.weight_decay",
    "train.grad_clip_norm",
    "train.batch_size",
    "train.epochs",
    "train.freeze_backbone",
    "train.warmup_fraction",
    "train.tile",
    "eval.alphas",
    "eval.bin_edges",
    "eval.correlation_alpha",
    "eval.monotonize",
    "analysis.alpha",
    "analysis.border_threshold",
    "analysis.slope_window",
    "analysis.slope_bin_edges",
    "analysis.suspect_pred_ceiling",
    "analysis.suspect_label_floor",
    "analysis.suspect_quantile",
];

fn value_error(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("`{key}`: cannot parse `{value}` as {what}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| value_error(key, value, what))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse_num(key, value, "a number")?;
    if !v.is_finite() {
        return Err(value_error(key, value, "a finite number"));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(value_error(key, value, "a boolean")),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

/// `d_row:d_col` pairs separated by commas, e.g. `1:0, 0:-1`.
fn parse_shifts(key: &str, value: &str) -> Result<Vec<Shift>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (r, c) = s
                .split_once(':')
                .ok_or_else(|| value_error(key, s, "a `d_row:d_col` pair"))?;
            Ok(Shift {
                d_row: parse_num(key, r.trim(), "an integer")?,
                d_col: parse_num(key, c.trim(), "an integer")?,
            })
        })
        .collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut offsets_mode: Option<String> = None;
        let mut fixed: Option<Vec<Shift>> = None;
        let mut noise_kind: Option<String> = None;
        let mut noise_sigma: Option<f64> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key `{key}` (line {})", n + 1)));
            }
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("key `{key}` set twice (line {})", n + 1)));
            }
            seen.push(key.to_string());
            let s = &mut cfg.scene;
            let t = &mut cfg.trainer;
            match key {
                "seed" => cfg.seed = parse_num(key, value, "an unsigned integer")?,
                "output.dir" => cfg.output_dir = PathBuf::from(value),
                "data.train_scenes" => cfg.data.train_scenes = parse_num(key, value, "a count")?,
                "data.eval_scenes" => cfg.data.eval_scenes = parse_num(key, value, "a count")?,
                "scene.height" => s.height = parse_num(key, value, "a size")?,
                "scene.width" => s.width = parse_num(key, value, "a size")?,
                "scene.channels" => s.n_feature_channels = parse_num(key, value, "a count")?,
                "scene.pixel_size" => s.pixel_size = parse_f64(key, value)?,
                "scene.terrain_amplitude" => s.terrain.amplitude = parse_f64(key, value)?,
                "scene.terrain_length_scale" => s.terrain.length_scale = parse_f64(key, value)?,
                "scene.terrain_gain" => s.terrain_gain = parse_f64(key, value)?,
                "scene.forest_coverage" => s.forest.coverage = parse_f64(key, value)?,
                "scene.forest_mean_height" => s.forest.mean_height = parse_f64(key, value)?,
                "scene.forest_edge_sharpness" => s.forest.edge_sharpness = parse_f64(key, value)?,
                "scene.forest_patch_scale" => s.forest.patch_scale = parse_f64(key, value)?,
                "scene.ground_height" => s.forest.ground_height = parse_f64(key, value)?,
                "scene.noise" => noise_kind = Some(value.to_string()),
                "scene.noise_sigma" => noise_sigma = Some(parse_f64(key, value)?),
                "tracks.count" => s.tracks.count = parse_num(key, value, "a count")?,
                "tracks.spacing" => s.tracks.spacing = parse_num(key, value, "a count")?,
                "tracks.step" => s.tracks.step = parse_num(key, value, "a count")?,
                "tracks.margin" => s.tracks.margin = parse_num(key, value, "a count")?,
                "tracks.offsets" => offsets_mode = Some(value.to_string()),
                "tracks.fixed_offsets" => fixed = Some(parse_shifts(key, value)?),
                "train.loss_kind" => t.loss_kind = LossKind::parse(value)?,
                "train.use_shift_loss" => t.use_shift_loss = parse_bool(key, value)?,
                "train.learning_rate" => t.learning_rate = parse_f64(key, value)?,
                "train.weight_decay" => t.weight_decay = parse_f64(key, value)?,
                "train.grad_clip_norm" => t.grad_clip_norm = parse_f64(key, value)?,
                "train.batch_size" => t.batch_size = parse_num(key, value, "a count")?,
                "train.epochs" => t.epochs = parse_num(key, value, "a count")?,
                "train.freeze_backbone" => t.freeze_backbone = parse_bool(key, value)?,
                "train.warmup_fraction" => t.warmup_fraction = parse_f64(key, value)?,
                "train.tile" => t.tile = parse_num(key, value, "a size")?,
                "eval.alphas" => cfg.eval.alphas = parse_list(key, value)?,
                "eval.bin_edges" => cfg.eval.bin_edges = parse_list(key, value)?,
                "eval.correlation_alpha" => cfg.eval.correlation_alpha = parse_f64(key, value)?,
                "eval.monotonize" => cfg.eval.monotonize = parse_bool(key, value)?,
                "analysis.alpha" => cfg.analysis.alpha = parse_f64(key, value)?,
                "analysis.border_threshold" => cfg.analysis.border_threshold = parse_f64(key, value)?,
                "analysis.slope_window" => cfg.analysis.slope_window = parse_num(key, value, "a size")?,
                "analysis.slope_bin_edges" => cfg.analysis.slope_bin_edges = parse_list(key, value)?,
                "analysis.suspect_pred_ceiling" => cfg.analysis.suspect.pred_ceiling = parse_f64(key, value)?,
                "analysis.suspect_label_floor" => cfg.analysis.suspect.label_floor = parse_f64(key, value)?,
                "analysis.suspect_quantile" => cfg.analysis.suspect.quantile = parse_f64(key, value)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }

        if !seen.iter().any(|k| k == "seed") {
            log::info!("no `seed` in config, using {}", cfg.seed);
        }
        let sigma = noise_sigma.unwrap_or(match cfg.scene.noise {
            NoiseModel::Gaussian { sigma } | NoiseModel::LognormalFactor { sigma } => sigma,
            NoiseModel::None => 0.3,
        });
        if let Some(kind) = noise_kind {
            cfg.scene.noise = match kind.as_str() {
                "none" => NoiseModel::None,
                "gaussian" => NoiseModel::Gaussian { sigma },
                "lognormal_factor" => NoiseModel::LognormalFactor { sigma },
                other => return Err(value_error("scene.noise", other, "none, gaussian or lognormal_factor")),
            };
        } else if let NoiseModel::Gaussian { sigma: s } | NoiseModel::LognormalFactor { sigma: s } =
            &mut cfg.scene.noise
        {
            *s = sigma;
        }
        cfg.scene.tracks.offsets = match (offsets_mode.as_deref(), fixed) {
            (None | Some("none"), None) => OffsetMode::None,
            (Some("sampled"), None) => OffsetMode::Sampled,
            (Some("fixed") | None, Some(shifts)) => OffsetMode::Fixed(shifts),
            (Some("fixed"), None) => {
                return Err(Error::Config(
                    "`tracks.offsets = fixed` needs `tracks.fixed_offsets`".into(),
                ))
            }
            (Some(m), Some(_)) => {
                return Err(Error::Config(format!(
                    "`tracks.fixed_offsets` conflicts with `tracks.offsets = {m}`"
                )))
            }
            (Some(m), None) => return Err(value_error("tracks.offsets", m, "none, sampled or fixed")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Checks everything that can be checked without data. Scene problems
    /// are reported as configuration errors here.
    pub fn validate(&self) -> Result<()> {
        self.scene.validate().map_err(|e| match e {
            Error::Validation(m) => Error::Config(m),
            other => other,
        })?;
        self.trainer.validate()?;
        if self.data.train_scenes == 0 || self.data.eval_scenes == 0 {
            return Err(Error::Config(
                "data.train_scenes and data.eval_scenes must be at least 1".into(),
            ));
        }
        if self.eval.alphas.is_empty() {
            return Err(Error::Config("eval.alphas is empty".into()));
        }
        for &a in self
            .eval
            .alphas
            .iter()
            .chain([&self.eval.correlation_alpha, &self.analysis.alpha])
        {
            crate::metrics::interval_taus(a).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.eval.bin_edges.is_empty() || self.eval.bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("eval.bin_edges must be strictly increasing".into()));
        }
        if self.analysis.slope_bin_edges.is_empty() || self.analysis.slope_bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "analysis.slope_bin_edges must be strictly increasing".into(),
            ));
        }
        if self.analysis.slope_window == 0 {
            return Err(Error::Config("analysis.slope_window must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let t = &self.trainer;
        let a = &self.analysis;
        let (noise, sigma) = match s.noise {
            NoiseModel::None => ("none", None),
            NoiseModel::Gaussian { sigma } => ("gaussian", Some(sigma)),
            NoiseModel::LognormalFactor { sigma } => ("lognormal_factor", Some(sigma)),
        };
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("seed", self.seed.to_string());
        put("output.dir", self.output_dir.display().to_string());
        put("data.train_scenes", self.data.train_scenes.to_string());
        put("data.eval_scenes", self.data.eval_scenes.to_string());
        put("scene.height", s.height.to_string());
        put("scene.width", s.width.to_string());
        put("scene.channels", s.n_feature_channels.to_string());
        put("scene.pixel_size", s.pixel_size.to_string());
        put("scene.terrain_amplitude", s.terrain.amplitude.to_string());
        put("scene.terrain_length_scale", s.terrain.length_scale.to_string());
        put("scene.terrain_gain", s.terrain_gain.to_string());
        put("scene.forest_coverage", s.forest.coverage.to_string());
        put("scene.forest_mean_height", s.forest.mean_height.to_string());
        put("scene.forest_edge_sharpness", s.forest.edge_sharpness.to_string());
        put("scene.forest_patch_scale", s.forest.patch_scale.to_string());
        put("scene.ground_height", s.forest.ground_height.to_string());
        put("scene.noise", noise.to_string());
        if let Some(sigma) = sigma {
            put("scene.noise_sigma", sigma.to_string());
        }
        put("tracks.count", s.tracks.count.to_string());
        put("tracks.spacing", s.tracks.spacing.to_string());
        put("tracks.step", s.tracks.step.to_string());
        put("tracks.margin", s.tracks.margin.to_string());
        match &s.tracks.offsets {
            OffsetMode::None => put("tracks.offsets", "none".into()),
            OffsetMode::Sampled => put("tracks.offsets", "sampled".into()),
            OffsetMode::Fixed(shifts) => {
                put("tracks.offsets", "fixed".into());
                let pairs: Vec<String> = shifts.iter().map(|s| format!("{}:{}", s.d_row, s.d_col)).collect();
                put("tracks.fixed_offsets", pairs.join(", "));
            }
        }
        put("train.loss_kind", t.loss_kind.to_string());
        put("train.use_shift_loss", t.use_shift_loss.to_string());
        put("train.learning_rate", t.learning_rate.to_string());
        put("train.weight_decay", t.weight_decay.to_string());
        put("train.grad_clip_norm", t.grad_clip_norm.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.epochs", t.epochs.to_string());
        put("train.freeze_backbone", t.freeze_backbone.to_string());
        put("train.warmup_fraction", t.warmup_fraction.to_string());
        put("train.tile", t.tile.to_string());
        put("eval.alphas", join(&self.eval.alphas));
        put("eval.bin_edges", join(&self.eval.bin_edges));
        put("eval.correlation_alpha", self.eval.correlation_alpha.to_string());
        put("eval.monotonize", self.eval.monotonize.to_string());
        put("analysis.alpha", a.alpha.to_string());
        put("analysis.border_threshold", a.border_threshold.to_string());
        put("analysis.slope_window", a.slope_window.to_string());
        put("analysis.slope_bin_edges", join(&a.slope_bin_edges));
        put("analysis.suspect_pred_ceiling", a.suspect.pred_ceiling.to_string());
        put("analysis.suspect_label_floor", a.suspect.label_floor.to_string());
        put("analysis.suspect_quantile", a.suspect.quantile.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(
            ExperimentConfig::parse_str("# nothing\n\n").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = ExperimentConfig::parse_str("seed = 3\nfoo = 1\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("`foo`"), "{err}");
    }

    #[test]
    fn repeated_and_malformed_lines_are_rejected() {
        for text in [
            "seed = 1\nseed = 2",
            "seed 1",
            "train.epochs = two",
            "scene.noise = cauchy",
        ] {
            assert!(
                matches!(ExperimentConfig::parse_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
        assert!(matches!(
            ExperimentConfig::parse_str("train.epochs = 0"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse_str("scene.forest_coverage = 1.5"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn values_and_comments_parse() {
        let cfg = ExperimentConfig::parse_str(
            "seed = 7  # root\n\
             train.loss_kind = gaussian\n\
             train.use_shift_loss = false\n\
             scene.noise = gaussian\n\
             scene.noise_sigma = 2\n\
             tracks.fixed_offsets = 1:0, 0:-1\n\
             eval.alphas = 0.5, 0.9\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.trainer.loss_kind, LossKind::Gaussian);
        assert!(!cfg.trainer.use_shift_loss);
        assert_eq!(cfg.scene.noise, NoiseModel::Gaussian { sigma: 2.0 });
        assert_eq!(
            cfg.scene.tracks.offsets,
            OffsetMode::Fixed(vec![Shift { d_row: 1, d_col: 0 }, Shift { d_row: 0, d_col: -1 }])
        );
        assert_eq!(cfg.eval.alphas, vec![0.5, 0.9]);
    }

    #[test]
    fn text_form_round_trips() {
        let mut cfg = ExperimentConfig::parse_str("tracks.offsets = sampled\nscene.noise_sigma = 0.25").unwrap();
        assert_eq!(cfg.scene.noise, NoiseModel::LognormalFactor { sigma: 0.25 });
        assert_eq!(ExperimentConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
        cfg.scene.tracks.offsets = OffsetMode::Fixed(vec![Shift { d_row: -1, d_col: 1 }]);
        cfg.scene.noise = NoiseModel::None;
        assert_eq!(ExperimentConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
    }
}
