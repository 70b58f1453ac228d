//! Reproducible experiment runs: scene generation, training, prediction,
//! evaluation, analysis and cross-run comparison, all driven by one
//! [`ExperimentConfig`] and laid out in a run directory:
//!
//! ```text
//! <out>/config.txt                       canonical config of the run
//! <out>/artifacts.sha256                 SHA-256 of every other file
//! <out>/data/{train,eval}/scene_NNN/     features.qrg labels.csv meta.json
//!                                        true_height.qrg dem.qrg
//! <out>/model.qrm  <out>/loss_trace.csv
//! <out>/predictions/scene_NNN/           manifest.json channel_XX.qrg
//! <out>/eval/                            report.json report.csv interval_curve.csv
//!                                        ec_curve.svg scatter.svg
//! <out>/analysis/                        summary.json border.csv slope.csv
//!                                        border_piw.svg slope_piw.svg
//!                                        suspects/scene_NNN.csv
//! ```

mod config;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{AnalysisOptions, DataSpec, ExperimentConfig, CONFIG_KEYS};

use crate::analysis::{
    detect_suspect_labels, forest_border_mask, grouped_piw_summary_pooled, slope_from_dem, write_suspects,
    GroupSummary, Grouping, SuspectRule,
};
use crate::error::{Error, Result};
use crate::labels::{load_labels, save_labels, SparseLabels};
use crate::losses::{LOG_VAR_MAX, LOG_VAR_MIN};
use crate::metrics::{interval_taus, make_interval, CalibrationReport, LabelTable};
use crate::model::{
    load_checkpoint, save_checkpoint, train, write_output, write_trace, Architecture, LossKind, ModelOutput,
    SurrogateModel, TrainOutcome, TrainSample,
};
use crate::parallel::{map_ordered, thread_budget};
use crate::raster::{load_raster, save_raster, Grid, Raster};
use crate::rng::CounterRng;
use crate::stack::STANDARD_QUANTILES;
use crate::stats::normal_quantile;
use crate::synth::{generate_scene, sample_labels, SceneMeta, SceneSpec};

const STREAM_SCENES: u64 = 0x4000;

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.qrm";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const DIGEST_FILE: &str = "artifacts.sha256";

/// Column order of `comparison.csv`; the per-level pairs repeat for every
/// configured α.
pub const COMPARISON_COLUMNS: [&str; 5] = ["run", "loss_kind", "use_shift_loss", "label_count", "truth_mae"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// Seed of scene `index` in a split: draw `index` of the stream
/// `0x4000` (train) or `0x4001` (eval) under the root seed.
pub fn scene_seed(root: u64, split: Split, index: usize) -> u64 {
    let stream = STREAM_SCENES + (split == Split::Eval) as u64;
    CounterRng::new(root, stream).at(index as u64)
}

pub fn scene_spec(cfg: &ExperimentConfig, split: Split, index: usize) -> SceneSpec {
    SceneSpec {
        seed: scene_seed(cfg.seed, split, index),
        ..cfg.scene.clone()
    }
}

/// A scene as stored in a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub features: Raster,
    pub labels: SparseLabels,
    pub true_height: Grid,
    pub dem: Grid,
    pub meta: SceneMeta,
}

pub fn make_scene(spec: &SceneSpec) -> Result<SceneData> {
    let scene = generate_scene(spec)?;
    let sample = sample_labels(&scene.truth, spec)?;
    Ok(SceneData {
        meta: SceneMeta {
            spec: spec.clone(),
            label_count: sample.labels.len(),
            dropped_labels: sample.dropped,
            offsets: sample.offsets,
        },
        features: scene.features,
        labels: sample.labels,
        true_height: scene.truth.true_height,
        dem: scene.truth.dem,
    })
}

pub fn generate_split(cfg: &ExperimentConfig, split: Split) -> Result<Vec<SceneData>> {
    let n = match split {
        Split::Train => cfg.data.train_scenes,
        Split::Eval => cfg.data.eval_scenes,
    };
    let idx: Vec<usize> = (0..n).collect();
    map_ordered(&idx, thread_budget(), |&i| make_scene(&scene_spec(cfg, split, i)))
        .into_iter()
        .collect()
}

fn scene_dir(root: &Path, split: Split, index: usize) -> PathBuf {
    root.join("data").join(split.name()).join(format!("scene_{index:03}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

pub fn save_scene(scene: &SceneData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_raster(&scene.features, dir.join("features.qrg"))?;
    save_raster(&scene.true_height.to_raster(), dir.join("true_height.qrg"))?;
    save_raster(&scene.dem.to_raster(), dir.join("dem.qrg"))?;
    save_labels(&scene.labels, dir.join("labels.csv"))?;
    write_text(&dir.join("meta.json"), &to_json(&scene.meta))
}

pub fn load_scene(dir: &Path) -> Result<SceneData> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SceneMeta =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    let features = load_raster(dir.join("features.qrg"))?;
    let (h, w) = (features.height(), features.width());
    Ok(SceneData {
        labels: load_labels(dir.join("labels.csv"), h, w)?,
        true_height: Grid::from_raster(&load_raster(dir.join("true_height.qrg"))?)?,
        dem: Grid::from_raster(&load_raster(dir.join("dem.qrg"))?)?,
        features,
        meta,
    })
}

/// Loads a split from the run directory, generating and saving it first
/// when it is missing.
pub fn ensure_split(cfg: &ExperimentConfig, split: Split) -> Result<Vec<SceneData>> {
    let root = &cfg.output_dir;
    let n = match split {
        Split::Train => cfg.data.train_scenes,
        Split::Eval => cfg.data.eval_scenes,
    };
    if (0..n).all(|i| scene_dir(root, split, i).join("meta.json").is_file()) {
        let scenes = (0..n)
            .map(|i| load_scene(&scene_dir(root, split, i)))
            .collect::<Result<Vec<_>>>()?;
        for (i, s) in scenes.iter().enumerate() {
            if s.meta.spec != scene_spec(cfg, split, i) {
                return Err(Error::Config(format!(
                    "{} was generated from a different config; remove it or use another output directory",
                    scene_dir(root, split, i).display()
                )));
            }
        }
        return Ok(scenes);
    }
    log::info!("generating {} {} scenes", n, split.name());
    let scenes = generate_split(cfg, split)?;
    for (i, s) in scenes.iter().enumerate() {
        save_scene(s, &scene_dir(root, split, i))?;
    }
    Ok(scenes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub train_labels: usize,
    pub eval_labels: usize,
}

/// Stores the canonical config without `output.dir`, so that a run
/// directory can be moved and two runs of one config compare equal.
fn write_config(cfg: &ExperimentConfig) -> Result<()> {
    let text: String = cfg
        .to_text()
        .lines()
        .filter(|l| !l.starts_with("output.dir"))
        .map(|l| format!("{l}\n"))
        .collect();
    write_text(&cfg.output_dir.join(CONFIG_FILE), &text)
}

/// SHA-256 of every file under `dir` except [`DIGEST_FILE`], as
/// `(relative path with '/' separators, hex digest)` sorted by path.
pub fn digest_tree(dir: &Path) -> Result<Vec<(String, String)>> {
    use sha2::{Digest, Sha256};
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).expect("below root");
            let name = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if name == DIGEST_FILE {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            out.push((name, hex::encode(Sha256::digest(&bytes))));
        }
    }
    out.sort();
    Ok(out)
}

/// Writes `sha256  path` lines for the run directory and returns the
/// digest of that listing.
pub fn write_digest(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let listing: String = digest_tree(dir)?.iter().map(|(p, h)| format!("{h}  {p}\n")).collect();
    write_text(&dir.join(DIGEST_FILE), &listing)?;
    Ok(hex::encode(Sha256::digest(listing.as_bytes())))
}

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<SynthSummary> {
    cfg.validate()?;
    write_config(cfg)?;
    let mut summary = SynthSummary {
        train_scenes: 0,
        eval_scenes: 0,
        train_labels: 0,
        eval_labels: 0,
    };
    for split in [Split::Train, Split::Eval] {
        let scenes = generate_split(cfg, split)?;
        let labels: usize = scenes.iter().map(|s| s.labels.len()).sum();
        for (i, s) in scenes.iter().enumerate() {
            save_scene(s, &scene_dir(&cfg.output_dir, split, i))?;
        }
        match split {
            Split::Train => (summary.train_scenes, summary.train_labels) = (scenes.len(), labels),
            Split::Eval => (summary.eval_scenes, summary.eval_labels) = (scenes.len(), labels),
        }
    }
    Ok(summary)
}

/// Trains from the config's training scenes, in memory.
pub fn train_on(cfg: &ExperimentConfig, scenes: &[SceneData]) -> Result<TrainOutcome> {
    let c_in = scenes
        .first()
        .map(|s| s.features.channels())
        .ok_or_else(|| Error::Config("no training scenes".into()))?;
    let model = SurrogateModel::init(Architecture::new(c_in, cfg.trainer.loss_kind), cfg.seed)?;
    let dataset: Vec<TrainSample> = scenes
        .iter()
        .map(|s| TrainSample {
            input: s.features.clone(),
            labels: s.labels.clone(),
        })
        .collect();
    let trainer = crate::model::TrainerConfig {
        seed: cfg.seed,
        ..cfg.trainer.clone()
    };
    train(model, &dataset, &trainer)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    write_config(cfg)?;
    let scenes = ensure_split(cfg, Split::Train)?;
    let outcome = train_on(cfg, &scenes)?;
    save_checkpoint(&outcome.model, cfg.output_dir.join(CHECKPOINT_FILE))?;
    let mut csv = Vec::new();
    write_trace(&outcome.trace, &mut csv).expect("writing to memory");
    write_text(
        &cfg.output_dir.join(TRACE_FILE),
        &String::from_utf8(csv).expect("ASCII"),
    )?;
    Ok(outcome)
}

fn checkpoint_path(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE), Path::to_path_buf)
}

fn load_model(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<SurrogateModel> {
    let path = checkpoint_path(cfg, checkpoint);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "checkpoint {} not found; run `train` first",
            path.display()
        )));
    }
    load_checkpoint(path)
}

fn predict_all(model: &SurrogateModel, scenes: &[SceneData]) -> Result<Vec<ModelOutput>> {
    map_ordered(scenes, thread_budget(), |s| ModelOutput::predict(model, &s.features))
        .into_iter()
        .collect()
}

pub fn cmd_predict(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<usize> {
    cfg.validate()?;
    let model = load_model(cfg, checkpoint)?;
    let scenes = ensure_split(cfg, Split::Eval)?;
    let outputs = predict_all(&model, &scenes)?;
    for (i, out) in outputs.iter().enumerate() {
        write_output(out, cfg.output_dir.join("predictions").join(format!("scene_{i:03}")))?;
    }
    Ok(outputs.len())
}

/// Interval coverage and width at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub picp: f64,
    pub mpiw: f64,
}

/// PICP and MPIW over every interval level a model can produce: the
/// symmetric channel pairs of the quantile head, or `α = 0.01, ..., 0.99`
/// for the Gaussian heads.
pub fn interval_curve(outputs: &[ModelOutput], scenes: &[SceneData]) -> Result<Vec<CurvePoint>> {
    let Some(kind) = outputs.first().map(|o| o.kind) else {
        return Ok(Vec::new());
    };
    if kind == LossKind::Quantile {
        let table = label_table(outputs, scenes)?;
        let alphas = STANDARD_QUANTILES
            .iter()
            .filter(|&&t| t > 0.5)
            .map(|t| 2.0 * t - 1.0)
            .filter(|&a| table.interval_channels(a).is_ok());
        return alphas
            .map(|alpha| {
                Ok(CurvePoint {
                    alpha,
                    picp: table.picp(alpha)?,
                    mpiw: table.mpiw(alpha)?,
                })
            })
            .collect();
    }
    let mut rows = Vec::new();
    for (o, s) in outputs.iter().zip(scenes) {
        let (mu, lv) = (o.channel(0), o.channel(1));
        for p in s.labels.points() {
            let i = p.row * o.width + p.col;
            let sigma = (0.5 * (lv[i] as f64).clamp(LOG_VAR_MIN, LOG_VAR_MAX)).exp();
            rows.push((p.height, mu[i] as f64, sigma));
        }
    }
    if rows.is_empty() {
        return Err(Error::Domain("no labels to evaluate".into()));
    }
    let log_space = kind == LossKind::LogGaussian;
    Ok((1..100)
        .map(|k| {
            let alpha = k as f64 / 100.0;
            let (tl, th) = interval_taus(alpha).expect("alpha in (0, 1)");
            let (zl, zh) = (normal_quantile(tl), normal_quantile(th));
            let (mut inside, mut width) = (0usize, 0.0);
            for &(y, m, s) in &rows {
                let (mut lo, mut hi) = (m + zl * s, m + zh * s);
                if log_space {
                    (lo, hi) = (lo.exp(), hi.exp());
                }
                // Same single-precision rounding as the stored quantile rasters.
                let (lo, hi) = (lo as f32 as f64, hi as f32 as f64);
                width += hi - lo;
                inside += (lo <= y && y <= hi) as usize;
            }
            CurvePoint {
                alpha,
                picp: inside as f64 / rows.len() as f64,
                mpiw: width / rows.len() as f64,
            }
        })
        .collect())
}

/// MPIW of `curve` at coverage `picp`, linearly interpolated between the
/// neighbouring levels; `None` outside the curve's coverage range.
pub fn mpiw_at_picp(curve: &[CurvePoint], picp: f64) -> Option<f64> {
    let mut pts: Vec<CurvePoint> = curve.to_vec();
    pts.sort_by(|a, b| a.picp.total_cmp(&b.picp).then(a.mpiw.total_cmp(&b.mpiw)));
    let i = pts.iter().position(|p| p.picp >= picp)?;
    let hi = pts[i];
    if hi.picp == picp || i == 0 {
        return (hi.picp == picp).then_some(hi.mpiw);
    }
    let lo = pts[i - 1];
    let t = (picp - lo.picp) / (hi.picp - lo.picp);
    Some(lo.mpiw + t * (hi.mpiw - lo.mpiw))
}

fn label_table(outputs: &[ModelOutput], scenes: &[SceneData]) -> Result<LabelTable> {
    let mut table = LabelTable::new(STANDARD_QUANTILES.to_vec())?;
    for (o, s) in outputs.iter().zip(scenes) {
        table.push_scene(&o.standard_stack()?, &s.labels)?;
    }
    Ok(table)
}

fn truth_mae(outputs: &[ModelOutput], scenes: &[SceneData]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (o, s) in outputs.iter().zip(scenes) {
        for (p, t) in o.point_estimate().data().iter().zip(s.true_height.data()) {
            sum += (*p as f64 - *t as f64).abs();
            n += 1;
        }
    }
    sum / n.max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: CalibrationReport,
    pub curve: Vec<CurvePoint>,
}

/// Calibration report of a model over scenes; `truth_mae` is filled from
/// the scenes' true heights.
pub fn evaluate(model: &SurrogateModel, scenes: &[SceneData], cfg: &ExperimentConfig) -> Result<Evaluation> {
    let outputs = predict_all(model, scenes)?;
    evaluate_outputs(&outputs, scenes, cfg)
}

pub fn evaluate_outputs(outputs: &[ModelOutput], scenes: &[SceneData], cfg: &ExperimentConfig) -> Result<Evaluation> {
    let table = label_table(outputs, scenes)?;
    if table.is_empty() {
        return Err(Error::Domain("evaluation scenes hold no labels".into()));
    }
    let mut report = CalibrationReport::compute(&table, &cfg.eval)?;
    report.truth_mae = Some(truth_mae(outputs, scenes));
    Ok(Evaluation {
        report,
        curve: interval_curve(outputs, scenes)?,
    })
}

fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("alpha,picp,mpiw\n");
    for p in curve {
        s.push_str(&format!("{},{},{}\n", p.alpha, p.picp, p.mpiw));
    }
    s
}

fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

fn run_label(cfg: &ExperimentConfig) -> String {
    let shift = if cfg.trainer.use_shift_loss {
        "shift"
    } else {
        "no shift"
    };
    format!("{} ({shift})", cfg.trainer.loss_kind)
}

/// At most `limit` labels spread evenly over all scenes:
/// `(label, median prediction, PIW at α = 0.8 or the nearest level)`.
fn scatter_points(outputs: &[ModelOutput], scenes: &[SceneData], limit: usize) -> Result<Vec<(f64, f64, f64)>> {
    let mut all = Vec::new();
    for (o, s) in outputs.iter().zip(scenes) {
        let stack = o.quantile_stack(&[0.1, 0.5, 0.9])?;
        for p in s.labels.points() {
            let (lo, med, hi) = (
                stack.value(0, p.row, p.col) as f64,
                stack.value(1, p.row, p.col) as f64,
                stack.value(2, p.row, p.col) as f64,
            );
            all.push((p.height, med, hi - lo));
        }
    }
    let stride = all.len().div_ceil(limit.max(1)).max(1);
    Ok(all.into_iter().step_by(stride).collect())
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Evaluation> {
    cfg.validate()?;
    let model = load_model(cfg, checkpoint)?;
    let scenes = ensure_split(cfg, Split::Eval)?;
    let outputs = predict_all(&model, &scenes)?;
    let ev = evaluate_outputs(&outputs, &scenes, cfg)?;
    let dir = cfg.output_dir.join("eval");
    write_text(&dir.join("report.json"), &(ev.report.to_json() + "\n"))?;
    write_text(&dir.join("report.csv"), &ev.report.to_csv())?;
    write_text(&dir.join("interval_curve.csv"), &curve_csv(&ev.curve))?;
    let ec: Vec<(f64, f64)> = ev.report.ec_per_quantile.iter().map(|q| (q.tau, q.ec)).collect();
    write_text(&dir.join("ec_curve.svg"), &plot::ec_curve_svg(&[(run_label(cfg), ec)]))?;
    let pts = scatter_points(&outputs, &scenes, 2000)?;
    write_text(
        &dir.join("scatter.svg"),
        &plot::scatter_svg(
            "Label vs median prediction (colour: PIW at 0.8)",
            "label height (m)",
            "predicted median (m)",
            &pts,
        ),
    )?;
    Ok(ev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub alpha: f64,
    pub border_threshold: f64,
    pub slope_window: usize,
    pub slope_bin_edges: Vec<f64>,
    pub suspect_rule: SuspectRule,
    pub border: Vec<GroupSummary>,
    pub slope: Vec<GroupSummary>,
    pub suspect_count: usize,
}

/// Border and slope PIW summaries and suspect labels, pooled over scenes.
/// The border mask comes from each scene's point prediction.
pub fn analyze(
    outputs: &[ModelOutput],
    scenes: &[SceneData],
    opts: &AnalysisOptions,
) -> Result<(AnalysisSummary, Vec<Vec<crate::analysis::SuspectLabel>>)> {
    let mut intervals = Vec::with_capacity(outputs.len());
    let mut masks = Vec::with_capacity(outputs.len());
    let mut slopes = Vec::with_capacity(outputs.len());
    let mut suspects = Vec::with_capacity(outputs.len());
    for (o, s) in outputs.iter().zip(scenes) {
        let (tl, th) = interval_taus(opts.alpha)?;
        let stack = o.quantile_stack(&[tl, th])?;
        intervals.push(make_interval(&stack, opts.alpha)?);
        masks.push(forest_border_mask(&o.point_estimate(), opts.border_threshold));
        slopes.push(slope_from_dem(&s.dem, s.meta.spec.pixel_size, opts.slope_window)?);
        let q = o.quantile_stack(&[opts.suspect.quantile])?;
        suspects.push(detect_suspect_labels(&q, &s.labels, &opts.suspect)?);
    }
    let border_rows: Vec<_> = intervals
        .iter()
        .zip(scenes)
        .zip(&masks)
        .map(|((iv, s), m)| (iv, &s.labels, Grouping::Border(m)))
        .collect();
    let slope_rows: Vec<_> = intervals
        .iter()
        .zip(scenes)
        .zip(&slopes)
        .map(|((iv, s), sl)| {
            (
                iv,
                &s.labels,
                Grouping::Slope {
                    slope: sl,
                    edges: &opts.slope_bin_edges,
                },
            )
        })
        .collect();
    let summary = AnalysisSummary {
        alpha: opts.alpha,
        border_threshold: opts.border_threshold,
        slope_window: opts.slope_window,
        slope_bin_edges: opts.slope_bin_edges.clone(),
        suspect_rule: opts.suspect,
        border: grouped_piw_summary_pooled(&border_rows)?,
        slope: grouped_piw_summary_pooled(&slope_rows)?,
        suspect_count: suspects.iter().map(Vec::len).sum(),
    };
    Ok((summary, suspects))
}

fn groups_csv(groups: &[GroupSummary]) -> String {
    let mut s = String::from("group,lower,upper,count,fraction,piw_min,piw_q1,piw_median,piw_q3,piw_max,picp\n");
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for g in groups {
        s.push_str(&format!(
            "\"{}\",{},{},{},{},{},{},{},{},{},{}\n",
            g.group,
            opt(g.lower),
            opt(g.upper),
            g.count,
            g.fraction,
            g.piw.min,
            g.piw.q1,
            g.piw.median,
            g.piw.q3,
            g.piw.max,
            g.picp
        ));
    }
    s
}

pub fn cmd_analyze(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<AnalysisSummary> {
    cfg.validate()?;
    let model = load_model(cfg, checkpoint)?;
    let scenes = ensure_split(cfg, Split::Eval)?;
    let outputs = predict_all(&model, &scenes)?;
    let (summary, suspects) = analyze(&outputs, &scenes, &cfg.analysis)?;
    let dir = cfg.output_dir.join("analysis");
    write_text(&dir.join("summary.json"), &to_json(&summary))?;
    write_text(&dir.join("border.csv"), &groups_csv(&summary.border))?;
    write_text(&dir.join("slope.csv"), &groups_csv(&summary.slope))?;
    let boxes = |g: &[GroupSummary]| g.iter().map(|g| (g.group.clone(), g.piw)).collect::<Vec<_>>();
    let alpha = summary.alpha;
    write_text(
        &dir.join("border_piw.svg"),
        &plot::boxplot_svg(
            &format!("PIW at {alpha} by forest border"),
            "PIW (m)",
            &boxes(&summary.border),
        ),
    )?;
    write_text(
        &dir.join("slope_piw.svg"),
        &plot::boxplot_svg(
            &format!("PIW at {alpha} by slope (deg)"),
            "PIW (m)",
            &boxes(&summary.slope),
        ),
    )?;
    let sdir = dir.join("suspects");
    fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
    for (i, s) in suspects.iter().enumerate() {
        let mut buf = Vec::new();
        write_suspects(s, &cfg.analysis.suspect, &mut buf)?;
        write_text(
            &sdir.join(format!("scene_{i:03}.csv")),
            &String::from_utf8(buf).expect("UTF-8"),
        )?;
    }
    Ok(summary)
}

/// Synth (if needed), train, predict, evaluate and analyze in one go.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Evaluation> {
    cmd_train(cfg)?;
    cmd_predict(cfg, None)?;
    cmd_analyze(cfg, None)?;
    cmd_eval(cfg, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub loss_kind: LossKind,
    pub use_shift_loss: bool,
    pub label_count: usize,
    pub truth_mae: Option<f64>,
    /// `(alpha, mpiw, picp)` for every configured level.
    pub intervals: Vec<(f64, f64, f64)>,
}

/// Interval width of `other` at the coverage the `reference` run reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedRow {
    pub reference: String,
    pub other: String,
    pub alpha: f64,
    pub picp: f64,
    pub reference_mpiw: f64,
    pub other_mpiw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub alphas: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
    pub matched: Vec<MatchedRow>,
}

impl Comparison {
    /// Fixed columns [`COMPARISON_COLUMNS`], then `mpiw_<α>,picp_<α>` pairs.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = COMPARISON_COLUMNS.iter().map(|s| s.to_string()).collect();
        for a in &self.alphas {
            header.push(format!("mpiw_{a}"));
            header.push(format!("picp_{a}"));
        }
        let mut s = header.join(",") + "\n";
        for r in &self.rows {
            let mut cells = vec![
                r.run.clone(),
                r.loss_kind.to_string(),
                r.use_shift_loss.to_string(),
                r.label_count.to_string(),
                r.truth_mae.map_or_else(String::new, |v| v.to_string()),
            ];
            for &(_, mpiw, picp) in &r.intervals {
                cells.push(mpiw.to_string());
                cells.push(picp.to_string());
            }
            s.push_str(&(cells.join(",") + "\n"));
        }
        s
    }

    pub fn matched_csv(&self) -> String {
        let mut s = String::from("reference,other,alpha,picp,reference_mpiw,other_mpiw\n");
        for m in &self.matched {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.reference,
                m.other,
                m.alpha,
                m.picp,
                m.reference_mpiw,
                m.other_mpiw.map_or_else(String::new, |v| v.to_string())
            ));
        }
        s
    }

    /// Markdown table with one row per run and `MPIW / PICP` per level.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| run | loss | shift |");
        for a in &self.alphas {
            s.push_str(&format!(" MPIW / PICP @ {a} |"));
        }
        s.push_str("\n|---|---|---|");
        s.push_str(&"---|".repeat(self.alphas.len()));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("| {} | {} | {} |", r.run, r.loss_kind, r.use_shift_loss));
            for &(_, mpiw, picp) in &r.intervals {
                s.push_str(&format!(" {mpiw:.2} / {:.1}% |", 100.0 * picp));
            }
            s.push('\n');
        }
        s
    }
}

/// One row per run directory (in the given order) from its stored config
/// and evaluation. Every run must report the same α levels.
pub fn compare_runs(run_dirs: &[PathBuf]) -> Result<Comparison> {
    if run_dirs.is_empty() {
        return Err(Error::Config("no run directories given".into()));
    }
    let mut alphas: Option<Vec<f64>> = None;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for dir in run_dirs {
        let report_path = dir.join("eval").join("report.json");
        if !dir.is_dir() || !report_path.is_file() {
            return Err(Error::Config(format!(
                "{} is not an evaluated run directory",
                dir.display()
            )));
        }
        let cfg = ExperimentConfig::load(dir.join(CONFIG_FILE))?;
        let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        let report = CalibrationReport::from_json(&text)?;
        let these: Vec<f64> = report.intervals.iter().map(|m| m.alpha).collect();
        match &alphas {
            None => alphas = Some(these),
            Some(a) if *a == these => {}
            Some(_) => return Err(Error::Config(format!("{} reports different α levels", dir.display()))),
        }
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        rows.push(ComparisonRow {
            run: name,
            loss_kind: cfg.trainer.loss_kind,
            use_shift_loss: cfg.trainer.use_shift_loss,
            label_count: report.label_count,
            truth_mae: report.truth_mae,
            intervals: report.intervals.iter().map(|m| (m.alpha, m.mpiw, m.picp)).collect(),
        });
        curves.push(read_curve(&dir.join("eval").join("interval_curve.csv"))?);
    }
    let mut matched = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if r.loss_kind != LossKind::Quantile {
            continue;
        }
        for (j, o) in rows.iter().enumerate() {
            if j == i || o.loss_kind == LossKind::Quantile {
                continue;
            }
            for &(alpha, mpiw, picp) in &r.intervals {
                matched.push(MatchedRow {
                    reference: r.run.clone(),
                    other: o.run.clone(),
                    alpha,
                    picp,
                    reference_mpiw: mpiw,
                    other_mpiw: mpiw_at_picp(&curves[j], picp),
                });
            }
        }
    }
    Ok(Comparison {
        alphas: alphas.unwrap_or_default(),
        rows,
        matched,
    })
}

pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> Result<Comparison> {
    let cmp = compare_runs(run_dirs)?;
    write_text(&out.join("comparison.csv"), &cmp.to_csv())?;
    write_text(&out.join("matched_picp.csv"), &cmp.matched_csv())?;
    write_text(&out.join("comparison.md"), &cmp.to_markdown())?;
    let mut series = Vec::new();
    for (dir, row) in run_dirs.iter().zip(&cmp.rows) {
        let text = fs::read_to_string(dir.join("eval").join("report.json")).map_err(|e| Error::io(dir, e))?;
        let report = CalibrationReport::from_json(&text)?;
        series.push((
            row.run.clone(),
            report.ec_per_quantile.iter().map(|q| (q.tau, q.ec)).collect(),
        ));
    }
    write_text(&out.join("ec_curve.svg"), &plot::ec_curve_svg(&series))?;
    Ok(cmp)
}
