use super::gradcheck::{check_gradients, GradCheckOptions};
use super::*;
use crate::error::Error;
use crate::labels::{LabelPoint, SparseLabels};
use crate::raster::Raster;
use crate::rng::CounterRng;
use crate::stack::STANDARD_QUANTILES;
use crate::stats::normal_quantile;

fn random_input(c: usize, h: usize, w: usize, seed: u64) -> Raster {
    let mut rng = CounterRng::new(seed, 99);
    let data = (0..c * h * w).map(|_| rng.range(-1.0, 1.0) as f32).collect();
    Raster::new(c, h, w, data).unwrap()
}

fn unscaled(c_in: usize, kind: LossKind) -> Architecture {
    let n = kind.output_channels();
    Architecture {
        c_in,
        loss_kind: kind,
        output_scale: vec![1.0; n],
        output_offset: vec![0.0; n],
    }
}

fn track_labels(h: usize, w: usize, seed: u64) -> SparseLabels {
    let mut rng = CounterRng::new(seed, 5);
    let pts = (1..h - 1)
        .step_by(2)
        .flat_map(|r| [(0u32, 2usize), (1, w - 3)].map(|(t, c)| (t, r, c)))
        .map(|(t, r, c)| LabelPoint::new(t, r, c, rng.range(3.0, 25.0)))
        .collect();
    SparseLabels::new(pts, h, w).unwrap()
}

#[test]
fn zero_parameters_give_zero_outputs() {
    for kind in [LossKind::Quantile, LossKind::Gaussian] {
        let arch = unscaled(3, kind);
        let params = arch
            .tensor_shapes()
            .iter()
            .map(|s| vec![0.0; s.iter().product()])
            .collect();
        let m = SurrogateModel::from_params(arch, params).unwrap();
        let out = m.forward_raster(&random_input(3, 5, 6, 1)).unwrap();
        assert_eq!(out.len(), kind.output_channels() * 30);
        assert!(out.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn point_head_is_linear_in_its_parameters() {
    let mut m = SurrogateModel::<f32>::init(unscaled(3, LossKind::Quantile), 3).unwrap();
    let x = random_input(3, 6, 7, 2);
    let before = m.forward_raster(&x).unwrap();
    for t in [4, 5] {
        m.params[t].iter_mut().for_each(|v| *v *= 2.0);
    }
    let after = m.forward_raster(&x).unwrap();
    let hw = 42;
    let median = crate::stack::MEDIAN_CHANNEL;
    for p in 0..hw {
        assert_eq!(after[median * hw + p], 2.0 * before[median * hw + p]);
    }
    assert_eq!(after[..median * hw], before[..median * hw]);
}

#[test]
fn output_keeps_spatial_shape_and_checks_channels() {
    let m = SurrogateModel::<f32>::init(Architecture::new(5, LossKind::LogGaussian), 0).unwrap();
    let out = ModelOutput::predict(&m, &random_input(5, 9, 4, 0)).unwrap();
    assert_eq!((out.height, out.width, out.data.len()), (9, 4, 2 * 36));
    assert!(matches!(
        m.forward_raster(&random_input(4, 9, 4, 0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn gradients_match_finite_differences() {
    for kind in [LossKind::Quantile, LossKind::Gaussian, LossKind::LogGaussian] {
        for use_shift in [false, true] {
            let opts = GradCheckOptions {
                use_shift,
                seed: 11,
                ..GradCheckOptions::default()
            };
            let entries = check_gradients(kind, &opts).unwrap();
            assert_eq!(entries.len(), 60);
            for e in &entries {
                assert!(e.rel_err < 1e-3, "{kind} shift={use_shift}: {e:?}");
            }
        }
    }
}

#[test]
fn exact_predictions_take_the_underprediction_branch() {
    // Zero weights and an output offset equal to the label: every channel
    // predicts exactly y, so each pinball subgradient is -tau.
    let y = 12.5;
    let mut arch = unscaled(2, LossKind::Quantile);
    arch.output_offset = vec![y; 11];
    arch.output_scale = vec![4.0; 11];
    let params = arch
        .tensor_shapes()
        .iter()
        .map(|s| vec![0.0; s.iter().product()])
        .collect();
    let m = SurrogateModel::from_params(arch, params).unwrap();
    let labels = SparseLabels::new(vec![LabelPoint::new(0, 1, 1, y), LabelPoint::new(0, 2, 2, y)], 4, 4).unwrap();
    let x = vec![0.5f32; 2 * 16];
    let mut g = Grads::zeros(&m, false);
    let loss = m.loss_and_grad(&x, 4, 4, &labels, false, 1.0, None, &mut g).unwrap();
    assert_eq!(loss, 0.0);
    let point_bias = g.tensors[5].as_ref().unwrap()[0] as f64;
    assert!((point_bias - 4.0 * -0.5 / 11.0).abs() < 1e-6);
    let out_bias = g.tensors[11].as_ref().unwrap();
    let taus: Vec<f64> = STANDARD_QUANTILES.iter().copied().filter(|&t| t != 0.5).collect();
    for (b, t) in out_bias.iter().zip(taus) {
        assert!((*b as f64 - 4.0 * -t / 11.0).abs() < 1e-6);
    }
    assert!(g.tensors[..BACKBONE_TENSORS].iter().all(Option::is_none));
}

fn toy_dataset(n: usize, seed: u64) -> Vec<TrainSample> {
    (0..n)
        .map(|i| TrainSample {
            input: random_input(4, 12, 12, seed + i as u64),
            labels: track_labels(12, 12, seed + i as u64),
        })
        .collect()
}

fn small_config() -> TrainerConfig {
    TrainerConfig {
        epochs: 2,
        batch_size: 2,
        seed: 4,
        ..TrainerConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_freezes_backbone() {
    let data = toy_dataset(5, 1);
    let m0 = SurrogateModel::<f32>::init(Architecture::new(4, LossKind::Quantile), 9).unwrap();
    let a = train(m0.clone(), &data, &small_config()).unwrap();
    let b = train(m0.clone(), &data, &small_config()).unwrap();
    assert_eq!(checkpoint_to_bytes(&a.model), checkpoint_to_bytes(&b.model));
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trace.len(), 2 * 3);
    for t in 0..BACKBONE_TENSORS {
        assert_eq!(a.model.params[t], m0.params[t]);
    }
    assert_ne!(a.model.params[BACKBONE_TENSORS], m0.params[BACKBONE_TENSORS]);

    let unfrozen = TrainerConfig {
        freeze_backbone: false,
        ..small_config()
    };
    let c = train(m0.clone(), &data, &unfrozen).unwrap();
    assert_ne!(c.model.params[0], m0.params[0]);
}

#[test]
fn thread_count_does_not_change_results() {
    let data = toy_dataset(6, 2);
    let m0 = SurrogateModel::<f32>::init(Architecture::new(4, LossKind::Gaussian), 1).unwrap();
    let cfg = TrainerConfig {
        loss_kind: LossKind::Gaussian,
        batch_size: 3,
        epochs: 1,
        ..TrainerConfig::default()
    };
    let single = train(m0.clone(), &data, &cfg).unwrap();
    let parallel = crate::parallel::map_ordered(&[0, 1], 2, |_| train(m0.clone(), &data, &cfg).unwrap().model);
    assert_eq!(parallel[0].params, single.model.params);
}

#[test]
fn trainer_rejects_bad_configs() {
    let data = toy_dataset(2, 3);
    let m0 = SurrogateModel::<f32>::init(Architecture::new(4, LossKind::Quantile), 0).unwrap();
    let zero_epochs = TrainerConfig {
        epochs: 0,
        ..TrainerConfig::default()
    };
    assert!(matches!(train(m0.clone(), &data, &zero_epochs), Err(Error::Config(_))));
    let wrong_kind = TrainerConfig {
        loss_kind: LossKind::Gaussian,
        ..TrainerConfig::default()
    };
    assert!(matches!(train(m0, &data, &wrong_kind), Err(Error::Config(_))));
}

#[test]
fn divergence_reports_step() {
    let m0 = SurrogateModel::<f32>::init(Architecture::new(4, LossKind::Gaussian), 0).unwrap();
    let labels = SparseLabels::new(vec![LabelPoint::new(0, 3, 3, 1e200)], 8, 8).unwrap();
    let data = vec![TrainSample {
        input: random_input(4, 8, 8, 0),
        labels,
    }];
    let cfg = TrainerConfig {
        loss_kind: LossKind::Gaussian,
        ..TrainerConfig::default()
    };
    assert!(matches!(train(m0, &data, &cfg), Err(Error::Training { step: 0, .. })));
}

#[test]
fn tiles_partition_labels_and_keep_context() {
    let data = vec![TrainSample {
        input: random_input(2, 20, 23, 7),
        labels: track_labels(20, 23, 7),
    }];
    let tiles = tile_samples(&data, 8).unwrap();
    let total: usize = tiles.iter().map(|t| t.labels.len()).sum();
    assert_eq!(total, data[0].labels.len());
    let mut heights: Vec<f64> = tiles
        .iter()
        .flat_map(|t| t.labels.points().iter().map(|p| p.height))
        .collect();
    let mut want: Vec<f64> = data[0].labels.points().iter().map(|p| p.height).collect();
    heights.sort_by(f64::total_cmp);
    want.sort_by(f64::total_cmp);
    assert_eq!(heights, want);
    assert!(tiles.iter().all(|t| t.input.height() <= 8 + 2 * CONTEXT_HALO));
    assert!(tiles.iter().any(|t| t.input.height() == 8 + 2 * CONTEXT_HALO));
}

#[test]
fn checkpoint_round_trip_and_errors() {
    for kind in [LossKind::Quantile, LossKind::Gaussian, LossKind::LogGaussian] {
        let m = SurrogateModel::<f32>::init(Architecture::new(6, kind), 2).unwrap();
        let bytes = checkpoint_to_bytes(&m);
        assert_eq!(&bytes[..4], b"QRM1");
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(checkpoint_to_bytes(&back), bytes);
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 4]),
            Err(Error::Corruption(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(checkpoint_from_bytes(&bad), Err(Error::Format(_))));
    }
}

#[test]
fn prediction_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = random_input(4, 7, 5, 3);
    let m = SurrogateModel::<f32>::init(Architecture::new(4, LossKind::Quantile), 5).unwrap();
    let manifest = predict_to_files(&m, &input, dir.path().join("q")).unwrap();
    let taus: Vec<f64> = manifest.channels.iter().map(|c| c.tau.unwrap()).collect();
    assert_eq!(taus, STANDARD_QUANTILES.to_vec());
    let back = load_output(dir.path().join("q")).unwrap();
    assert_eq!(back, ModelOutput::predict(&m, &input).unwrap());

    let g = SurrogateModel::<f32>::init(Architecture::new(4, LossKind::Gaussian), 5).unwrap();
    let manifest = predict_to_files(&g, &input, dir.path().join("g")).unwrap();
    let names: Vec<&str> = manifest.channels.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, vec!["mu", "log_var"]);
    assert!(manifest.channels.iter().all(|c| c.tau.is_none()));
}

#[test]
fn gaussian_outputs_convert_to_quantiles() {
    let out = ModelOutput {
        kind: LossKind::Gaussian,
        height: 1,
        width: 2,
        data: vec![10.0, 20.0, 0.0, 2.0f32.ln()],
    };
    let s = out.quantile_stack(&[0.05, 0.5, 0.95]).unwrap();
    let z = normal_quantile(0.95);
    assert_eq!(s.value(1, 0, 0), 10.0);
    assert!((s.value(2, 0, 0) as f64 - (10.0 + z)).abs() < 1e-5);
    assert!((s.value(0, 0, 1) as f64 - (20.0 - z * 2f64.sqrt())).abs() < 1e-5);

    let log = ModelOutput {
        kind: LossKind::LogGaussian,
        ..out
    };
    let s = log.quantile_stack(&[0.5, 0.9]).unwrap();
    assert!((s.value(0, 0, 0) as f64 - 10f64.exp()).abs() < 1e-2);
    assert!((log.point_estimate().get(0, 1) as f64 - 20f64.exp()).abs() / 20f64.exp() < 1e-6);
    let q = ModelOutput {
        kind: LossKind::Quantile,
        height: 1,
        width: 1,
        data: (0..11).map(|v| v as f32).collect(),
    };
    assert_eq!(q.point_estimate().get(0, 0), 5.0);
    assert!(matches!(q.quantile_stack(&[0.33]), Err(Error::Config(_))));
}
