//! Closed-form quantile rasters of the generator are calibrated, which
//! validates the metrics before any model is involved.

use sparseq::losses::multi_quantile_loss;
use sparseq::metrics::LabelTable;
use sparseq::synth::{generate_scene, sample_labels, NoiseModel, SceneSpec};
use sparseq::STANDARD_QUANTILES;

fn dense(seed: u64, noise: NoiseModel, terrain_gain: f64) -> SceneSpec {
    let mut s = SceneSpec {
        seed,
        noise,
        terrain_gain,
        ..SceneSpec::default()
    };
    s.tracks.count = 21;
    s.tracks.spacing = 6;
    s.tracks.step = 1;
    s
}

fn oracle_table(noise: NoiseModel, terrain_gain: f64, min_labels: usize) -> LabelTable {
    let mut table = LabelTable::new(STANDARD_QUANTILES.to_vec()).unwrap();
    let mut seed = 0;
    while table.len() < min_labels {
        let spec = dense(seed, noise, terrain_gain);
        let scene = generate_scene(&spec).unwrap();
        let labels = sample_labels(&scene.truth, &spec).unwrap().labels;
        let stack = scene.truth.quantile_stack(&STANDARD_QUANTILES).unwrap();
        table.push_scene(&stack, &labels).unwrap();
        seed += 1;
    }
    table
}

#[test]
fn closed_form_quantiles_are_calibrated_at_50k_labels() {
    for (noise, gain) in [
        (NoiseModel::LognormalFactor { sigma: 0.3 }, 0.0),
        (NoiseModel::LognormalFactor { sigma: 0.2 }, 1.0),
        (NoiseModel::Gaussian { sigma: 3.0 }, 0.0),
    ] {
        let table = oracle_table(noise, gain, 50_000);
        assert!(table.len() >= 50_000);
        for (c, &tau) in STANDARD_QUANTILES.iter().enumerate() {
            let ec = table.empirical_coverage(c).unwrap();
            assert!((ec - tau).abs() <= 0.02, "{noise:?}: EC {ec} at tau {tau}");
        }
        for alpha in [0.5, 0.6, 0.7, 0.8, 0.9] {
            let picp = table.picp(alpha).unwrap();
            assert!((picp - alpha).abs() <= 0.02, "{noise:?}: PICP {picp} at alpha {alpha}");
        }
    }
}

#[test]
fn noiseless_truth_has_zero_multi_quantile_loss() {
    let spec = dense(4, NoiseModel::None, 0.0);
    let scene = generate_scene(&spec).unwrap();
    let labels = sample_labels(&scene.truth, &spec).unwrap().labels;
    let stack = scene.truth.quantile_stack(&STANDARD_QUANTILES).unwrap();
    assert_eq!(multi_quantile_loss(&STANDARD_QUANTILES, &labels, &stack).unwrap(), 0.0);
}
