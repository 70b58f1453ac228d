use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::labels::LabelPoint;
use crate::rng::CounterRng;
use crate::stack::STANDARD_QUANTILES;

fn labels(points: &[(usize, usize, f64)], h: usize, w: usize) -> SparseLabels {
    let pts = points.iter().map(|&(r, c, y)| LabelPoint::new(0, r, c, y)).collect();
    SparseLabels::new(pts, h, w).unwrap()
}

fn stack_fn(taus: &[f64], h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> QuantileStack {
    let grids: Vec<Grid> = (0..taus.len())
        .map(|n| Grid::from_fn(h, w, |r, c| f(n, r, c)))
        .collect();
    QuantileStack::from_grids(taus.to_vec(), &grids).unwrap()
}

/// Random monotone 11-channel stack and unique random labels.
fn random_scene(seed: u64, h: usize, w: usize, n_labels: usize) -> (QuantileStack, SparseLabels) {
    let mut rng = CounterRng::new(seed, 0);
    let mut data = vec![0f32; 11 * h * w];
    for p in 0..h * w {
        let mut v = rng.range(0.0, 30.0);
        for n in 0..11 {
            v += rng.range(0.0, 3.0);
            data[n * h * w + p] = v as f32;
        }
    }
    let stack = QuantileStack::new(STANDARD_QUANTILES.to_vec(), h, w, data).unwrap();
    let mut cells: Vec<usize> = (0..h * w).collect();
    rng.shuffle(&mut cells);
    let pts = cells[..n_labels]
        .iter()
        .map(|&p| LabelPoint::new(0, p / w, p % w, rng.range(0.5, 45.0)))
        .collect();
    (stack, SparseLabels::new(pts, h, w).unwrap())
}

#[test]
fn ec_examples() {
    let l = labels(&[(0, 0, 5.0), (1, 1, 10.0)], 2, 2);
    assert_eq!(empirical_coverage(&Grid::filled(2, 2, 50.0), &l).unwrap(), 1.0);
    let exact = Grid::from_fn(2, 2, |r, _| if r == 0 { 5.0 } else { 10.0 });
    assert_eq!(empirical_coverage(&exact, &l).unwrap(), 1.0);
    let preds = Grid::from_fn(2, 2, |r, _| if r == 0 { 6.0 } else { 9.0 });
    assert_eq!(empirical_coverage(&preds, &l).unwrap(), 0.5);
    assert!(matches!(
        empirical_coverage(&preds, &SparseLabels::empty(2, 2)),
        Err(Error::Domain(_))
    ));
    let (stack, l) = random_scene(3, 4, 4, 5);
    let table = LabelTable::from_scene(&stack, &l).unwrap();
    assert!(matches!(table.empirical_coverage(11), Err(Error::Config(_))));
}

#[test]
fn interval_channel_selection() {
    let s = stack_fn(&STANDARD_QUANTILES, 2, 2, |n, _, _| n as f32);
    let pi = make_interval(&s, 0.9).unwrap();
    assert_abs_diff_eq!(pi.tau_low, 0.05, epsilon = 1e-12);
    assert_abs_diff_eq!(pi.tau_high, 0.95, epsilon = 1e-12);
    assert_eq!((pi.lower.get(0, 0), pi.upper.get(0, 0)), (0.0, 10.0));
    let pi = make_interval(&s, 0.8).unwrap();
    assert_eq!((pi.lower.get(0, 0), pi.upper.get(0, 0)), (1.0, 9.0));
    assert!(matches!(make_interval(&s, 0.33), Err(Error::Config(_))));
}

#[test]
fn piw_examples() {
    let s = stack_fn(&[0.25, 0.75], 2, 2, |_, _, _| 4.0);
    assert!(piw(&make_interval(&s, 0.5).unwrap()).data().iter().all(|&v| v == 0.0));
    let s = stack_fn(&[0.25, 0.75], 2, 2, |n, _, _| if n == 0 { 2.0 } else { 6.0 });
    assert_eq!(piw(&make_interval(&s, 0.5).unwrap()).get(1, 1), 4.0);
    let (s, _) = random_scene(3, 6, 6, 1);
    assert!(piw(&make_interval(&s, 0.9).unwrap()).data().iter().all(|&v| v >= 0.0));
}

#[test]
fn mpiw_examples() {
    let l = labels(&[(0, 0, 5.0), (1, 1, 10.0)], 3, 3);
    let s = stack_fn(&[0.25, 0.75], 3, 3, |n, _, _| 3.0 * n as f32);
    assert_eq!(mpiw(&make_interval(&s, 0.5).unwrap(), &l).unwrap(), 3.0);
    let s = stack_fn(&[0.25, 0.75], 3, 3, |n, r, _| match (n, r) {
        (0, _) => 0.0,
        (_, 0) => 2.0,
        (_, 1) => 4.0,
        _ => 1000.0,
    });
    let pi = make_interval(&s, 0.5).unwrap();
    assert_eq!(mpiw(&pi, &l).unwrap(), 3.0);
    let mut wide = pi.clone();
    wide.upper.set(2, 2, 1e6);
    wide.upper.set(0, 2, 1e6);
    assert_eq!(mpiw(&wide, &l).unwrap(), 3.0);
}

#[test]
fn picp_examples() {
    let l = labels(&[(0, 0, 5.0), (0, 1, 10.0), (1, 0, 15.0)], 2, 2);
    let s = stack_fn(&[0.05, 0.95], 2, 2, |n, _, _| if n == 0 { 1.0 } else { 20.0 });
    assert_eq!(picp(&make_interval(&s, 0.9).unwrap(), &l).unwrap(), 1.0);
    let s = stack_fn(&[0.05, 0.95], 2, 2, |n, _, _| if n == 0 { 6.0 } else { 12.0 });
    assert_abs_diff_eq!(
        picp(&make_interval(&s, 0.9).unwrap(), &l).unwrap(),
        1.0 / 3.0,
        epsilon = 1e-15
    );
    let on_edge = labels(&[(0, 0, 12.0)], 2, 2);
    assert_eq!(picp(&make_interval(&s, 0.9).unwrap(), &on_edge).unwrap(), 1.0);
}

#[test]
fn single_bin_equals_global_ec() {
    let (s, l) = random_scene(11, 10, 10, 40);
    let t = LabelTable::from_scene(&s, &l).unwrap();
    for group in [GroupBy::Target, GroupBy::Prediction] {
        let bins = t.coverage_by_bin(&[0.0], group).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count, 40);
        for c in 0..11 {
            assert_eq!(bins[0].ec[c], t.empirical_coverage(c).unwrap());
        }
    }
}

#[test]
fn low_bin_fully_covered() {
    let l = labels(&[(0, 0, 1.0), (1, 1, 4.5)], 2, 2);
    let s = stack_fn(&[0.5], 2, 2, |_, _, _| 4.9);
    let bins = coverage_by_bin(&s, &l, &DEFAULT_BIN_EDGES, GroupBy::Target).unwrap();
    assert_eq!(bins.len(), 7);
    assert_eq!((bins[0].count, bins[0].ec.clone()), (2, vec![1.0]));
    assert!(bins[1..].iter().all(|b| b.count == 0 && b.ec.is_empty()));
    assert_eq!(bins[6].upper, None);
}

#[test]
fn bin_assignment_boundaries() {
    let b = Bins::new(&[0.0, 5.0, 10.0]).unwrap();
    assert_eq!(b.len(), 3);
    assert_eq!(b.index(-1.0), 0);
    assert_eq!(b.index(4.999), 0);
    assert_eq!(b.index(5.0), 1);
    assert_eq!(b.index(10.0), 2);
    assert_eq!(b.index(1e9), 2);
    assert!(Bins::new(&[0.0, 0.0]).is_err());
    assert!(Bins::new(&[]).is_err());
    assert_eq!(Bins::new(&[0.0, f64::INFINITY]).unwrap().len(), 1);
}

#[test]
fn asymmetry_examples() {
    let h = 4;
    let l = labels(&[(0, 0, 5.0), (1, 2, 7.0), (3, 3, 9.0)], h, h);
    let sym = stack_fn(&STANDARD_QUANTILES, h, h, |n, r, c| {
        let m = 10.0 + (r * h + c) as f32;
        m + (n as f32 - 5.0) * 0.5
    });
    let a = interval_asymmetry(&sym, &l, &[0.9]).unwrap();
    assert_eq!(a[0].median_to_lower, a[0].upper_to_median);

    let skew = stack_fn(&STANDARD_QUANTILES, h, h, |n, r, c| {
        let m = 10.0 + (r + c) as f32;
        let d = n as f32 - 5.0;
        if d < 0.0 {
            m + d * (1.0 + c as f32)
        } else {
            m + 3.0 * d * (1.0 + c as f32)
        }
    });
    let a = interval_asymmetry(&skew, &l, &[0.5, 0.7, 0.9]).unwrap();
    assert_abs_diff_eq!(
        a[2].upper_to_median.median / a[2].median_to_lower.median,
        3.0,
        epsilon = 1e-6
    );
    for w in a.windows(2) {
        assert!(w[1].median_to_lower.median >= w[0].median_to_lower.median);
        assert!(w[1].upper_to_median.median >= w[0].upper_to_median.median);
    }
    let no_median = stack_fn(&[0.05, 0.95], h, h, |n, _, _| n as f32);
    assert!(matches!(
        interval_asymmetry(&no_median, &l, &[0.9]),
        Err(Error::Config(_))
    ));
}

#[test]
fn correlation_examples() {
    let l = labels(&[(0, 0, 5.0), (0, 1, 7.0), (1, 0, 9.0), (1, 1, 2.0)], 2, 2);
    let prop = stack_fn(&STANDARD_QUANTILES, 2, 2, |n, r, c| {
        let m = 5.0 + 3.0 * (2 * r + c) as f32;
        m * (1.0 + 0.02 * (n as f32 - 5.0))
    });
    assert_abs_diff_eq!(
        pred_uncertainty_correlation(&prop, 0.8, &l).unwrap(),
        1.0,
        epsilon = 1e-6
    );
    let constant = stack_fn(&STANDARD_QUANTILES, 2, 2, |n, r, c| (2 * r + c) as f32 + n as f32);
    assert!(matches!(
        pred_uncertainty_correlation(&constant, 0.8, &l),
        Err(Error::Domain(_))
    ));
}

fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn correlation_matches_two_pass_oracle() {
    for seed in 0..20 {
        let (s, l) = random_scene(seed, 12, 12, 80);
        let t = LabelTable::from_scene(&s, &l).unwrap();
        let median: Vec<f64> = t.channel_values(5).collect();
        let widths = t.piw_values(0.8).unwrap();
        let got = pred_uncertainty_correlation(&s, 0.8, &l).unwrap();
        assert_abs_diff_eq!(got, two_pass_pearson(&median, &widths), epsilon = 1e-10);
    }
}

#[test]
fn pooled_tables_weight_by_label_count() {
    let (s1, l1) = random_scene(1, 8, 8, 10);
    let (s2, l2) = random_scene(2, 8, 8, 30);
    let mut t = LabelTable::new(STANDARD_QUANTILES.to_vec()).unwrap();
    t.push_scene(&s1, &l1).unwrap();
    t.push_scene(&s2, &l2).unwrap();
    let a = LabelTable::from_scene(&s1, &l1).unwrap();
    let b = LabelTable::from_scene(&s2, &l2).unwrap();
    let pooled = (10.0 * a.picp(0.8).unwrap() + 30.0 * b.picp(0.8).unwrap()) / 40.0;
    assert_abs_diff_eq!(t.picp(0.8).unwrap(), pooled, epsilon = 1e-12);
    let pooled = (10.0 * a.mpiw(0.8).unwrap() + 30.0 * b.mpiw(0.8).unwrap()) / 40.0;
    assert_abs_diff_eq!(t.mpiw(0.8).unwrap(), pooled, epsilon = 1e-9);
}

#[test]
fn push_scene_rejects_mismatch() {
    let (s, l) = random_scene(1, 8, 8, 10);
    let mut t = LabelTable::new(vec![0.25, 0.75]).unwrap();
    assert!(t.push_scene(&s, &l).is_err());
    let mut t = LabelTable::new(STANDARD_QUANTILES.to_vec()).unwrap();
    assert!(t.push_scene(&s, &SparseLabels::empty(4, 8)).is_err());
}

#[test]
fn monotonized_table_sorts_rows() {
    let t = LabelTable::from_rows(vec![0.25, 0.5, 0.75], vec![3.0], vec![5.0, 1.0, 3.0]).unwrap();
    assert_eq!(t.monotonized().row(0), &[1.0, 3.0, 5.0]);
}

#[test]
fn report_round_trips_and_lists_alphas() {
    let (s, l) = random_scene(5, 16, 16, 120);
    let t = LabelTable::from_scene(&s, &l).unwrap();
    let r = CalibrationReport::compute(&t, &EvalOptions::default()).unwrap();
    assert_eq!(r.intervals.len(), 5);
    for a in DEFAULT_ALPHAS {
        assert!(r.interval(a).is_some());
    }
    assert_eq!(CalibrationReport::from_json(&r.to_json()).unwrap(), r);
    let csv = r.to_csv();
    assert!(csv.starts_with("metric,level,bin_lower,bin_upper,count,value\n"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("picp,")).count(), 5);
    let missing = EvalOptions {
        alphas: vec![0.33],
        ..EvalOptions::default()
    };
    assert!(matches!(
        CalibrationReport::compute(&t, &missing),
        Err(Error::Config(_))
    ));
}

proptest! {
    #[test]
    fn bin_weighted_ec_reconstructs_global(seed in 0u64..10_000, n in 1usize..60) {
        let (s, l) = random_scene(seed, 9, 9, n);
        let t = LabelTable::from_scene(&s, &l).unwrap();
        for group in [GroupBy::Target, GroupBy::Prediction] {
            let bins = t.coverage_by_bin(&DEFAULT_BIN_EDGES, group).unwrap();
            prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), n);
            for c in 0..11 {
                let weighted: f64 = bins
                    .iter()
                    .filter(|b| b.count > 0)
                    .map(|b| b.count as f64 * b.ec[c])
                    .sum();
                let global = t.empirical_coverage(c).unwrap();
                prop_assert!((weighted - n as f64 * global).abs() <= 1e-12 * n as f64);
            }
        }
    }

    #[test]
    fn monotone_stack_intervals_nest(seed in 0u64..10_000) {
        let (s, l) = random_scene(seed, 9, 9, 30);
        let t = LabelTable::from_scene(&s, &l).unwrap();
        let alphas = DEFAULT_ALPHAS;
        for w in alphas.windows(2) {
            prop_assert!(t.picp(w[1]).unwrap() >= t.picp(w[0]).unwrap());
            prop_assert!(t.mpiw(w[1]).unwrap() >= t.mpiw(w[0]).unwrap());
        }
        for a in alphas {
            let (lo, hi) = t.interval_channels(a).unwrap();
            let bound = t.empirical_coverage(hi).unwrap() - t.empirical_coverage(lo).unwrap();
            prop_assert!(t.picp(a).unwrap() >= bound - 1e-15);
            let p = t.picp(a).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(t.mpiw(a).unwrap() >= 0.0);
        }
    }
}
