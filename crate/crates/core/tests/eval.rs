mod common;

use common::{euclid_knn, rng};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use trimet::eval::{knn_accuracy, stratified_split, BenchmarkConfig, REPORT_HEADER};
use trimet::io::{generate_synthetic, iris, SyntheticSpec};
use trimet::{knn_classify, run_benchmark, Dataset, Error, MetricMatrix, MiningStrategy, Mode};

fn random_train(seed: u64, n: usize, d: usize, classes: usize, grid: bool) -> Dataset {
    let mut r = rng(seed);
    let pts = DMatrix::from_fn(n, d, |_, _| if grid { r.random_range(0..3) as f64 } else { r.random_range(-1.0..1.0) });
    Dataset::new(pts, (0..n).map(|i| i % classes).collect()).unwrap()
}

#[test]
fn identity_metric_matches_euclidean_oracle() {
    for (seed, grid) in [(1, false), (2, true), (3, true)] {
        let train = random_train(seed, 40, 3, 3, grid);
        let mut r = rng(seed + 100);
        let queries =
            DMatrix::from_fn(100, 3, |_, _| if grid { r.random_range(0..3) as f64 } else { r.random_range(-1.0..1.0) });
        for k in [1, 2, 3, 4, 7] {
            let got = knn_classify(&train, &queries, k, &MetricMatrix::identity(3)).unwrap();
            for (q, &label) in got.iter().enumerate() {
                let query: Vec<f64> = queries.row(q).iter().copied().collect();
                assert_eq!(label, euclid_knn(&train, &query, k), "seed {seed} k {k} query {q}");
            }
        }
    }
}

#[test]
fn exact_match_wins_with_k1() {
    let train = random_train(9, 20, 2, 2, false);
    let got = knn_classify(&train, train.points(), 1, &MetricMatrix::identity(2)).unwrap();
    assert_eq!(got, train.labels());
    assert!(knn_classify(&train, train.points(), 21, &MetricMatrix::identity(2)).is_err());
}

#[test]
fn annihilated_coordinate_is_ignored() {
    let train = random_train(4, 30, 2, 2, false);
    let m = MetricMatrix::diagonal(&[0.0, 1.0]).unwrap();
    let mut r = rng(5);
    let mut q = DMatrix::from_fn(50, 2, |_, _| r.random_range(-1.0..1.0));
    let a = knn_classify(&train, &q, 3, &m).unwrap();
    for i in 0..50 {
        q[(i, 0)] = r.random_range(-100.0..100.0);
    }
    assert_eq!(a, knn_classify(&train, &q, 3, &m).unwrap());
}

#[test]
fn separated_gaussians_are_easy() {
    let spec = SyntheticSpec { generator: "gaussians".into(), classes: 2, separation: 10.0, ..Default::default() };
    let ds = generate_synthetic(&spec, 3).unwrap();
    let split = stratified_split(&ds, "gaussians", 3).unwrap();
    let acc = knn_accuracy(
        &ds.subset(&split.train).unwrap(),
        &ds.subset(&split.test).unwrap(),
        1,
        &MetricMatrix::identity(ds.dim()),
    )
    .unwrap();
    assert!(acc >= 99.0, "accuracy {acc}");
}

#[test]
fn split_is_stratified_and_disjoint() {
    let ds = iris();
    let s = stratified_split(&ds, "iris", 0).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (102, 24, 24));
    let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
    all.sort();
    assert_eq!(all, (0..150).collect::<Vec<_>>());
    for c in 0..3 {
        assert_eq!(s.test.iter().filter(|&&i| ds.label(i) == c).count(), 8);
    }
    let tiny = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]], vec![0, 0, 1, 1]).unwrap();
    assert!(matches!(stratified_split(&tiny, "tiny", 0), Err(Error::TooSmallToSplit(name)) if name == "tiny"));
}

#[test]
fn benchmark_rows_and_determinism() {
    let cfg = BenchmarkConfig {
        strategies: vec![MiningStrategy::Kbh],
        modes: vec![Mode::NonHierarchical, Mode::Hierarchical],
        k_values: vec![1, 3],
        c_values: vec![1.0],
        seeds: vec![7],
        timing: false,
        ..Default::default()
    };
    cfg.solver.validate().unwrap();
    let data = vec![("iris".to_string(), iris())];
    let a = run_benchmark(&data, &cfg).unwrap();
    assert_eq!(a.rows.len(), 2);
    assert!(a.rows.iter().all(|r| (0.0..=100.0).contains(&r.accuracy_pct)));
    let b = run_benchmark(&data, &cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.trace_csv(), b.trace_csv());
    assert!(a.to_csv().starts_with(REPORT_HEADER));
    assert!(a.to_table().contains("k-BH"));

    let timed = run_benchmark(&data, &BenchmarkConfig { timing: true, ..cfg }).unwrap();
    assert!(timed.rows.iter().all(|r| r.train_time_s > 0.0));
    for (x, y) in timed.rows.iter().zip(&a.rows) {
        assert_eq!((x.k, x.c, x.accuracy_pct), (y.k, y.c, y.accuracy_pct));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn accuracy_is_invariant_to_relabeling(seed in 0u64..100_000, k in 1usize..6) {
        let train = random_train(seed, 30, 2, 3, seed % 2 == 0);
        let test = random_train(seed + 1, 20, 2, 3, seed % 2 == 0);
        let mut perm = [0usize, 1, 2];
        perm.shuffle(&mut rng(seed));
        let relabel = |ds: &Dataset| Dataset::new(ds.points().clone(), ds.labels().iter().map(|&l| perm[l] + 10).collect()).unwrap();
        let m = MetricMatrix::identity(2);
        let a = knn_accuracy(&train, &test, k, &m).unwrap();
        let b = knn_accuracy(&relabel(&train), &relabel(&test), k, &m).unwrap();
        prop_assert_eq!(a, b);
    }
}
