//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library's mining, distance or kNN code: the
//! oracles recompute everything by exhaustive enumeration so they can catch
//! mistakes in the optimized paths.

#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trimet::{Dataset, MetricMatrix, MiningStrategy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `vᵀ M v` summed entry by entry in row-major order.
pub fn oracle_dist(x: &Dataset, i: usize, j: usize, m: &DMatrix<f64>) -> f64 {
    let d = x.dim();
    let v: Vec<f64> = (0..d).map(|f| x.points()[(i, f)] - x.points()[(j, f)]).collect();
    let mut s = 0.0;
    for r in 0..d {
        for c in 0..d {
            s += v[r] * m[(r, c)] * v[c];
        }
    }
    s.max(0.0)
}

/// `(distance, index)` of one candidate point.
pub type Candidate = (f64, usize);

/// Lexicographic `(distance, index)` order: the tie rule of every nearest
/// ordering.
fn before(a: Candidate, b: Candidate) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Candidates with fewer than `k` others preceding them, in rank order.
fn top_k(cands: &[Candidate], k: usize, precedes: impl Fn(Candidate, Candidate) -> bool) -> Vec<usize> {
    let mut ranked: Vec<(usize, usize)> = cands
        .iter()
        .filter_map(|&c| {
            let rank = cands.iter().filter(|&&o| precedes(o, c)).count();
            (rank < k).then_some((rank, c.1))
        })
        .collect();
    ranked.sort();
    ranked.into_iter().map(|(_, idx)| idx).collect()
}

pub fn oracle_nearest(cands: &[Candidate], k: usize) -> Vec<usize> {
    top_k(cands, k, before)
}

pub fn oracle_farthest(cands: &[Candidate], k: usize) -> Vec<usize> {
    top_k(cands, k, |a, b| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1))
}

/// Same-class and different-class `(distance, index)` candidates of anchor `i`.
pub fn candidates(x: &Dataset, i: usize, m: &DMatrix<f64>) -> (Vec<Candidate>, Vec<Candidate>) {
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for j in 0..x.n() {
        if j == i {
            continue;
        }
        let entry = (oracle_dist(x, i, j, m), j);
        if x.label(j) == x.label(i) {
            same.push(entry);
        } else {
            diff.push(entry);
        }
    }
    (same, diff)
}

/// Brute-force triplets of every deterministic strategy, as a sorted set.
pub fn oracle_mine(
    strategy: MiningStrategy,
    x: &Dataset,
    k: usize,
    m: &DMatrix<f64>,
) -> BTreeSet<(usize, usize, usize)> {
    let mut out = BTreeSet::new();
    for i in 0..x.n() {
        let (same, diff) = candidates(x, i, m);
        let sn = oracle_nearest(&same, k);
        let sf = oracle_farthest(&same, k);
        let dn = oracle_nearest(&diff, k);
        let df = oracle_farthest(&diff, k);
        let all: Vec<usize> = diff.iter().map(|c| c.1).collect();
        let pairs: Vec<(Vec<usize>, Vec<usize>)> = match strategy {
            MiningStrategy::Kba => vec![(sn, all)],
            MiningStrategy::Kbh => vec![(sf, dn)],
            MiningStrategy::Khpen => vec![(sf, df)],
            MiningStrategy::Kepen => vec![(sn, df)],
            MiningStrategy::Kephn => vec![(sn, dn)],
            MiningStrategy::Kbsh => sn
                .iter()
                .map(|&p| {
                    let dp = oracle_dist(x, i, p, m);
                    let harder: Vec<Candidate> = diff.iter().copied().filter(|c| c.0 > dp).collect();
                    (vec![p], oracle_nearest(&harder, k))
                })
                .collect(),
            MiningStrategy::Kns => panic!("negative sampling has no deterministic oracle"),
        };
        for (ps, ns) in pairs {
            for &p in &ps {
                for &n in &ns {
                    out.insert((i, p, n));
                }
            }
        }
    }
    out
}

/// A random mining instance: n ≤ 30, d ≤ 5, 2–4 classes of at least two
/// points. Half the instances use small integer coordinates with an integer
/// diagonal metric, so distances are exact and ties are frequent; the rest use
/// real coordinates under a random positive-definite metric.
pub fn random_instance(seed: u64) -> (Dataset, MetricMatrix) {
    let mut r = rng(seed);
    let classes = r.random_range(2..=4usize);
    let d = r.random_range(1..=5usize);
    let mut labels: Vec<usize> = (0..classes).flat_map(|c| [c, c]).collect();
    let extra = r.random_range(0..=(30 - labels.len()));
    labels.extend((0..extra).map(|_| r.random_range(0..classes)));
    let n = labels.len();
    let integer = r.random_bool(0.5);
    let pts =
        DMatrix::from_fn(n, d, |_, _| if integer { r.random_range(0..4) as f64 } else { r.random_range(-3.0..3.0) });
    let metric = if integer {
        let diag: Vec<f64> = (0..d).map(|_| r.random_range(1..=3) as f64).collect();
        MetricMatrix::diagonal(&diag).unwrap()
    } else {
        MetricMatrix::new(random_spd(&mut r, d, 0.1)).unwrap()
    };
    (Dataset::new(pts, labels).unwrap(), metric)
}

/// `A Aᵀ + floor·I` with `A` uniform on [-1, 1).
pub fn random_spd(r: &mut ChaCha8Rng, d: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(d, d) * floor;
    (&m + m.transpose()) * 0.5
}

pub fn random_symmetric(r: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

/// Plain Euclidean kNN: exhaustive sort with index tie-break, majority vote,
/// vote ties to the class whose first (nearest) occurrence comes earliest.
pub fn euclid_knn(train: &Dataset, query: &[f64], k: usize) -> usize {
    let mut order: Vec<(f64, usize)> = (0..train.n())
        .map(|j| {
            let s: f64 = query.iter().enumerate().map(|(f, q)| (q - train.points()[(j, f)]).powi(2)).sum();
            (s, j)
        })
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let top: Vec<usize> = order[..k].iter().map(|&(_, j)| train.label(j)).collect();
    let count = |c: usize| top.iter().filter(|&&l| l == c).count();
    let best = top.iter().map(|&c| count(c)).max().unwrap();
    *top.iter().find(|&&c| count(c) == best).unwrap()
}

/// Two uniform classes that differ only along feature 1; feature 0 is wide
/// noise.
pub fn two_class_axis_data(seed: u64, per_class: usize) -> Dataset {
    let mut r = rng(seed);
    let n = 2 * per_class;
    let labels: Vec<usize> = (0..n).map(|i| i / per_class).collect();
    let pts = DMatrix::from_fn(n, 2, |i, f| {
        let u: f64 = r.random_range(-1.0..1.0);
        if f == 0 {
            3.0 * u
        } else {
            u * 0.5 + if labels[i] == 0 { -1.0 } else { 1.0 }
        }
    });
    Dataset::new(pts, labels).unwrap()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
