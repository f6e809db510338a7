//! Triplet mining.
//!
//! Every strategy picks, per anchor, a set of same-class positives and for each
//! anchor-positive pair a set of different-class negatives:
//!
//! | tag   | positives            | negatives                                   |
//! |-------|----------------------|---------------------------------------------|
//! | KBA   | k nearest            | every different-class point                 |
//! | KBH   | k farthest           | k nearest                                   |
//! | KBSH  | k nearest            | k nearest that are farther than the positive|
//! | KHPEN | k farthest           | k farthest                                  |
//! | KEPEN | k nearest            | k farthest                                  |
//! | KEPHN | k nearest            | k nearest                                   |
//! | KNS   | k nearest            | k sampled by distance-weighted roulette     |
//!
//! Distances are squared Mahalanobis distances under the supplied metric. Ties
//! in every nearest/farthest ordering go to the smaller point index.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::metric::{mahalanobis_distance_sq, pairwise_distances_sq, MetricMatrix};
use crate::rng::{rng_from_seed, Rng};

/// Floor applied to the pairwise-distance density before inverting it.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MiningStrategy {
    #[serde(rename = "KBA")]
    Kba,
    #[serde(rename = "KBH")]
    Kbh,
    #[serde(rename = "KBSH")]
    Kbsh,
    #[serde(rename = "KHPEN")]
    Khpen,
    #[serde(rename = "KEPEN")]
    Kepen,
    #[serde(rename = "KEPHN")]
    Kephn,
    #[serde(rename = "KNS")]
    Kns,
}

impl MiningStrategy {
    pub const ALL: [MiningStrategy; 7] = [
        MiningStrategy::Kba,
        MiningStrategy::Kbh,
        MiningStrategy::Kbsh,
        MiningStrategy::Khpen,
        MiningStrategy::Kepen,
        MiningStrategy::Kephn,
        MiningStrategy::Kns,
    ];

    /// Short tag used in files: `KBA`, `KBH`, ...
    pub fn tag(self) -> &'static str {
        match self {
            MiningStrategy::Kba => "KBA",
            MiningStrategy::Kbh => "KBH",
            MiningStrategy::Kbsh => "KBSH",
            MiningStrategy::Khpen => "KHPEN",
            MiningStrategy::Kepen => "KEPEN",
            MiningStrategy::Kephn => "KEPHN",
            MiningStrategy::Kns => "KNS",
        }
    }

    /// Column heading for report tables: `k-BA`, `k-BH`, ...
    pub fn label(self) -> &'static str {
        match self {
            MiningStrategy::Kba => "k-BA",
            MiningStrategy::Kbh => "k-BH",
            MiningStrategy::Kbsh => "k-BSH",
            MiningStrategy::Khpen => "k-HPEN",
            MiningStrategy::Kepen => "k-EPEN",
            MiningStrategy::Kephn => "k-EPHN",
            MiningStrategy::Kns => "k-NS",
        }
    }
}

impl fmt::Display for MiningStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for MiningStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_ascii_uppercase();
        MiningStrategy::ALL.into_iter().find(|st| st.tag() == norm).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown strategy `{s}`; expected one of KBA, KBH, KBSH, KHPEN, KEPEN, KEPHN, KNS"
            ))
        })
    }
}

/// Negative-sampling parameters (KNS only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegSamplingConfig {
    /// Cap on the inverse density; every negative keeps a chance of selection.
    pub lambda: f64,
    pub seed: u64,
    /// Rescale candidate distances so the farthest sits at 2 (the unit-sphere
    /// diameter) before evaluating the density.
    pub normalize: bool,
}

impl Default for NegSamplingConfig {
    fn default() -> Self {
        Self { lambda: 1.4, seed: 0, normalize: false }
    }
}

impl NegSamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return invalid(format!("lambda must be positive, got {}", self.lambda));
        }
        Ok(())
    }
}

/// Per-anchor neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndicators {
    pub same_class_near: Vec<Vec<usize>>,
    pub same_class_far: Vec<Vec<usize>>,
    pub diff_class_near: Vec<Vec<usize>>,
    pub diff_class_far: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub strategy: MiningStrategy,
    pub k: usize,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Text form: a `# strategy=<tag> k=<k>` header, then one
    /// `anchor positive negative` line per triplet.
    pub fn to_text(&self) -> String {
        let mut out = format!("# strategy={} k={}\n", self.strategy.tag(), self.k);
        for t in &self.triplets {
            out.push_str(&format!("{} {} {}\n", t.anchor, t.positive, t.negative));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty triplet file".into() })?;
        let (strategy, k) = parse_header(header)?;
        let mut triplets = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: idx + 1, message };
            let fields: Vec<usize> = line
                .split_whitespace()
                .map(|f| f.parse::<usize>().map_err(|e| parse_err(format!("`{f}`: {e}"))))
                .collect::<Result<_>>()?;
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 indices, found {}", fields.len())));
            }
            triplets.push(Triplet { anchor: fields[0], positive: fields[1], negative: fields[2] });
        }
        Ok(Self { triplets, strategy, k })
    }
}

fn parse_header(header: &str) -> Result<(MiningStrategy, usize)> {
    let bad = |m: &str| Error::Parse { line: 1, message: m.to_string() };
    let body = header.trim().strip_prefix('#').ok_or_else(|| bad("missing `#` header"))?;
    let (mut strategy, mut k) = (None, None);
    for field in body.split_whitespace() {
        match field.split_once('=') {
            Some(("strategy", v)) => strategy = Some(v.parse::<MiningStrategy>().map_err(|e| bad(&e.to_string()))?),
            Some(("k", v)) => k = Some(v.parse::<usize>().map_err(|e| bad(&e.to_string()))?),
            _ => return Err(bad(&format!("unexpected header field `{field}`"))),
        }
    }
    Ok((strategy.ok_or_else(|| bad("header lacks strategy"))?, k.ok_or_else(|| bad("header lacks k"))?))
}

/// Distances plus per-anchor candidate orderings shared by all strategies.
struct Neighborhood {
    dist: DMatrix<f64>,
    /// Same-class indices by ascending distance.
    same_sorted: Vec<Vec<usize>>,
    /// Different-class indices by ascending distance.
    diff_sorted: Vec<Vec<usize>>,
}

impl Neighborhood {
    fn new(x: &Dataset, k: usize, metric: &MetricMatrix) -> Result<Self> {
        if k == 0 {
            return invalid("k must be at least 1");
        }
        if let Some((&label, _)) = x.class_counts().iter().find(|(_, &c)| c < 2) {
            return Err(Error::SingletonClass { label });
        }
        let dist = pairwise_distances_sq(x, metric)?;
        let labels = x.labels();
        let n = x.n();
        let (same_sorted, diff_sorted) = (0..n)
            .map(|i| {
                let by_distance = |a: &usize, b: &usize| dist[(i, *a)].total_cmp(&dist[(i, *b)]).then(a.cmp(b));
                let mut same: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
                let mut diff: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
                same.sort_by(by_distance);
                diff.sort_by(by_distance);
                (same, diff)
            })
            .unzip();
        Ok(Self { dist, same_sorted, diff_sorted })
    }

    fn indicators(&self, i: usize, k: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) {
        (
            nearest(&self.same_sorted[i], k),
            farthest(&self.same_sorted[i], &self.dist, i, k),
            nearest(&self.diff_sorted[i], k),
            farthest(&self.diff_sorted[i], &self.dist, i, k),
        )
    }
}

fn nearest(sorted: &[usize], k: usize) -> Vec<usize> {
    sorted.iter().take(k).copied().collect()
}

/// Descending distance, ties to the smaller index.
fn farthest(sorted: &[usize], dist: &DMatrix<f64>, anchor: usize, k: usize) -> Vec<usize> {
    let mut v = sorted.to_vec();
    v.sort_by(|a, b| dist[(anchor, *b)].total_cmp(&dist[(anchor, *a)]).then(a.cmp(b)));
    v.truncate(k);
    v
}

/// Nearest/farthest same- and different-class lists for every anchor.
pub fn build_indicators(x: &Dataset, k: usize, metric: &MetricMatrix) -> Result<NeighborIndicators> {
    let hood = Neighborhood::new(x, k, metric)?;
    let mut out = NeighborIndicators {
        same_class_near: Vec::with_capacity(x.n()),
        same_class_far: Vec::with_capacity(x.n()),
        diff_class_near: Vec::with_capacity(x.n()),
        diff_class_far: Vec::with_capacity(x.n()),
    };
    for i in 0..x.n() {
        let (sn, sf, dn, df) = hood.indicators(i, k);
        out.same_class_near.push(sn);
        out.same_class_far.push(sf);
        out.diff_class_near.push(dn);
        out.diff_class_far.push(df);
    }
    Ok(out)
}

/// Mines the triplets of `strategy`. Anchors are processed independently and
/// merged in anchor order; KNS seeds anchor `i` with `ns_cfg.seed + i`.
pub fn mine(
    strategy: MiningStrategy,
    x: &Dataset,
    k: usize,
    metric: &MetricMatrix,
    ns_cfg: &NegSamplingConfig,
) -> Result<TripletSet> {
    if strategy == MiningStrategy::Kns {
        ns_cfg.validate()?;
        if x.dim() < 2 {
            return invalid("negative sampling needs data of dimension >= 2");
        }
    }
    let hood = Neighborhood::new(x, k, metric)?;
    let per_anchor: Vec<Vec<Triplet>> =
        (0..x.n()).into_par_iter().map(|i| mine_anchor(strategy, &hood, x.dim(), i, k, ns_cfg)).collect();
    Ok(TripletSet { triplets: per_anchor.into_iter().flatten().collect(), strategy, k })
}

fn mine_anchor(
    strategy: MiningStrategy,
    hood: &Neighborhood,
    dim: usize,
    i: usize,
    k: usize,
    ns_cfg: &NegSamplingConfig,
) -> Vec<Triplet> {
    let (near_pos, far_pos, near_neg, far_neg) = hood.indicators(i, k);
    let cross = |positives: &[usize], negatives: &[usize]| {
        positives
            .iter()
            .flat_map(|&p| negatives.iter().map(move |&n| Triplet { anchor: i, positive: p, negative: n }))
            .collect::<Vec<_>>()
    };
    match strategy {
        MiningStrategy::Kba => cross(&near_pos, &hood.diff_sorted[i]),
        MiningStrategy::Kbh => cross(&far_pos, &near_neg),
        MiningStrategy::Khpen => cross(&far_pos, &far_neg),
        MiningStrategy::Kepen => cross(&near_pos, &far_neg),
        MiningStrategy::Kephn => cross(&near_pos, &near_neg),
        MiningStrategy::Kbsh => near_pos
            .iter()
            .flat_map(|&p| {
                let threshold = hood.dist[(i, p)];
                hood.diff_sorted[i]
                    .iter()
                    .filter(move |&&n| hood.dist[(i, n)] > threshold)
                    .take(k)
                    .map(move |&n| Triplet { anchor: i, positive: p, negative: n })
            })
            .collect(),
        MiningStrategy::Kns => {
            let mut candidates = hood.diff_sorted[i].clone();
            candidates.sort_unstable();
            let distances: Vec<f64> = candidates.iter().map(|&l| hood.dist[(i, l)]).collect();
            let probs =
                selection_probabilities(&distances, dim, ns_cfg).expect("candidate list is non-empty and dim >= 2");
            let mut rng = rng_from_seed(ns_cfg.seed.wrapping_add(i as u64));
            let count = k.min(candidates.len());
            near_pos
                .iter()
                .flat_map(|&p| {
                    roulette_draw(&probs, count, &mut rng)
                        .into_iter()
                        .map(|c| Triplet { anchor: i, positive: p, negative: candidates[c] })
                        .collect::<Vec<_>>()
                })
                .collect()
        }
    }
}

/// Unnormalized density of pairwise distances between points on a unit
/// hypersphere in `d` dimensions: `D^(d-2) · (1 - D²/4)^((d-3)/2)`, with the
/// second base clamped at 0.
pub fn negative_density(dist: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return invalid(format!("density needs d >= 2, got {d}"));
    }
    if dist.is_nan() || dist < 0.0 {
        return invalid(format!("distance must be non-negative, got {dist}"));
    }
    let base = (1.0 - 0.25 * dist * dist).max(0.0);
    Ok(dist.powi(d as i32 - 2) * base.powf((d as f64 - 3.0) / 2.0))
}

/// Roulette probabilities for picking each candidate as a negative of
/// `anchor`: weights `min(λ, 1/q(D))`, normalized.
pub fn negative_selection_probabilities(
    anchor: usize,
    candidates: &[usize],
    x: &Dataset,
    metric: &MetricMatrix,
    cfg: &NegSamplingConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if candidates.is_empty() {
        return invalid("candidate list is empty");
    }
    if anchor >= x.n() {
        return invalid(format!("anchor {anchor} out of range"));
    }
    let xa = x.point(anchor);
    let mut distances = Vec::with_capacity(candidates.len());
    for &l in candidates {
        if l >= x.n() {
            return invalid(format!("candidate {l} out of range"));
        }
        if x.label(l) == x.label(anchor) {
            return invalid(format!("candidate {l} shares the anchor's class"));
        }
        distances.push(mahalanobis_distance_sq(&xa, &x.point(l), metric)?);
    }
    selection_probabilities(&distances, x.dim(), cfg)
}

fn selection_probabilities(distances: &[f64], d: usize, cfg: &NegSamplingConfig) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return invalid("candidate list is empty");
    }
    let scale = if cfg.normalize {
        let max = distances.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            2.0 / max
        } else {
            1.0
        }
    } else {
        1.0
    };
    let weights: Vec<f64> = distances
        .iter()
        .map(|&dist| {
            let q = negative_density(dist * scale, d)?;
            Ok(cfg.lambda.min(1.0 / q.max(DENSITY_FLOOR)))
        })
        .collect::<Result<_>>()?;
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        Ok(weights.iter().map(|w| w / total).collect())
    } else {
        // Every density was infinite (d = 2 at D = 2): nothing to prefer.
        Ok(vec![1.0 / weights.len() as f64; weights.len()])
    }
}

/// Draws `count` distinct indices from `probs` by cumulative-sum inversion,
/// renormalizing over the remaining indices after each draw.
pub fn roulette_select(probs: &[f64], count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count > probs.len() {
        return invalid(format!("count must be in 1..={}, got {count}", probs.len()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return invalid("probabilities must be finite and non-negative");
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return invalid(format!("probabilities sum to {total}, expected 1"));
    }
    Ok(roulette_draw(probs, count, &mut rng_from_seed(seed)))
}

pub(crate) fn roulette_draw(probs: &[f64], count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut taken = vec![false; probs.len()];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mass: f64 = probs.iter().zip(&taken).filter(|(_, t)| !**t).map(|(p, _)| p).sum();
        let pick = if mass > 0.0 {
            let target = rng.random::<f64>() * mass;
            let mut cum = 0.0;
            let mut last_positive = None;
            let mut chosen = None;
            for (idx, &p) in probs.iter().enumerate() {
                if taken[idx] || p <= 0.0 {
                    continue;
                }
                cum += p;
                last_positive = Some(idx);
                if target < cum {
                    chosen = Some(idx);
                    break;
                }
            }
            chosen.or(last_positive).expect("positive mass implies a positive entry")
        } else {
            let free: Vec<usize> = (0..probs.len()).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        taken[pick] = true;
        out.push(pick);
    }
    out
}
