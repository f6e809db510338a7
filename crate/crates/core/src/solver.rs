//! Large-margin objective and its projected subgradient minimizer.
//!
//! For a triplet set `T` the objective is
//!
//! ```text
//! f(M) = Σ_{(a,p) ∈ pairs(T)} D_M(a,p) + c · Σ_{(a,p,n) ∈ T} [1 + D_M(a,p) - D_M(a,n)]₊
//! ```
//!
//! minimized over PSD `M`. The slack-variable form of the same problem has
//! one slack per triplet constrained by `ξ ≥ 0` and `ξ ≥ 1 + D(a,p) - D(a,n)`;
//! at any optimum each slack equals its hinge term, so minimizing the hinge
//! form directly reaches the same optimum without carrying the slacks.
//!
//! Both `D_M` terms are linear in `M`, so with `C_uv = (x_u - x_v)(x_u - x_v)ᵀ`
//! a subgradient is `Σ C_ap + c · Σ_active (C_ap - C_an)`. The minimizer steps
//! along its negative and projects back onto the PSD cone.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::metric::{psd_project, symmetrize, MetricMatrix};
use crate::mining::TripletSet;

/// Consecutive low-improvement iterations that end a run.
const STALL_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Weight of the hinge (push) term.
    pub c: f64,
    pub max_iter: usize,
    /// Initial step; `None` means `1e-3 / |T|`.
    pub step0: Option<f64>,
    pub step_decay: f64,
    /// Relative objective change below which an iteration counts as stalled.
    pub tol: f64,
    pub project_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { c: 1.0, max_iter: 2000, step0: None, step_decay: 0.999, tol: 1e-6, project_every: 10 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return invalid(format!("c must be positive, got {}", self.c));
        }
        if self.max_iter == 0 {
            return invalid("max_iter must be positive");
        }
        if let Some(s) = self.step0 {
            if !(s > 0.0 && s.is_finite()) {
                return invalid(format!("step0 must be positive, got {s}"));
            }
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return invalid(format!("step_decay must be in (0, 1], got {}", self.step_decay));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return invalid(format!("tol must be positive, got {}", self.tol));
        }
        if self.project_every == 0 {
            return invalid("project_every must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ObjectiveBreakdown {
    pub pull: f64,
    pub push: f64,
    pub total: f64,
    pub active_count: usize,
}

/// Outcome of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Best PSD iterate seen (possibly `m0`).
    pub metric: MetricMatrix,
    pub best: ObjectiveBreakdown,
    /// Entry 0 is `m0`; entry `i` follows iteration `i`.
    pub history: Vec<ObjectiveBreakdown>,
}

/// Triplets compiled against distinct point pairs so each iteration computes
/// every needed distance once.
struct Compiled {
    c: f64,
    /// Row `p` holds `x_u - x_v` for pair `p`.
    diffs: DMatrix<f64>,
    pull_pairs: Vec<usize>,
    /// (anchor-positive pair, anchor-negative pair) per triplet.
    triplets: Vec<(usize, usize)>,
}

impl Compiled {
    fn new(x: &Dataset, t: &TripletSet, c: f64) -> Result<Self> {
        let n = x.n();
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut intern = |u: usize, v: usize| {
            *index.entry((u, v)).or_insert_with(|| {
                pairs.push((u, v));
                pairs.len() - 1
            })
        };
        let mut triplets = Vec::with_capacity(t.len());
        let mut pull_seen = Vec::new();
        for tr in &t.triplets {
            if tr.anchor >= n || tr.positive >= n || tr.negative >= n {
                return invalid(format!(
                    "triplet ({}, {}, {}) out of range for {n} points",
                    tr.anchor, tr.positive, tr.negative
                ));
            }
            let ap = intern(tr.anchor, tr.positive);
            let an = intern(tr.anchor, tr.negative);
            triplets.push((ap, an));
            pull_seen.push(ap);
        }
        let mut is_pull = vec![false; pairs.len()];
        let mut pull_pairs = Vec::new();
        for ap in pull_seen {
            if !is_pull[ap] {
                is_pull[ap] = true;
                pull_pairs.push(ap);
            }
        }
        let pts = x.points();
        let diffs = DMatrix::from_fn(pairs.len(), x.dim(), |p, f| {
            let (u, v) = pairs[p];
            pts[(u, f)] - pts[(v, f)]
        });
        Ok(Self { c, diffs, pull_pairs, triplets })
    }

    /// Unclamped `diffᵀ M diff` for every pair; iterates between projections
    /// may be indefinite and the objective stays linear in `M` there.
    fn distances(&self, m: &DMatrix<f64>) -> Vec<f64> {
        let dm = &self.diffs * m;
        dm.component_mul(&self.diffs).column_sum().iter().copied().collect()
    }

    fn evaluate(&self, dist: &[f64]) -> ObjectiveBreakdown {
        let pull: f64 = self.pull_pairs.iter().map(|&p| dist[p]).sum();
        let mut push = 0.0;
        let mut active_count = 0;
        for &(ap, an) in &self.triplets {
            let h = 1.0 + dist[ap] - dist[an];
            if h > 0.0 {
                push += h;
                active_count += 1;
            }
        }
        ObjectiveBreakdown { pull, push, total: pull + self.c * push, active_count }
    }

    fn gradient(&self, dist: &[f64]) -> DMatrix<f64> {
        let mut w = vec![0.0; self.diffs.nrows()];
        for &p in &self.pull_pairs {
            w[p] += 1.0;
        }
        for &(ap, an) in &self.triplets {
            if 1.0 + dist[ap] - dist[an] > 0.0 {
                w[ap] += self.c;
                w[an] -= self.c;
            }
        }
        let mut weighted = self.diffs.clone();
        for (mut row, wp) in weighted.row_iter_mut().zip(&w) {
            row.scale_mut(*wp);
        }
        symmetrize(&(self.diffs.transpose() * weighted))
    }
}

fn check_dims(m: &MetricMatrix, x: &Dataset) -> Result<()> {
    if m.dim() != x.dim() {
        return invalid(format!("metric dimension {} does not match data dimension {}", m.dim(), x.dim()));
    }
    Ok(())
}

/// Pull, push and total objective of `m` on triplets `t`.
pub fn objective(m: &MetricMatrix, x: &Dataset, t: &TripletSet, c: f64) -> Result<ObjectiveBreakdown> {
    check_dims(m, x)?;
    let prob = Compiled::new(x, t, c)?;
    Ok(prob.evaluate(&prob.distances(m.as_matrix())))
}

/// Subgradient of the objective at `m`; hinge terms at exactly zero count as
/// inactive.
pub fn subgradient(m: &MetricMatrix, x: &Dataset, t: &TripletSet, c: f64) -> Result<DMatrix<f64>> {
    check_dims(m, x)?;
    let prob = Compiled::new(x, t, c)?;
    Ok(prob.gradient(&prob.distances(m.as_matrix())))
}

/// Projected subgradient descent from `m0` with geometric step decay.
///
/// Projects onto the PSD cone every `project_every` iterations and at exit,
/// and returns the best projected iterate (or `m0` if none beats it). Stops
/// after `max_iter` iterations or once the relative objective change stays
/// below `tol` for ten consecutive iterations.
pub fn solve(x: &Dataset, t: &TripletSet, cfg: &SolverConfig, m0: &MetricMatrix) -> Result<SolveResult> {
    cfg.validate()?;
    check_dims(m0, x)?;
    if t.is_empty() {
        return invalid("cannot solve over an empty triplet set");
    }
    let prob = Compiled::new(x, t, cfg.c)?;
    let step0 = cfg.step0.unwrap_or(1e-3 / t.len() as f64);

    let mut m = m0.as_matrix().clone();
    let mut dist = prob.distances(&m);
    let initial = prob.evaluate(&dist);
    let mut history = vec![initial];
    let mut best = (initial, m0.clone());
    let mut prev_total = initial.total;
    let mut stalled = 0;
    let mut step = step0;

    for iter in 1..=cfg.max_iter {
        let grad = prob.gradient(&dist);
        m -= grad * step;
        step *= cfg.step_decay;

        let last = iter == cfg.max_iter;
        let mut projected = iter % cfg.project_every == 0 || last;
        if projected {
            m = psd_project(&m)?.into_inner();
        }
        dist = prob.distances(&m);
        let mut current = prob.evaluate(&dist);

        let change = (prev_total - current.total).abs() / prev_total.abs().max(1e-12);
        stalled = if change < cfg.tol { stalled + 1 } else { 0 };
        prev_total = current.total;
        let stop = stalled >= STALL_WINDOW;
        if stop && !projected {
            m = psd_project(&m)?.into_inner();
            dist = prob.distances(&m);
            current = prob.evaluate(&dist);
            projected = true;
        }
        history.push(current);
        if projected && current.total < best.0.total {
            best = (current, MetricMatrix::new(m.clone())?);
        }
        if stop {
            break;
        }
    }

    Ok(SolveResult { metric: best.1, best: best.0, history })
}

/// CSV with columns `iter,pull,push,total,active_count`.
pub fn history_csv(history: &[ObjectiveBreakdown]) -> String {
    let mut out = String::from("iter,pull,push,total,active_count\n");
    for (i, h) in history.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{}\n", h.pull, h.push, h.total, h.active_count));
    }
    out
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::mining::{MiningStrategy, Triplet};

    fn set(triplets: Vec<(usize, usize, usize)>) -> TripletSet {
        TripletSet {
            triplets: triplets
                .into_iter()
                .map(|(anchor, positive, negative)| Triplet { anchor, positive, negative })
                .collect(),
            strategy: MiningStrategy::Kbh,
            k: 1,
        }
    }

    fn line(points: &[f64], labels: Vec<usize>) -> Dataset {
        let rows: Vec<Vec<f64>> = points.iter().map(|&p| vec![p]).collect();
        Dataset::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn empty_set_objective_and_gradient() {
        let ds = line(&[0.0, 1.0], vec![0, 1]);
        let m = MetricMatrix::identity(1);
        let ob = objective(&m, &ds, &set(vec![]), 1.0).unwrap();
        assert_eq!(ob, ObjectiveBreakdown::default());
        assert_eq!(subgradient(&m, &ds, &set(vec![]), 1.0).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn satisfied_margin() {
        // D(a,p) = 0, D(a,n) = 2
        let ds = line(&[0.0, 0.0, 2f64.sqrt()], vec![0, 0, 1]);
        let ob = objective(&MetricMatrix::identity(1), &ds, &set(vec![(0, 1, 2)]), 1.0).unwrap();
        assert_abs_diff_eq!(ob.pull, 0.0);
        assert_abs_diff_eq!(ob.push, 0.0);
        assert_abs_diff_eq!(ob.total, 0.0);
        assert_eq!(ob.active_count, 0);
    }

    #[test]
    fn violated_margin_hand_evaluated() {
        // D(a,p) = D(a,n) = 1, c = 2: pull 1, push 1 + 1 - 1 = 1, total 3
        let ds = line(&[0.0, 1.0, -1.0], vec![0, 0, 1]);
        let ob = objective(&MetricMatrix::identity(1), &ds, &set(vec![(0, 1, 2)]), 2.0).unwrap();
        assert_abs_diff_eq!(ob.pull, 1.0);
        assert_abs_diff_eq!(ob.push, 1.0);
        assert_abs_diff_eq!(ob.total, 3.0);
        assert_eq!(ob.active_count, 1);
    }

    #[test]
    fn pull_counts_distinct_pairs_once() {
        let ds = line(&[0.0, 1.0, 5.0, 6.0], vec![0, 0, 1, 1]);
        let ob = objective(&MetricMatrix::identity(1), &ds, &set(vec![(0, 1, 2), (0, 1, 3)]), 1.0).unwrap();
        assert_abs_diff_eq!(ob.pull, 1.0);
    }

    #[test]
    fn inactive_gradient_is_pull_only() {
        let ds = line(&[0.0, 0.5, 10.0], vec![0, 0, 1]);
        let g = subgradient(&MetricMatrix::identity(1), &ds, &set(vec![(0, 1, 2)]), 3.0).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 0.25);
    }

    #[test]
    fn out_of_range_triplet() {
        let ds = line(&[0.0, 1.0], vec![0, 1]);
        assert!(objective(&MetricMatrix::identity(1), &ds, &set(vec![(0, 1, 2)]), 1.0).is_err());
    }

    #[test]
    fn solve_rejects_empty_and_bad_config() {
        let ds = line(&[0.0, 1.0], vec![0, 1]);
        let m = MetricMatrix::identity(1);
        assert!(solve(&ds, &set(vec![]), &SolverConfig::default(), &m).is_err());
        let bad = SolverConfig { step_decay: 1.5, ..SolverConfig::default() };
        assert!(solve(&ds, &set(vec![(0, 0, 1)]), &bad, &m).is_err());
    }

    #[test]
    fn solve_keeps_optimal_start() {
        // Coincident anchor-positive pairs, negatives far away: zero subgradient.
        let ds =
            Dataset::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![5.0, 5.0], vec![5.0, 5.0]], vec![0, 0, 1, 1])
                .unwrap();
        let t = set(vec![(0, 1, 2), (1, 0, 3), (2, 3, 0), (3, 2, 1)]);
        let m0 = MetricMatrix::identity(2);
        let res = solve(&ds, &t, &SolverConfig::default(), &m0).unwrap();
        assert!(res.best.total <= 1e-9);
        assert!((res.metric.as_matrix() - m0.as_matrix()).norm() < 1e-12);
    }

    #[test]
    fn history_csv_layout() {
        let csv = history_csv(&[ObjectiveBreakdown { pull: 1.0, push: 0.5, total: 1.5, active_count: 2 }]);
        assert_eq!(csv, "iter,pull,push,total,active_count\n0,1,0.5,1.5,2\n");
    }
}
