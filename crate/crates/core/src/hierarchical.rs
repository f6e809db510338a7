//! Hierarchical metric learning with stratified hypersphere sampling.
//!
//! Each outer round draws a number of hyperspheres at random centers, takes a
//! per-class (stratified) sample of the points inside each, mines and solves
//! on that sample alone, and projects the whole dataset through the learned
//! factor before moving to the next sphere. Radii grow, and the sphere count
//! and sampling portion shrink, from round to round.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::metric::{default_strengthen, factorize_metric, project_dataset, MetricMatrix, ProjectionMatrix};
use crate::mining::{mine, MiningStrategy, NegSamplingConfig};
use crate::rng::{derive_indexed, rng_from_seed};
use crate::solver::{solve, SolverConfig};

/// Center redraws before a sphere is given up on.
pub const MAX_REDRAWS: usize = 50;
/// Fewest members a usable sphere may hold.
pub const MIN_MEMBERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchicalConfig {
    /// Outer rounds.
    pub t_outer: usize,
    /// Initial radius as a multiple of σ (mean per-feature standard deviation).
    pub r0_factor: f64,
    /// Radius increment per round as a multiple of σ.
    pub dr_factor: f64,
    /// Initial sphere count as a fraction of n, before clipping.
    pub ns_init_frac: f64,
    pub ns_clip: (usize, usize),
    /// Fraction of the sphere count (rounded up) dropped each round.
    pub ns_shrink_frac: f64,
    pub p_init: f64,
    pub p_decrement: f64,
    pub p_floor: f64,
    pub seed: u64,
    /// Solver iteration budget per sphere.
    pub sphere_max_iter: usize,
    /// Diagonal strengthening before factorization; `None` means
    /// `1e-6 · trace(M) / d`.
    pub strengthen_eps: Option<f64>,
    pub neg_sampling_lambda: f64,
}

impl Default for HierarchicalConfig {
    fn default() -> Self {
        Self {
            t_outer: 5,
            r0_factor: 0.1,
            dr_factor: 0.3,
            ns_init_frac: 0.01,
            ns_clip: (10, 20),
            ns_shrink_frac: 0.2,
            p_init: 1.0,
            p_decrement: 0.05,
            p_floor: 0.2,
            seed: 0,
            sphere_max_iter: 500,
            strengthen_eps: None,
            neg_sampling_lambda: 1.4,
        }
    }
}

impl HierarchicalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                invalid(format!("{name} must be positive, got {v}"))
            }
        };
        if self.t_outer == 0 {
            return invalid("t_outer must be positive");
        }
        positive("r0_factor", self.r0_factor)?;
        positive("dr_factor", self.dr_factor)?;
        positive("p_decrement", self.p_decrement)?;
        positive("p_floor", self.p_floor)?;
        positive("neg_sampling_lambda", self.neg_sampling_lambda)?;
        if !(self.ns_init_frac > 0.0 && self.ns_init_frac <= 1.0) {
            return invalid(format!("ns_init_frac must be in (0, 1], got {}", self.ns_init_frac));
        }
        if !(self.ns_shrink_frac > 0.0 && self.ns_shrink_frac < 1.0) {
            return invalid(format!("ns_shrink_frac must be in (0, 1), got {}", self.ns_shrink_frac));
        }
        if !(self.p_init > 0.0 && self.p_init <= 1.0) {
            return invalid(format!("p_init must be in (0, 1], got {}", self.p_init));
        }
        if self.p_floor > self.p_init {
            return invalid("p_floor must not exceed p_init");
        }
        if self.ns_clip.0 == 0 || self.ns_clip.0 > self.ns_clip.1 {
            return invalid(format!("ns_clip bounds {:?} must satisfy 1 <= low <= high", self.ns_clip));
        }
        if self.sphere_max_iter == 0 {
            return invalid("sphere_max_iter must be positive");
        }
        if let Some(eps) = self.strengthen_eps {
            if !(eps >= 0.0 && eps.is_finite()) {
                return invalid(format!("strengthen_eps must be >= 0, got {eps}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchicalState {
    pub tau: usize,
    pub radius: f64,
    pub n_spheres: usize,
    pub portion: f64,
    /// σ of the original data.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SphereSample {
    pub center: Vec<f64>,
    pub member_indices: Vec<usize>,
    pub sampled_indices: Vec<usize>,
}

impl SphereSample {
    pub fn is_empty(&self) -> bool {
        self.sampled_indices.is_empty()
    }
}

/// Round-1 schedule: `r = r0·σ`, `n_s = clip(⌊frac·n⌋)`, `p = p_init`.
pub fn init_schedule(x: &Dataset, cfg: &HierarchicalConfig) -> Result<HierarchicalState> {
    cfg.validate()?;
    if x.n() < 2 {
        return invalid("hierarchical schedule needs at least two points");
    }
    let sigma = x.mean_feature_std();
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let raw = (cfg.ns_init_frac * x.n() as f64).floor() as usize;
    Ok(HierarchicalState {
        tau: 1,
        radius: cfg.r0_factor * sigma,
        n_spheres: raw.clamp(cfg.ns_clip.0, cfg.ns_clip.1),
        portion: cfg.p_init,
        sigma,
    })
}

/// Next round: `r += Δr`, `n_s -= ⌈shrink·n_s⌉` (floor 1), `p -= dec`
/// (floor `p_floor`).
pub fn update_schedule(s: &HierarchicalState, cfg: &HierarchicalConfig) -> HierarchicalState {
    let drop = (cfg.ns_shrink_frac * s.n_spheres as f64).ceil() as usize;
    HierarchicalState {
        tau: s.tau + 1,
        radius: s.radius + cfg.dr_factor * s.sigma,
        n_spheres: s.n_spheres.saturating_sub(drop).max(1),
        portion: (s.portion - cfg.p_decrement).max(cfg.p_floor),
        sigma: s.sigma,
    }
}

/// Draws a center uniformly from the bounding box of `x`, collects the points
/// within the current radius and samples `⌈p·count⌉` (at least one) per class.
/// Centers whose sphere holds fewer than four points or a single class are
/// redrawn; after fifty attempts an empty sample is returned.
pub fn sample_sphere(x: &Dataset, s: &HierarchicalState, seed: u64) -> SphereSample {
    let mut rng = rng_from_seed(seed);
    let bbox = x.bounding_box();
    let r2 = s.radius * s.radius;
    let pts = x.points();
    for _ in 0..MAX_REDRAWS {
        let center: Vec<f64> =
            bbox.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect();
        let members: Vec<usize> = (0..x.n())
            .filter(|&i| {
                let d2: f64 = center.iter().enumerate().map(|(f, c)| (pts[(i, f)] - c).powi(2)).sum();
                d2 <= r2
            })
            .collect();
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &members {
            by_class.entry(x.label(i)).or_default().push(i);
        }
        if members.len() < MIN_MEMBERS || by_class.len() < 2 {
            continue;
        }
        let mut sampled = Vec::new();
        for group in by_class.values() {
            let take = stratum_size(s.portion, group.len());
            sampled.extend(sample(&mut rng, group.len(), take).into_iter().map(|j| group[j]));
        }
        sampled.sort_unstable();
        return SphereSample { center, member_indices: members, sampled_indices: sampled };
    }
    SphereSample::default()
}

/// `⌈portion · count⌉`, at least 1. The small offset keeps products such as
/// `0.95 · 20` from rounding up past their exact value.
fn stratum_size(portion: f64, count: usize) -> usize {
    ((portion * count as f64 - 1e-9).ceil() as usize).clamp(1, count)
}

/// One sphere of a hierarchical run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub tau: usize,
    pub sphere_index: usize,
    pub radius: f64,
    pub n_members: usize,
    pub n_sampled: usize,
    pub n_triplets: usize,
    /// Best objective of the sphere's solve; 0 for skipped spheres.
    pub final_objective: f64,
    pub wall_time: Duration,
}

pub const TRACE_HEADER: &str = "tau,sphere_index,radius,n_members,n_sampled,n_triplets,final_objective,wall_time_ms";

impl TraceRow {
    /// CSV fields in [`TRACE_HEADER`] order; timing is written as 0 when
    /// `with_timing` is false.
    pub fn csv_fields(&self, with_timing: bool) -> String {
        let ms = if with_timing { self.wall_time.as_secs_f64() * 1e3 } else { 0.0 };
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.tau,
            self.sphere_index,
            self.radius,
            self.n_members,
            self.n_sampled,
            self.n_triplets,
            self.final_objective,
            ms
        )
    }
}

pub fn trace_csv(rows: &[TraceRow], with_timing: bool) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_fields(with_timing));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct HierarchicalResult {
    /// Product of every per-sphere factor, in application order.
    pub projection: ProjectionMatrix,
    /// Input data after all projections.
    pub data: Dataset,
    pub trace: Vec<TraceRow>,
    /// Schedule state of each round.
    pub schedule: Vec<HierarchicalState>,
}

impl HierarchicalResult {
    /// Metric on the original space equivalent to the composite projection.
    pub fn metric(&self) -> MetricMatrix {
        self.projection.metric()
    }
}

/// Runs the hierarchical loop. Mining inside each sphere uses Euclidean
/// distance in the current (already projected) space, and each sphere's
/// solve starts from the identity.
pub fn hierarchical_train(
    x: &Dataset,
    k: usize,
    strategy: MiningStrategy,
    hcfg: &HierarchicalConfig,
    scfg: &SolverConfig,
) -> Result<HierarchicalResult> {
    scfg.validate()?;
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if let Some((&label, _)) = x.class_counts().iter().find(|(_, &c)| c < 2) {
        return Err(Error::SingletonClass { label });
    }
    let sphere_cfg = SolverConfig { max_iter: hcfg.sphere_max_iter, ..*scfg };
    let mut state = init_schedule(x, hcfg)?;
    let mut current = x.clone();
    let mut composite = ProjectionMatrix::new(DMatrix::identity(x.dim(), x.dim()))?;
    let mut trace = Vec::new();
    let mut schedule = Vec::with_capacity(hcfg.t_outer);
    let mut counter: u64 = 0;

    for tau in 1..=hcfg.t_outer {
        if tau > 1 {
            state = update_schedule(&state, hcfg);
        }
        schedule.push(state);
        for s in 0..state.n_spheres {
            let started = Instant::now();
            let sphere = sample_sphere(&current, &state, derive_indexed(hcfg.seed, "sphere", counter));
            let ns_cfg = NegSamplingConfig {
                lambda: hcfg.neg_sampling_lambda,
                seed: derive_indexed(hcfg.seed, "negative-sampling", counter),
                normalize: false,
            };
            counter += 1;
            let mut row = TraceRow {
                tau,
                sphere_index: s,
                radius: state.radius,
                n_members: sphere.member_indices.len(),
                n_sampled: sphere.sampled_indices.len(),
                n_triplets: 0,
                final_objective: 0.0,
                wall_time: Duration::ZERO,
            };
            if let Some(l) = learn_sphere(&current, &sphere, k, strategy, &ns_cfg, &sphere_cfg, hcfg, &mut row)? {
                current = project_dataset(&current, &l)?;
                composite = composite.then(&l)?;
            }
            row.wall_time = started.elapsed();
            trace.push(row);
        }
    }

    Ok(HierarchicalResult { projection: composite, data: current, trace, schedule })
}

/// Mines and solves inside one sphere. `None` when the sample cannot yield
/// triplets (too few classes with two or more sampled points).
#[allow(clippy::too_many_arguments)]
fn learn_sphere(
    current: &Dataset,
    sphere: &SphereSample,
    k: usize,
    strategy: MiningStrategy,
    ns_cfg: &NegSamplingConfig,
    sphere_cfg: &SolverConfig,
    hcfg: &HierarchicalConfig,
    row: &mut TraceRow,
) -> Result<Option<ProjectionMatrix>> {
    if sphere.is_empty() {
        return Ok(None);
    }
    // Singleton strata cannot anchor a positive pair.
    let counts = current.subset(&sphere.sampled_indices)?.class_counts();
    let usable: Vec<usize> =
        sphere.sampled_indices.iter().copied().filter(|&i| counts[&current.label(i)] >= 2).collect();
    let subset = current.subset(&usable)?;
    if subset.class_counts().len() < 2 {
        return Ok(None);
    }
    let identity = MetricMatrix::identity(current.dim());
    let triplets = mine(strategy, &subset, k, &identity, ns_cfg)?;
    row.n_triplets = triplets.len();
    if triplets.is_empty() {
        return Ok(None);
    }
    let solved = solve(&subset, &triplets, sphere_cfg, &identity)?;
    row.final_objective = solved.best.total;
    let eps = hcfg.strengthen_eps.unwrap_or_else(|| default_strengthen(&solved.metric));
    Ok(Some(factorize_metric(&solved.metric, eps)?))
}
