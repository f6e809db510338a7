//! kNN classification under a learned metric and the benchmark grid.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::hierarchical::{hierarchical_train, HierarchicalConfig, TraceRow};
use crate::metric::{quad_form, MetricMatrix};
use crate::mining::{mine, MiningStrategy, NegSamplingConfig};
use crate::rng::{derive_seed, rng_from_seed};
use crate::solver::{solve, SolverConfig};

/// Majority vote among the `k` nearest training points under `m`.
///
/// Distance ties go to the smaller training index; vote ties go to whichever
/// tied class owns the nearest of the k neighbors.
pub fn knn_classify(train: &Dataset, test_points: &DMatrix<f64>, k: usize, m: &MetricMatrix) -> Result<Vec<usize>> {
    if k == 0 || k > train.n() {
        return invalid(format!("k must be in 1..={}, got {k}", train.n()));
    }
    if test_points.ncols() != train.dim() || m.dim() != train.dim() {
        return invalid(format!(
            "dimension mismatch: train {}, test {}, metric {}",
            train.dim(),
            test_points.ncols(),
            m.dim()
        ));
    }
    let d = train.dim();
    let tp = train.points();
    let labels = train.labels();
    let classify = |q: usize| {
        let mut diff = vec![0.0; d];
        let mut dist: Vec<(f64, usize)> = (0..train.n())
            .map(|i| {
                for (f, slot) in diff.iter_mut().enumerate() {
                    *slot = test_points[(q, f)] - tp[(i, f)];
                }
                (quad_form(&diff, m.as_matrix()), i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        vote(dist[..k].iter().map(|&(_, i)| labels[i]))
    };
    Ok((0..test_points.nrows()).map(classify).collect())
}

/// Most frequent label; ties resolved toward the label seen first.
fn vote(neighbors: impl Iterator<Item = usize>) -> usize {
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (rank, label) in neighbors.enumerate() {
        tally.entry(label).or_insert((0, rank)).0 += 1;
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(label, _)| label)
        .expect("k >= 1")
}

/// Percentage of matching labels.
pub fn accuracy_pct(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / truth.len() as f64
}

/// Accuracy of `k`-NN on `test` with `train` as reference set.
pub fn knn_accuracy(train: &Dataset, test: &Dataset, k: usize, m: &MetricMatrix) -> Result<f64> {
    let pred = knn_classify(train, test.points(), k, m)?;
    Ok(accuracy_pct(&pred, test.labels()))
}

/// Index sets of a stratified split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified 70/15/15 split: within each class, `round(0.15·n_c)` points
/// (at least one) go to validation and to test, the rest to training.
/// Classes too small to leave two training points are an error.
pub fn stratified_split(x: &Dataset, name: &str, seed: u64) -> Result<Split> {
    let mut rng = rng_from_seed(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..x.n() {
        by_class.entry(x.label(i)).or_default().push(i);
    }
    let mut split = Split { train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    for members in by_class.values_mut() {
        let held = ((0.15 * members.len() as f64).round() as usize).max(1);
        if members.len() < 2 * held + 2 {
            return Err(Error::TooSmallToSplit(name.to_string()));
        }
        members.shuffle(&mut rng);
        split.test.extend_from_slice(&members[..held]);
        split.validation.extend_from_slice(&members[held..2 * held]);
        split.train.extend_from_slice(&members[2 * held..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "non-hierarchical", alias = "nonhier")]
    NonHierarchical,
    #[serde(rename = "hierarchical", alias = "hier")]
    Hierarchical,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::NonHierarchical => "non-hierarchical",
            Mode::Hierarchical => "hierarchical",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hier" | "hierarchical" => Ok(Mode::Hierarchical),
            "nonhier" | "non-hier" | "non-hierarchical" | "flat" => Ok(Mode::NonHierarchical),
            _ => invalid(format!("unknown mode `{s}`; expected hier or nonhier")),
        }
    }
}

/// Everything needed to train one metric.
#[derive(Debug, Clone, Copy)]
pub struct TrainSpec {
    pub mode: Mode,
    pub strategy: MiningStrategy,
    pub k: usize,
    pub solver: SolverConfig,
    pub hier: HierarchicalConfig,
    pub neg_sampling: NegSamplingConfig,
}

/// A trained metric with its training time and (hierarchical) trace.
#[derive(Debug, Clone)]
pub struct Trained {
    pub metric: MetricMatrix,
    pub train_time: Duration,
    pub trace: Vec<TraceRow>,
}

/// Trains on `train`: one mine-and-solve pass from the identity, or the
/// hierarchical loop. Timing covers mining, solving and projection.
pub fn train_metric(train: &Dataset, spec: &TrainSpec) -> Result<Trained> {
    let started = Instant::now();
    match spec.mode {
        Mode::NonHierarchical => {
            let identity = MetricMatrix::identity(train.dim());
            let triplets = mine(spec.strategy, train, spec.k, &identity, &spec.neg_sampling)?;
            let metric =
                if triplets.is_empty() { identity } else { solve(train, &triplets, &spec.solver, &identity)?.metric };
            Ok(Trained { metric, train_time: started.elapsed(), trace: Vec::new() })
        }
        Mode::Hierarchical => {
            let res = hierarchical_train(train, spec.k, spec.strategy, &spec.hier, &spec.solver)?;
            let train_time = started.elapsed();
            Ok(Trained { metric: res.metric(), train_time, trace: res.trace })
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub strategies: Vec<MiningStrategy>,
    pub modes: Vec<Mode>,
    pub k_values: Vec<usize>,
    pub c_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub solver: SolverConfig,
    pub hierarchical: HierarchicalConfig,
    pub lambda: f64,
    /// Write measured times; when false, time columns are written as 0 so
    /// report files are byte-reproducible.
    pub timing: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            strategies: MiningStrategy::ALL.to_vec(),
            modes: vec![Mode::NonHierarchical, Mode::Hierarchical],
            k_values: vec![1, 3, 5],
            c_values: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            seeds: vec![0, 1, 2, 3, 4],
            solver: SolverConfig::default(),
            hierarchical: HierarchicalConfig::default(),
            lambda: 1.4,
            timing: true,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str, len: usize| if len == 0 { invalid(format!("{name} list is empty")) } else { Ok(()) };
        empty("strategies", self.strategies.len())?;
        empty("modes", self.modes.len())?;
        empty("k_values", self.k_values.len())?;
        empty("c_values", self.c_values.len())?;
        empty("seeds", self.seeds.len())?;
        if self.k_values.contains(&0) {
            return invalid("k values must be positive");
        }
        self.solver.validate()?;
        self.hierarchical.validate()?;
        for &c in &self.c_values {
            SolverConfig { c, ..self.solver }.validate()?;
        }
        NegSamplingConfig { lambda: self.lambda, seed: 0, normalize: false }.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub dataset: String,
    pub mode: Mode,
    pub strategy: MiningStrategy,
    /// Selected on validation accuracy.
    pub k: usize,
    pub c: f64,
    pub seed: u64,
    pub accuracy_pct: f64,
    pub train_time_s: f64,
}

/// Trace of a selected hierarchical model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub dataset: String,
    pub strategy: MiningStrategy,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub traces: Vec<RunTrace>,
    pub timing: bool,
}

pub const REPORT_HEADER: &str = "dataset,mode,strategy,k,c,seed,accuracy_pct,train_time_s";

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let t = if self.timing { r.train_time_s } else { 0.0 };
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.4},{:.6}\n",
                r.dataset,
                r.mode,
                r.strategy.tag(),
                r.k,
                r.c,
                r.seed,
                r.accuracy_pct,
                t
            ));
        }
        out
    }

    /// Hierarchical traces, prefixed with the run they belong to.
    pub fn trace_csv(&self) -> String {
        let mut out = format!("dataset,strategy,seed,{}\n", crate::hierarchical::TRACE_HEADER);
        for t in &self.traces {
            for row in &t.rows {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    t.dataset,
                    t.strategy.tag(),
                    t.seed,
                    row.csv_fields(self.timing)
                ));
            }
        }
        out
    }

    /// Mean and population standard deviation of accuracy and time over
    /// seeds, keyed by (dataset, mode, strategy).
    pub fn summary(&self) -> BTreeMap<(String, Mode, MiningStrategy), Summary> {
        let mut groups: BTreeMap<(String, Mode, MiningStrategy), Vec<&BenchmarkRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.dataset.clone(), r.mode, r.strategy)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|(key, rows)| {
                let acc: Vec<f64> = rows.iter().map(|r| r.accuracy_pct).collect();
                let time: Vec<f64> = rows.iter().map(|r| r.train_time_s).collect();
                (key, Summary { accuracy: mean_std(&acc), time: mean_std(&time), runs: rows.len() })
            })
            .collect()
    }

    /// Aligned table: one block per dataset and mode, an accuracy line and a
    /// time line, one column per strategy.
    pub fn to_table(&self) -> String {
        let summary = self.summary();
        let mut strategies: Vec<MiningStrategy> = self.rows.iter().map(|r| r.strategy).collect();
        strategies.sort_unstable();
        strategies.dedup();
        let mut blocks: Vec<(String, Mode)> = Vec::new();
        for r in &self.rows {
            if !blocks.contains(&(r.dataset.clone(), r.mode)) {
                blocks.push((r.dataset.clone(), r.mode));
            }
        }
        let name_w = blocks.iter().map(|b| b.0.len()).max().unwrap_or(7).max(7);
        let col_w = 15;
        let mut out = format!("{:<name_w$}  {:<16}  {:<12}", "Dataset", "Mode", "");
        for s in &strategies {
            out.push_str(&format!("  {:>col_w$}", s.label()));
        }
        out.push('\n');
        for (dataset, mode) in &blocks {
            let cells = |f: &dyn Fn(&Summary) -> String| {
                strategies
                    .iter()
                    .map(|s| summary.get(&(dataset.clone(), *mode, *s)).map_or_else(|| "--".to_string(), f))
                    .map(|c| format!("  {c:>col_w$}"))
                    .collect::<String>()
            };
            out.push_str(&format!("{:<name_w$}  {:<16}  {:<12}", dataset, mode.name(), "Accuracy (%)"));
            out.push_str(&cells(&|s: &Summary| format!("{:.2}±{:.2}", s.accuracy.0, s.accuracy.1)));
            out.push('\n');
            out.push_str(&format!("{:<name_w$}  {:<16}  {:<12}", "", "", "Time (sec)"));
            let timing = self.timing;
            out.push_str(&cells(&|s: &Summary| {
                if timing {
                    format!("{:.3}±{:.3}", s.time.0, s.time.1)
                } else {
                    "n/a".to_string()
                }
            }));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub accuracy: (f64, f64),
    pub time: (f64, f64),
    pub runs: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every (dataset, mode, strategy, seed) combination: stratified
/// 70/15/15 split, (k, c) chosen by validation accuracy, then test accuracy
/// of the chosen model. Validation ties go to the larger k, then the smaller
/// c. Combinations run in parallel; rows come back in input order.
pub fn run_benchmark(datasets: &[(String, Dataset)], cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    if datasets.is_empty() {
        return invalid("no datasets given");
    }
    let mut splits = Vec::with_capacity(datasets.len());
    for (name, ds) in datasets {
        let per_seed = cfg
            .seeds
            .iter()
            .map(|&seed| stratified_split(ds, name, derive_seed(seed, "split")))
            .collect::<Result<Vec<_>>>()?;
        splits.push(per_seed);
    }

    let mut jobs = Vec::new();
    for (di, _) in datasets.iter().enumerate() {
        for &mode in &cfg.modes {
            for &strategy in &cfg.strategies {
                for (si, &seed) in cfg.seeds.iter().enumerate() {
                    jobs.push((di, mode, strategy, si, seed));
                }
            }
        }
    }

    let results: Vec<(BenchmarkRow, Option<RunTrace>)> = jobs
        .par_iter()
        .map(|&(di, mode, strategy, si, seed)| {
            let (name, ds) = &datasets[di];
            run_one(name, ds, &splits[di][si], mode, strategy, seed, cfg)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(results.len());
    let mut traces = Vec::new();
    for (row, trace) in results {
        rows.push(row);
        traces.extend(trace);
    }
    Ok(BenchmarkReport { rows, traces, timing: cfg.timing })
}

fn run_one(
    name: &str,
    ds: &Dataset,
    split: &Split,
    mode: Mode,
    strategy: MiningStrategy,
    seed: u64,
    cfg: &BenchmarkConfig,
) -> Result<(BenchmarkRow, Option<RunTrace>)> {
    let train = ds.subset(&split.train)?;
    let val = ds.subset(&split.validation)?;
    let test = ds.subset(&split.test)?;

    let mut ks = cfg.k_values.clone();
    ks.sort_unstable_by(|a, b| b.cmp(a));
    let mut cs = cfg.c_values.clone();
    cs.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize, f64, Trained)> = None;
    for &k in &ks {
        if k > train.n() {
            continue;
        }
        for &c in &cs {
            let spec = TrainSpec {
                mode,
                strategy,
                k,
                solver: SolverConfig { c, ..cfg.solver },
                hier: HierarchicalConfig { seed: derive_seed(seed, "hierarchical"), ..cfg.hierarchical },
                neg_sampling: NegSamplingConfig {
                    lambda: cfg.lambda,
                    seed: derive_seed(seed, "negative-sampling"),
                    normalize: false,
                },
            };
            let trained = train_metric(&train, &spec)?;
            let acc = knn_accuracy(&train, &val, k, &trained.metric)?;
            if best.as_ref().is_none_or(|b| acc > b.0) {
                best = Some((acc, k, c, trained));
            }
        }
    }
    let (_, k, c, trained) =
        best.ok_or_else(|| Error::InvalidArgument(format!("every k exceeds the training size of `{name}`")))?;
    let accuracy_pct = knn_accuracy(&train, &test, k, &trained.metric)?;
    let row = BenchmarkRow {
        dataset: name.to_string(),
        mode,
        strategy,
        k,
        c,
        seed,
        accuracy_pct,
        train_time_s: trained.train_time.as_secs_f64(),
    };
    let trace = (mode == Mode::Hierarchical).then(|| RunTrace {
        dataset: name.to_string(),
        strategy,
        seed,
        rows: trained.trace,
    });
    Ok((row, trace))
}
