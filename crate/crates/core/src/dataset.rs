use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Labeled point cloud: one row of `points` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: DMatrix<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(points: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return invalid(format!("dataset must have n >= 1 and d >= 1, got {}x{}", points.nrows(), points.ncols()));
        }
        if labels.len() != points.nrows() {
            return invalid(format!("{} labels for {} points", labels.len(), points.nrows()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return invalid("dataset contains non-finite feature values");
        }
        Ok(Self { points, labels })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return invalid("rows have differing lengths");
        }
        let points = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(points, labels)
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Copy of row `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    /// Distinct class labels in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        self.class_counts().into_keys().collect()
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    /// Rows selected by `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return invalid(format!("index {bad} out of range for {} points", self.n()));
        }
        let points = self.points.select_rows(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(points, labels)
    }

    /// Same labels, new coordinates.
    pub fn with_points(&self, points: DMatrix<f64>) -> Result<Self> {
        Self::new(points, self.labels.clone())
    }

    /// Per-feature (min, max) over all points.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        self.points
            .column_iter()
            .map(|c| c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
            .collect()
    }

    /// Mean over features of the per-feature (population) standard deviation.
    pub fn mean_feature_std(&self) -> f64 {
        let n = self.n() as f64;
        let total: f64 = self
            .points
            .column_iter()
            .map(|c| {
                let mean = c.sum() / n;
                (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .sum();
        total / self.dim() as f64
    }
}
