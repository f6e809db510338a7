//! Dense-matrix primitives for Mahalanobis metrics.
//!
//! A metric is a symmetric positive semi-definite matrix `M`; the squared
//! distance it induces is `(x - y)ᵀ M (x - y)`. Writing `M = L Lᵀ` turns that
//! distance into the squared Euclidean distance between `Lᵀx` and `Lᵀy`, which
//! is how learned metrics are applied to whole datasets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};

/// Largest tolerated `|m[a][b] - m[b][a]|` in a [`MetricMatrix`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue a [`MetricMatrix`] may carry.
pub const PSD_TOL: f64 = -1e-8;
/// Asymmetry accepted (relative to the largest entry) by [`psd_project`].
const PROJECT_SYMMETRY_TOL: f64 = 1e-8;

/// Symmetric positive semi-definite matrix defining a squared distance.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix(DMatrix<f64>);

impl MetricMatrix {
    /// Validates symmetry and semi-definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return invalid(format!("metric must be square, got {}x{}", m.nrows(), m.ncols()));
        }
        let asym = max_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return invalid(format!("metric is not symmetric (max deviation {asym:e})"));
        }
        let min_eig = min_eigenvalue(&m);
        if min_eig < PSD_TOL {
            return invalid(format!("metric is not PSD (smallest eigenvalue {min_eig:e})"));
        }
        Ok(Self(m))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    /// Diagonal metric; entries must be non-negative.
    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

/// Factor `L` of a metric, `M ≈ L Lᵀ`. Columns are ordered by descending
/// eigenvalue of the source metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix(DMatrix<f64>);

impl ProjectionMatrix {
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        if l.nrows() == 0 || l.ncols() == 0 {
            return invalid("projection matrix must be non-empty");
        }
        Ok(Self(l))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Input dimension.
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    /// Embedding dimension.
    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    /// `L Lᵀ`, symmetrized.
    pub fn metric(&self) -> MetricMatrix {
        let m = &self.0 * self.0.transpose();
        MetricMatrix(symmetrize(&m))
    }

    /// `self` followed by `next`: projecting by the result equals projecting
    /// by `self` and then by `next`.
    pub fn then(&self, next: &ProjectionMatrix) -> Result<ProjectionMatrix> {
        if self.cols() != next.rows() {
            return invalid(format!(
                "cannot compose {}x{} with {}x{}",
                self.rows(),
                self.cols(),
                next.rows(),
                next.cols()
            ));
        }
        Ok(Self(&self.0 * &next.0))
    }
}

/// Squared Mahalanobis distance `(xi - xj)ᵀ M (xi - xj)`, clamped at 0.
pub fn mahalanobis_distance_sq(xi: &[f64], xj: &[f64], m: &MetricMatrix) -> Result<f64> {
    if xi.len() != m.dim() || xj.len() != m.dim() {
        return invalid(format!(
            "point dimensions {} and {} do not match metric dimension {}",
            xi.len(),
            xj.len(),
            m.dim()
        ));
    }
    let diff: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| a - b).collect();
    Ok(quad_form(&diff, m.as_matrix()))
}

/// `vᵀ M v` clamped at 0. Evaluated so that `v` and `-v` give identical bits.
pub(crate) fn quad_form(v: &[f64], m: &DMatrix<f64>) -> f64 {
    let d = v.len();
    let mut acc = 0.0;
    for c in 0..d {
        let mut row = 0.0;
        for r in 0..d {
            row += m[(r, c)] * v[r];
        }
        acc += row * v[c];
    }
    acc.max(0.0)
}

/// Squared distances between all point pairs of `x` under `m`, as an n×n
/// symmetric matrix with zero diagonal.
pub fn pairwise_distances_sq(x: &Dataset, m: &MetricMatrix) -> Result<DMatrix<f64>> {
    if x.dim() != m.dim() {
        return invalid(format!("dataset dimension {} does not match metric dimension {}", x.dim(), m.dim()));
    }
    let n = x.n();
    let d = x.dim();
    let pts = x.points();
    let mut out = DMatrix::zeros(n, n);
    let mut diff = vec![0.0; d];
    for i in 0..n {
        for j in (i + 1)..n {
            for (f, slot) in diff.iter_mut().enumerate() {
                *slot = pts[(i, f)] - pts[(j, f)];
            }
            let v = quad_form(&diff, m.as_matrix());
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Frobenius-nearest PSD matrix: eigendecompose, clamp negative eigenvalues
/// to zero, reassemble.
pub fn psd_project(m: &DMatrix<f64>) -> Result<MetricMatrix> {
    if !m.is_square() || m.nrows() == 0 {
        return invalid(format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return invalid("matrix contains non-finite entries");
    }
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > PROJECT_SYMMETRY_TOL * scale {
        return invalid(format!("matrix is not symmetric (max deviation {asym:e})"));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    Ok(MetricMatrix(symmetrize(&rebuilt)))
}

/// Diagonal strengthening used when none is given: `1e-6 · trace(M) / d`.
pub fn default_strengthen(m: &MetricMatrix) -> f64 {
    1e-6 * m.trace().max(0.0) / m.dim() as f64
}

/// Factorizes `M + eps·I` as `L Lᵀ` with `L = Ψ Σ^½` from its
/// eigendecomposition. Columns follow descending eigenvalue; each column's
/// largest-magnitude entry is made positive.
pub fn factorize_metric(m: &MetricMatrix, strengthen_eps: f64) -> Result<ProjectionMatrix> {
    if !(strengthen_eps >= 0.0 && strengthen_eps.is_finite()) {
        return invalid(format!("strengthen_eps must be finite and >= 0, got {strengthen_eps}"));
    }
    let d = m.dim();
    let shifted = m.as_matrix() + DMatrix::identity(d, d) * strengthen_eps;
    let (values, vectors) = sorted_eigen(&shifted);
    let mut l = vectors;
    for (j, lambda) in values.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    Ok(ProjectionMatrix(l))
}

/// Replaces every point `x` by `Lᵀx`.
pub fn project_dataset(x: &Dataset, l: &ProjectionMatrix) -> Result<Dataset> {
    if x.dim() != l.rows() {
        return invalid(format!("dataset dimension {} does not match projection rows {}", x.dim(), l.rows()));
    }
    x.with_points(x.points() * l.as_matrix())
}

/// Centers `x` and projects it onto its `dims` leading principal directions.
/// Returns the projected dataset and the d×dims orthonormal basis.
pub fn pca_fit_project(x: &Dataset, dims: usize) -> Result<(Dataset, DMatrix<f64>)> {
    if dims == 0 || dims > x.dim() {
        return invalid(format!("PCA dims must be in 1..={}, got {dims}", x.dim()));
    }
    let centered = center(x.points());
    let denom = (x.n().max(2) - 1) as f64;
    let cov = symmetrize(&(centered.transpose() * &centered / denom));
    let (_, vectors) = sorted_eigen(&cov);
    let basis = vectors.columns(0, dims).into_owned();
    let projected = x.with_points(&centered * &basis)?;
    Ok((projected, basis))
}

pub(crate) fn center(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows() as f64;
    let mut out = points.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Eigenpairs of a symmetric matrix, descending by eigenvalue (stable on ties),
/// with each eigenvector's largest-magnitude entry made positive.
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = m.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let (mut best, mut best_abs) = (0, -1.0);
        for (r, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best = r;
                best_abs = v.abs();
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for a in 0..d {
        for b in (a + 1)..d {
            worst = worst.max((m[(a, b)] - m[(b, a)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn distance_zero_for_identical_points() {
        let m = MetricMatrix::new(diag(&[3.0, 0.5])).unwrap();
        assert_eq!(mahalanobis_distance_sq(&[1.0, -2.0], &[1.0, -2.0], &m).unwrap(), 0.0);
    }

    #[test]
    fn distance_identity_is_squared_euclidean() {
        let m = MetricMatrix::identity(2);
        assert_abs_diff_eq!(mahalanobis_distance_sq(&[1.0, 2.0], &[0.0, 0.0], &m).unwrap(), 5.0);
    }

    #[test]
    fn distance_diagonal_metric() {
        // (1,1) diag(2,1) (1,1)ᵀ = 2 + 1
        let m = MetricMatrix::diagonal(&[2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(mahalanobis_distance_sq(&[1.0, 1.0], &[0.0, 0.0], &m).unwrap(), 3.0);
    }

    #[test]
    fn distance_dimension_mismatch() {
        let m = MetricMatrix::identity(2);
        assert!(mahalanobis_distance_sq(&[1.0], &[0.0, 0.0], &m).is_err());
    }

    #[test]
    fn metric_rejects_asymmetric_and_indefinite() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(MetricMatrix::new(asym).is_err());
        assert!(MetricMatrix::new(diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn psd_project_identity_unchanged() {
        let p = psd_project(&DMatrix::identity(3, 3)).unwrap();
        assert!((p.as_matrix() - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn psd_project_clamps_diagonal() {
        let p = psd_project(&diag(&[1.0, -2.0])).unwrap();
        assert!((p.as_matrix() - diag(&[1.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn psd_project_rejects_bad_input() {
        assert!(psd_project(&DMatrix::zeros(2, 3)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(psd_project(&asym).is_err());
    }

    #[test]
    fn factorize_identity() {
        let l = factorize_metric(&MetricMatrix::identity(3), 0.0).unwrap();
        let back = l.as_matrix() * l.as_matrix().transpose();
        assert!((back - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn factorize_diagonal_closed_form() {
        let l = factorize_metric(&MetricMatrix::diagonal(&[4.0, 1.0]).unwrap(), 0.0).unwrap();
        assert!((l.as_matrix() - diag(&[2.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn factorize_orders_columns_by_eigenvalue() {
        let l = factorize_metric(&MetricMatrix::diagonal(&[1.0, 9.0]).unwrap(), 0.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 3.0, 0.0]);
        assert!((l.as_matrix() - expected).norm() < 1e-12);
    }

    #[test]
    fn factorize_rank_one() {
        let v = DVector::from_column_slice(&[1.0, -2.0, 2.0]);
        let m = MetricMatrix::new(&v * v.transpose()).unwrap();
        let l = factorize_metric(&m, 0.0).unwrap();
        let first = l.as_matrix().column(0);
        // |v| = 3, so the first column is ±v and the rest vanish.
        let cos = first.dot(&v).abs() / (first.norm() * v.norm());
        assert_abs_diff_eq!(cos, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(first.norm(), 3.0, epsilon = 1e-10);
        for j in 1..3 {
            assert!(l.as_matrix().column(j).norm() < 1e-7);
        }
    }

    #[test]
    fn factorize_strengthens_diagonal() {
        let l = factorize_metric(&MetricMatrix::diagonal(&[1.0, 0.0]).unwrap(), 0.25).unwrap();
        let m = l.metric();
        assert!((m.as_matrix() - diag(&[1.25, 0.25])).norm() < 1e-12);
    }

    #[test]
    fn factorize_sign_convention() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let l = factorize_metric(&MetricMatrix::new(m).unwrap(), 0.0).unwrap();
        for col in l.as_matrix().column_iter() {
            let (idx, _) = col.iamax_full();
            assert!(col[idx] > 0.0);
        }
    }

    #[test]
    fn project_identity_and_coordinate() {
        let ds = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![0, 1]).unwrap();
        let same = project_dataset(&ds, &ProjectionMatrix::identity(2)).unwrap();
        assert_eq!(same, ds);
        let e1 = ProjectionMatrix::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let first = project_dataset(&ds, &e1).unwrap();
        assert_eq!(first.dim(), 1);
        assert_eq!(first.point(1), vec![3.0]);
        assert_eq!(first.labels(), ds.labels());
        assert!(project_dataset(&first, &e1).is_err());
    }

    #[test]
    fn pca_rejects_too_many_dims() {
        let ds = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0]], vec![0, 1]).unwrap();
        assert!(pca_fit_project(&ds, 3).is_err());
        assert!(pca_fit_project(&ds, 0).is_err());
    }

    #[test]
    fn pca_line_in_3d_is_exact() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let t = i as f64 * 0.7 - 3.0;
                vec![1.0 + 2.0 * t, -1.0 + t, 0.5 - 2.0 * t]
            })
            .collect();
        let ds = Dataset::from_rows(&rows, vec![0; 12]).unwrap();
        let (proj, basis) = pca_fit_project(&ds, 1).unwrap();
        let centered = center(ds.points());
        let recon = proj.points() * basis.transpose();
        assert!((recon - centered).norm() < 1e-8);
    }

    proptest! {
        #[test]
        fn distance_symmetric_exactly(
            a in prop::collection::vec(-10.0..10.0f64, 3),
            b in prop::collection::vec(-10.0..10.0f64, 3),
            f in prop::collection::vec(-2.0..2.0f64, 9),
        ) {
            let l = DMatrix::from_column_slice(3, 3, &f);
            let m = MetricMatrix::new(symmetrize(&(&l * l.transpose()))).unwrap();
            prop_assert_eq!(
                mahalanobis_distance_sq(&a, &b, &m).unwrap(),
                mahalanobis_distance_sq(&b, &a, &m).unwrap()
            );
        }

        #[test]
        fn triangle_inequality_on_root_distance(
            pts in prop::collection::vec(-10.0..10.0f64, 9),
            f in prop::collection::vec(-2.0..2.0f64, 9),
        ) {
            let l = DMatrix::from_column_slice(3, 3, &f);
            let m = MetricMatrix::new(symmetrize(&(&l * l.transpose()))).unwrap();
            let (a, b, c) = (&pts[0..3], &pts[3..6], &pts[6..9]);
            let dist = |x: &[f64], y: &[f64]| mahalanobis_distance_sq(x, y, &m).unwrap().sqrt();
            prop_assert!(dist(a, c) <= dist(a, b) + dist(b, c) + 1e-8);
        }

        #[test]
        fn psd_project_idempotent(entries in prop::collection::vec(-5.0..5.0f64, 16)) {
            let raw = DMatrix::from_column_slice(4, 4, &entries);
            let sym = symmetrize(&raw);
            let once = psd_project(&sym).unwrap();
            prop_assert!(min_eigenvalue(once.as_matrix()) >= -1e-10);
            let twice = psd_project(once.as_matrix()).unwrap();
            prop_assert!((once.as_matrix() - twice.as_matrix()).norm() <= 1e-10);
        }
    }
}
