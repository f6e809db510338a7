//! Dataset files, synthetic generators and ghost-image export.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::metric::{pca_fit_project, ProjectionMatrix};
use crate::rng::{derive_seed, rng_from_seed, Rng};

const IRIS_CSV: &str = include_str!("../data/iris.csv");

/// Which column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = Error;

    /// Integers select by index, `last` the final column, anything else by
    /// header name.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("last") {
            return Ok(LabelColumn::Last);
        }
        Ok(s.parse::<usize>().map_or_else(|_| LabelColumn::Name(s.to_string()), LabelColumn::Index))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub has_header: bool,
    pub label_col: LabelColumn,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { has_header: false, label_col: LabelColumn::Last }
    }
}

pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, opts)
}

/// Parses CSV text. Labels that all parse as non-negative integers are kept
/// as-is; otherwise they are interned to 0, 1, ... in order of first
/// appearance.
pub fn parse_csv(text: &str, opts: &CsvOptions) -> Result<Dataset> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push((line, rec));
    }
    let header = if opts.has_header && !records.is_empty() { Some(records.remove(0)) } else { None };
    let Some((first_line, first)) = records.first() else {
        return Err(Error::Parse { line: 1, message: "no data rows".into() });
    };
    let width = first.len();
    let label_idx = match &opts.label_col {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => {
            let (line, h) = header.as_ref().ok_or(Error::Parse {
                line: 1,
                message: format!("label column `{name}` requested without a header"),
            })?;
            h.iter().position(|c| c == name).ok_or_else(|| Error::Parse {
                line: *line,
                message: format!("label column `{name}` not found in header"),
            })?
        }
    };
    if label_idx >= width {
        return Err(Error::Parse {
            line: *first_line,
            message: format!("label column {label_idx} missing; rows have {width} columns"),
        });
    }
    if width < 2 {
        return Err(Error::Parse {
            line: *first_line,
            message: "need at least one feature column besides the label".into(),
        });
    }

    let mut features = Vec::with_capacity(records.len() * (width - 1));
    let mut raw_labels = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected {width} columns, found {}", rec.len()),
            });
        }
        for (c, field) in rec.iter().enumerate() {
            if c == label_idx {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: *line,
                message: format!("non-numeric feature `{field}` in column {c}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: *line, message: format!("non-finite feature `{field}`") });
            }
            features.push(v);
        }
    }
    let labels = intern_labels(&raw_labels);
    let points = DMatrix::from_row_slice(records.len(), width - 1, &features);
    Dataset::new(points, labels)
}

fn intern_labels(raw: &[String]) -> Vec<usize> {
    let numeric: Option<Vec<usize>> = raw.iter().map(|s| s.parse::<usize>().ok()).collect();
    numeric.unwrap_or_else(|| {
        let mut ids: HashMap<&str, usize> = HashMap::new();
        raw.iter()
            .map(|s| {
                let next = ids.len();
                *ids.entry(s.as_str()).or_insert(next)
            })
            .collect()
    })
}

/// CSV text with a `f0,...,f{d-1},label` header. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn to_csv(ds: &Dataset) -> String {
    let mut out: String = (0..ds.dim()).map(|f| format!("f{f},")).collect();
    out.push_str("label\n");
    for i in 0..ds.n() {
        for v in ds.points().row(i).iter() {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", ds.label(i)));
    }
    out
}

pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, to_csv(ds).as_bytes())
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name =
        path.file_name().ok_or_else(|| Error::InvalidArgument(format!("`{}` is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// The bundled Fisher Iris data: 150 points, 4 features, 3 classes.
pub fn iris() -> Dataset {
    parse_csv(IRIS_CSV, &CsvOptions { has_header: true, label_col: LabelColumn::Last })
        .expect("bundled iris.csv is well-formed")
}

pub const GENERATORS: [&str; 3] = ["gaussians", "anisotropic_gaussians", "concentric"];

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    /// One of [`GENERATORS`].
    pub generator: String,
    pub classes: usize,
    pub per_class: usize,
    pub dims: usize,
    /// Distance between class centers (gaussians), along the discriminative
    /// axis (anisotropic), or between shell radii (concentric).
    pub separation: f64,
    /// Standard deviation of the non-discriminative axes (anisotropic) or of
    /// the radial jitter (concentric).
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { generator: "gaussians".into(), classes: 2, per_class: 50, dims: 2, separation: 4.0, noise_std: 1.0 }
    }
}

/// Generates `spec` deterministically from `seed`; rows are grouped by
/// class, labels are `0..classes`.
///
/// * `gaussians`: unit covariance around the vertices of a regular simplex
///   with edge `separation` (needs `dims >= classes`).
/// * `anisotropic_gaussians`: class `c` centered at `c·separation` on axis 0
///   with unit spread; every other axis is `N(0, noise_std²)` noise.
/// * `concentric`: class `c` on a shell of radius `(c+1)·separation` with
///   radial jitter `noise_std`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if !GENERATORS.contains(&spec.generator.as_str()) {
        return Err(Error::UnknownGenerator { name: spec.generator.clone(), known: GENERATORS.join(", ") });
    }
    if spec.classes == 0 || spec.per_class == 0 || spec.dims == 0 {
        return invalid("classes, per_class and dims must be positive");
    }
    if !(spec.separation.is_finite() && spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return invalid("separation must be finite and noise_std non-negative");
    }
    let mut rng = rng_from_seed(derive_seed(seed, &spec.generator));
    let n = spec.classes * spec.per_class;
    let d = spec.dims;
    let mut points = DMatrix::zeros(n, d);
    let labels: Vec<usize> = (0..n).map(|i| i / spec.per_class).collect();
    let gauss = |rng: &mut Rng| -> f64 { StandardNormal.sample(rng) };

    match spec.generator.as_str() {
        "gaussians" => {
            if d < spec.classes {
                return invalid(format!("gaussians needs dims >= classes ({} < {})", d, spec.classes));
            }
            let scale = spec.separation / std::f64::consts::SQRT_2;
            for i in 0..n {
                for f in 0..d {
                    let center = if f == labels[i] { scale } else { 0.0 };
                    points[(i, f)] = center + gauss(&mut rng);
                }
            }
        }
        "anisotropic_gaussians" => {
            if d < 2 {
                return invalid("anisotropic_gaussians needs dims >= 2");
            }
            for i in 0..n {
                points[(i, 0)] = labels[i] as f64 * spec.separation + gauss(&mut rng);
                for f in 1..d {
                    points[(i, f)] = spec.noise_std * gauss(&mut rng);
                }
            }
        }
        _ => {
            for i in 0..n {
                let radius = (labels[i] + 1) as f64 * spec.separation + spec.noise_std * gauss(&mut rng);
                let dir: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                for (f, v) in dir.iter().enumerate() {
                    points[(i, f)] = radius * v / norm;
                }
            }
        }
    }
    Dataset::new(points, labels)
}

/// Desk-scale stand-ins for the face and digit benchmarks: random class
/// prototypes in a high-dimensional space with isotropic noise, reduced by
/// PCA to the working dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surrogate {
    pub name: &'static str,
    pub classes: usize,
    pub per_class: usize,
    pub raw_dims: usize,
    pub prototype_std: f64,
    pub pca_dims: usize,
}

pub const ORL_SURROGATE: Surrogate = Surrogate {
    name: "orl-surrogate(synthetic)",
    classes: 40,
    per_class: 10,
    raw_dims: 100,
    prototype_std: 0.6,
    pca_dims: 15,
};

pub const MNIST_SURROGATE: Surrogate = Surrogate {
    name: "mnist-surrogate(synthetic)",
    classes: 10,
    per_class: 60,
    raw_dims: 64,
    prototype_std: 0.5,
    pca_dims: 30,
};

impl Surrogate {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let mut rng = rng_from_seed(derive_seed(seed, self.name));
        let proto = Normal::new(0.0, self.prototype_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let prototypes: Vec<Vec<f64>> =
            (0..self.classes).map(|_| (0..self.raw_dims).map(|_| proto.sample(&mut rng)).collect()).collect();
        let n = self.classes * self.per_class;
        let labels: Vec<usize> = (0..n).map(|i| i / self.per_class).collect();
        // Per-sample gain mimics illumination changes.
        let mut points = DMatrix::zeros(n, self.raw_dims);
        for i in 0..n {
            let gain = 1.0 + 0.2 * rng.random::<f64>();
            for f in 0..self.raw_dims {
                let noise: f64 = StandardNormal.sample(&mut rng);
                points[(i, f)] = gain * prototypes[labels[i]][f] + 0.35 * noise;
            }
        }
        let raw = Dataset::new(points, labels)?;
        Ok(pca_fit_project(&raw, self.pca_dims)?.0)
    }
}

/// Binary PGM (P5, maxval 255) of one column of `L`, min-max normalized and
/// laid out row-major as `height × width`. A constant column renders as 128.
pub fn ghost_pgm(column: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if height * width != column.len() || column.is_empty() {
        return invalid(format!("{height}x{width} image does not match column length {}", column.len()));
    }
    let (lo, hi) = column.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let range = hi - lo;
    out.extend(column.iter().map(|&v| {
        if range > 0.0 {
            (255.0 * (v - lo) / range).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    }));
    Ok(out)
}

/// Writes `ghost_000.pgm`, `ghost_001.pgm`, ... for the `top_m` leading
/// columns of `l` into `dir`.
pub fn export_ghost_images(
    l: &ProjectionMatrix,
    height: usize,
    width: usize,
    top_m: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if height * width != l.rows() {
        return invalid(format!("{height}x{width} images need {} rows, L has {}", height * width, l.rows()));
    }
    if top_m == 0 || top_m > l.cols() {
        return invalid(format!("top_m must be in 1..={}, got {top_m}", l.cols()));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(top_m);
    for j in 0..top_m {
        let col: Vec<f64> = l.as_matrix().column(j).iter().copied().collect();
        let path = dir.join(format!("ghost_{j:03}.pgm"));
        write_atomic(&path, &ghost_pgm(&col, height, width)?)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iris_shape() {
        let ds = iris();
        assert_eq!((ds.n(), ds.dim()), (150, 4));
        assert_eq!(ds.classes(), vec![0, 1, 2]);
        assert!(ds.class_counts().values().all(|&c| c == 50));
    }

    #[test]
    fn empty_input_is_parse_error() {
        assert!(matches!(parse_csv("", &CsvOptions::default()), Err(Error::Parse { .. })));
        let header_only = CsvOptions { has_header: true, label_col: LabelColumn::Last };
        assert!(matches!(parse_csv("a,b\n", &header_only), Err(Error::Parse { .. })));
    }

    #[test]
    fn single_row_passes_through() {
        let ds = parse_csv("1.5,2.5,0\n", &CsvOptions::default()).unwrap();
        assert_eq!((ds.n(), ds.dim()), (1, 2));
    }

    #[test]
    fn ragged_row_reports_line() {
        match parse_csv("1,2,0\n3,4,1\n5,1\n", &CsvOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_feature_reports_line() {
        match parse_csv("1,2,0\nx,4,1\n", &CsvOptions::default()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains('x'));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_by_name_and_interning() {
        let text = "kind,a,b\ncat,1,2\ndog,3,4\ncat,5,6\n";
        let opts = CsvOptions { has_header: true, label_col: LabelColumn::Name("kind".into()) };
        let ds = parse_csv(text, &opts).unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.point(1), vec![3.0, 4.0]);
        let missing = CsvOptions { has_header: true, label_col: LabelColumn::Name("nope".into()) };
        assert!(matches!(parse_csv(text, &missing), Err(Error::Parse { line: 1, .. })));
        let out_of_range = CsvOptions { has_header: true, label_col: LabelColumn::Index(7) };
        assert!(parse_csv(text, &out_of_range).is_err());
    }

    #[test]
    fn unknown_generator_lists_known() {
        let spec = SyntheticSpec { generator: "spirals".into(), ..SyntheticSpec::default() };
        match generate_synthetic(&spec, 0) {
            Err(e @ Error::UnknownGenerator { .. }) => {
                let msg = e.to_string();
                assert!(GENERATORS.iter().all(|g| msg.contains(g)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generators_are_deterministic() {
        for g in GENERATORS {
            let spec = SyntheticSpec { generator: g.into(), classes: 3, dims: 3, ..SyntheticSpec::default() };
            let a = generate_synthetic(&spec, 5).unwrap();
            assert_eq!(a, generate_synthetic(&spec, 5).unwrap());
            assert_ne!(a, generate_synthetic(&spec, 6).unwrap());
            assert_eq!(a.n(), 150);
        }
    }

    #[test]
    fn ghost_constant_and_indicator() {
        let flat = ghost_pgm(&[0.3; 6], 2, 3).unwrap();
        assert_eq!(&flat[..11], b"P5\n3 2\n255\n");
        assert!(flat[11..].iter().all(|&b| b == 128));
        let mut col = vec![0.0; 6];
        col[4] = 1.0;
        let img = ghost_pgm(&col, 2, 3).unwrap();
        assert_eq!(&img[11..], &[0, 0, 0, 0, 255, 0]);
        assert!(ghost_pgm(&col, 2, 2).is_err());
    }
}
