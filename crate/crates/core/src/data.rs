//! Feature datasets, pairwise supervision and RBF kernel preprocessing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use thiserror::Error;

use crate::par;
use crate::seed::SeedSplitter;

/// Nearest-neighbour count used by [`rbf_bandwidth`] when none is given.
pub const DEFAULT_BANDWIDTH_NEIGHBORS: usize = 100;
/// Default top-percentile for distance-derived supervision.
pub const DEFAULT_PERCENTILE: f64 = 2.0;
/// Default anchor count for kernel features.
pub const DEFAULT_ANCHORS: usize = 300;
/// Up to this many points, supervision defaults to full pairing.
pub const FULL_PAIRING_LIMIT: usize = 2000;
/// Partners per point for larger sets when the caller does not choose.
pub const DEFAULT_SAMPLED_PAIRS: usize = 200;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty file")]
    Empty,
    #[error("ragged row {row}: expected {expected} columns, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-numeric cell at row {row}, column {col}: {cell:?}")]
    NonNumeric { row: usize, col: usize, cell: String },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid label at row {row}: {cell:?}")]
    BadLabel { row: usize, cell: String },
    #[error("dataset has no labels")]
    MissingLabels,
    #[error("pairs_per_point = {requested} exceeds n - 1 = {max}")]
    TooManyPairs { requested: usize, max: usize },
    #[error("percentile {0} outside (0, 100)")]
    BadPercentile(f64),
    #[error("need at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },
    #[error("degenerate bandwidth: all points coincide")]
    DegenerateBandwidth,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid pair ({i}, {j}) for n = {n}")]
    InvalidPair { i: usize, j: usize, n: usize },
    #[error("duplicate pair ({i}, {j})")]
    DuplicatePair { i: usize, j: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Dense row-major matrix of finite reals. May have zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DataError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if cols == 0 {
            return Err(DataError::InvalidParameter("matrix needs at least one column".into()));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: p / cols + 1,
                col: p % cols + 1,
            });
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(DataError::Ragged {
                    row: r + 1,
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    /// New matrix holding the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            data,
            rows: idx.len(),
            cols: self.cols,
        }
    }
}

/// Training points with optional integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Option<Vec<i64>>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(DataError::TooFewPoints { n: 0, min: 1 });
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(DataError::DimensionMismatch {
                    expected: features.rows(),
                    found: l.len(),
                });
            }
        }
        Ok(Self { features, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<i64>>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, labels)
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }
}

/// Parsed CSV contents before the non-empty check.
struct RawTable {
    features: Vec<f64>,
    labels: Vec<i64>,
    rows: usize,
    cols: Option<usize>,
}

fn parse_csv(text: &str, has_labels: bool) -> Result<RawTable> {
    let mut out = RawTable {
        features: Vec::new(),
        labels: Vec::new(),
        rows: 0,
        cols: None,
    };
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let width = cells.len();
        match out.cols {
            None => {
                let min = if has_labels { 2 } else { 1 };
                if width < min {
                    return Err(DataError::Ragged {
                        row,
                        expected: min,
                        found: width,
                    });
                }
                out.cols = Some(width);
            }
            Some(w) if w != width => {
                return Err(DataError::Ragged {
                    row,
                    expected: w,
                    found: width,
                })
            }
            Some(_) => {}
        }
        let nfeat = if has_labels { width - 1 } else { width };
        for (c, cell) in cells[..nfeat].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                row,
                col: c + 1,
                cell: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite { row, col: c + 1 });
            }
            out.features.push(v);
        }
        if has_labels {
            let cell = cells[width - 1];
            let label: i64 = cell.parse().map_err(|_| DataError::BadLabel {
                row,
                cell: cell.to_string(),
            })?;
            out.labels.push(label);
        }
        out.rows += 1;
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a dataset from CSV text. See [`load_dataset`].
pub fn parse_dataset(text: &str, has_labels: bool) -> Result<Dataset> {
    let raw = parse_csv(text, has_labels)?;
    let Some(width) = raw.cols else {
        return Err(DataError::Empty);
    };
    let d = if has_labels { width - 1 } else { width };
    let features = Matrix::from_flat(raw.rows, d, raw.features)?;
    Dataset::new(features, has_labels.then_some(raw.labels))
}

/// Loads a headerless numeric CSV, one point per row. With `has_labels`
/// the last column is an integer class id.
pub fn load_dataset(path: impl AsRef<Path>, has_labels: bool) -> Result<Dataset> {
    parse_dataset(&read_text(path.as_ref())?, has_labels)
}

/// Loads points for encoding. Unlike [`load_dataset`] an empty file is
/// accepted and yields a zero-row matrix with `expected_d` columns.
pub fn load_points(path: impl AsRef<Path>, has_labels: bool, expected_d: usize) -> Result<Matrix> {
    let raw = parse_csv(&read_text(path.as_ref())?, has_labels)?;
    let Some(width) = raw.cols else {
        return Matrix::from_flat(0, expected_d, Vec::new());
    };
    let d = if has_labels { width - 1 } else { width };
    if d != expected_d {
        return Err(DataError::DimensionMismatch {
            expected: expected_d,
            found: d,
        });
    }
    Matrix::from_flat(raw.rows, d, raw.features)
}

/// One defined relation between two points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub y: f64,
}

/// Sparse symmetric affinity relations. Absent pairs are undefined.
///
/// Entries are stored once per unordered pair with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSupervision {
    n: usize,
    entries: Vec<Pair>,
}

impl PairSupervision {
    pub fn new(n: usize, pairs: impl IntoIterator<Item = Pair>) -> Result<Self> {
        let mut entries: Vec<Pair> = Vec::new();
        for p in pairs {
            if p.i >= n || p.j >= n || p.i == p.j {
                return Err(DataError::InvalidPair { i: p.i, j: p.j, n });
            }
            if !p.y.is_finite() {
                return Err(DataError::InvalidParameter(format!(
                    "affinity for ({}, {}) is not finite",
                    p.i, p.j
                )));
            }
            let (i, j) = if p.i < p.j { (p.i, p.j) } else { (p.j, p.i) };
            entries.push(Pair { i, j, y: p.y });
        }
        entries.sort_by_key(|p| (p.i, p.j));
        if let Some(w) = entries.windows(2).find(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(DataError::DuplicatePair { i: w[0].i, j: w[0].j });
        }
        Ok(Self { n, entries })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Pair] {
        &self.entries
    }

    /// Affinity of `(i, j)` in either order; `None` when undefined.
    pub fn lookup(&self, i: usize, j: usize) -> Option<f64> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.entries
            .binary_search_by_key(&key, |p| (p.i, p.j))
            .ok()
            .map(|k| self.entries[k].y)
    }

    /// `i,j,y` lines, one per stored pair.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for p in &self.entries {
            let _ = writeln!(s, "{},{},{}", p.i, p.j, p.y);
        }
        s
    }

    pub fn from_csv(n: usize, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let row = lineno + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 3 {
                return Err(DataError::Ragged {
                    row,
                    expected: 3,
                    found: cells.len(),
                });
            }
            let idx = |c: usize| -> Result<usize> {
                cells[c].parse().map_err(|_| DataError::NonNumeric {
                    row,
                    col: c + 1,
                    cell: cells[c].to_string(),
                })
            };
            let y: f64 = cells[2].parse().map_err(|_| DataError::NonNumeric {
                row,
                col: 3,
                cell: cells[2].to_string(),
            })?;
            pairs.push(Pair { i: idx(0)?, j: idx(1)?, y });
        }
        Self::new(n, pairs)
    }
}

/// Partner count used when the caller leaves it unspecified.
pub fn default_pairs_per_point(n: usize) -> usize {
    if n <= FULL_PAIRING_LIMIT {
        n.saturating_sub(1)
    } else {
        DEFAULT_SAMPLED_PAIRS
    }
}

/// Samples `pairs_per_point` distinct partners for every point and returns the
/// deduplicated unordered pairs in ascending order.
fn sample_pairs(n: usize, pairs_per_point: usize, seed: u64) -> Vec<(usize, usize)> {
    let splitter = SeedSplitter::new(seed);
    let per_point: Vec<Vec<(usize, usize)>> = par::map_range(n, |i| {
        if pairs_per_point == n - 1 {
            return (i + 1..n).map(|j| (i, j)).collect();
        }
        let mut rng = splitter.rng(i as u64);
        index::sample(&mut rng, n - 1, pairs_per_point)
            .into_iter()
            .map(|k| {
                let j = if k < i { k } else { k + 1 };
                (i.min(j), i.max(j))
            })
            .collect()
    });
    let mut pairs: Vec<(usize, usize)> = per_point.into_iter().flatten().collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn check_pairs_per_point(n: usize, pairs_per_point: usize) -> Result<()> {
    if pairs_per_point == 0 {
        return Err(DataError::InvalidParameter("pairs_per_point must be at least 1".into()));
    }
    if pairs_per_point > n.saturating_sub(1) {
        return Err(DataError::TooManyPairs {
            requested: pairs_per_point,
            max: n.saturating_sub(1),
        });
    }
    Ok(())
}

/// Supervision by label agreement: `+1` for same class, `-1` otherwise.
pub fn supervision_from_labels(ds: &Dataset, pairs_per_point: usize, seed: u64) -> Result<PairSupervision> {
    let labels = ds.labels().ok_or(DataError::MissingLabels)?;
    let n = ds.n();
    if n == 1 {
        return Ok(PairSupervision::empty(1));
    }
    check_pairs_per_point(n, pairs_per_point)?;
    let entries: Vec<Pair> = sample_pairs(n, pairs_per_point, seed)
        .into_iter()
        .map(|(i, j)| Pair {
            i,
            j,
            y: if labels[i] == labels[j] { 1.0 } else { -1.0 },
        })
        .collect();
    Ok(PairSupervision { n, entries })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index into an ascending list of `count` distances for the top-`percentile`
/// threshold: `ceil(p/100 * count) - 1`, clamped to the list.
pub fn quantile_index(percentile: f64, count: usize) -> usize {
    let idx = (percentile / 100.0 * count as f64).ceil() as usize;
    idx.saturating_sub(1).min(count.saturating_sub(1))
}

/// Per-point distance to every other point plus the top-percentile threshold.
fn distance_thresholds(ds: &Dataset, percentile: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = ds.n();
    let rows: Vec<(Vec<f64>, f64)> = par::map_range(n, |i| {
        let xi = ds.row(i);
        let dists: Vec<f64> = (0..n).map(|j| euclidean(xi, ds.row(j))).collect();
        let mut others: Vec<f64> = dists
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .collect();
        others.sort_by(f64::total_cmp);
        let thr = others[quantile_index(percentile, others.len())];
        (dists, thr)
    });
    rows.into_iter().unzip()
}

/// Pseudo-labels from Euclidean neighbourhoods.
///
/// A pair is similar when either endpoint finds the other within its own
/// top-`percentile` distance threshold (ties count as within).
pub fn supervision_from_distance(
    ds: &Dataset,
    percentile: f64,
    pairs_per_point: usize,
    seed: u64,
) -> Result<PairSupervision> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(DataError::BadPercentile(percentile));
    }
    let n = ds.n();
    if n < 2 {
        return Err(DataError::TooFewPoints { n, min: 2 });
    }
    check_pairs_per_point(n, pairs_per_point)?;
    let (dists, thr) = distance_thresholds(ds, percentile);
    let entries: Vec<Pair> = sample_pairs(n, pairs_per_point, seed)
        .into_iter()
        .map(|(i, j)| {
            let d = dists[i][j];
            let similar = d <= thr[i] || d <= thr[j];
            Pair {
                i,
                j,
                y: if similar { 1.0 } else { -1.0 },
            }
        })
        .collect();
    Ok(PairSupervision { n, entries })
}

/// RBF bandwidth `t * dbar`, where `dbar` averages each point's mean distance
/// to its `k` nearest neighbours (`k` clamped to `n - 1`).
pub fn rbf_bandwidth(ds: &Dataset, t: f64, k: usize) -> Result<f64> {
    let n = ds.n();
    if n < 2 {
        return Err(DataError::TooFewPoints { n, min: 2 });
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(DataError::InvalidParameter(format!("bandwidth scale t must be positive, got {t}")));
    }
    if k == 0 {
        return Err(DataError::InvalidParameter("neighbour count must be at least 1".into()));
    }
    let k = k.min(n - 1);
    let per_point: Vec<f64> = par::map_range(n, |i| {
        let xi = ds.row(i);
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| euclidean(xi, ds.row(j)))
            .collect();
        d.sort_by(f64::total_cmp);
        d[..k].iter().sum::<f64>() / k as f64
    });
    let dbar = per_point.iter().sum::<f64>() / n as f64;
    if dbar <= 0.0 {
        return Err(DataError::DegenerateBandwidth);
    }
    Ok(t * dbar)
}

/// Anchors and bandwidth for kernel-transferred features.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    anchors: Matrix,
    bandwidth: f64,
}

impl KernelConfig {
    pub fn new(anchors: Matrix, bandwidth: f64) -> Result<Self> {
        if anchors.rows() == 0 {
            return Err(DataError::InvalidParameter("at least one anchor is required".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(DataError::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { anchors, bandwidth })
    }

    /// Draws `q` anchor rows from `ds` without replacement (`q` clamped to `n`).
    pub fn sample(ds: &Dataset, q: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if q == 0 {
            return Err(DataError::InvalidParameter("at least one anchor is required".into()));
        }
        let q = q.min(ds.n());
        let mut rng = SeedSplitter::new(seed).rng(0);
        let mut idx = index::sample(&mut rng, ds.n(), q).into_vec();
        idx.sort_unstable();
        Self::new(ds.features().select_rows(&idx), bandwidth)
    }

    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.rows()
    }

    pub fn dim(&self) -> usize {
        self.anchors.cols()
    }
}

/// RBF responses of `x` against every anchor: `exp(-|x - a|^2 / (2 sigma^2))`.
pub fn kernel_features(x: &[f64], cfg: &KernelConfig) -> Result<Vec<f64>> {
    if x.len() != cfg.dim() {
        return Err(DataError::DimensionMismatch {
            expected: cfg.dim(),
            found: x.len(),
        });
    }
    let denom = 2.0 * cfg.bandwidth * cfg.bandwidth;
    Ok(cfg
        .anchors
        .iter_rows()
        .map(|a| (-squared_euclidean(x, a) / denom).exp())
        .collect())
}

/// Row-wise [`kernel_features`].
pub fn kernel_transform(points: &Matrix, cfg: &KernelConfig) -> Result<Matrix> {
    if points.cols() != cfg.dim() {
        return Err(DataError::DimensionMismatch {
            expected: cfg.dim(),
            found: points.cols(),
        });
    }
    let rows: Vec<Vec<f64>> = par::map_range(points.rows(), |i| {
        kernel_features(points.row(i), cfg).expect("dimension checked")
    });
    let q = cfg.num_anchors();
    Matrix::from_flat(points.rows(), q, rows.into_iter().flatten().collect())
}
