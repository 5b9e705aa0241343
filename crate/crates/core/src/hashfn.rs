//! Per-bit hash functions.
//!
//! Bit `k` of the learned code matrix is treated as a binary label and a
//! linear classifier `sign(w . phi(x) + b)` is fitted to it, where `phi` is the
//! identity or the RBF response against a set of anchor points. Bits are fully
//! independent and trained in parallel.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{sign, CodeMatrix};
use crate::data::{kernel_transform, DataError, Dataset, KernelConfig, Matrix};
use crate::packed::{pack_signs, words_per_code, PackedCodes};
use crate::par;
use crate::seed::SeedSplitter;

pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_EPOCHS: usize = 50;

#[derive(Debug, Error)]
pub enum HashError {
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid classifier configuration: {0}")]
    Config(String),
    #[error("training column must contain only -1 and +1")]
    NotSign,
    #[error("kernel configuration must be given iff feature mode is kernel")]
    KernelMode,
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = HashError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Raw,
    Kernel,
}

impl std::str::FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(FeatureMode::Raw),
            "kernel" => Ok(FeatureMode::Kernel),
            _ => Err(format!("unknown feature mode {s:?}; expected raw or kernel")),
        }
    }
}

/// `h(x) = sign(w . x + b)` with `sign(0) = +1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHash {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearHash {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }

    pub fn apply(&self, x: &[f64]) -> i8 {
        sign(self.decision(x))
    }

    /// Mean hinge loss over `(features, column)`.
    pub fn mean_hinge(&self, features: &Matrix, column: &[i8]) -> f64 {
        let n = features.rows().max(1) as f64;
        features
            .iter_rows()
            .zip(column)
            .map(|(x, &y)| (1.0 - f64::from(y) * self.decision(x)).max(0.0))
            .sum::<f64>()
            / n
    }

    pub fn accuracy(&self, features: &Matrix, column: &[i8]) -> f64 {
        let hits = features
            .iter_rows()
            .zip(column)
            .filter(|(x, &y)| self.apply(x) == y)
            .count();
        hits as f64 / features.rows().max(1) as f64
    }
}

/// SVM trade-off and SGD schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    /// Weight of the summed hinge loss against `||w||^2 / 2`.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl ClassifierConfig {
    /// `c = 1000 / n`, 50 epochs.
    pub fn default_for(n: usize, seed: u64) -> Self {
        Self {
            c: 1e3 / n.max(1) as f64,
            epochs: DEFAULT_EPOCHS,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(HashError::Config(format!("c must be positive, got {}", self.c)));
        }
        if self.epochs == 0 {
            return Err(HashError::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedBit {
    pub hash: LinearHash,
    /// Set when the target column was constant and a bias-only classifier was returned.
    pub constant_column: bool,
}

/// Regularised hinge objective on standardised, bias-augmented features.
struct SvmProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    p: usize,
    lambda: f64,
}

impl SvmProblem<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn margin(&self, w: &[f64], i: usize) -> f64 {
        self.y[i] * self.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    fn objective(&self, w: &[f64]) -> f64 {
        let n = self.y.len() as f64;
        let reg = 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>();
        let hinge = (0..self.y.len()).map(|i| (1.0 - self.margin(w, i)).max(0.0)).sum::<f64>() / n;
        reg + hinge
    }
}

/// Fits an L2-regularised hinge-loss linear classifier by seeded epoch-wise
/// stochastic subgradient descent.
///
/// The objective is `||w||^2 / 2 + c * sum_i hinge_i`, optimised in the
/// equivalent normalised form `lambda/2 ||w||^2 + mean hinge` with
/// `lambda = 1 / (c n)` and step `1 / (lambda t)`. Features are standardised
/// internally and the bias is an extra always-one feature; the returned
/// weights act on the original features. The best epoch-end iterate (or its
/// running average) by objective is kept, and the zero classifier is the
/// fallback, so the result never has a worse objective than `w = 0, b = 0`.
pub fn train_bit_classifier(features: &Matrix, column: &[i8], cfg: &ClassifierConfig) -> Result<TrainedBit> {
    cfg.validate()?;
    let n = features.rows();
    if column.len() != n {
        return Err(HashError::DimensionMismatch {
            expected: n,
            found: column.len(),
        });
    }
    if n == 0 {
        return Err(HashError::Config("cannot train on zero points".into()));
    }
    if column.iter().any(|&b| b != 1 && b != -1) {
        return Err(HashError::NotSign);
    }
    let d = features.cols();
    if column.iter().all(|&b| b == column[0]) {
        return Ok(TrainedBit {
            hash: LinearHash {
                w: vec![0.0; d],
                b: f64::from(column[0]),
            },
            constant_column: true,
        });
    }

    // Standardise; constant features get unit scale.
    let mut mean = vec![0.0; d];
    for x in features.iter_rows() {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; d];
    for x in features.iter_rows() {
        scale.iter_mut().zip(x.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m));
    }
    scale.iter_mut().for_each(|s| {
        let sd = (*s / n as f64).sqrt();
        *s = if sd > 1e-12 { sd } else { 1.0 };
    });
    let p = d + 1;
    let mut x = Vec::with_capacity(n * p);
    for row in features.iter_rows() {
        x.extend(row.iter().zip(mean.iter().zip(&scale)).map(|(v, (m, s))| (v - m) / s));
        x.push(1.0);
    }
    let y: Vec<f64> = column.iter().map(|&b| f64::from(b)).collect();
    let lambda = 1.0 / (cfg.c * n as f64);
    let prob = SvmProblem { x: &x, y: &y, p, lambda };
    let radius = 1.0 / lambda.sqrt();

    let mut rng = SeedSplitter::new(cfg.seed).rng(0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = vec![0.0; p];
    let mut best_w = vec![0.0; p];
    let mut best_obj = prob.objective(&best_w);
    let mut t = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut avg = vec![0.0; p];
        for (count, &i) in order.iter().enumerate() {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let violated = prob.margin(&w, i) < 1.0;
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if violated {
                w.iter_mut().zip(prob.row(i)).for_each(|(v, xi)| *v += eta * y[i] * xi);
            }
            let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nw > radius {
                w.iter_mut().for_each(|v| *v *= radius / nw);
            }
            let k = (count + 1) as f64;
            avg.iter_mut().zip(&w).for_each(|(a, v)| *a += (v - *a) / k);
        }
        for cand in [&w, &avg] {
            let obj = prob.objective(cand);
            if obj < best_obj {
                best_obj = obj;
                best_w.copy_from_slice(cand);
            }
        }
    }

    let mut out_w = vec![0.0; d];
    let mut out_b = best_w[d];
    for j in 0..d {
        out_w[j] = best_w[j] / scale[j];
        out_b -= best_w[j] * mean[j] / scale[j];
    }
    Ok(TrainedBit {
        hash: LinearHash { w: out_w, b: out_b },
        constant_column: false,
    })
}

/// Trained per-bit hash functions plus the feature map they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    functions: Vec<LinearHash>,
    feature_mode: FeatureMode,
    kernel: Option<KernelConfig>,
    d: usize,
}

impl HashModel {
    pub fn new(
        functions: Vec<LinearHash>,
        feature_mode: FeatureMode,
        kernel: Option<KernelConfig>,
        d: usize,
    ) -> Result<Self> {
        if functions.is_empty() {
            return Err(HashError::CorruptModel("model has no hash functions".into()));
        }
        let p = match (feature_mode, &kernel) {
            (FeatureMode::Raw, None) => d,
            (FeatureMode::Kernel, Some(k)) => {
                if k.dim() != d {
                    return Err(HashError::DimensionMismatch {
                        expected: d,
                        found: k.dim(),
                    });
                }
                k.num_anchors()
            }
            _ => return Err(HashError::KernelMode),
        };
        for f in &functions {
            if f.w.len() != p {
                return Err(HashError::DimensionMismatch {
                    expected: p,
                    found: f.w.len(),
                });
            }
            if !f.b.is_finite() || f.w.iter().any(|v| !v.is_finite()) {
                return Err(HashError::CorruptModel("non-finite weight".into()));
            }
        }
        Ok(Self {
            functions,
            feature_mode,
            kernel,
            d,
        })
    }

    pub fn bits(&self) -> usize {
        self.functions.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn functions(&self) -> &[LinearHash] {
        &self.functions
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.feature_mode
    }

    pub fn kernel(&self) -> Option<&KernelConfig> {
        self.kernel.as_ref()
    }

    /// Features the hash functions act on.
    pub fn transform(&self, points: &Matrix) -> Result<Matrix> {
        if points.cols() != self.d {
            return Err(HashError::DimensionMismatch {
                expected: self.d,
                found: points.cols(),
            });
        }
        Ok(match &self.kernel {
            Some(k) => kernel_transform(points, k)?,
            None => points.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let doc = ModelFile {
            version: MODEL_VERSION,
            m: self.bits(),
            d: self.d,
            feature_mode: self.feature_mode,
            bandwidth: self.kernel.as_ref().map(KernelConfig::bandwidth),
            anchors: self
                .kernel
                .as_ref()
                .map(|k| k.anchors().iter_rows().map(<[f64]>::to_vec).collect()),
            bits: self.functions.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("model serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelFile = serde_json::from_str(text).map_err(|e| HashError::CorruptModel(e.to_string()))?;
        if doc.version != MODEL_VERSION {
            return Err(HashError::CorruptModel(format!("unsupported model version {}", doc.version)));
        }
        if doc.bits.len() != doc.m {
            return Err(HashError::CorruptModel(format!(
                "declares {} bits but stores {}",
                doc.m,
                doc.bits.len()
            )));
        }
        let kernel = match (doc.feature_mode, doc.anchors, doc.bandwidth) {
            (FeatureMode::Raw, None, None) => None,
            (FeatureMode::Kernel, Some(anchors), Some(bw)) => {
                let anchors = Matrix::from_rows(&anchors).map_err(|e| HashError::CorruptModel(e.to_string()))?;
                Some(KernelConfig::new(anchors, bw).map_err(|e| HashError::CorruptModel(e.to_string()))?)
            }
            _ => return Err(HashError::CorruptModel("anchors/bandwidth inconsistent with feature mode".into())),
        };
        Self::new(doc.bits, doc.feature_mode, kernel, doc.d).map_err(|e| match e {
            HashError::CorruptModel(_) => e,
            other => HashError::CorruptModel(other.to_string()),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    m: usize,
    d: usize,
    feature_mode: FeatureMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchors: Option<Vec<Vec<f64>>>,
    bits: Vec<LinearHash>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: HashModel,
    /// Bits whose training column was constant.
    pub constant_bits: Vec<usize>,
}

/// Trains one classifier per column of `codes`; bit `k` uses seed stream `k`.
pub fn train_model(
    ds: &Dataset,
    codes: &CodeMatrix,
    mode: FeatureMode,
    kernel: Option<KernelConfig>,
    cfg: &ClassifierConfig,
) -> Result<TrainedModel> {
    if codes.n() != ds.n() {
        return Err(HashError::DimensionMismatch {
            expected: ds.n(),
            found: codes.n(),
        });
    }
    cfg.validate()?;
    let feats = match (mode, &kernel) {
        (FeatureMode::Raw, None) => ds.features().clone(),
        (FeatureMode::Kernel, Some(k)) => kernel_transform(ds.features(), k)?,
        _ => return Err(HashError::KernelMode),
    };
    let seeds = SeedSplitter::new(cfg.seed);
    let trained: Vec<Result<TrainedBit>> = par::map_range(codes.m(), |k| {
        let bit_cfg = ClassifierConfig {
            seed: seeds.derive(k as u64),
            ..*cfg
        };
        train_bit_classifier(&feats, &codes.column(k), &bit_cfg)
    });
    let mut functions = Vec::with_capacity(codes.m());
    let mut constant_bits = Vec::new();
    for (k, t) in trained.into_iter().enumerate() {
        let t = t?;
        if t.constant_column {
            constant_bits.push(k);
        }
        functions.push(t.hash);
    }
    Ok(TrainedModel {
        model: HashModel::new(functions, mode, kernel, ds.d())?,
        constant_bits,
    })
}

/// Hashes every row of `points` into packed codes.
pub fn encode(model: &HashModel, points: &Matrix) -> Result<PackedCodes> {
    let feats = model.transform(points)?;
    let m = model.bits();
    let wpc = words_per_code(m);
    let mut words = vec![0u64; points.rows() * wpc];
    par::for_each_chunk_mut(&mut words, wpc, |i, out| {
        let x = feats.row(i);
        let code: Vec<i8> = model.functions.iter().map(|h| h.apply(x)).collect();
        pack_signs(&code, out);
    });
    Ok(PackedCodes::from_words(points.rows(), m, words).expect("sized above"))
}
