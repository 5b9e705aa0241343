//! End-to-end training: supervision, code inference, hash-function fitting.

use thiserror::Error;

use crate::codegen::{self, CodeMatrix, CodegenError, LearnedCodes, ObjectiveTrace, TrainConfig};
use crate::data::{self, DataError, Dataset, KernelConfig, PairSupervision};
use crate::hashfn::{self, ClassifierConfig, FeatureMode, HashError, HashModel};
use crate::loss::{LossError, LossKind, LossTag, DEFAULT_EE_LAMBDA};
use crate::packed::PackedError;
use crate::retrieval::RetrievalError;
use crate::seed::{stream, SeedSplitter};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("loss: {0}")]
    Loss(#[from] LossError),
    #[error("codegen: {0}")]
    Codegen(#[from] CodegenError),
    #[error("hashfn: {0}")]
    Hash(#[from] HashError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("codes file: {0}")]
    Packed(#[from] PackedError),
}

/// How pairwise affinities are derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupervisionMode {
    Labels,
    /// Top-percentile Euclidean neighbours.
    Distance { percentile: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub loss: LossTag,
    pub lambda: f64,
    pub bits: usize,
    pub sweeps: usize,
    pub supervision: SupervisionMode,
    /// `None` picks [`data::default_pairs_per_point`].
    pub pairs_per_point: Option<usize>,
    pub feature: FeatureMode,
    pub anchors: usize,
    pub bandwidth_t: f64,
    pub bandwidth_neighbors: usize,
    /// `None` picks `1000 / n`.
    pub c: Option<f64>,
    pub epochs: usize,
    pub box_max_iters: usize,
    pub box_tol: f64,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(loss: LossTag, bits: usize, seed: u64) -> Self {
        Self {
            loss,
            lambda: DEFAULT_EE_LAMBDA,
            bits,
            sweeps: 1,
            supervision: SupervisionMode::Labels,
            pairs_per_point: None,
            feature: FeatureMode::Kernel,
            anchors: data::DEFAULT_ANCHORS,
            bandwidth_t: 1.0,
            bandwidth_neighbors: data::DEFAULT_BANDWIDTH_NEIGHBORS,
            c: None,
            epochs: hashfn::DEFAULT_EPOCHS,
            box_max_iters: codegen::DEFAULT_BOX_MAX_ITERS,
            box_tol: codegen::DEFAULT_BOX_TOL,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub supervision: PairSupervision,
    pub codes: CodeMatrix,
    pub trace: ObjectiveTrace,
    pub model: HashModel,
    pub constant_bits: Vec<usize>,
}

pub fn build_supervision(ds: &Dataset, opts: &TrainOptions) -> Result<PairSupervision, PipelineError> {
    let seed = SeedSplitter::new(opts.seed).derive(stream::SUPERVISION);
    let ppp = opts.pairs_per_point.unwrap_or_else(|| data::default_pairs_per_point(ds.n()));
    Ok(match opts.supervision {
        SupervisionMode::Labels => data::supervision_from_labels(ds, ppp, seed)?,
        SupervisionMode::Distance { percentile } => data::supervision_from_distance(ds, percentile, ppp, seed)?,
    })
}

/// Step 1 alone.
pub fn learn(ds: &Dataset, opts: &TrainOptions) -> Result<(PairSupervision, LearnedCodes), PipelineError> {
    let sup = build_supervision(ds, opts)?;
    let cfg = TrainConfig {
        m: opts.bits,
        sweeps: opts.sweeps,
        seed: SeedSplitter::new(opts.seed).derive(stream::CODE_INIT),
        box_max_iters: opts.box_max_iters,
        box_tol: opts.box_tol,
        eigen_max_iters: codegen::DEFAULT_EIGEN_MAX_ITERS,
        loss: LossKind::with_lambda(opts.loss, opts.bits, opts.lambda)?,
    };
    cfg.validate()?;
    let learned = codegen::learn_codes(&sup, &cfg)?;
    Ok((sup, learned))
}

/// Step 2 for already learned codes.
pub fn fit_hash(ds: &Dataset, codes: &CodeMatrix, opts: &TrainOptions) -> Result<hashfn::TrainedModel, PipelineError> {
    let seeds = SeedSplitter::new(opts.seed);
    let kernel = match opts.feature {
        FeatureMode::Raw => None,
        FeatureMode::Kernel => {
            let sigma = data::rbf_bandwidth(ds, opts.bandwidth_t, opts.bandwidth_neighbors)?;
            Some(KernelConfig::sample(ds, opts.anchors, sigma, seeds.derive(stream::ANCHORS))?)
        }
    };
    let mut ccfg = ClassifierConfig::default_for(ds.n(), seeds.derive(stream::CLASSIFIER));
    if let Some(c) = opts.c {
        ccfg.c = c;
    }
    ccfg.epochs = opts.epochs;
    Ok(hashfn::train_model(ds, codes, opts.feature, kernel, &ccfg)?)
}

/// Both steps.
pub fn train(ds: &Dataset, opts: &TrainOptions) -> Result<TrainOutput, PipelineError> {
    let (supervision, learned) = learn(ds, opts)?;
    let trained = fit_hash(ds, &learned.codes, opts)?;
    Ok(TrainOutput {
        supervision,
        codes: learned.codes,
        trace: learned.trace,
        model: trained.model,
        constant_bits: trained.constant_bits,
    })
}
