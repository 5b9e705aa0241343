//! `tsh` command-line front end.
//!
//! Exit status: 0 on success, 2 for usage errors (bad flags or parameter
//! values), 1 for runtime failures (I/O, corrupt inputs, solver errors).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::data::{self, DataError};
use crate::hashfn::{self, FeatureMode, HashModel};
use crate::loss::LossTag;
use crate::packed::PackedCodes;
use crate::par;
use crate::pipeline::{self, PipelineError, SupervisionMode, TrainOptions};
use crate::retrieval::{self, CodeDatabase, GroundTruth};
use crate::synth::{self, ClusterSpec};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

macro_rules! impl_from_via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Pipeline(e.into())
            }
        }
    )*};
}

impl_from_via_pipeline!(
    DataError,
    crate::codegen::CodegenError,
    hashfn::HashError,
    retrieval::RetrievalError,
    crate::packed::PackedError,
    crate::loss::LossError
);

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "tsh", version, about = "Two-step supervised hashing: learn codes, fit hash functions, search in Hamming space")]
pub struct Cli {
    /// Worker thread cap; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a labelled Gaussian-cluster dataset.
    GenData(GenDataArgs),
    /// Learn codes and hash functions from a dataset.
    Train(TrainArgs),
    /// Hash a dataset into a packed codes file.
    Encode(EncodeArgs),
    /// Build a ground-truth file for queries against a database.
    GroundTruth(GroundTruthArgs),
    /// Rank a database for each query and score the rankings.
    Eval(EvalArgs),
    /// Print the top-k database ids for each query.
    Query(QueryArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
    #[arg(long = "dim", default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 10.0)]
    pub center_scale: f64,
    /// Minimum distance between cluster centers, in units of --spread.
    #[arg(long, default_value_t = synth::DEFAULT_MIN_GAP)]
    pub min_gap: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write this many held-out points from the same clusters.
    #[arg(long, requires = "queries_out")]
    pub queries: Option<usize>,
    #[arg(long)]
    pub queries_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SupervisionArg {
    Labels,
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Ksh,
    Bre,
    Splh,
    Ee,
    Exph,
}

impl From<LossArg> for LossTag {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Ksh => LossTag::Ksh,
            LossArg::Bre => LossTag::Bre,
            LossArg::Splh => LossTag::Splh,
            LossArg::Ee => LossTag::Ee,
            LossArg::Exph => LossTag::ExpH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureArg {
    Raw,
    Kernel,
}

impl From<FeatureArg> for FeatureMode {
    fn from(f: FeatureArg) -> Self {
        match f {
            FeatureArg::Raw => FeatureMode::Raw,
            FeatureArg::Kernel => FeatureMode::Kernel,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// The last CSV column is an integer class label.
    #[arg(long)]
    pub labeled: bool,
    /// Defaults to labels when --labeled, distance otherwise.
    #[arg(long, value_enum)]
    pub supervision: Option<SupervisionArg>,
    #[arg(long, default_value_t = data::DEFAULT_PERCENTILE)]
    pub percentile: f64,
    #[arg(long)]
    pub pairs_per_point: Option<usize>,
    #[arg(long, value_enum, default_value = "bre")]
    pub loss: LossArg,
    /// Elastic-embedding trade-off (ee only).
    #[arg(long, default_value_t = crate::loss::DEFAULT_EE_LAMBDA)]
    pub lambda: f64,
    #[arg(long)]
    pub bits: usize,
    #[arg(long, default_value_t = 1)]
    pub sweeps: usize,
    #[arg(long, value_enum, default_value = "kernel")]
    pub feature: FeatureArg,
    #[arg(long, default_value_t = data::DEFAULT_ANCHORS)]
    pub anchors: usize,
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth_t: f64,
    #[arg(long, default_value_t = data::DEFAULT_BANDWIDTH_NEIGHBORS)]
    pub neighbors: usize,
    /// SVM trade-off; defaults to 1000 / n.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, default_value_t = hashfn::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = crate::codegen::DEFAULT_BOX_MAX_ITERS)]
    pub box_max_iters: usize,
    #[arg(long, default_value_t = crate::codegen::DEFAULT_BOX_TOL)]
    pub box_tol: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Objective trace CSV; defaults to <model-out>.trace.csv.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Also write the learned training codes.
    #[arg(long)]
    pub codes_out: Option<PathBuf>,
    /// Also write the supervision pairs as i,j,y.
    #[arg(long)]
    pub supervision_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub labeled: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroundTruthMode {
    Labels,
    Distance,
}

#[derive(Debug, Args)]
pub struct GroundTruthArgs {
    /// Database points (CSV).
    #[arg(long)]
    pub db: PathBuf,
    /// Query points (CSV).
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub labeled: bool,
    #[arg(long, value_enum, default_value = "labels")]
    pub mode: GroundTruthMode,
    #[arg(long, default_value_t = data::DEFAULT_PERCENTILE)]
    pub percentile: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Database codes file.
    #[arg(long)]
    pub db: PathBuf,
    /// Query codes file.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long, default_value_t = retrieval::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = retrieval::DEFAULT_RADIUS)]
    pub radius: u32,
    /// Output prefix: writes <prefix>.json, <prefix>.csv and <prefix>.pr.csv.
    #[arg(long)]
    pub report_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: &'static str,
    params: &'a ClusterSpec,
    queries: Option<usize>,
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let mut spec = ClusterSpec::new(a.n, a.clusters, a.d, a.spread, a.seed);
    spec.center_scale = a.center_scale;
    spec.min_gap = a.min_gap;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let ds = spec.generate()?;
    write(&a.out, synth::to_labeled_csv(&ds))?;
    if let (Some(nq), Some(path)) = (a.queries, &a.queries_out) {
        let q = spec.generate_queries(nq)?;
        write(path, synth::to_labeled_csv(&q))?;
    }
    let manifest = Manifest {
        generator: "gaussian-clusters",
        params: &spec,
        queries: a.queries,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    write(&with_suffix(&a.out, ".manifest.json"), text)
}

fn train_options(a: &TrainArgs) -> Result<TrainOptions> {
    if a.bits == 0 {
        return Err(usage("--bits must be at least 1"));
    }
    if a.sweeps == 0 {
        return Err(usage("--sweeps must be at least 1"));
    }
    if !(a.bandwidth_t > 0.0) {
        return Err(usage("--bandwidth-t must be positive"));
    }
    if a.c.is_some_and(|c| !(c > 0.0)) {
        return Err(usage("--c must be positive"));
    }
    if a.epochs == 0 || a.box_max_iters == 0 || !(a.box_tol > 0.0) || a.anchors == 0 {
        return Err(usage("--epochs, --box-max-iters, --anchors and --box-tol must be positive"));
    }
    if !(a.lambda > 0.0) {
        return Err(usage("--lambda must be positive"));
    }
    if a.pairs_per_point == Some(0) {
        return Err(usage("--pairs-per-point must be at least 1"));
    }
    let supervision = match a.supervision.unwrap_or(if a.labeled {
        SupervisionArg::Labels
    } else {
        SupervisionArg::Distance
    }) {
        SupervisionArg::Labels => {
            if !a.labeled {
                return Err(usage("label supervision needs --labeled data"));
            }
            SupervisionMode::Labels
        }
        SupervisionArg::Distance => {
            if !(a.percentile > 0.0 && a.percentile < 100.0) {
                return Err(usage("--percentile must be in (0, 100)"));
            }
            SupervisionMode::Distance {
                percentile: a.percentile,
            }
        }
    };
    let mut o = TrainOptions::new(a.loss.into(), a.bits, a.seed);
    o.lambda = a.lambda;
    o.sweeps = a.sweeps;
    o.supervision = supervision;
    o.pairs_per_point = a.pairs_per_point;
    o.feature = a.feature.into();
    o.anchors = a.anchors;
    o.bandwidth_t = a.bandwidth_t;
    o.bandwidth_neighbors = a.neighbors;
    o.c = a.c;
    o.epochs = a.epochs;
    o.box_max_iters = a.box_max_iters;
    o.box_tol = a.box_tol;
    Ok(o)
}

pub fn cmd_train(a: &TrainArgs) -> Result<pipeline::TrainOutput> {
    let opts = train_options(a)?;
    let ds = data::load_dataset(&a.data, a.labeled)?;
    if let Some(ppp) = a.pairs_per_point {
        if ppp > ds.n().saturating_sub(1) && ds.n() > 1 {
            return Err(usage(format!("--pairs-per-point {ppp} exceeds n - 1 = {}", ds.n() - 1)));
        }
    }
    let out = pipeline::train(&ds, &opts)?;
    if !out.constant_bits.is_empty() {
        eprintln!("note: bits {:?} are constant over the training set", out.constant_bits);
    }
    out.model.save(&a.model_out).map_err(PipelineError::from)?;
    let trace_path = a.trace_out.clone().unwrap_or_else(|| with_suffix(&a.model_out, ".trace.csv"));
    write(&trace_path, out.trace.to_csv())?;
    if let Some(p) = &a.codes_out {
        write(p, out.codes.to_packed().to_bytes())?;
    }
    if let Some(p) = &a.supervision_out {
        write(p, out.supervision.to_csv())?;
    }
    Ok(out)
}

pub fn cmd_encode(a: &EncodeArgs) -> Result<PackedCodes> {
    let model = HashModel::load(&a.model)?;
    let points = data::load_points(&a.data, a.labeled, model.dim())?;
    let codes = hashfn::encode(&model, &points)?;
    write(&a.out, codes.to_bytes())?;
    Ok(codes)
}

pub fn cmd_ground_truth(a: &GroundTruthArgs) -> Result<GroundTruth> {
    let db = data::load_dataset(&a.db, a.labeled)?;
    let q = data::load_dataset(&a.queries, a.labeled)?;
    let gt = match a.mode {
        GroundTruthMode::Labels => {
            let (Some(dl), Some(ql)) = (db.labels(), q.labels()) else {
                return Err(usage("label ground truth needs --labeled data"));
            };
            retrieval::ground_truth_from_labels(dl, ql)
        }
        GroundTruthMode::Distance => {
            if !(a.percentile > 0.0 && a.percentile < 100.0) {
                return Err(usage("--percentile must be in (0, 100)"));
            }
            retrieval::ground_truth_from_distance(db.features(), q.features(), a.percentile)?
        }
    };
    write(&a.out, gt.to_text())?;
    Ok(gt)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<retrieval::EvalReport> {
    let db = PackedCodes::load(&a.db)?;
    let queries = PackedCodes::load(&a.queries)?;
    if db.bits() != queries.bits() {
        return Err(usage(format!(
            "database codes have {} bits but query codes have {}",
            db.bits(),
            queries.bits()
        )));
    }
    if a.k == 0 || a.k > db.len() {
        return Err(usage(format!("--k {} must be in 1..={}", a.k, db.len())));
    }
    let gt = GroundTruth::from_text(&read(&a.ground_truth)?)?;
    let report = retrieval::evaluate(&CodeDatabase::new(db), &queries, &gt, a.k, a.radius)?;
    write(&with_suffix(&a.report_out, ".json"), report.to_json())?;
    write(&with_suffix(&a.report_out, ".csv"), report.to_csv())?;
    write(&with_suffix(&a.report_out, ".pr.csv"), report.pr_curve_csv())?;
    Ok(report)
}

pub fn cmd_query(a: &QueryArgs) -> Result<Vec<Vec<usize>>> {
    let db = CodeDatabase::new(PackedCodes::load(&a.db)?);
    let queries = PackedCodes::load(&a.queries)?;
    if db.bits() != queries.bits() {
        return Err(usage("database and query code lengths differ"));
    }
    if a.k > db.len() {
        return Err(usage(format!("--k {} exceeds database size {}", a.k, db.len())));
    }
    let results = par::map_range(queries.len(), |q| retrieval::rank(&db, queries.code(q), a.k))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let text: String = results
        .iter()
        .map(|r| r.iter().map(usize::to_string).collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    match &a.out {
        Some(p) => write(p, text)?,
        None => print!("{text}"),
    }
    Ok(results)
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    if threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    par::with_threads(threads, move || match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Encode(a) => cmd_encode(a).map(drop),
        Command::GroundTruth(a) => cmd_ground_truth(a).map(drop),
        Command::Eval(a) => cmd_eval(a).map(drop),
        Command::Query(a) => cmd_query(a).map(drop),
    })
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
