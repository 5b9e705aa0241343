//! Binary code inference by block coordinate descent.
//!
//! Each bit column is re-optimised in turn with every other bit fixed. The
//! single-bit subproblem is a binary quadratic program `min z'Az` over
//! `z in {-1, 1}^n`, which is relaxed twice (unit-sphere spectral relaxation,
//! then a box relaxation warm-started from it), rounded, and accepted only if it
//! does not increase the full objective.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use thiserror::Error;

use crate::data::{Pair, PairSupervision};
use crate::loss::{bit_losses, LossError, LossKind, LossTag, PairLoss};
use crate::packed::PackedCodes;
use crate::par;
use crate::seed::{self, SeedSplitter};

/// Largest BQP solved with a dense symmetric eigendecomposition; bigger
/// instances use shifted power iteration.
pub const DENSE_EIGEN_LIMIT: usize = 512;
pub const DEFAULT_BOX_TOL: f64 = 1e-6;
pub const DEFAULT_BOX_MAX_ITERS: usize = 200;
pub const DEFAULT_EIGEN_MAX_ITERS: usize = 5000;
pub const DEFAULT_EIGEN_TOL: f64 = 1e-9;

const PAIR_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("bit index {k} out of range for {m} bits")]
    BitIndex { k: usize, m: usize },
    #[error("supervision covers {sup} points but code matrix has {codes} rows")]
    SizeMismatch { sup: usize, codes: usize },
    #[error("BQP matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("BQP matrix has nonzero diagonal at {0}")]
    NonzeroDiagonal(usize),
    #[error("BQP matrix must be {n}x{n}, got {len} entries")]
    BadShape { n: usize, len: usize },
    #[error("vector length {found} does not match problem size {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("no candidates to round")]
    NoCandidates,
    #[error("code entries must be -1 or +1")]
    NotSign,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

pub type Result<T, E = CodegenError> = std::result::Result<T, E>;

/// `sign` with `sign(0) = +1`.
#[inline]
pub fn sign(x: f64) -> i8 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

/// `n x m` matrix of `-1/+1` entries, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    n: usize,
    m: usize,
    bits: Vec<i8>,
}

impl CodeMatrix {
    pub fn new(n: usize, m: usize, bits: Vec<i8>) -> Result<Self> {
        if bits.len() != n * m {
            return Err(CodegenError::LengthMismatch {
                expected: n * m,
                found: bits.len(),
            });
        }
        if bits.iter().any(|&b| b != 1 && b != -1) {
            return Err(CodegenError::NotSign);
        }
        Ok(Self { n, m, bits })
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(CodegenError::NotSign);
        }
        Self::new(rows.len(), m, rows.concat())
    }

    /// iid uniform signs.
    pub fn random(n: usize, m: usize, seed: u64) -> Self {
        let mut rng = seed::rng_for(seed, 0);
        let bits = (0..n * m).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        Self { n, m, bits }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> i8 {
        self.bits[i * self.m + k]
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.bits[i * self.m..(i + 1) * self.m]
    }

    pub fn column(&self, k: usize) -> Vec<i8> {
        (0..self.n).map(|i| self.get(i, k)).collect()
    }

    pub fn set_column(&mut self, k: usize, col: &[i8]) {
        debug_assert_eq!(col.len(), self.n);
        for (i, &b) in col.iter().enumerate() {
            self.bits[i * self.m + k] = b;
        }
    }

    pub fn inner(&self, i: usize, j: usize) -> i64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(&a, &b)| i64::from(a * b))
            .sum()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.bits
    }

    pub fn to_packed(&self) -> PackedCodes {
        let rows: Vec<&[i8]> = (0..self.n).map(|i| self.row(i)).collect();
        PackedCodes::from_sign_rows(self.m, &rows).expect("code matrix holds m >= 1 sign entries")
    }
}

/// Dense symmetric coefficient matrix of one single-bit BQP.
#[derive(Debug, Clone, PartialEq)]
pub struct BqpInstance {
    n: usize,
    a: Vec<f64>,
}

impl BqpInstance {
    /// Row-major `n x n` matrix; must be symmetric (to 1e-12) with zero diagonal.
    pub fn new(n: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != n * n {
            return Err(CodegenError::BadShape { n, len: a.len() });
        }
        for i in 0..n {
            if a[i * n + i] != 0.0 {
                return Err(CodegenError::NonzeroDiagonal(i));
            }
            for j in i + 1..n {
                let (x, y) = (a[i * n + j], a[j * n + i]);
                if !x.is_finite() || (x - y).abs() > 1e-12 * x.abs().max(y.abs()).max(1.0) {
                    return Err(CodegenError::NotSymmetric { i, j });
                }
            }
        }
        Ok(Self { n, a })
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, a: vec![0.0; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    /// `A v`, rows computed independently.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        par::map_range(self.n, |i| dot(self.row(i), v))
    }

    /// `v' A v`.
    pub fn objective(&self, v: &[f64]) -> f64 {
        dot(v, &self.matvec(v))
    }

    pub fn objective_signs(&self, z: &[i8]) -> f64 {
        self.objective(&to_f64(z))
    }

    /// Maximum absolute row sum; bounds every eigenvalue in magnitude.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn to_f64(z: &[i8]) -> Vec<f64> {
    z.iter().map(|&b| f64::from(b)).collect()
}

/// Current inner product `z_i . z_j` for every supervised pair.
fn pair_inner_products(sup: &PairSupervision, z: &CodeMatrix) -> Vec<i64> {
    let e = sup.entries();
    par::map_range(e.len(), |p| z.inner(e[p].i, e[p].j))
}

/// Objective summed over ordered pairs: each stored pair counts twice.
fn objective_from_inner<L: PairLoss + Sync + ?Sized>(sup: &PairSupervision, s: &[i64], loss: &L) -> f64 {
    let e = sup.entries();
    2.0 * par::sum_fixed_chunks(e.len(), PAIR_CHUNK, |p| loss.eval(s[p], e[p].y))
}

/// Total loss of `z` over all defined ordered pairs.
pub fn total_objective<L: PairLoss + Sync + ?Sized>(sup: &PairSupervision, z: &CodeMatrix, loss: &L) -> f64 {
    objective_from_inner(sup, &pair_inner_products(sup, z), loss)
}

/// A bit subproblem plus the constant needed to recover the full objective:
/// for any column `c`, `total = c' A c + constant`.
#[derive(Debug, Clone)]
pub struct BitProblem {
    pub bqp: BqpInstance,
    pub constant: f64,
}

fn assemble_from_inner<L: PairLoss + Sync + ?Sized>(
    sup: &PairSupervision,
    s: &[i64],
    z: &CodeMatrix,
    k: usize,
    loss: &L,
) -> BitProblem {
    let n = z.n();
    let e = sup.entries();
    let coeffs: Vec<(f64, f64)> = par::map_range(e.len(), |p| {
        let Pair { i, j, y } = e[p];
        let sbar = s[p] - i64::from(z.get(i, k) * z.get(j, k));
        let (agree, disagree) = bit_losses(loss, sbar, y);
        (0.5 * (agree - disagree), agree + disagree)
    });
    let mut a = vec![0.0; n * n];
    let mut constant = 0.0;
    for (p, &(coef, c2)) in coeffs.iter().enumerate() {
        let Pair { i, j, .. } = e[p];
        a[i * n + j] = coef;
        a[j * n + i] = coef;
        constant += c2;
    }
    BitProblem {
        bqp: BqpInstance { n, a },
        constant,
    }
}

fn check_shapes(sup: &PairSupervision, z: &CodeMatrix, k: usize) -> Result<()> {
    if sup.n() != z.n() {
        return Err(CodegenError::SizeMismatch {
            sup: sup.n(),
            codes: z.n(),
        });
    }
    if k >= z.m() {
        return Err(CodegenError::BitIndex { k, m: z.m() });
    }
    Ok(())
}

/// Coefficient matrix for re-optimising bit `k` of `z`.
///
/// `A[i][j] = (l_agree - l_disagree) / 2` for each defined pair, so that
/// `z_(k)' A z_(k)` plus [`BitProblem::constant`] equals the ordered-pair sum
/// of the loss with only bit `k` free.
pub fn assemble_bqp(sup: &PairSupervision, z: &CodeMatrix, k: usize, loss: &LossKind) -> Result<BqpInstance> {
    Ok(assemble_bit_problem(sup, z, k, loss)?.bqp)
}

pub fn assemble_bit_problem<L: PairLoss + Sync + ?Sized>(
    sup: &PairSupervision,
    z: &CodeMatrix,
    k: usize,
    loss: &L,
) -> Result<BitProblem> {
    check_shapes(sup, z, k)?;
    if loss.bits() != z.m() {
        return Err(CodegenError::Config(format!(
            "loss is defined for {} bits but codes have {}",
            loss.bits(),
            z.m()
        )));
    }
    let s = pair_inner_products(sup, z);
    Ok(assemble_from_inner(sup, &s, z, k, loss))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_EIGEN_MAX_ITERS,
            tol: DEFAULT_EIGEN_TOL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSolution {
    /// Scaled so that `|v|^2 = n`.
    pub vector: Vec<f64>,
    /// Rayleigh quotient of `vector`.
    pub eigenvalue: f64,
    /// `false` when power iteration hit its cap and a random vector was returned.
    pub converged: bool,
}

fn random_sphere(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng_for(seed, 0);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nv = norm(&v);
    if nv == 0.0 {
        v = vec![1.0; n];
    }
    scale_to_sqrt_n(&mut v);
    v
}

fn scale_to_sqrt_n(v: &mut [f64]) {
    let nv = norm(v);
    if nv > 0.0 {
        let s = (v.len() as f64).sqrt() / nv;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Flips `v` so its largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn finish(bqp: &BqpInstance, mut v: Vec<f64>, converged: bool) -> SpectralSolution {
    scale_to_sqrt_n(&mut v);
    canonical_sign(&mut v);
    let n = bqp.n() as f64;
    let eigenvalue = bqp.objective(&v) / n;
    SpectralSolution {
        vector: v,
        eigenvalue,
        converged,
    }
}

/// Minimiser of `v'Av` subject to `|v|^2 = n`: the eigenvector of the smallest
/// eigenvalue. Dense eigendecomposition up to [`DENSE_EIGEN_LIMIT`], shifted
/// power iteration beyond.
pub fn spectral_relax(bqp: &BqpInstance, opts: &SpectralOptions) -> SpectralSolution {
    if bqp.n() <= DENSE_EIGEN_LIMIT {
        spectral_relax_dense(bqp, opts)
    } else {
        spectral_relax_power(bqp, opts)
    }
}

pub fn spectral_relax_dense(bqp: &BqpInstance, opts: &SpectralOptions) -> SpectralSolution {
    let n = bqp.n();
    if n == 0 {
        return SpectralSolution {
            vector: Vec::new(),
            eigenvalue: 0.0,
            converged: true,
        };
    }
    if bqp.gershgorin_bound() == 0.0 {
        return finish(bqp, random_sphere(n, opts.seed), true);
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, bqp.as_slice()));
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &l)| if l < best.1 { (i, l) } else { best });
    let v: Vec<f64> = eig.eigenvectors.column(imin).iter().copied().collect();
    if v.iter().any(|x| !x.is_finite()) {
        return finish(bqp, random_sphere(n, opts.seed), false);
    }
    finish(bqp, v, true)
}

/// Power iteration on `sigma I - A` with `sigma` the Gershgorin bound, whose
/// dominant eigenvector is the minimum-eigenvalue eigenvector of `A`.
pub fn spectral_relax_power(bqp: &BqpInstance, opts: &SpectralOptions) -> SpectralSolution {
    let n = bqp.n();
    if n == 0 {
        return SpectralSolution {
            vector: Vec::new(),
            eigenvalue: 0.0,
            converged: true,
        };
    }
    let sigma = bqp.gershgorin_bound();
    let start = random_sphere(n, opts.seed);
    if sigma == 0.0 {
        return finish(bqp, start, true);
    }
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let mut v: Vec<f64> = start.iter().map(|x| x * inv_sqrt_n).collect();
    for _ in 0..opts.max_iters {
        let av = bqp.matvec(&v);
        let lambda = dot(&v, &av);
        let residual = av
            .iter()
            .zip(&v)
            .map(|(a, x)| (a - lambda * x).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= opts.tol * sigma {
            return finish(bqp, v, true);
        }
        let mut next: Vec<f64> = v.iter().zip(&av).map(|(x, a)| sigma * x - a).collect();
        let nn = norm(&next);
        if nn == 0.0 || !nn.is_finite() {
            break;
        }
        next.iter_mut().for_each(|x| *x /= nn);
        v = next;
    }
    finish(bqp, random_sphere(n, opts.seed ^ 0xA5A5_A5A5), false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Projected-gradient norm at exit.
    pub pg_norm: f64,
}

fn clamp_box(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.clamp(-1.0, 1.0)).collect()
}

/// Minimises `z'Az` over `[-1, 1]^n` from `init` by projected gradient with a
/// growing step and Armijo backtracking. Never returns a point worse than the
/// clamped start.
pub fn box_relax(bqp: &BqpInstance, init: &[f64], max_iters: usize, tol: f64) -> Result<BoxSolution> {
    let n = bqp.n();
    if init.len() != n {
        return Err(CodegenError::LengthMismatch {
            expected: n,
            found: init.len(),
        });
    }
    if init.iter().any(|x| !x.is_finite()) {
        return Err(CodegenError::Config("box_relax start point is not finite".into()));
    }
    const ARMIJO: f64 = 1e-4;
    let mut z = clamp_box(init);
    let mut az = bqp.matvec(&z);
    let mut f = dot(&z, &az);
    let lipschitz = 2.0 * bqp.gershgorin_bound();
    let mut pg_norm = 0.0;
    if lipschitz == 0.0 {
        return Ok(BoxSolution {
            z,
            objective: f,
            iterations: 0,
            pg_norm,
        });
    }
    let min_step = 1e-3 / lipschitz;
    let mut step = 1.0 / lipschitz;
    let mut iterations = 0;
    while iterations < max_iters {
        let grad: Vec<f64> = az.iter().map(|x| 2.0 * x).collect();
        pg_norm = z
            .iter()
            .zip(&grad)
            .map(|(x, g)| ((x - g).clamp(-1.0, 1.0) - x).powi(2))
            .sum::<f64>()
            .sqrt();
        if pg_norm <= tol {
            break;
        }
        iterations += 1;
        let mut accepted = None;
        let mut alpha = step * 2.0;
        while alpha >= min_step {
            let cand: Vec<f64> = z.iter().zip(&grad).map(|(x, g)| (x - alpha * g).clamp(-1.0, 1.0)).collect();
            let decrease: f64 = grad.iter().zip(cand.iter().zip(&z)).map(|(g, (c, x))| g * (c - x)).sum();
            if decrease >= 0.0 {
                break;
            }
            let ac = bqp.matvec(&cand);
            let fc = dot(&cand, &ac);
            if fc <= f + ARMIJO * decrease && fc < f {
                accepted = Some((cand, ac, fc, alpha));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, ac, fc, alpha)) => {
                z = cand;
                az = ac;
                f = fc;
                step = alpha;
            }
            None => break,
        }
    }
    Ok(BoxSolution {
        z,
        objective: f,
        iterations,
        pg_norm,
    })
}

/// Which input won [`round_and_select`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Incumbent,
    Candidate(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub z: Vec<i8>,
    pub objective: f64,
    pub choice: Choice,
    /// Objective of each rounded candidate, in input order.
    pub candidate_objectives: Vec<f64>,
    pub incumbent_objective: f64,
}

/// Rounds each candidate by sign and keeps the best of them and the
/// incumbent. Ties go to the incumbent, then to the earlier candidate.
pub fn round_and_select(bqp: &BqpInstance, candidates: &[Vec<f64>], incumbent: &[i8]) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(CodegenError::NoCandidates);
    }
    let n = bqp.n();
    for c in candidates.iter().map(Vec::len).chain(std::iter::once(incumbent.len())) {
        if c != n {
            return Err(CodegenError::LengthMismatch { expected: n, found: c });
        }
    }
    let incumbent_objective = bqp.objective_signs(incumbent);
    let rounded: Vec<Vec<i8>> = candidates.iter().map(|c| c.iter().map(|&x| sign(x)).collect()).collect();
    let candidate_objectives: Vec<f64> = rounded.iter().map(|z| bqp.objective_signs(z)).collect();
    let mut best = (Choice::Incumbent, incumbent_objective);
    for (i, &obj) in candidate_objectives.iter().enumerate() {
        if obj < best.1 {
            best = (Choice::Candidate(i), obj);
        }
    }
    let z = match best.0 {
        Choice::Incumbent => incumbent.to_vec(),
        Choice::Candidate(i) => rounded[i].clone(),
    };
    Ok(Selection {
        z,
        objective: best.1,
        choice: best.0,
        candidate_objectives,
        incumbent_objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitSolverOptions {
    pub spectral: SpectralOptions,
    pub box_max_iters: usize,
    pub box_tol: f64,
}

impl Default for BitSolverOptions {
    fn default() -> Self {
        Self {
            spectral: SpectralOptions::default(),
            box_max_iters: DEFAULT_BOX_MAX_ITERS,
            box_tol: DEFAULT_BOX_TOL,
        }
    }
}

/// Result of one single-bit BQP solve.
#[derive(Debug, Clone, PartialEq)]
pub struct BitSolution {
    pub selection: Selection,
    pub spectral: SpectralSolution,
    pub boxed: BoxSolution,
}

impl BitSolution {
    pub fn spectral_rounded_objective(&self) -> f64 {
        self.selection.candidate_objectives[0]
    }

    pub fn box_rounded_objective(&self) -> f64 {
        self.selection.candidate_objectives[1]
    }
}

/// Spectral relaxation, box refinement from it, rounding, and selection
/// against `incumbent`.
pub fn solve_bit(bqp: &BqpInstance, incumbent: &[i8], opts: &BitSolverOptions) -> Result<BitSolution> {
    let spectral = spectral_relax(bqp, &opts.spectral);
    let boxed = box_relax(bqp, &spectral.vector, opts.box_max_iters, opts.box_tol)?;
    let selection = round_and_select(bqp, &[spectral.vector.clone(), boxed.z.clone()], incumbent)?;
    Ok(BitSolution {
        selection,
        spectral,
        boxed,
    })
}

/// Step-1 settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub m: usize,
    pub sweeps: usize,
    pub seed: u64,
    pub box_max_iters: usize,
    pub box_tol: f64,
    pub eigen_max_iters: usize,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn new(tag: LossTag, m: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            m,
            sweeps: 1,
            seed,
            box_max_iters: DEFAULT_BOX_MAX_ITERS,
            box_tol: DEFAULT_BOX_TOL,
            eigen_max_iters: DEFAULT_EIGEN_MAX_ITERS,
            loss: LossKind::new(tag, m)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(CodegenError::Config("bit count must be at least 1".into()));
        }
        if self.sweeps == 0 {
            return Err(CodegenError::Config("sweep count must be at least 1".into()));
        }
        if self.box_max_iters == 0 || self.eigen_max_iters == 0 {
            return Err(CodegenError::Config("iteration caps must be at least 1".into()));
        }
        if !(self.box_tol > 0.0) {
            return Err(CodegenError::Config("box tolerance must be positive".into()));
        }
        if self.loss.bits() != self.m {
            return Err(CodegenError::Config(format!(
                "loss is defined for {} bits, config has {}",
                self.loss.bits(),
                self.m
            )));
        }
        Ok(())
    }
}

/// Objective after one bit update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    /// 1-based sweep number.
    pub sweep: usize,
    pub bit: usize,
    pub objective: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectiveTrace {
    pub initial: f64,
    pub entries: Vec<TraceEntry>,
}

impl ObjectiveTrace {
    pub fn final_objective(&self) -> f64 {
        self.entries.last().map_or(self.initial, |e| e.objective)
    }

    pub fn is_non_increasing(&self) -> bool {
        let mut prev = self.initial;
        self.entries.iter().all(|e| {
            let ok = e.objective <= prev;
            prev = e.objective;
            ok
        })
    }

    /// `sweep,bit,objective` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sweep,bit,objective\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{}", e.sweep, e.bit, e.objective);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedCodes {
    pub codes: CodeMatrix,
    pub trace: ObjectiveTrace,
}

/// Block coordinate descent over bit columns with the configured loss.
pub fn learn_codes(sup: &PairSupervision, cfg: &TrainConfig) -> Result<LearnedCodes> {
    learn_codes_with(sup, &cfg.loss, cfg)
}

/// [`learn_codes`] for any [`PairLoss`]; `cfg.loss` is ignored.
pub fn learn_codes_with<L: PairLoss + Sync + ?Sized>(
    sup: &PairSupervision,
    loss: &L,
    cfg: &TrainConfig,
) -> Result<LearnedCodes> {
    if cfg.m == 0 || cfg.sweeps == 0 || cfg.box_max_iters == 0 || !(cfg.box_tol > 0.0) {
        return Err(CodegenError::Config("invalid training configuration".into()));
    }
    if loss.bits() != cfg.m {
        return Err(CodegenError::Config(format!(
            "loss is defined for {} bits, config has {}",
            loss.bits(),
            cfg.m
        )));
    }
    let n = sup.n();
    let seeds = SeedSplitter::new(cfg.seed);
    let mut z = CodeMatrix::random(n, cfg.m, seeds.derive(seed::stream::CODE_INIT));
    let mut s = pair_inner_products(sup, &z);
    let mut objective = objective_from_inner(sup, &s, loss);
    let mut trace = ObjectiveTrace {
        initial: objective,
        entries: Vec::with_capacity(cfg.sweeps * cfg.m),
    };
    let spectral_seeds = seeds.child(seed::stream::SPECTRAL);
    let entries = sup.entries();

    for sweep in 1..=cfg.sweeps {
        for k in 0..cfg.m {
            let mut accepted = false;
            if !entries.is_empty() {
                let problem = assemble_from_inner(sup, &s, &z, k, loss);
                let incumbent = z.column(k);
                let opts = BitSolverOptions {
                    spectral: SpectralOptions {
                        max_iters: cfg.eigen_max_iters,
                        tol: DEFAULT_EIGEN_TOL,
                        seed: spectral_seeds.derive(((sweep as u64) << 32) | k as u64),
                    },
                    box_max_iters: cfg.box_max_iters,
                    box_tol: cfg.box_tol,
                };
                let sol = solve_bit(&problem.bqp, &incumbent, &opts)?;
                if sol.selection.choice != Choice::Incumbent {
                    let col = &sol.selection.z;
                    let new_s: Vec<i64> = par::map_range(entries.len(), |p| {
                        let Pair { i, j, .. } = entries[p];
                        s[p] - i64::from(incumbent[i] * incumbent[j]) + i64::from(col[i] * col[j])
                    });
                    let new_objective = objective_from_inner(sup, &new_s, loss);
                    // The quadratic and direct objectives agree only up to rounding;
                    // the direct one decides so the trace never goes up.
                    if new_objective <= objective {
                        z.set_column(k, col);
                        s = new_s;
                        objective = new_objective;
                        accepted = true;
                    }
                }
            }
            trace.entries.push(TraceEntry {
                sweep,
                bit: k,
                objective,
                accepted,
            });
        }
    }
    Ok(LearnedCodes { codes: z, trace })
}
