//! Acceptance suite: one line per criterion, then a hard failure if any failed.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the report.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use twostep_hash::codegen::{
    self, assemble_bqp, learn_codes, solve_bit, total_objective, BitSolverOptions, BqpInstance, CodeMatrix,
    TrainConfig,
};
use twostep_hash::data::{Pair, PairSupervision};
use twostep_hash::hashfn::{self, FeatureMode};
use twostep_hash::loss::{bit_losses, quadratic_coeff, BitContext, LossKind, LossTag, PairLoss};
use twostep_hash::pipeline::{self, TrainOptions};
use twostep_hash::retrieval::{self, CodeDatabase, GroundTruth};
use twostep_hash::synth::ClusterSpec;

use common::{naive_evaluate, naive_ranking, random_signs, rng, self_map};

/// Fixed synthetic set for criteria 4 and 5.
const CLUSTER_SEED: u64 = 2024;
const TRAIN_SEED: u64 = 11;
const HELD_OUT: usize = 150;

/// Frozen after calibration runs of the full pipeline (see README).
const TRAIN_MAP_MIN: f64 = 0.95;
const AGREEMENT_MIN: f64 = 0.90;
const HELD_OUT_MAP_MIN: f64 = 0.85;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    detail: String,
    limit: Option<Duration>,
}

fn cluster_set() -> ClusterSpec {
    ClusterSpec::new(300, 3, 2, 1.0, CLUSTER_SEED)
}

fn criterion_1() -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for tag in LossTag::ALL {
        for _ in 0..1000 {
            let m = r.random_range(1..=64usize);
            // sbar is a sum of m - 1 signs: same parity as m - 1
            let sbar = 2 * r.random_range(0..m as i64) - (m as i64 - 1);
            let y = [-1.0, 0.0, 1.0][r.random_range(0..3)];
            let k = r.random_range(0..m);
            let loss = LossKind::new(tag, m).unwrap();
            let ctx = BitContext::new(k, sbar, y, m).unwrap();
            let q = quadratic_coeff(&loss, &ctx).unwrap();
            for z1 in [-1i8, 1] {
                for z2 in [-1i8, 1] {
                    let direct = loss.eval(sbar + i64::from(z1 * z2), y);
                    let quad = q.a * f64::from(z1) * f64::from(z2) + q.c;
                    let err = (quad - direct).abs();
                    assert!(err <= 1e-9, "{tag}: m={m} sbar={sbar} y={y} z=({z1},{z2}) err={err:e}");
                    worst = worst.max(err);
                    checked += 1;
                }
            }
            let (agree, disagree) = bit_losses(&loss, sbar, y);
            assert!((q.a - 0.5 * (agree - disagree)).abs() <= 1e-12);
        }
    }
    Outcome {
        detail: format!("{checked} evaluations, max |quadratic - direct| = {worst:.1e}"),
        limit: Some(Duration::from_secs(1)),
    }
}

fn random_supervision(n: usize, seed: u64) -> PairSupervision {
    let mut r = rng(seed);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let y = if r.random_bool(0.3) { 1.0 } else { -1.0 };
            pairs.push(Pair { i, j, y });
        }
    }
    PairSupervision::new(n, pairs).unwrap()
}

fn criterion_2() -> Outcome {
    let mut updates = 0;
    let mut accepted = 0;
    for tag in LossTag::ALL {
        for p in 0..20u64 {
            let sup = random_supervision(50, 100 + p);
            let cfg = TrainConfig::new(tag, 8, p).unwrap();
            let learned = learn_codes(&sup, &cfg).unwrap();
            let t = &learned.trace;
            let mut prev = t.initial;
            for e in &t.entries {
                assert!(e.objective <= prev, "{tag} problem {p}: bit {} raised {prev} to {}", e.bit, e.objective);
                prev = e.objective;
                accepted += usize::from(e.accepted);
            }
            updates += t.entries.len();
            let direct = total_objective(&sup, &learned.codes, &cfg.loss);
            let scale = direct.abs().max(1.0);
            assert!((direct - t.final_objective()).abs() <= 1e-9 * scale, "{tag} problem {p}: trace drifted");
        }
    }
    Outcome {
        detail: format!("100 problems, {updates} bit updates ({accepted} accepted), none increased"),
        limit: Some(Duration::from_secs(30)),
    }
}

fn exhaustive_min(bqp: &BqpInstance) -> f64 {
    let n = bqp.n();
    (0u32..1 << n)
        .map(|mask| {
            let z: Vec<i8> = (0..n).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect();
            bqp.objective_signs(&z)
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let n = 10;
    let (mut gaps, mut optimal) = (Vec::new(), 0);
    for inst in 0..50u64 {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = r.random_range(-1.0..1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let bqp = BqpInstance::new(n, a).unwrap();
        let incumbent = random_signs(&mut r, 1, n).remove(0);
        let mut opts = BitSolverOptions::default();
        opts.spectral.seed = inst;
        let sol = solve_bit(&bqp, &incumbent, &opts).unwrap();
        let chosen = bqp.objective_signs(&sol.selection.z);
        assert_eq!(chosen, sol.selection.objective);
        assert!(chosen <= sol.spectral_rounded_objective(), "instance {inst}: worse than spectral rounding");
        assert!(chosen <= sol.box_rounded_objective(), "instance {inst}: worse than box rounding");
        assert!(chosen <= bqp.objective_signs(&incumbent), "instance {inst}: worse than incumbent");
        let best = exhaustive_min(&bqp);
        assert!(best <= chosen + 1e-12);
        let gap = (chosen - best) / best.abs().max(1e-12);
        optimal += usize::from(chosen - best <= 1e-12);
        gaps.push(gap);
    }
    gaps.sort_by(f64::total_cmp);
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    Outcome {
        detail: format!(
            "dominance holds on 50/50; exhaustive optimum hit on {optimal}/50, relative gap mean {mean:.4}, max {:.4}",
            gaps[gaps.len() - 1]
        ),
        limit: Some(Duration::from_secs(10)),
    }
}

fn train_options() -> TrainOptions {
    let mut o = TrainOptions::new(LossTag::Bre, 16, TRAIN_SEED);
    o.pairs_per_point = Some(299);
    o.feature = FeatureMode::Kernel;
    o.anchors = 100;
    o.bandwidth_t = 1.0;
    o
}

fn code_rows(z: &CodeMatrix) -> Vec<Vec<i8>> {
    (0..z.n()).map(|i| z.row(i).to_vec()).collect()
}

fn criterion_4() -> Outcome {
    let ds = cluster_set().generate().unwrap();
    let opts = train_options();
    let (sup, learned) = pipeline::learn(&ds, &opts).unwrap();
    assert_eq!(sup.len(), 300 * 299 / 2, "full pairing");
    let labels = ds.labels().unwrap();
    let map = self_map(&code_rows(&learned.codes), labels);
    let gt = retrieval::ground_truth_from_labels(labels, labels);
    let packed = learned.codes.to_packed();
    let report = retrieval::evaluate(&CodeDatabase::new(packed.clone()), &packed, &gt, 1, 0).unwrap();
    assert!((report.map - map).abs() <= 1e-12);
    assert!(map >= TRAIN_MAP_MIN, "training MAP {map:.4} < {TRAIN_MAP_MIN}");
    Outcome {
        detail: format!("training MAP from learned codes = {map:.4} (threshold {TRAIN_MAP_MIN})"),
        limit: Some(Duration::from_secs(60)),
    }
}

/// (bit agreement, held-out MAP, constant bits) for one synthetic set.
fn two_step_scores(spec: &ClusterSpec, train_seed: u64) -> (f64, f64, usize) {
    let ds = spec.generate().unwrap();
    let held_out = spec.generate_queries(HELD_OUT).unwrap();
    let mut opts = train_options();
    opts.seed = train_seed;
    let out = pipeline::train(&ds, &opts).unwrap();
    assert_eq!(out.model.kernel().unwrap().num_anchors(), 100);

    let encoded = hashfn::encode(&out.model, ds.features()).unwrap();
    let z = code_rows(&out.codes);
    let (mut same, mut total) = (0usize, 0usize);
    for (i, row) in z.iter().enumerate() {
        let e = encoded.unpack(i);
        same += row.iter().zip(&e).filter(|(a, b)| a == b).count();
        total += row.len();
    }
    let agreement = same as f64 / total as f64;

    let q = hashfn::encode(&out.model, held_out.features()).unwrap();
    let gt = retrieval::ground_truth_from_labels(ds.labels().unwrap(), held_out.labels().unwrap());
    let report = retrieval::evaluate(&CodeDatabase::new(encoded), &q, &gt, 50, 2).unwrap();
    (agreement, report.map, out.constant_bits.len())
}

fn criterion_5() -> Outcome {
    let (agreement, map, constant) = two_step_scores(&cluster_set(), TRAIN_SEED);
    assert!(agreement >= AGREEMENT_MIN, "bit agreement {agreement:.4} < {AGREEMENT_MIN}");
    assert!(map >= HELD_OUT_MAP_MIN, "held-out MAP {map:.4} < {HELD_OUT_MAP_MIN}");
    Outcome {
        detail: format!(
            "bit agreement {agreement:.4} (>= {AGREEMENT_MIN}), held-out MAP {map:.4} (>= {HELD_OUT_MAP_MIN}), {constant} constant bits"
        ),
        limit: Some(Duration::from_secs(60)),
    }
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let m = if inst % 2 == 0 { 32 } else { 70 };
        let n = 1000;
        let db = random_signs(&mut r, n, m);
        let queries = random_signs(&mut r, 5, m);
        let mut ids: Vec<usize> = (0..n).collect();
        let relevant: Vec<Vec<usize>> = queries
            .iter()
            .map(|_| {
                ids.shuffle(&mut r);
                let mut rel = ids[..r.random_range(1..200)].to_vec();
                rel.sort_unstable();
                rel
            })
            .collect();
        let packed_db = CodeDatabase::new(twostep_hash::packed::PackedCodes::from_sign_rows(m, &db).unwrap());
        let packed_q = twostep_hash::packed::PackedCodes::from_sign_rows(m, &queries).unwrap();
        for (qi, q) in queries.iter().enumerate() {
            let fast = packed_db.full_ranking(packed_q.code(qi)).unwrap();
            let slow = naive_ranking(&db, q);
            assert_eq!(fast.len(), slow.len());
            for (f, s) in fast.iter().zip(&slow) {
                assert_eq!(f.1, s.1, "instance {inst} query {qi}: order differs");
                assert_eq!(f64::from(f.0), s.0);
            }
        }
        let k = 100;
        let radius = 2 + (inst as u32 % 3) * 8;
        let gt = GroundTruth::new(relevant.clone());
        let fast = retrieval::evaluate(&packed_db, &packed_q, &gt, k, radius).unwrap();
        let slow = naive_evaluate(&db, &queries, &relevant, k, radius);
        for (name, a, b) in [
            ("precision@k", fast.precision_at_k, slow.precision_at_k),
            ("map", fast.map, slow.map),
            ("pr_auc", fast.pr_auc, slow.pr_auc),
            ("precision within radius", fast.precision_within_radius, slow.precision_within_radius),
        ] {
            let err = (a - b).abs();
            assert!(err <= 1e-12, "instance {inst}: {name} {a} vs {b}");
            worst = worst.max(err);
        }
        for (p, s) in fast.pr_curve.iter().zip(&slow.curve) {
            assert!((p.precision - s.0).abs() <= 1e-12 && (p.recall - s.1).abs() <= 1e-12);
        }
    }
    Outcome {
        detail: format!("20 instances, identical orderings, max metric difference {worst:.1e}"),
        limit: Some(Duration::from_secs(10)),
    }
}

fn tsh(dir: &Path, threads: usize, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_tsh"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .status()
        .unwrap();
    assert!(status.success(), "tsh {args:?} failed with {status}");
}

fn end_to_end(dir: &Path, threads: usize) -> Vec<(String, Vec<u8>)> {
    tsh(dir, 1, &["gen-data", "--n", "300", "--seed", "5", "--out", "train.csv", "--queries", "60", "--queries-out", "q.csv"]);
    tsh(dir, 1, &["ground-truth", "--db", "train.csv", "--queries", "q.csv", "--labeled", "--out", "gt.txt"]);
    tsh(
        dir,
        threads,
        &[
            "train", "--data", "train.csv", "--labeled", "--bits", "16", "--loss", "bre", "--anchors", "100", "--seed",
            "3", "--model-out", "model.json", "--codes-out", "z.tshc",
        ],
    );
    tsh(dir, threads, &["encode", "--model", "model.json", "--data", "train.csv", "--labeled", "--out", "db.tshc"]);
    tsh(dir, threads, &["encode", "--model", "model.json", "--data", "q.csv", "--labeled", "--out", "q.tshc"]);
    tsh(
        dir,
        threads,
        &["eval", "--db", "db.tshc", "--queries", "q.tshc", "--ground-truth", "gt.txt", "--k", "50", "--report-out", "report"],
    );
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_7() -> Outcome {
    let runs: Vec<Vec<(String, Vec<u8>)>> = [1, 4, 4]
        .iter()
        .map(|&t| {
            let dir = tempfile::tempdir().unwrap();
            end_to_end(dir.path(), t)
        })
        .collect();
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    for name in ["model.json", "model.json.trace.csv", "db.tshc", "q.tshc", "report.json", "report.csv", "report.pr.csv"] {
        assert!(names.contains(&name), "missing output {name}");
    }
    for other in &runs[1..] {
        assert_eq!(other.len(), runs[0].len());
        for (a, b) in runs[0].iter().zip(other) {
            assert_eq!(a.0, b.0);
            assert!(a.1 == b.1, "{} differs between runs", a.0);
        }
    }
    Outcome {
        detail: format!("{} output files byte-identical across --threads 1, 4, 4", runs[0].len()),
        limit: None,
    }
}

#[test]
fn acceptance_suite() {
    let criteria: [Criterion; 7] = [
        ("pairwise loss equals its single-bit quadratic form", criterion_1),
        ("block coordinate descent never increases the objective", criterion_2),
        ("selected bit dominates its candidates on small instances", criterion_3),
        ("learned training codes retrieve their own classes", criterion_4),
        ("hash functions reproduce the codes and generalise", criterion_5),
        ("packed retrieval matches the reference implementation", criterion_6),
        ("end-to-end CLI outputs are deterministic", criterion_7),
    ];
    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let line = match result {
            Ok(o) => {
                let over = o.limit.filter(|&l| elapsed > l);
                match over {
                    Some(l) => {
                        failures.push(i + 1);
                        format!("FAIL  {}: {} ({:.2?} exceeds {:.0?})", i + 1, name, elapsed, l)
                    }
                    _ => format!("PASS  {}: {}: {} [{:.2?}]", i + 1, name, o.detail, elapsed),
                }
            }
            Err(e) => {
                failures.push(i + 1);
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                format!("FAIL  {}: {}: {} [{:.2?}]", i + 1, name, msg, elapsed)
            }
        };
        println!("{line}");
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

/// The objective helpers agree with a direct sum over ordered pairs.
#[test]
fn objective_oracle_matches_library() {
    let sup = random_supervision(12, 9);
    let z = CodeMatrix::random(12, 5, 4);
    let loss = LossKind::new(LossTag::Ksh, 5).unwrap();
    let direct: f64 = sup.entries().iter().map(|p| 2.0 * loss.eval(z.inner(p.i, p.j), p.y)).sum();
    assert!((total_objective(&sup, &z, &loss) - direct).abs() <= 1e-9 * direct.max(1.0));
    // the bit problem plus its constant reproduces the same total
    let bit = codegen::assemble_bit_problem(&sup, &z, 0, &loss).unwrap();
    let col = z.column(0);
    let total = bit.bqp.objective_signs(&col) + bit.constant;
    assert!((total - direct).abs() <= 1e-9 * direct.max(1.0));
    let _ = assemble_bqp(&sup, &z, 0, &loss).unwrap();
}

/// Distribution of the two-step scores over many synthetic sets; used to pick
/// the frozen thresholds above.
#[test]
#[ignore]
fn calibrate_two_step_thresholds() {
    let mut rows = Vec::new();
    for data_seed in 0..30u64 {
        let spec = ClusterSpec::new(300, 3, 2, 1.0, data_seed);
        let (agreement, map, _) = two_step_scores(&spec, data_seed + 1);
        let train = pipeline::learn(&spec.generate().unwrap(), &train_options()).unwrap().1;
        let labels = spec.generate().unwrap().labels().unwrap().to_vec();
        let train_map = self_map(&code_rows(&train.codes), &labels);
        println!("seed {data_seed:2}: train MAP {train_map:.4}  agreement {agreement:.4}  held-out MAP {map:.4}");
        rows.push((train_map, agreement, map));
    }
    let min = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
    println!("min: train MAP {:.4}  agreement {:.4}  held-out MAP {:.4}", min(|r| r.0), min(|r| r.1), min(|r| r.2));
}
