//! Reference implementations shared by the integration test targets.
//!
//! Everything here works on unpacked `+-1` rows with float arithmetic and a
//! plain stable sort, independent of the packed popcount path.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_signs(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<i8>> {
    (0..n)
        .map(|_| (0..m).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
        .collect()
}

/// Hamming distance from the affinity: `(m - <a, b>) / 2`.
pub fn naive_distance(a: &[i8], b: &[i8]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    (a.len() as f64 - dot) / 2.0
}

/// Database ids sorted by distance; the stable sort keeps id order on ties.
pub fn naive_ranking(db: &[Vec<i8>], q: &[i8]) -> Vec<(f64, usize)> {
    let mut r: Vec<(f64, usize)> = db.iter().enumerate().map(|(i, c)| (naive_distance(c, q), i)).collect();
    r.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveReport {
    pub precision_at_k: f64,
    pub map: f64,
    pub pr_auc: f64,
    pub precision_within_radius: f64,
    pub curve: Vec<(f64, f64)>,
    pub scored: usize,
}

/// Metrics straight from their definitions over the full ranking.
pub fn naive_evaluate(db: &[Vec<i8>], queries: &[Vec<i8>], relevant: &[Vec<usize>], k: usize, radius: u32) -> NaiveReport {
    let m = db[0].len();
    let (mut pk, mut ap_sum, mut prad, mut scored) = (0.0, 0.0, 0.0, 0usize);
    let mut curve_sum = vec![(0.0, 0.0); m + 1];
    for (q, rel) in queries.iter().zip(relevant) {
        if rel.is_empty() {
            continue;
        }
        scored += 1;
        let ranking = naive_ranking(db, q);
        let is_rel = |id: usize| rel.contains(&id);
        pk += ranking[..k].iter().filter(|(_, id)| is_rel(*id)).count() as f64 / k as f64;

        let mut hits = 0;
        let mut ap = 0.0;
        for (pos, &(_, id)) in ranking.iter().enumerate() {
            if is_rel(id) {
                hits += 1;
                ap += hits as f64 / (pos + 1) as f64;
            }
        }
        ap_sum += ap / rel.len() as f64;

        for (t, slot) in curve_sum.iter_mut().enumerate() {
            let within: Vec<usize> = ranking.iter().filter(|(d, _)| *d <= t as f64).map(|&(_, id)| id).collect();
            let good = within.iter().filter(|&&id| is_rel(id)).count();
            let precision = if within.is_empty() { 0.0 } else { good as f64 / within.len() as f64 };
            slot.0 += precision;
            slot.1 += good as f64 / rel.len() as f64;
            if t as u32 == radius.min(m as u32) {
                prad += precision;
            }
        }
    }
    let ns = scored as f64;
    let curve: Vec<(f64, f64)> = curve_sum.iter().map(|&(p, r)| (p / ns, r / ns)).collect();
    let mut auc = curve[0].0 * curve[0].1;
    for w in curve.windows(2) {
        auc += (w[1].1 - w[0].1) * (w[0].0 + w[1].0) / 2.0;
    }
    NaiveReport {
        precision_at_k: pk / ns,
        map: ap_sum / ns,
        pr_auc: auc,
        precision_within_radius: prad / ns,
        curve,
        scored,
    }
}

/// Mean average precision of a code matrix against class labels, every
/// point querying every other point in the same matrix.
pub fn self_map(rows: &[Vec<i8>], labels: &[i64]) -> f64 {
    let rel: Vec<Vec<usize>> = labels
        .iter()
        .map(|l| (0..labels.len()).filter(|&j| labels[j] == *l).collect())
        .collect();
    naive_evaluate(rows, rows, &rel, 1, 0).map
}
