//! Hamming ranking over packed codes and retrieval metrics.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::data::{euclidean, quantile_index, DataError, Matrix};
use crate::packed::{word_mask, words_per_code, PackedCodes};
use crate::par;

pub const DEFAULT_K: usize = 300;
pub const DEFAULT_RADIUS: u32 = 2;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("code length mismatch: {0} vs {1} bits")]
    BitMismatch(usize, usize),
    #[error("code has {found} words, expected {expected}")]
    WordMismatch { expected: usize, found: usize },
    #[error("cutoff k = {k} must be in 1..={n}")]
    BadCutoff { k: usize, n: usize },
    #[error("no queries")]
    NoQueries,
    #[error("every query has an empty relevant set; MAP is undefined")]
    NoRelevant,
    #[error("ground truth covers {gt} queries but {queries} were given")]
    QueryCount { gt: usize, queries: usize },
    #[error("ground truth references unknown database id {0}")]
    UnknownId(usize),
    #[error("malformed ground truth at line {line}: {cell:?}")]
    MalformedGroundTruth { line: usize, cell: String },
    #[error("database ids must be unique and match the code count")]
    BadIds,
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = RetrievalError> = std::result::Result<T, E>;

/// Hamming distance between two packed `m`-bit codes; padding is ignored.
pub fn hamming_distance(a: &[u64], b: &[u64], m: usize) -> Result<u32> {
    let w = words_per_code(m);
    for c in [a, b] {
        if c.len() != w {
            return Err(RetrievalError::WordMismatch { expected: w, found: c.len() });
        }
    }
    Ok(hamming_unchecked(a, b, m))
}

#[inline]
fn hamming_unchecked(a: &[u64], b: &[u64], m: usize) -> u32 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(w, (x, y))| ((x ^ y) & word_mask(m, w)).count_ones())
        .sum()
}

/// Packed database codes with the source ids used for tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeDatabase {
    codes: PackedCodes,
    ids: Vec<usize>,
}

impl CodeDatabase {
    /// Ids are the row positions `0..N`.
    pub fn new(codes: PackedCodes) -> Self {
        let ids = (0..codes.len()).collect();
        Self { codes, ids }
    }

    pub fn with_ids(codes: PackedCodes, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != codes.len() {
            return Err(RetrievalError::BadIds);
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(RetrievalError::BadIds);
        }
        Ok(Self { codes, ids })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.codes.bits()
    }

    pub fn codes(&self) -> &PackedCodes {
        &self.codes
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// `(distance, id)` for every entry, ascending by distance then id.
    pub fn full_ranking(&self, query: &[u64]) -> Result<Vec<(u32, usize)>> {
        let m = self.bits();
        let w = words_per_code(m);
        if query.len() != w {
            return Err(RetrievalError::WordMismatch { expected: w, found: query.len() });
        }
        // bucket by distance, then order each bucket by id
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); m + 1];
        for (pos, &id) in self.ids.iter().enumerate() {
            let d = hamming_unchecked(self.codes.code(pos), query, m);
            buckets[d as usize].push(id);
        }
        let mut out = Vec::with_capacity(self.len());
        for (d, mut b) in buckets.into_iter().enumerate() {
            b.sort_unstable();
            out.extend(b.into_iter().map(|id| (d as u32, id)));
        }
        Ok(out)
    }
}

/// The `k` nearest ids to `query`, ties broken by ascending id.
pub fn rank(db: &CodeDatabase, query: &[u64], k: usize) -> Result<Vec<usize>> {
    if k > db.len() {
        return Err(RetrievalError::BadCutoff { k, n: db.len() });
    }
    let mut r = db.full_ranking(query)?;
    r.truncate(k);
    Ok(r.into_iter().map(|(_, id)| id).collect())
}

/// Relevant database ids per query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    relevant: Vec<Vec<usize>>,
}

impl GroundTruth {
    /// Sets are sorted and deduplicated.
    pub fn new(mut relevant: Vec<Vec<usize>>) -> Self {
        for r in &mut relevant {
            r.sort_unstable();
            r.dedup();
        }
        Self { relevant }
    }

    pub fn num_queries(&self) -> usize {
        self.relevant.len()
    }

    pub fn relevant(&self, q: usize) -> &[usize] {
        &self.relevant[q]
    }

    /// One line per query with space-separated ids; an empty line is an empty set.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.relevant {
            let line: Vec<String> = r.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut relevant = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let ids = line
                .split_whitespace()
                .map(|c| {
                    c.parse::<usize>().map_err(|_| RetrievalError::MalformedGroundTruth {
                        line: i + 1,
                        cell: c.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            relevant.push(ids);
        }
        Ok(Self::new(relevant))
    }
}

/// Relevance by label agreement between each query and every database point.
pub fn ground_truth_from_labels(db_labels: &[i64], query_labels: &[i64]) -> GroundTruth {
    GroundTruth::new(
        query_labels
            .iter()
            .map(|q| {
                db_labels
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| *l == q)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect(),
    )
}

/// Relevance by Euclidean distance: the database points within the query's
/// top-`percentile` distance threshold (ties included).
pub fn ground_truth_from_distance(db: &Matrix, queries: &Matrix, percentile: f64) -> Result<GroundTruth> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(DataError::BadPercentile(percentile).into());
    }
    if db.cols() != queries.cols() {
        return Err(DataError::DimensionMismatch {
            expected: db.cols(),
            found: queries.cols(),
        }
        .into());
    }
    if db.rows() == 0 {
        return Ok(GroundTruth::new(vec![Vec::new(); queries.rows()]));
    }
    let sets = par::map_range(queries.rows(), |q| {
        let x = queries.row(q);
        let d: Vec<f64> = db.iter_rows().map(|r| euclidean(x, r)).collect();
        let mut sorted = d.clone();
        sorted.sort_by(f64::total_cmp);
        let thr = sorted[quantile_index(percentile, sorted.len())];
        d.iter().enumerate().filter(|(_, &v)| v <= thr).map(|(i, _)| i).collect()
    });
    Ok(GroundTruth::new(sets))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: u32,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub relevant: usize,
    /// `None` for queries with no relevant items, which are not scored.
    pub precision_at_k: Option<f64>,
    pub average_precision: Option<f64>,
    pub precision_within_radius: Option<f64>,
    #[serde(skip)]
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub num_queries: usize,
    /// Queries with a nonempty relevant set; all means are over these.
    pub num_scored: usize,
    pub k: usize,
    pub radius: u32,
    pub precision_at_k: f64,
    pub map: f64,
    pub pr_auc: f64,
    pub precision_within_radius: f64,
    /// Query-averaged precision and recall at each Hamming threshold `0..=m`.
    pub pr_curve: Vec<PrPoint>,
    pub per_query: Vec<QueryMetrics>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "precision_at_k,{}", self.precision_at_k);
        let _ = writeln!(s, "map,{}", self.map);
        let _ = writeln!(s, "pr_auc,{}", self.pr_auc);
        let _ = writeln!(s, "precision_within_radius,{}", self.precision_within_radius);
        let _ = writeln!(s, "k,{}", self.k);
        let _ = writeln!(s, "radius,{}", self.radius);
        let _ = writeln!(s, "num_queries,{}", self.num_queries);
        let _ = writeln!(s, "num_scored,{}", self.num_scored);
        s
    }

    /// `threshold,precision,recall` rows.
    pub fn pr_curve_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for p in &self.pr_curve {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        s
    }
}

/// Trapezoidal area under a curve ordered by non-decreasing recall.
/// Trapezoid area under the curve, extended flat from its first point back to
/// recall 0 so a curve that starts at full recall still has area.
pub fn pr_area(curve: &[PrPoint]) -> f64 {
    let head = curve.first().map_or(0.0, |p| p.recall * p.precision);
    head + curve
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) * 0.5)
        .sum::<f64>()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn score_query(db: &CodeDatabase, query: &[u64], relevant: &[usize], k: usize, radius: u32) -> Result<QueryMetrics> {
    let m = db.bits();
    let ranking = db.full_ranking(query)?;
    let nrel = relevant.len();
    if nrel == 0 {
        return Ok(QueryMetrics {
            relevant: 0,
            precision_at_k: None,
            average_precision: None,
            precision_within_radius: None,
            pr_curve: Vec::new(),
        });
    }
    let mut hits = 0usize;
    let mut hits_at_k = 0usize;
    let mut ap = 0.0;
    let mut retrieved_at = vec![0usize; m + 1];
    let mut relevant_at = vec![0usize; m + 1];
    for (pos, &(d, id)) in ranking.iter().enumerate() {
        let is_rel = relevant.binary_search(&id).is_ok();
        retrieved_at[d as usize] += 1;
        if is_rel {
            hits += 1;
            relevant_at[d as usize] += 1;
            ap += hits as f64 / (pos + 1) as f64;
            if pos < k {
                hits_at_k += 1;
            }
        }
    }
    let mut curve = Vec::with_capacity(m + 1);
    let (mut ret, mut rel) = (0usize, 0usize);
    let mut within_radius = (0usize, 0usize);
    for t in 0..=m {
        ret += retrieved_at[t];
        rel += relevant_at[t];
        if t as u32 <= radius {
            within_radius = (rel, ret);
        }
        curve.push(PrPoint {
            threshold: t as u32,
            precision: ratio(rel, ret),
            recall: ratio(rel, nrel),
        });
    }
    Ok(QueryMetrics {
        relevant: nrel,
        precision_at_k: Some(hits_at_k as f64 / k as f64),
        average_precision: Some(ap / nrel as f64),
        precision_within_radius: Some(ratio(within_radius.0, within_radius.1)),
        pr_curve: curve,
    })
}

/// Ranks the whole database for every query and scores it against `gt`.
///
/// Queries with no relevant items are reported but excluded from every mean.
pub fn evaluate(
    db: &CodeDatabase,
    queries: &PackedCodes,
    gt: &GroundTruth,
    k: usize,
    radius: u32,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(RetrievalError::NoQueries);
    }
    if queries.bits() != db.bits() {
        return Err(RetrievalError::BitMismatch(db.bits(), queries.bits()));
    }
    if gt.num_queries() != queries.len() {
        return Err(RetrievalError::QueryCount {
            gt: gt.num_queries(),
            queries: queries.len(),
        });
    }
    if k == 0 || k > db.len() {
        return Err(RetrievalError::BadCutoff { k, n: db.len() });
    }
    let mut known = db.ids().to_vec();
    known.sort_unstable();
    for r in &gt.relevant {
        if let Some(&bad) = r.iter().find(|id| known.binary_search(id).is_err()) {
            return Err(RetrievalError::UnknownId(bad));
        }
    }
    let per_query = par::map_range(queries.len(), |q| score_query(db, queries.code(q), gt.relevant(q), k, radius))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let scored: Vec<&QueryMetrics> = per_query.iter().filter(|q| q.relevant > 0).collect();
    if scored.is_empty() {
        return Err(RetrievalError::NoRelevant);
    }
    let ns = scored.len() as f64;
    let mean = |f: fn(&QueryMetrics) -> Option<f64>| scored.iter().filter_map(|q| f(q)).sum::<f64>() / ns;
    let m = db.bits();
    let pr_curve: Vec<PrPoint> = (0..=m)
        .map(|t| PrPoint {
            threshold: t as u32,
            precision: scored.iter().map(|q| q.pr_curve[t].precision).sum::<f64>() / ns,
            recall: scored.iter().map(|q| q.pr_curve[t].recall).sum::<f64>() / ns,
        })
        .collect();
    Ok(EvalReport {
        num_queries: queries.len(),
        num_scored: scored.len(),
        k,
        radius,
        precision_at_k: mean(|q| q.precision_at_k),
        map: mean(|q| q.average_precision),
        pr_auc: pr_area(&pr_curve),
        precision_within_radius: mean(|q| q.precision_within_radius),
        pr_curve,
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(m: usize, rows: &[Vec<i8>]) -> PackedCodes {
        PackedCodes::from_sign_rows(m, rows).unwrap()
    }

    #[test]
    fn distance_examples() {
        let c = codes(3, &[vec![1, 1, -1], vec![1, -1, -1]]);
        assert_eq!(hamming_distance(c.code(0), c.code(1), 3).unwrap(), 1);
        assert_eq!(hamming_distance(c.code(0), c.code(0), 3).unwrap(), 0);
        assert!(hamming_distance(&[0, 0], &[0], 3).is_err());
        // padding bits never count
        assert_eq!(hamming_distance(&[0b111], &[u64::MAX], 3).unwrap(), 0);
    }

    #[test]
    fn rank_singleton_and_ties() {
        let db = CodeDatabase::new(codes(2, &[vec![1, 1]]));
        assert_eq!(rank(&db, &[0], 1).unwrap(), vec![0]);
        let db = CodeDatabase::new(codes(2, &[vec![-1, 1], vec![1, 1], vec![1, 1], vec![1, -1]]));
        let q = codes(2, &[vec![1, 1]]);
        assert_eq!(rank(&db, q.code(0), 4).unwrap(), vec![1, 2, 0, 3]);
        assert!(matches!(rank(&db, q.code(0), 5), Err(RetrievalError::BadCutoff { .. })));
    }

    #[test]
    fn average_precision_hand_example() {
        // ranking order 0,1,2,3 with distances 0,1,2,3; relevant {0, 2}
        let db = CodeDatabase::new(codes(
            3,
            &[vec![1, 1, 1], vec![-1, 1, 1], vec![-1, -1, 1], vec![-1, -1, -1]],
        ));
        let q = codes(3, &[vec![1, 1, 1]]);
        let gt = GroundTruth::new(vec![vec![0, 2]]);
        let r = evaluate(&db, &q, &gt, 2, 2).unwrap();
        assert!((r.map - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.precision_at_k, 0.5);
        // within radius 2: ids 0,1,2 -> 2/3
        assert!((r.precision_within_radius - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_retrieval() {
        let db = CodeDatabase::new(codes(2, &[vec![1, 1], vec![1, 1], vec![-1, -1]]));
        let q = codes(2, &[vec![1, 1]]);
        let r = evaluate(&db, &q, &GroundTruth::new(vec![vec![0, 1]]), 2, 0).unwrap();
        assert_eq!((r.precision_at_k, r.map, r.precision_within_radius), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_radius_scores_zero() {
        let db = CodeDatabase::new(codes(8, &[vec![1; 8], vec![1; 8]]));
        let q = codes(8, &[vec![-1; 8]]);
        let r = evaluate(&db, &q, &GroundTruth::new(vec![vec![0]]), 1, 2).unwrap();
        assert_eq!(r.precision_within_radius, 0.0);
    }

    #[test]
    fn evaluation_errors() {
        let db = CodeDatabase::new(codes(2, &[vec![1, 1]]));
        let q = codes(2, &[vec![1, 1]]);
        assert!(matches!(evaluate(&db, &PackedCodes::empty(2).unwrap(), &GroundTruth::new(vec![]), 1, 2), Err(RetrievalError::NoQueries)));
        assert!(matches!(evaluate(&db, &q, &GroundTruth::new(vec![vec![]]), 1, 2), Err(RetrievalError::NoRelevant)));
        assert!(matches!(evaluate(&db, &q, &GroundTruth::new(vec![vec![3]]), 1, 2), Err(RetrievalError::UnknownId(3))));
        assert!(matches!(evaluate(&db, &q, &GroundTruth::new(vec![vec![0]]), 2, 2), Err(RetrievalError::BadCutoff { .. })));
        let q3 = codes(3, &[vec![1, 1, 1]]);
        assert!(matches!(evaluate(&db, &q3, &GroundTruth::new(vec![vec![0]]), 1, 2), Err(RetrievalError::BitMismatch(2, 3))));
    }

    #[test]
    fn ground_truth_text_round_trip() {
        let gt = GroundTruth::new(vec![vec![3, 1], vec![], vec![7]]);
        let text = gt.to_text();
        assert_eq!(text, "1 3\n\n7\n");
        assert_eq!(GroundTruth::from_text(&text).unwrap(), gt);
        assert!(matches!(GroundTruth::from_text("1 x"), Err(RetrievalError::MalformedGroundTruth { line: 1, .. })));
    }

    #[test]
    fn ground_truth_builders() {
        let gt = ground_truth_from_labels(&[0, 1, 0], &[0, 2]);
        assert_eq!(gt.relevant(0), &[0, 2]);
        assert!(gt.relevant(1).is_empty());
        let db = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![5.0], vec![9.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![0.9]]).unwrap();
        let gt = ground_truth_from_distance(&db, &q, 50.0).unwrap();
        assert_eq!(gt.relevant(0), &[0, 1]);
    }

    #[test]
    fn pr_area_of_flat_curve() {
        let c = [
            PrPoint { threshold: 0, precision: 1.0, recall: 0.0 },
            PrPoint { threshold: 1, precision: 1.0, recall: 1.0 },
        ];
        assert_eq!(pr_area(&c), 1.0);
        let perfect = [
            PrPoint { threshold: 0, precision: 1.0, recall: 1.0 },
            PrPoint { threshold: 1, precision: 0.5, recall: 1.0 },
        ];
        assert_eq!(pr_area(&perfect), 1.0);
    }
}
