//! Gaussian-cluster toy data.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{euclidean, DataError, Dataset, Matrix};
use crate::seed::SeedSplitter;

/// Parameters of a labelled Gaussian mixture. Point `i` belongs to cluster
/// `i % clusters`; centers are uniform in `[-center_scale, center_scale]^d`,
/// redrawn (a bounded number of times) until every pair of centers is at
/// least `min_gap * spread` apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n: usize,
    pub clusters: usize,
    pub d: usize,
    pub spread: f64,
    pub center_scale: f64,
    #[serde(default)]
    pub min_gap: f64,
    pub seed: u64,
}

pub const DEFAULT_MIN_GAP: f64 = 6.0;
const CENTER_ATTEMPTS: usize = 1000;

impl ClusterSpec {
    pub fn new(n: usize, clusters: usize, d: usize, spread: f64, seed: u64) -> Self {
        Self {
            n,
            clusters,
            d,
            spread,
            center_scale: 10.0,
            min_gap: DEFAULT_MIN_GAP,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.clusters < 2 {
            return Err(DataError::InvalidParameter("need at least 2 clusters".into()));
        }
        if self.n < self.clusters {
            return Err(DataError::InvalidParameter(format!(
                "n = {} is smaller than the cluster count {}",
                self.n, self.clusters
            )));
        }
        if self.d == 0 {
            return Err(DataError::InvalidParameter("dimension must be at least 1".into()));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) || !(self.center_scale > 0.0) || !(self.min_gap >= 0.0) {
            return Err(DataError::InvalidParameter(
                "spread and min gap must be >= 0 and center scale > 0".into(),
            ));
        }
        Ok(())
    }

    /// If no draw meets the gap, the best-separated draw is kept.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let mut rng = SeedSplitter::new(self.seed).rng(0);
        let want = self.min_gap * self.spread;
        let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
        for _ in 0..CENTER_ATTEMPTS {
            let centers: Vec<Vec<f64>> = (0..self.clusters)
                .map(|_| {
                    (0..self.d)
                        .map(|_| rng.random_range(-self.center_scale..=self.center_scale))
                        .collect()
                })
                .collect();
            let gap = min_pairwise_distance(&centers);
            if gap >= want {
                return centers;
            }
            if best.as_ref().is_none_or(|(g, _)| gap > *g) {
                best = Some((gap, centers));
            }
        }
        best.map(|(_, c)| c).unwrap_or_default()
    }

    fn sample(&self, count: usize, stream: u64) -> Result<Dataset, DataError> {
        self.validate()?;
        let centers = self.centers();
        let mut rng = SeedSplitter::new(self.seed).rng(stream);
        let mut data = Vec::with_capacity(count * self.d);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let c = i % self.clusters;
            for &mu in &centers[c] {
                let z: f64 = rng.sample(StandardNormal);
                data.push(mu + self.spread * z);
            }
            labels.push(c as i64);
        }
        Dataset::new(Matrix::from_flat(count, self.d, data)?, Some(labels))
    }

    /// The `n` training points.
    pub fn generate(&self) -> Result<Dataset, DataError> {
        self.sample(self.n, 1)
    }

    /// Independent draws from the same clusters, for held-out queries.
    pub fn generate_queries(&self, count: usize) -> Result<Dataset, DataError> {
        self.sample(count, 2)
    }
}

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.min(euclidean(a, b));
        }
    }
    best
}

/// Labelled CSV text: features then the integer label.
pub fn to_labeled_csv(ds: &Dataset) -> String {
    let mut s = String::new();
    let labels = ds.labels();
    for i in 0..ds.n() {
        let row: Vec<String> = ds.row(i).iter().map(f64::to_string).collect();
        s.push_str(&row.join(","));
        if let Some(l) = labels {
            s.push(',');
            s.push_str(&l[i].to_string());
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_dataset;

    #[test]
    fn generator_contract() {
        let spec = ClusterSpec::new(300, 3, 2, 1.0, 5);
        let ds = spec.generate().unwrap();
        assert_eq!((ds.n(), ds.d()), (300, 2));
        assert!(ds.labels().unwrap().iter().all(|l| (0..3).contains(l)));
        assert_eq!(ds, spec.generate().unwrap());
        let back = parse_dataset(&to_labeled_csv(&ds), true).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn zero_spread_sits_on_centers() {
        let spec = ClusterSpec::new(9, 3, 4, 0.0, 1);
        let ds = spec.generate().unwrap();
        let centers = spec.centers();
        for i in 0..ds.n() {
            assert_eq!(ds.row(i), centers[i % 3].as_slice());
        }
    }

    #[test]
    fn queries_share_centers_but_not_points() {
        let spec = ClusterSpec::new(30, 3, 2, 0.5, 1);
        let q = spec.generate_queries(30).unwrap();
        assert_ne!(q, spec.generate().unwrap());
        assert_eq!(q.labels(), spec.generate().unwrap().labels());
    }

    #[test]
    fn centers_respect_the_gap() {
        for seed in 0..20 {
            let spec = ClusterSpec::new(30, 3, 2, 1.0, seed);
            assert!(min_pairwise_distance(&spec.centers()) >= 6.0);
        }
        // infeasible gap: best effort, still deterministic
        let mut spec = ClusterSpec::new(30, 5, 1, 1.0, 3);
        spec.min_gap = 100.0;
        assert_eq!(spec.centers(), spec.centers());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ClusterSpec::new(10, 1, 2, 1.0, 0).generate().is_err());
        assert!(ClusterSpec::new(2, 3, 2, 1.0, 0).generate().is_err());
    }
}
