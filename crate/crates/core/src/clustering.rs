//! Clustering fitness suite: Lloyd's k-means, inertia, the silhouette
//! coefficient, DBSCAN and the k-means/DBSCAN comparison score.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FitnessValue, Individual};
use crate::error::DataError;
use crate::evolution::{EdoRng, Fitness, FitnessError};

/// A distance between two points of equal dimension.
pub trait Metric: Sync {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Euclidean;

impl Metric for Euclidean {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        squared_euclidean(a, b).sqrt()
    }
}

#[inline]
fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-major view of a dataset's points.
#[derive(Debug, Clone)]
struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    fn new(x: &Dataset) -> Self {
        Points {
            data: x.to_row_major(),
            dim: x.n_cols(),
        }
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Dense symmetric matrix of pairwise distances.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(x: &Dataset, metric: &dyn Metric) -> Self {
        let pts = Points::new(x);
        let n = pts.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = metric.distance(pts.get(i), pts.get(j));
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// A hard assignment of points to `k` clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub centroids: Option<Vec<Vec<f64>>>,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// D²-weighted seeding.
    #[default]
    PlusPlus,
    /// k distinct rows chosen uniformly.
    Random,
}

/// Lloyd's algorithm with seeded initialisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeans {
    pub k: usize,
    pub max_iter: usize,
    pub init: Init,
    pub seed: u64,
    /// Independent initialisations; the lowest-inertia result is kept.
    pub n_init: usize,
}

impl KMeans {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeans {
            k,
            max_iter: 300,
            init: Init::PlusPlus,
            seed,
            n_init: 1,
        }
    }

    pub fn fit(&self, x: &Dataset) -> Result<Partition, DataError> {
        self.fit_traced(x).map(|(p, _)| p)
    }

    /// Like [`KMeans::fit`], also returning the inertia after every Lloyd
    /// iteration of the kept initialisation.
    pub fn fit_traced(&self, x: &Dataset) -> Result<(Partition, Vec<f64>), DataError> {
        if self.k == 0 {
            return Err(DataError::InvalidK);
        }
        let pts = Points::new(x);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut best: Option<(Partition, Vec<f64>, f64)> = None;
        for _ in 0..self.n_init.max(1) {
            let init = match self.init {
                Init::PlusPlus => plus_plus_init(&pts, self.k, &mut rng),
                Init::Random => random_init(&pts, self.k, &mut rng),
            };
            let (partition, trace) = lloyd(&pts, init, self.max_iter);
            let score = *trace.last().expect("at least one iteration");
            if best.as_ref().is_none_or(|(_, _, b)| score < *b) {
                best = Some((partition, trace, score));
            }
        }
        let (p, t, _) = best.expect("n_init >= 1");
        Ok((p, t))
    }
}

/// Convenience wrapper around [`KMeans`] with default settings.
pub fn kmeans<R: Rng + ?Sized>(
    x: &Dataset,
    k: usize,
    rng: &mut R,
    max_iter: usize,
) -> Result<Partition, DataError> {
    KMeans {
        max_iter,
        ..KMeans::new(k, rng.random())
    }
    .fit(x)
}

fn plus_plus_init<R: Rng + ?Sized>(pts: &Points, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = pts.len();
    let mut centres = vec![pts.get(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_euclidean(pts.get(i), &centres[0]))
        .collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = pts.get(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_euclidean(pts.get(i), &c));
        }
        centres.push(c);
    }
    centres
}

fn random_init<R: Rng + ?Sized>(pts: &Points, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = pts.len();
    if k <= n {
        rand::seq::index::sample(rng, n, k)
            .into_iter()
            .map(|i| pts.get(i).to_vec())
            .collect()
    } else {
        (0..k)
            .map(|_| pts.get(rng.random_range(0..n)).to_vec())
            .collect()
    }
}

fn assign(pts: &Points, centroids: &[Vec<f64>], labels: &mut [usize]) {
    for (i, label) in labels.iter_mut().enumerate() {
        let p = pts.get(i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = squared_euclidean(p, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        *label = best;
    }
}

/// Moves the point farthest from its centroid into each empty cluster,
/// lowest index first on ties, only taking points from clusters of size > 1.
fn repair_empty(pts: &Points, centroids: &mut [Vec<f64>], labels: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for l in labels.iter() {
            sizes[*l] += 1;
        }
        let Some(empty) = sizes.iter().position(|s| *s == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, l) in labels.iter().enumerate() {
            if sizes[*l] < 2 {
                continue;
            }
            let d = squared_euclidean(pts.get(i), &centroids[*l]);
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else { return };
        labels[i] = empty;
        centroids[empty] = pts.get(i).to_vec();
    }
}

fn update_centroids(pts: &Points, labels: &[usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut sums = vec![vec![0.0; pts.dim]; k];
    let mut counts = vec![0usize; k];
    for (i, l) in labels.iter().enumerate() {
        counts[*l] += 1;
        for (s, v) in sums[*l].iter_mut().zip(pts.get(i)) {
            *s += v;
        }
    }
    for ((c, s), n) in centroids.iter_mut().zip(sums).zip(counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

fn mean_squared_error(pts: &Points, labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, l)| squared_euclidean(pts.get(i), &centroids[*l]))
        .sum();
    total / labels.len() as f64
}

fn lloyd(pts: &Points, mut centroids: Vec<Vec<f64>>, max_iter: usize) -> (Partition, Vec<f64>) {
    let n = pts.len();
    let k = centroids.len();
    let mut labels = vec![0usize; n];
    assign(pts, &centroids, &mut labels);
    repair_empty(pts, &mut centroids, &mut labels);
    update_centroids(pts, &labels, &mut centroids);
    let mut trace = vec![mean_squared_error(pts, &labels, &centroids)];
    let mut next = labels.clone();
    for _ in 1..max_iter.max(1) {
        assign(pts, &centroids, &mut next);
        repair_empty(pts, &mut centroids, &mut next);
        if next == labels {
            break;
        }
        std::mem::swap(&mut labels, &mut next);
        update_centroids(pts, &labels, &mut centroids);
        trace.push(mean_squared_error(pts, &labels, &centroids));
    }
    (
        Partition {
            labels,
            centroids: Some(centroids),
            k,
        },
        trace,
    )
}

fn check_labels(labels: &[usize], k: usize, n: usize) -> Result<(), DataError> {
    if labels.len() != n {
        return Err(DataError::LabelCount {
            labels: labels.len(),
            points: n,
        });
    }
    if let Some((point, label)) = labels.iter().enumerate().find(|(_, l)| **l >= k) {
        return Err(DataError::LabelOutOfRange {
            point,
            label: *label,
            k,
        });
    }
    Ok(())
}

/// Mean squared Euclidean distance from each point to its cluster centroid.
/// Centroids are recomputed from the labels when the partition has none.
pub fn inertia(partition: &Partition, x: &Dataset) -> Result<f64, DataError> {
    let pts = Points::new(x);
    check_labels(&partition.labels, partition.k, pts.len())?;
    let centroids = match &partition.centroids {
        Some(c) => c.clone(),
        None => {
            let mut c = vec![vec![0.0; pts.dim]; partition.k];
            update_centroids(&pts, &partition.labels, &mut c);
            c
        }
    };
    Ok(mean_squared_error(&pts, &partition.labels, &centroids))
}

/// Mean silhouette value over all points, Euclidean distance.
pub fn silhouette(labels: &[usize], x: &Dataset) -> Result<f64, DataError> {
    silhouette_with(labels, &DistanceMatrix::new(x, &Euclidean))
}

/// Mean silhouette value from precomputed distances. Points in singleton
/// clusters score 0; fewer than two non-empty clusters is an error.
pub fn silhouette_with(labels: &[usize], dist: &DistanceMatrix) -> Result<f64, DataError> {
    let n = dist.len();
    if labels.len() != n {
        return Err(DataError::LabelCount {
            labels: labels.len(),
            points: n,
        });
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for l in labels {
        sizes[*l] += 1;
    }
    if sizes.iter().filter(|s| **s > 0).count() < 2 {
        return Err(DataError::SilhouetteUndefined);
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[labels[j]] += dist.get(i, j);
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// DBSCAN labels; `None` marks noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DbscanResult {
    pub labels: Vec<Option<usize>>,
    pub n_clusters: usize,
}

impl DbscanResult {
    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Labels with the noise set treated as one extra cluster, numbered
    /// `n_clusters`.
    pub fn labels_with_noise_cluster(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|l| l.unwrap_or(self.n_clusters))
            .collect()
    }

    /// Clusters including the noise set as one.
    pub fn n_groups(&self) -> usize {
        self.n_clusters + usize::from(self.n_noise() > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dbscan {
    pub eps: f64,
    pub min_points: usize,
}

impl Dbscan {
    pub fn fit(&self, x: &Dataset) -> DbscanResult {
        self.fit_distances(&DistanceMatrix::new(x, &Euclidean))
    }

    /// Core points have at least `min_points` points (themselves included)
    /// within `eps`. Clusters grow from core points in row order; border
    /// points join the first cluster that reaches them.
    pub fn fit_distances(&self, dist: &DistanceMatrix) -> DbscanResult {
        let n = dist.len();
        let neighbours = |i: usize| (0..n).filter(move |&j| dist.get(i, j) <= self.eps);
        let mut labels: Vec<Option<usize>> = vec![None; n];
        let mut visited = vec![false; n];
        let mut cluster = 0;
        for i in 0..n {
            if visited[i] {
                continue;
            }
            visited[i] = true;
            let seeds: Vec<usize> = neighbours(i).collect();
            if seeds.len() < self.min_points {
                continue;
            }
            labels[i] = Some(cluster);
            let mut queue: VecDeque<usize> = seeds.into();
            while let Some(j) = queue.pop_front() {
                if labels[j].is_none() {
                    labels[j] = Some(cluster);
                }
                if visited[j] {
                    continue;
                }
                visited[j] = true;
                let reach: Vec<usize> = neighbours(j).collect();
                if reach.len() >= self.min_points {
                    queue.extend(reach);
                }
            }
            cluster += 1;
        }
        DbscanResult {
            labels,
            n_clusters: cluster,
        }
    }
}

pub fn dbscan(x: &Dataset, eps: f64, min_points: usize) -> DbscanResult {
    Dbscan { eps, min_points }.fit(x)
}

/// Which algorithm the comparison score rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preference {
    KMeans,
    Dbscan,
}

impl Preference {
    pub fn sign(self) -> f64 {
        match self {
            Preference::KMeans => 1.0,
            Preference::Dbscan => -1.0,
        }
    }
}

/// Silhouette of DBSCAN (noise as one cluster) minus silhouette of k-means,
/// times the preference sign. `+inf` when DBSCAN yields fewer than two
/// groups counting noise.
pub fn comparison_fitness(
    x: &Dataset,
    kmeans: &KMeans,
    dbscan: &Dbscan,
    preference: Preference,
) -> FitnessValue {
    let dist = DistanceMatrix::new(x, &Euclidean);
    let db = dbscan.fit_distances(&dist);
    if db.n_groups() < 2 {
        return FitnessValue::WORST;
    }
    let Ok(s_d) = silhouette_with(&db.labels_with_noise_cluster(), &dist) else {
        return FitnessValue::WORST;
    };
    let Ok(partition) = kmeans.fit(x) else {
        return FitnessValue::WORST;
    };
    let Ok(s_k) = silhouette_with(&partition.labels, &dist) else {
        return FitnessValue::WORST;
    };
    FitnessValue::new(preference.sign() * (s_d - s_k))
}

/// The named fitness functions of the case study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClusteringFitness {
    /// Final k-means inertia.
    Inertia {
        k: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "one")]
        n_init: usize,
    },
    /// Negated silhouette coefficient of the k-means clustering.
    SilhouetteKmeans {
        k: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "one")]
        n_init: usize,
    },
    KmeansVsDbscan {
        k: usize,
        eps: f64,
        min_points: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "one")]
        n_init: usize,
    },
    DbscanVsKmeans {
        k: usize,
        eps: f64,
        min_points: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "one")]
        n_init: usize,
    },
}

fn one() -> usize {
    1
}

impl ClusteringFitness {
    pub fn name(&self) -> &'static str {
        match self {
            ClusteringFitness::Inertia { .. } => "inertia",
            ClusteringFitness::SilhouetteKmeans { .. } => "silhouette-kmeans",
            ClusteringFitness::KmeansVsDbscan { .. } => "kmeans-vs-dbscan",
            ClusteringFitness::DbscanVsKmeans { .. } => "dbscan-vs-kmeans",
        }
    }

    pub fn kmeans(&self) -> KMeans {
        let (k, seed, n_init) = match *self {
            ClusteringFitness::Inertia { k, seed, n_init }
            | ClusteringFitness::SilhouetteKmeans { k, seed, n_init }
            | ClusteringFitness::KmeansVsDbscan {
                k, seed, n_init, ..
            }
            | ClusteringFitness::DbscanVsKmeans {
                k, seed, n_init, ..
            } => (k, seed, n_init),
        };
        KMeans {
            n_init,
            ..KMeans::new(k, seed)
        }
    }

    pub fn dbscan(&self) -> Option<Dbscan> {
        match *self {
            ClusteringFitness::KmeansVsDbscan {
                eps, min_points, ..
            }
            | ClusteringFitness::DbscanVsKmeans {
                eps, min_points, ..
            } => Some(Dbscan { eps, min_points }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        use crate::error::ConfigError;
        let km = self.kmeans();
        if km.k == 0 {
            return Err(ConfigError::field("fitness.k", "must be at least 1"));
        }
        if km.n_init == 0 {
            return Err(ConfigError::field("fitness.n_init", "must be at least 1"));
        }
        if matches!(self, ClusteringFitness::SilhouetteKmeans { .. }) && km.k < 2 {
            return Err(ConfigError::field("fitness.k", "silhouette needs k >= 2"));
        }
        if let Some(db) = self.dbscan() {
            if !(db.eps > 0.0 && db.eps.is_finite()) {
                return Err(ConfigError::field("fitness.eps", "must be positive"));
            }
            if db.min_points == 0 {
                return Err(ConfigError::field(
                    "fitness.min_points",
                    "must be at least 1",
                ));
            }
        }
        Ok(())
    }

    pub fn score(&self, x: &Dataset) -> FitnessValue {
        match self {
            ClusteringFitness::Inertia { .. } => {
                match self.kmeans().fit(x).and_then(|p| inertia(&p, x)) {
                    Ok(v) => FitnessValue::new(v),
                    Err(_) => FitnessValue::WORST,
                }
            }
            ClusteringFitness::SilhouetteKmeans { .. } => {
                match self.kmeans().fit(x).and_then(|p| silhouette(&p.labels, x)) {
                    Ok(v) => FitnessValue::new(-v),
                    Err(_) => FitnessValue::WORST,
                }
            }
            ClusteringFitness::KmeansVsDbscan { .. } => comparison_fitness(
                x,
                &self.kmeans(),
                &self.dbscan().expect("has dbscan"),
                Preference::KMeans,
            ),
            ClusteringFitness::DbscanVsKmeans { .. } => comparison_fitness(
                x,
                &self.kmeans(),
                &self.dbscan().expect("has dbscan"),
                Preference::Dbscan,
            ),
        }
    }
}

impl Fitness for ClusteringFitness {
    fn evaluate(
        &self,
        individual: &Individual,
        _rng: &mut EdoRng,
    ) -> Result<FitnessValue, FitnessError> {
        Ok(self.score(individual.dataset()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(points: &[[f64; 2]]) -> Dataset {
        Dataset::from_rows(&points.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    const SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];

    // independent reference: direct evaluation of the silhouette formula
    fn silhouette_oracle(points: &[[f64; 2]], labels: &[usize]) -> f64 {
        let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let k = *labels.iter().max().unwrap() + 1;
        let mut s = 0.0;
        for (i, p) in points.iter().enumerate() {
            let own: Vec<usize> = (0..points.len())
                .filter(|&j| labels[j] == labels[i] && j != i)
                .collect();
            if own.is_empty() {
                continue;
            }
            let a = own.iter().map(|&j| d(*p, points[j])).sum::<f64>() / own.len() as f64;
            let mut b = f64::INFINITY;
            for c in 0..k {
                if c == labels[i] {
                    continue;
                }
                let members: Vec<usize> = (0..points.len()).filter(|&j| labels[j] == c).collect();
                if members.is_empty() {
                    continue;
                }
                b = b.min(
                    members.iter().map(|&j| d(*p, points[j])).sum::<f64>() / members.len() as f64,
                );
            }
            s += (b - a) / a.max(b);
        }
        s / points.len() as f64
    }

    // independent reference: mean squared distance to the label means
    fn inertia_oracle(points: &[[f64; 2]], labels: &[usize]) -> f64 {
        let k = *labels.iter().max().unwrap() + 1;
        let mut total = 0.0;
        for c in 0..k {
            let m: Vec<&[f64; 2]> = points
                .iter()
                .zip(labels)
                .filter(|(_, l)| **l == c)
                .map(|(p, _)| p)
                .collect();
            if m.is_empty() {
                continue;
            }
            let cx = m.iter().map(|p| p[0]).sum::<f64>() / m.len() as f64;
            let cy = m.iter().map(|p| p[1]).sum::<f64>() / m.len() as f64;
            total += m
                .iter()
                .map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2))
                .sum::<f64>();
        }
        total / points.len() as f64
    }

    #[test]
    fn single_cluster_centroid_is_mean() {
        let p = KMeans::new(1, 0).fit(&ds(&SQUARE)).unwrap();
        assert_eq!(p.centroids.unwrap()[0], vec![0.5, 0.5]);
        assert!(p.labels.iter().all(|l| *l == 0));
    }

    #[test]
    fn separated_pairs_split() {
        let pts = [[0.0, 0.0], [0.0, 0.1], [10.0, 10.0], [10.0, 10.1]];
        for seed in 0..20 {
            for init in [Init::PlusPlus, Init::Random] {
                let p = KMeans {
                    init,
                    ..KMeans::new(2, seed)
                }
                .fit(&ds(&pts))
                .unwrap();
                assert_eq!(p.labels[0], p.labels[1]);
                assert_eq!(p.labels[2], p.labels[3]);
                assert_ne!(p.labels[0], p.labels[2]);
            }
        }
    }

    #[test]
    fn identical_points_repair_empty_cluster() {
        let x = ds(&[[0.3, 0.3]; 5]);
        let p = KMeans::new(2, 1).fit(&x).unwrap();
        let mut sizes = [0; 2];
        p.labels.iter().for_each(|l| sizes[*l] += 1);
        assert_eq!(sizes.iter().filter(|s| **s > 0).count(), 2);
        assert_eq!(inertia(&p, &x).unwrap(), 0.0);
    }

    #[test]
    fn inertia_fixtures() {
        let x = ds(&SQUARE);
        let p = Partition {
            labels: vec![0, 0, 1, 1],
            centroids: None,
            k: 2,
        };
        assert_eq!(inertia(&p, &x).unwrap(), 0.25);
        let own = Partition {
            labels: vec![0, 1, 2, 3],
            centroids: None,
            k: 4,
        };
        assert_eq!(inertia(&own, &x).unwrap(), 0.0);
        let constant = ds(&[[0.7, 0.2]; 3]);
        let single = Partition {
            labels: vec![0; 3],
            centroids: None,
            k: 1,
        };
        assert!(inertia(&single, &constant).unwrap() < 1e-30);
        let bad = Partition {
            labels: vec![0, 0, 2, 1],
            centroids: None,
            k: 2,
        };
        assert!(matches!(
            inertia(&bad, &x),
            Err(DataError::LabelOutOfRange { point: 2, .. })
        ));
    }

    #[test]
    fn inertia_is_relabelling_invariant() {
        let x = ds(&SQUARE);
        let a = Partition {
            labels: vec![0, 1, 1, 0],
            centroids: None,
            k: 2,
        };
        let b = Partition {
            labels: vec![1, 0, 0, 1],
            centroids: None,
            k: 2,
        };
        assert_eq!(inertia(&a, &x).unwrap(), inertia(&b, &x).unwrap());
    }

    #[test]
    fn silhouette_fixtures() {
        assert_eq!(
            silhouette(&[0, 1], &ds(&[[0.0, 0.0], [1.0, 1.0]])).unwrap(),
            0.0
        );
        let lr = [0, 0, 1, 1];
        let s = silhouette(&lr, &ds(&SQUARE)).unwrap();
        assert!((s - silhouette_oracle(&SQUARE, &lr)).abs() < 1e-12);
        // A = 1, B = (1 + sqrt 2) / 2
        let b = (1.0 + 2f64.sqrt()) / 2.0;
        assert!((s - (b - 1.0) / b).abs() < 1e-12);
        let tight = ds(&[[0.0, 0.0], [0.0, 1e-9], [10.0, 0.0], [10.0, 1e-9]]);
        assert!(silhouette(&lr, &tight).unwrap() > 1.0 - 1e-9);
        assert_eq!(
            silhouette(&[0, 0, 0, 0], &ds(&SQUARE)),
            Err(DataError::SilhouetteUndefined)
        );
    }

    #[test]
    fn dbscan_fixtures() {
        let same = ds(&[[0.5, 0.5]; 6]);
        let r = dbscan(&same, 0.1, 3);
        assert_eq!(r.n_clusters, 1);
        assert_eq!(r.n_noise(), 0);

        let line: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 0.0]).collect();
        let r = dbscan(&ds(&line), 0.1, 2);
        assert_eq!(r.n_clusters, 0);
        assert_eq!(r.n_noise(), 6);

        let mut blob: Vec<[f64; 2]> = (0..20)
            .map(|i| [0.01 * (i % 5) as f64, 0.01 * (i / 5) as f64])
            .collect();
        blob.push([100.0, 100.0]);
        let r = dbscan(&ds(&blob), 0.1, 5);
        assert_eq!(r.n_clusters, 1);
        assert_eq!(r.labels[20], None);
        assert!(r.labels[..20].iter().all(|l| *l == Some(0)));
    }

    #[test]
    fn comparison_single_cluster_is_infinite() {
        let x = ds(&[[0.5, 0.5]; 10]);
        let km = KMeans::new(3, 0);
        let db = Dbscan {
            eps: 0.1,
            min_points: 5,
        };
        assert_eq!(
            comparison_fitness(&x, &km, &db, Preference::KMeans),
            FitnessValue::WORST
        );
        assert_eq!(
            comparison_fitness(&x, &km, &db, Preference::Dbscan),
            FitnessValue::WORST
        );
    }

    #[test]
    fn comparison_is_antisymmetric() {
        let mut pts: Vec<[f64; 2]> = (0..12).map(|i| [0.2 + 0.005 * i as f64, 0.2]).collect();
        pts.extend([[0.9, 0.9], [0.1, 0.8], [0.7, 0.1]]);
        let x = ds(&pts);
        let km = KMeans::new(3, 4);
        let db = Dbscan {
            eps: 0.1,
            min_points: 5,
        };
        let a = comparison_fitness(&x, &km, &db, Preference::KMeans);
        let b = comparison_fitness(&x, &km, &db, Preference::Dbscan);
        assert!(a.is_finite());
        assert_eq!(a.value(), -b.value());
        assert!((-2.0..=2.0).contains(&a.value()));
    }

    #[test]
    fn registered_names_parse() {
        let f: ClusteringFitness =
            serde_json::from_str(r#"{"name":"kmeans-vs-dbscan","k":3,"eps":0.1,"min_points":5}"#)
                .unwrap();
        assert_eq!(f.name(), "kmeans-vs-dbscan");
        assert_eq!(
            f.dbscan(),
            Some(Dbscan {
                eps: 0.1,
                min_points: 5
            })
        );
        let f: ClusteringFitness =
            serde_json::from_str(r#"{"name":"inertia","k":2,"seed":0}"#).unwrap();
        assert_eq!(f.kmeans().k, 2);
    }

    fn pts_strategy(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
        proptest::collection::vec(
            (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| [a, b]),
            3..=max,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn lloyd_descent_is_monotone(pts in pts_strategy(40), k in 1usize..5, seed in any::<u64>()) {
            let (_, trace) = KMeans::new(k, seed).fit_traced(&ds(&pts)).unwrap();
            for w in trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0), "{:?}", trace);
            }
        }

        #[test]
        fn silhouette_matches_oracle(pts in pts_strategy(8), raw in proptest::collection::vec(0usize..3, 8)) {
            let labels: Vec<usize> = raw[..pts.len()].to_vec();
            let distinct: std::collections::BTreeSet<_> = labels.iter().collect();
            prop_assume!(distinct.len() >= 2);
            let s = silhouette(&labels, &ds(&pts)).unwrap();
            prop_assert!((s - silhouette_oracle(&pts, &labels)).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn inertia_matches_oracle(pts in pts_strategy(8), raw in proptest::collection::vec(0usize..3, 8)) {
            let labels: Vec<usize> = raw[..pts.len()].to_vec();
            let p = Partition { labels: labels.clone(), centroids: None, k: 3 };
            prop_assert!((inertia(&p, &ds(&pts)).unwrap() - inertia_oracle(&pts, &labels)).abs() < 1e-12);
        }

        #[test]
        fn dbscan_permutation_invariant(pts in pts_strategy(30), eps in 0.05f64..0.3, minp in 1usize..5, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut order: Vec<usize> = (0..pts.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<[f64; 2]> = order.iter().map(|&i| pts[i]).collect();
            let a = dbscan(&ds(&pts), eps, minp);
            let b = dbscan(&ds(&shuffled), eps, minp);
            prop_assert_eq!(a.n_clusters, b.n_clusters);
            // noise sets agree
            for (pos, &i) in order.iter().enumerate() {
                prop_assert_eq!(a.labels[i].is_none(), b.labels[pos].is_none());
            }
            // core points that share a cluster in one ordering share it in the other
            let dist = DistanceMatrix::new(&ds(&pts), &Euclidean);
            let core: Vec<bool> = (0..pts.len()).map(|i| (0..pts.len()).filter(|&j| dist.get(i, j) <= eps).count() >= minp).collect();
            let pos_of: Vec<usize> = { let mut p = vec![0; pts.len()]; for (q, &i) in order.iter().enumerate() { p[i] = q; } p };
            for i in 0..pts.len() { for j in 0..pts.len() {
                if core[i] && core[j] {
                    prop_assert_eq!(a.labels[i] == a.labels[j], b.labels[pos_of[i]] == b.labels[pos_of[j]]);
                }
            }}
        }
    }
}
