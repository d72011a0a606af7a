//! k-means over decile vectors and shape naming for the resulting centroids.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arc::{decile_bin, DecileVector, EmotionArc};
use crate::error::{Error, Result};

/// Half a star on the tens scale.
pub const DEFAULT_NAME_THRESHOLD: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest final inertia wins.
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { k: 4, seed: 0, max_iters: 100, tol: 1e-6, n_init: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<[f64; 10]>,
    /// Cluster index per input vector, in input order.
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning run.
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64; 10], b: &[f64; 10]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; the lowest index wins ties.
fn nearest(v: &[f64; 10], centroids: &[[f64; 10]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(v, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[[f64; 10]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 10]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).expect("total > 0");
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

fn lloyd(points: &[[f64; 10]], mut centroids: Vec<[f64; 10]>, config: &KMeansConfig) -> ClusterModel {
    let k = centroids.len();
    let mut assignments = vec![0usize; points.len()];
    let mut trace = Vec::new();
    for _ in 0..config.max_iters {
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            assignments[i] = j;
            dists[i] = d;
        }
        trace.push(dists.iter().sum());

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        // an empty cluster takes over the point worst served by its centroid
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[assignments[i]] -= 1;
                    assignments[i] = j;
                    counts[j] = 1;
                    dists[i] = 0.0;
                }
            }
        }

        let mut sums = vec![[0.0f64; 10]; k];
        for (p, &a) in points.iter().zip(&assignments) {
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let next: [f64; 10] = std::array::from_fn(|b| sums[j][b] / counts[j] as f64);
            shift = shift.max(sq_dist(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        if shift < config.tol {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (j, d) = nearest(p, &centroids);
        assignments[i] = j;
        inertia += d;
    }
    trace.push(inertia);
    ClusterModel { k, centroids, assignments, inertia, inertia_trace: trace }
}

/// Lloyd's algorithm with k-means++ seeding and `n_init` restarts, all driven
/// by one seeded generator.
pub fn kmeans(vectors: &[DecileVector], config: &KMeansConfig) -> Result<ClusterModel> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("no vectors to cluster".into()));
    }
    if config.k == 0 || config.k > vectors.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {} must be between 1 and the vector count {}",
            config.k,
            vectors.len()
        )));
    }
    if vectors.iter().any(|v| v.0.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidArgument("non-finite decile value".into()));
    }
    let points: Vec<[f64; 10]> = vectors.iter().map(|v| v.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<ClusterModel> = None;
    for _ in 0..config.n_init.max(1) {
        let init = plus_plus_init(&points, config.k, &mut rng);
        let model = lloyd(&points, init, config);
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one run"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArcShape {
    PositiveEarlyRise,
    NegativeEarlyFall,
    Rise,
    Fall,
}

impl fmt::Display for ArcShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArcShape::PositiveEarlyRise => "Positive + Early Rise",
            ArcShape::NegativeEarlyFall => "Negative + Early Fall",
            ArcShape::Rise => "Rise",
            ArcShape::Fall => "Fall",
        })
    }
}

/// Strongly valenced centroids are named by their sign; the rest by whether
/// the last three bins sit above the first three.
pub fn name_cluster(centroid: &DecileVector, threshold: f64) -> ArcShape {
    let b = centroid.bins();
    let m = centroid.mean();
    let d = (b[7] + b[8] + b[9]) / 3.0 - (b[0] + b[1] + b[2]) / 3.0;
    if m.abs() >= threshold {
        if m > 0.0 {
            ArcShape::PositiveEarlyRise
        } else {
            ArcShape::NegativeEarlyFall
        }
    } else if d > 0.0 {
        ArcShape::Rise
    } else {
        ArcShape::Fall
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub index: usize,
    pub name: ArcShape,
    pub size: usize,
    pub centroid: [f64; 10],
    /// Members whose first sentence has the opposite sign to their arc
    /// average, as a fraction of the cluster.
    pub first_sentence_opposes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub review_id: String,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub seed: u64,
    pub inertia: f64,
    pub name_threshold: f64,
    pub clusters: Vec<ClusterSummary>,
    pub assignments: Vec<Assignment>,
}

fn opposes(arc: &EmotionArc) -> bool {
    let first = arc.scores()[0].value();
    let avg = arc.values().sum::<f64>() / arc.len() as f64;
    first * avg < 0.0
}

pub fn cluster_arcs(arcs: &[EmotionArc], config: &KMeansConfig, name_threshold: f64) -> Result<ClusterReport> {
    let vectors: Vec<DecileVector> = arcs.iter().map(decile_bin).collect();
    let model = kmeans(&vectors, config)?;
    let sizes = model.sizes();
    let clusters = (0..model.k)
        .map(|j| {
            let members: Vec<&EmotionArc> =
                arcs.iter().zip(&model.assignments).filter(|(_, &a)| a == j).map(|(arc, _)| arc).collect();
            let opp = members.iter().filter(|a| opposes(a)).count();
            ClusterSummary {
                index: j,
                name: name_cluster(&DecileVector(model.centroids[j]), name_threshold),
                size: sizes[j],
                centroid: model.centroids[j],
                first_sentence_opposes: if members.is_empty() { 0.0 } else { opp as f64 / members.len() as f64 },
            }
        })
        .collect();
    let assignments = arcs
        .iter()
        .zip(&model.assignments)
        .map(|(a, &c)| Assignment { review_id: a.review_id.clone(), cluster: c })
        .collect();
    Ok(ClusterReport { k: model.k, seed: config.seed, inertia: model.inertia, name_threshold, clusters, assignments })
}
