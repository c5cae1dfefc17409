//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KMeansError {
    #[error("need at least k = {k} points, got {n}")]
    TooFewPoints { k: usize, n: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("points have inconsistent dimensions")]
    RaggedPoints,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves further than this (Euclidean).
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            max_iter: 300,
            tol: 1e-6,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<T> {
    pub centroids: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    /// Sum of squared distances after every assignment step.
    pub objective_history: Vec<T>,
    pub iterations: usize,
}

impl<T: Scalar> KMeansFit<T> {
    pub fn objective(&self) -> T {
        *self.objective_history.last().expect("at least one assignment")
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0]).as_f64()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        let c = points[pick].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c).as_f64());
        }
        centroids.push(c);
    }
    centroids
}

/// Deterministic given `config.seed`. Empty clusters keep their previous
/// centroid; assignment ties go to the lowest centroid index.
pub fn kmeans<T: Scalar>(points: &[Vec<T>], config: &KMeansConfig) -> Result<KMeansFit<T>, KMeansError> {
    if config.k == 0 {
        return Err(KMeansError::ZeroK);
    }
    if points.len() < config.k {
        return Err(KMeansError::TooFewPoints {
            k: config.k,
            n: points.len(),
        });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(KMeansError::RaggedPoints);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = plus_plus(points, config.k, &mut rng);
    let mut labels = vec![0; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    let assign = |centroids: &[Vec<T>], labels: &mut [usize]| -> T {
        let mut objective = T::zero();
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, centroids);
            labels[i] = j;
            objective += d;
        }
        objective
    };

    while iterations < config.max_iter {
        history.push(assign(&centroids, &mut labels));
        iterations += 1;
        let mut sums = vec![vec![T::zero(); dim]; config.k];
        let mut counts = vec![0usize; config.k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for (j, (sum, count)) in sums.into_iter().zip(counts).enumerate() {
            if count == 0 {
                continue;
            }
            let n = T::from_count(count);
            let updated: Vec<T> = sum.into_iter().map(|s| s / n).collect();
            shift = shift.max(sq_dist(&updated, &centroids[j]).as_f64().sqrt());
            centroids[j] = updated;
        }
        if shift < config.tol {
            break;
        }
    }
    history.push(assign(&centroids, &mut labels));
    Ok(KMeansFit {
        centroids,
        labels,
        objective_history: history,
        iterations,
    })
}
