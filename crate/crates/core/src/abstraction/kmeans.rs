//! Lloyd's k-means with k-means++ seeding.
//!
//! Rows are put into a canonical (lexicographic) order before seeding, so
//! the fitted model depends only on the multiset of rows and the seed.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ClusterModel, FeatureTransform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k_clu: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Converged once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k_clu: 5,
            seed: 0,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Index of the nearest centroid; ties go to the lowest index.
pub(crate) fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(rows: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, f64) {
    let pairs: Vec<(usize, f64)> = rows.par_iter().map(|r| nearest(r, centroids)).collect();
    let inertia = pairs.iter().map(|p| p.1).sum();
    let (labels, dists) = pairs.into_iter().unzip();
    (labels, dists, inertia)
}

fn plus_plus_seed(rows: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let first = rng.random_range(0..n);
    let mut centroids = vec![rows[first].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| squared_distance(r, rows[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        // total > 0 because there are at least k distinct rows
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total weight");
        centroids.push(rows[pick].to_vec());
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(squared_distance(r, rows[pick]));
        }
    }
    centroids
}

fn means(rows: &[&[f64]], labels: &[usize], k: usize, width: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; width]; k];
    let mut counts = vec![0usize; k];
    for (r, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(r.iter()) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

/// Fits `k_clu` centroids to `rows`. The returned model carries a raw
/// transform; attach the fitted transform with [`ClusterModel::with_transform`].
pub fn kmeans_fit<R: AsRef<[f64]> + Sync>(rows: &[R], params: &KMeansParams) -> Result<ClusterModel> {
    let k = params.k_clu;
    if k == 0 {
        return Err(Error::Config("k_clu must be at least 1".into()));
    }
    if rows.len() < k {
        return Err(Error::Config(format!(
            "{} rows cannot be split into {k} clusters",
            rows.len()
        )));
    }
    let width = rows[0].as_ref().len();
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != width {
            return Err(Error::Dimension(format!(
                "row {i} has width {}, expected {width}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("row {i} has a non-finite value")));
        }
    }

    let mut sorted: Vec<&[f64]> = rows.iter().map(|r| r.as_ref()).collect();
    sorted.sort_by(|a, b| lex_cmp(a, b));
    let distinct = 1 + sorted
        .windows(2)
        .filter(|w| lex_cmp(w[0], w[1]).is_ne())
        .count();
    if distinct < k {
        return Err(Error::Config(format!(
            "only {distinct} distinct rows for {k} clusters"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_seed(&sorted, k, &mut rng);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let (mut labels, mut dists, inertia) = assign_all(&sorted, &centroids);
    history.push(inertia);
    while iterations < params.max_iter {
        iterations += 1;
        let (mut next, mut counts) = means(&sorted, &labels, k, width);
        // Empty cluster: steal the point farthest from its centroid.
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let donor = (0..sorted.len())
                .filter(|&i| counts[labels[i]] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                })
                .expect("some cluster has two members when one is empty");
            let old = labels[donor];
            labels[donor] = empty;
            dists[donor] = 0.0;
            let (m, c) = means(&sorted, &labels, k, width);
            next = m;
            counts = c;
            debug_assert_eq!(counts[empty], 1, "old cluster {old}");
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let (l, d, inertia) = assign_all(&sorted, &centroids);
        labels = l;
        dists = d;
        history.push(inertia);
        if shift < params.tol {
            converged = true;
            break;
        }
    }

    centroids.sort_by(|a, b| lex_cmp(a, b));
    let inertia = *history.last().expect("at least one assignment");
    Ok(ClusterModel {
        k_clu: k,
        centroids,
        transform: FeatureTransform::raw(),
        seed: params.seed,
        inertia,
        iterations,
        converged,
        inertia_history: history,
    })
}
