//! Exact t-SNE (no tree approximation).

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svg::{category, Svg};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities; momentum switches here too.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub seed: u64,
    pub perplexity: f64,
    pub iterations: usize,
    /// KL(P || Q) of the random starting layout.
    pub initial_kl: f64,
    pub final_kl: f64,
}

/// Row-major `N x N` squared Euclidean distances.
pub fn squared_distances<R: AsRef<[f64]> + Sync>(rows: &[R]) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        let a = rows[i].as_ref();
        for (j, o) in out.iter_mut().enumerate() {
            *o = a.iter().zip(rows[j].as_ref()).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    });
    d
}

/// Conditional distribution of one point over the others at precision
/// `beta`, and its Shannon entropy (nats).
fn conditional_row(dist: &[f64], self_idx: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != self_idx)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == self_idx {
            *o = 0.0;
            continue;
        }
        let e = (-(d - dmin) * beta).exp();
        *o = e;
        sum += e;
        weighted += (d - dmin) * e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln() + beta * weighted / sum
}

/// Row-major conditional affinities `p_{j|i}`, each row's bandwidth tuned by
/// bisection so that `exp(H_i)` matches `perplexity`.
pub fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    p.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let d = &dist[i * n..(i + 1) * n];
        let mut beta = 1.0;
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        for _ in 0..200 {
            let h = conditional_row(d, i, beta, row);
            let diff = h - target;
            if diff.abs() < 1e-10 {
                break;
            }
            // entropy falls as beta grows
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        conditional_row(d, i, beta, row);
    });
    p
}

/// Symmetrized joint affinities `(P + P^T) / 2N`.
pub fn joint_affinities(cond: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

/// Perplexity `exp(H)` of one conditional row.
pub fn row_perplexity(row: &[f64]) -> f64 {
    let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    h.exp()
}

fn q_numerators(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let row_sums: Vec<f64> = num
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, out)| {
            let mut s = 0.0;
            for (j, o) in out.iter_mut().enumerate() {
                if i != j {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    *o = 1.0 / (1.0 + dx * dx + dy * dy);
                    s += *o;
                }
            }
            s
        })
        .collect();
    (num, row_sums.iter().sum())
}

/// KL(P || Q) for a layout `y` under the Student-t kernel.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, z) = q_numerators(y);
    p.iter()
        .zip(&num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / z).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Nudges exactly repeated rows apart by `1e-10 * scale`, deterministically.
fn jitter_duplicates(rows: &mut [Vec<f64>], seed: u64) {
    let scale = rows
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .iter()
            .zip(&rows[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    let normal = Normal::new(0.0, 1e-10 * scale).expect("positive scale");
    for w in 1..order.len() {
        let (prev, cur) = (order[w - 1], order[w]);
        if rows[prev] == rows[cur] {
            for v in rows[cur].iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
}

/// Starting layout: i.i.d. N(0, 1e-4^2) coordinates from the seed.
pub fn initial_layout(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).expect("valid sigma");
    (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect()
}

pub fn tsne_project<R: AsRef<[f64]>>(rows: &[R], labels: &[usize], params: &TsneParams) -> Result<Projection2D> {
    let n = rows.len();
    if n < 5 {
        return Err(Error::Config(format!("t-SNE needs at least 5 points, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} points", labels.len())));
    }
    let perp = params.perplexity;
    if !(perp > 1.0 && perp < n as f64 / 3.0) {
        return Err(Error::Config(format!(
            "perplexity {perp} infeasible for {n} points (need 1 < perplexity < {:.3})",
            n as f64 / 3.0
        )));
    }
    if params.iterations == 0 || params.learning_rate.is_nan() || params.learning_rate <= 0.0 {
        return Err(Error::Config("t-SNE needs iterations >= 1 and a positive learning rate".into()));
    }
    let mut data: Vec<Vec<f64>> = rows.iter().map(|r| r.as_ref().to_vec()).collect();
    let width = data[0].len();
    if data.iter().any(|r| r.len() != width) {
        return Err(Error::Dimension("t-SNE rows have unequal widths".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("t-SNE input contains non-finite values".into()));
    }
    jitter_duplicates(&mut data, params.seed);

    let dist = squared_distances(&data);
    let p = joint_affinities(&conditional_affinities(&dist, n, perp), n);

    let mut y = initial_layout(n, params.seed);
    let initial_kl = kl_divergence(&p, &y);

    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    for it in 0..params.iterations {
        let exaggerate = it < params.exaggeration_iters;
        let ex = if exaggerate { params.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate { params.initial_momentum } else { params.final_momentum };
        let (num, z) = q_numerators(&y);
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let nij = num[i * n + j];
                    let m = (ex * p[i * n + j] - nij / z) * nij;
                    g[0] += m * (y[i][0] - y[j][0]);
                    g[1] += m * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                update[i][d] = momentum * update[i][d] - params.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += update[i][d];
            }
        }
        let cx = y.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|v| v[1]).sum::<f64>() / n as f64;
        for v in y.iter_mut() {
            v[0] -= cx;
            v[1] -= cy;
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("t-SNE layout diverged to non-finite coordinates".into()));
    }
    let final_kl = kl_divergence(&p, &y).max(0.0);
    tracing::debug!(n, initial_kl, final_kl, "t-SNE finished");
    Ok(Projection2D {
        points: y,
        labels: labels.to_vec(),
        seed: params.seed,
        perplexity: perp,
        iterations: params.iterations,
        initial_kl,
        final_kl,
    })
}

pub fn projection_svg(proj: &Projection2D) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 40.0;
    let mut svg = Svg::new(SIZE + 120.0, SIZE + 2.0 * PAD);
    svg.text((SIZE + 120.0) / 2.0, 24.0, "middle", 14.0, "t-SNE projection of step embeddings");
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &proj.points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    for (p, &c) in proj.points.iter().zip(&proj.labels) {
        let x = PAD + (p[0] - lo[0]) / span * (SIZE - PAD);
        let y = PAD + (hi[1] - p[1]) / span * (SIZE - PAD);
        svg.raw(&format!(
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}" fill-opacity="0.75"/>"#,
            category(c)
        ));
    }
    let mut clusters: Vec<usize> = proj.labels.clone();
    clusters.sort_unstable();
    clusters.dedup();
    for (row, c) in clusters.iter().enumerate() {
        let y = PAD + 20.0 * row as f64;
        svg.rect(SIZE + 20.0, y, 10.0, 10.0, category(*c), "");
        svg.text(SIZE + 36.0, y + 9.0, "start", 11.0, &format!("C{c}"));
    }
    svg.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneFiles {
    pub json: PathBuf,
    pub svg: PathBuf,
}

/// Writes `<base>.json` and `<base>.svg`.
pub fn projection_emit(proj: &Projection2D, base: &Path) -> Result<TsneFiles> {
    let json = base.with_extension("json");
    let svg = base.with_extension("svg");
    let text = serde_json::to_string_pretty(proj).expect("projection serializes") + "\n";
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    fs::write(&svg, projection_svg(proj)).map_err(|e| Error::io(&svg, e))?;
    Ok(TsneFiles { json, svg })
}
