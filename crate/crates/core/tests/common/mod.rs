//! Synthetic corpora and independent reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use std::path::Path;

use cot_dynamics::abstraction::StateSequence;
use cot_dynamics::markov::TransitionModel;
use cot_dynamics::trace_store::{write_trace, StepRecord, Trace};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Trace with `t` steps of i.i.d. standard normal tokens.
pub fn random_trace(rng: &mut ChaCha8Rng, id: &str, t: usize, dim: usize, max_tokens: usize) -> Trace {
    let steps = (0..t)
        .map(|s| {
            let n = rng.random_range(1..=max_tokens);
            let m: Vec<f32> = (0..n * dim).map(|_| normal(rng) as f32).collect();
            StepRecord::new(s as u32 + 1, n as u32, m).with_text(format!("Step {}: text of {id}", s + 1))
        })
        .collect();
    Trace {
        trace_id: id.to_string(),
        model_id: "synthetic".into(),
        dataset_id: "random".into(),
        dim: dim as u32,
        steps,
        prompt: Some(format!("prompt {id}")),
    }
}

pub const PLANTED_DIM: usize = 16;

/// Per-dimension standard deviations of the three regimes. Each regime puts
/// its variance on a different block of coordinates, at a different scale.
fn regime_scales(regime: usize) -> [f64; PLANTED_DIM] {
    let mut s = [0.05; PLANTED_DIM];
    let (block, scale) = match regime {
        0 => (0..5, 1.0),
        1 => (5..10, 4.0),
        _ => (10..16, 16.0),
    };
    for (i, v) in s.iter_mut().enumerate() {
        if block.contains(&i) {
            *v = scale * (1.0 - 0.08 * (i - block.start) as f64);
        }
    }
    s
}

/// `n` traces whose steps pass through three regimes in fixed order
/// (early, middle, late), each lasting 2 to 4 steps. Returns the traces and
/// the planted regime of every step.
pub fn planted_corpus(n: usize, seed: u64) -> (Vec<Trace>, Vec<Vec<usize>>) {
    let mut rng = rng(seed);
    let mut traces = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let lens: Vec<usize> = (0..3).map(|_| rng.random_range(2..=4)).collect();
        let mut steps = Vec::new();
        let mut planted = Vec::new();
        for (regime, &len) in lens.iter().enumerate() {
            let scales = regime_scales(regime);
            for _ in 0..len {
                let tokens = rng.random_range(8..=14);
                let m: Vec<f32> = (0..tokens)
                    .flat_map(|_| scales.map(|s| s * normal(&mut rng)))
                    .map(|v| v as f32)
                    .collect();
                let idx = steps.len() as u32 + 1;
                steps.push(StepRecord::new(idx, tokens as u32, m).with_text(format!("Step {idx}: regime {regime}")));
                planted.push(regime);
            }
        }
        traces.push(Trace {
            trace_id: format!("planted-{i:03}"),
            model_id: "planted".into(),
            dataset_id: "synthetic".into(),
            dim: PLANTED_DIM as u32,
            steps,
            prompt: None,
        });
        labels.push(planted);
    }
    (traces, labels)
}

pub fn write_corpus(dir: &Path, traces: &[Trace]) {
    std::fs::create_dir_all(dir).unwrap();
    for t in traces {
        write_trace(t, &dir.join(format!("{}.cotr", t.trace_id))).unwrap();
    }
}

/// Gram matrix by the textbook triple loop.
pub fn naive_gram(step: &StepRecord, dim: usize) -> Vec<f64> {
    let n = step.n_tokens as usize;
    let mut g = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in 0..dim {
            let mut s = 0.0;
            for t in 0..n {
                s += f64::from(step.token_matrix[t * dim + a]) * f64::from(step.token_matrix[t * dim + b]);
            }
            g[a * dim + b] = s;
        }
    }
    g
}

/// Eigenvalues in descending order from nalgebra's symmetric solver.
pub fn oracle_eigenvalues(g: &[f64], dim: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(dim, dim, g);
    let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Transition counts by explicit pair enumeration.
pub fn pair_counts(seqs: &[Vec<usize>], k: usize) -> Vec<Vec<u64>> {
    let mut c = vec![vec![0u64; k]; k];
    for s in seqs {
        for i in 1..s.len() {
            c[s[i - 1]][s[i]] += 1;
        }
    }
    c
}

pub fn state_sequences(seqs: &[Vec<usize>]) -> Vec<StateSequence> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| StateSequence {
            trace_id: format!("s{i}"),
            states: s.clone(),
        })
        .collect()
}

/// Row-stochastic `k x k` model with roughly a third of the entries zeroed
/// (never a whole row) and a random start distribution.
pub fn random_model(rng: &mut ChaCha8Rng, k: usize) -> TransitionModel {
    let matrix = (0..k)
        .map(|_| {
            let mut row: Vec<f64> = (0..k)
                .map(|_| if rng.random::<f64>() < 0.33 { 0.0 } else { rng.random::<f64>() + 0.05 })
                .collect();
            if row.iter().all(|&v| v == 0.0) {
                row[rng.random_range(0..k)] = 1.0;
            }
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    let start: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.1).collect();
    let s: f64 = start.iter().sum();
    TransitionModel::from_matrix(matrix, start.iter().map(|v| v / s).collect()).unwrap()
}

/// Direct-formula KL(P || Q) with the Student-t kernel, written without any
/// shared code from the library.
pub fn kl_oracle(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += 1.0 / (1.0 + (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2));
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = 1.0 / (1.0 + (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2)) / z;
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

/// Gaussian perplexity-calibrated joint affinities computed the slow way:
/// bisection on sigma directly, then symmetrization.
pub fn affinity_oracle(x: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = x.len();
    let d2 = |i: usize, j: usize| -> f64 { x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum() };
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        let row = |sigma: f64| -> Vec<f64> {
            let w: Vec<f64> = (0..n)
                .map(|j| if j == i { 0.0 } else { (-d2(i, j) / (2.0 * sigma * sigma)).exp() })
                .collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        };
        let perp = |r: &[f64]| -> f64 { r.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum::<f64>().exp() };
        let (mut lo, mut hi) = (1e-6_f64, 1e6_f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if perp(&row(mid)) > perplexity {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let r = row((lo * hi).sqrt());
        cond[i * n..(i + 1) * n].copy_from_slice(&r);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

/// Best agreement between two labelings over all relabelings of `found`.
pub fn relabel_accuracy(truth: &[usize], found: &[usize], k: usize) -> f64 {
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let hits = truth.iter().zip(found).filter(|(t, f)| p[**f] == **t).count();
        best = best.max(hits);
    });
    best as f64 / truth.len() as f64
}

fn permute(v: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
    if i == v.len() {
        f(v);
        return;
    }
    for j in i..v.len() {
        v.swap(i, j);
        permute(v, i + 1, f);
        v.swap(i, j);
    }
}

/// Adjusted Rand index from the contingency table.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let sum_cells: f64 = table.iter().flatten().map(|&n| c2(n)).sum();
    let sum_rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = sum_rows * sum_cols / total;
    let max = (sum_rows + sum_cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}

/// Isotropic Gaussian blobs: `per` points around each center.
pub fn blobs(rng: &mut ChaCha8Rng, centers: &[Vec<f64>], per: usize, sigma: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            rows.push(center.iter().map(|m| m + sigma * normal(rng)).collect());
            labels.push(c);
        }
    }
    (rows, labels)
}
