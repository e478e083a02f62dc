//! Ancestral sampling of latent trajectories.
//!
//! Rollout `r` draws all of its randomness from ChaCha8 stream `r` keyed by
//! the batch seed, so any rollout can be regenerated alone and the batch is
//! identical for every thread count.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{StartMode, TransitionModel};
use crate::error::{Error, Result};

/// `n_rollouts` trajectories of `horizon + 1` states each, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub n_rollouts: usize,
    pub horizon: usize,
    pub k_clu: usize,
    pub seed: u64,
    /// Resolved start mode (never `Modal`).
    pub start_mode: StartMode,
    pub states: Vec<u16>,
}

impl RolloutBatch {
    pub fn width(&self) -> usize {
        self.horizon + 1
    }

    pub fn row(&self, r: usize) -> &[u16] {
        let w = self.width();
        &self.states[r * w..(r + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        self.states.chunks_exact(self.width())
    }
}

fn stream_rng(seed: u64, rollout_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rollout_index);
    rng
}

/// Inverse-CDF draw; zero-probability entries are never returned.
fn draw(cdf: &[f64], probs: &[f64], u: f64) -> usize {
    let mut last = 0;
    for (j, (&c, &p)) in cdf.iter().zip(probs).enumerate() {
        if p > 0.0 {
            last = j;
            if u < c {
                return j;
            }
        }
    }
    last
}

fn cumulative(row: &[f64]) -> Vec<f64> {
    row.iter()
        .scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

pub fn rollout(
    model: &TransitionModel,
    n: usize,
    horizon: usize,
    start_mode: StartMode,
    seed: u64,
) -> Result<RolloutBatch> {
    if n == 0 || horizon == 0 {
        return Err(Error::Config(format!(
            "rollouts need n >= 1 and horizon >= 1 (got n={n}, horizon={horizon})"
        )));
    }
    if model.k_clu > usize::from(u16::MAX) + 1 {
        return Err(Error::Capacity(format!("{} states do not fit u16", model.k_clu)));
    }
    model.check_stochastic()?;
    let start_mode = start_mode.resolve(model)?;
    let cdfs: Vec<Vec<f64>> = model.matrix.iter().map(|r| cumulative(r)).collect();
    let start_cdf = cumulative(&model.start_dist);
    let width = horizon + 1;
    let mut states = vec![0u16; n * width];
    states
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(r, row)| {
            let mut rng = stream_rng(seed, r as u64);
            let mut s = match start_mode {
                StartMode::Fixed(c) => c,
                _ => draw(&start_cdf, &model.start_dist, rng.random::<f64>()),
            };
            row[0] = s as u16;
            for slot in row.iter_mut().skip(1) {
                s = draw(&cdfs[s], &model.matrix[s], rng.random::<f64>());
                *slot = s as u16;
            }
        });
    Ok(RolloutBatch {
        n_rollouts: n,
        horizon,
        k_clu: model.k_clu,
        seed,
        start_mode,
        states,
    })
}

/// Sample mean and standard error of a trajectory functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    /// `NaN` when fewer than two rollouts are available.
    pub std_error: f64,
    pub n: usize,
}

pub fn monte_carlo_expectation<F>(batch: &RolloutBatch, f: F) -> McEstimate
where
    F: Fn(&[u16]) -> f64 + Sync,
{
    let values: Vec<f64> = batch
        .states
        .par_chunks(batch.width())
        .map(&f)
        .collect();
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_error = if n < 2 {
        f64::NAN
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    McEstimate {
        estimate: mean,
        std_error,
        n,
    }
}

/// Text header written next to the binary rollout file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutHeader {
    pub n_rollouts: usize,
    pub horizon: usize,
    pub k_clu: usize,
    pub seed: u64,
    pub start_mode: StartMode,
    pub layout: String,
}

const LAYOUT: &str = "u32 n_rollouts, u32 horizon, u64 seed, u16 states[n_rollouts][horizon+1]; little-endian";

/// Writes `<path>` (binary) and `<path>.json`-style header next to it.
pub fn write_rollouts(batch: &RolloutBatch, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + batch.states.len() * 2);
    buf.extend_from_slice(&(batch.n_rollouts as u32).to_le_bytes());
    buf.extend_from_slice(&(batch.horizon as u32).to_le_bytes());
    buf.extend_from_slice(&batch.seed.to_le_bytes());
    for s in &batch.states {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let header = RolloutHeader {
        n_rollouts: batch.n_rollouts,
        horizon: batch.horizon,
        k_clu: batch.k_clu,
        seed: batch.seed,
        start_mode: batch.start_mode,
        layout: LAYOUT.to_string(),
    };
    let hpath = path.with_extension("json");
    let text = serde_json::to_string_pretty(&header).expect("header serializes") + "\n";
    fs::write(&hpath, text).map_err(|e| Error::io(&hpath, e))
}

pub fn read_rollouts(path: &Path) -> Result<RolloutBatch> {
    let hpath = path.with_extension("json");
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: RolloutHeader = serde_json::from_str(&text).map_err(|e| Error::Serde {
        path: hpath.clone(),
        message: e.to_string(),
    })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |message: String| Error::Corruption {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 16 {
        return Err(corrupt("shorter than the 16-byte header".into()));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let horizon = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if (n, horizon, seed) != (header.n_rollouts, header.horizon, header.seed) {
        return Err(Error::Consistency {
            path: path.to_path_buf(),
            message: "binary header disagrees with text header".into(),
        });
    }
    let expected = 16 + n * (horizon + 1) * 2;
    if bytes.len() != expected {
        return Err(corrupt(format!("{} bytes, expected {expected}", bytes.len())));
    }
    let states: Vec<u16> = bytes[16..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    if let Some(s) = states.iter().find(|&&s| usize::from(s) >= header.k_clu) {
        return Err(corrupt(format!("state {s} outside 0..{}", header.k_clu)));
    }
    Ok(RolloutBatch {
        n_rollouts: n,
        horizon,
        k_clu: header.k_clu,
        seed,
        start_mode: header.start_mode,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(m: Vec<Vec<f64>>) -> TransitionModel {
        let k = m.len();
        let mut start = vec![0.0; k];
        start[0] = 1.0;
        TransitionModel::from_matrix(m, start).unwrap()
    }

    #[test]
    fn deterministic_flip_chain() {
        let b = rollout(&model(vec![vec![0.0, 1.0], vec![1.0, 0.0]]), 50, 3, StartMode::Fixed(0), 1).unwrap();
        assert!(b.rows().all(|r| r == [0, 1, 0, 1]));
    }

    #[test]
    fn absorbing_start() {
        let b = rollout(&model(vec![vec![0.5, 0.5], vec![0.0, 1.0]]), 20, 5, StartMode::Fixed(1), 9).unwrap();
        assert!(b.states.iter().all(|&s| s == 1));
    }

    #[test]
    fn invalid_start_state() {
        let m = model(vec![vec![1.0]]);
        assert!(matches!(rollout(&m, 1, 1, StartMode::Fixed(1), 0), Err(Error::Config(_))));
        assert!(matches!(rollout(&m, 0, 1, StartMode::Fixed(0), 0), Err(Error::Config(_))));
    }

    #[test]
    fn modal_resolves_to_fixed() {
        let m = TransitionModel::from_matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.25, 0.75]).unwrap();
        let b = rollout(&m, 3, 1, StartMode::Modal, 0).unwrap();
        assert_eq!(b.start_mode, StartMode::Fixed(1));
    }

    #[test]
    fn row_depends_only_on_seed_and_index() {
        let m = model(vec![vec![0.3, 0.7], vec![0.6, 0.4]]);
        let big = rollout(&m, 100, 6, StartMode::Empirical, 42).unwrap();
        let small = rollout(&m, 10, 6, StartMode::Empirical, 42).unwrap();
        for r in 0..10 {
            assert_eq!(big.row(r), small.row(r));
        }
    }

    #[test]
    fn constant_functional() {
        let b = rollout(&model(vec![vec![0.3, 0.7], vec![0.6, 0.4]]), 100, 4, StartMode::Fixed(0), 3).unwrap();
        let e = monte_carlo_expectation(&b, |_| 1.0);
        assert_eq!(e.estimate, 1.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.bin");
        let b = rollout(&model(vec![vec![0.3, 0.7], vec![0.6, 0.4]]), 17, 4, StartMode::Empirical, 3).unwrap();
        write_rollouts(&b, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 16 + 17 * 5 * 2);
        assert_eq!(read_rollouts(&path).unwrap(), b);
    }
}
