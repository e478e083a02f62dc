//! First-order Markov model over latent states: estimation, rollouts,
//! exact enumeration and Monte Carlo estimation.

mod rollout;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abstraction::StateSequence;
use crate::error::{Error, Result};

pub use rollout::{
    monte_carlo_expectation, read_rollouts, rollout, write_rollouts, McEstimate, RolloutBatch,
    RolloutHeader,
};

/// Largest `k^(horizon+1)` accepted by [`exact_trajectory_enumeration`].
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Empirical transition model pooled over a corpus of state sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub k_clu: usize,
    /// `counts[i][j]`: observed `i -> j` steps within traces.
    pub counts: Vec<Vec<u64>>,
    /// Row-stochastic; rows without observations are self-absorbing.
    pub matrix: Vec<Vec<f64>>,
    /// Empirical distribution of first states.
    pub start_dist: Vec<f64>,
    pub n_traces: usize,
}

impl TransitionModel {
    /// Builds a model directly from a stochastic matrix (no counts).
    pub fn from_matrix(matrix: Vec<Vec<f64>>, start_dist: Vec<f64>) -> Result<Self> {
        let k = matrix.len();
        if k == 0 || matrix.iter().any(|r| r.len() != k) || start_dist.len() != k {
            return Err(Error::Dimension("transition matrix must be k x k with a length-k start vector".into()));
        }
        let model = Self {
            k_clu: k,
            counts: vec![vec![0; k]; k],
            matrix,
            start_dist,
            n_traces: 0,
        };
        model.check_stochastic()?;
        Ok(model)
    }

    pub fn check_stochastic(&self) -> Result<()> {
        let bad = |v: &f64| !v.is_finite() || *v < 0.0;
        for (i, row) in self.matrix.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(bad) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("row {i} is not a probability vector (sum {s})")));
            }
        }
        let s: f64 = self.start_dist.iter().sum();
        if self.start_dist.iter().any(bad) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("start distribution sums to {s}")));
        }
        Ok(())
    }

    /// Most frequent first state; ties go to the lowest index.
    pub fn modal_start(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.start_dist.iter().enumerate() {
            if p > self.start_dist[best] {
                best = i;
            }
        }
        best
    }
}

/// `C` from adjacent pairs inside each sequence, `P` by row normalisation.
pub fn estimate_transitions(sequences: &[StateSequence], k_clu: usize) -> Result<TransitionModel> {
    if sequences.is_empty() {
        return Err(Error::Config("no state sequences to estimate transitions from".into()));
    }
    if k_clu == 0 {
        return Err(Error::Config("k_clu must be at least 1".into()));
    }
    let mut counts = vec![vec![0u64; k_clu]; k_clu];
    let mut starts = vec![0u64; k_clu];
    for seq in sequences {
        if seq.states.is_empty() {
            return Err(Error::Validation(format!("sequence {} is empty", seq.trace_id)));
        }
        if let Some(&s) = seq.states.iter().find(|&&s| s >= k_clu) {
            return Err(Error::Validation(format!(
                "sequence {} has state {s}, outside 0..{k_clu}",
                seq.trace_id
            )));
        }
        starts[seq.states[0]] += 1;
        for w in seq.states.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
    }
    let matrix = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                (0..k_clu).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    let n = sequences.len();
    let start_dist = starts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(TransitionModel {
        k_clu,
        counts,
        matrix,
        start_dist,
        n_traces: n,
    })
}

/// How the first state `s_0` of a rollout is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StartMode {
    /// The most frequent observed first state.
    #[default]
    Modal,
    Fixed(usize),
    /// Sampled from the empirical start distribution.
    Empirical,
}

impl StartMode {
    /// Replaces `Modal` with the concrete fixed state for `model`.
    pub fn resolve(self, model: &TransitionModel) -> Result<StartMode> {
        match self {
            StartMode::Modal => Ok(StartMode::Fixed(model.modal_start())),
            StartMode::Fixed(c) if c >= model.k_clu => Err(Error::Config(format!(
                "start state {c} outside 0..{}",
                model.k_clu
            ))),
            other => Ok(other),
        }
    }
}

impl fmt::Display for StartMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StartMode::Modal => write!(f, "modal"),
            StartMode::Fixed(c) => write!(f, "fixed:{c}"),
            StartMode::Empirical => write!(f, "empirical"),
        }
    }
}

impl FromStr for StartMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "modal" => Ok(StartMode::Modal),
            "empirical" => Ok(StartMode::Empirical),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|c| c.parse().ok())
                .map(StartMode::Fixed)
                .ok_or_else(|| format!("invalid start mode {s:?} (expected fixed:<c>, empirical or modal)")),
        }
    }
}

impl TryFrom<String> for StartMode {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<StartMode> for String {
    fn from(m: StartMode) -> String {
        m.to_string()
    }
}

/// Every trajectory `(s_0..s_horizon)` with nonzero probability, in
/// lexicographic order.
pub fn exact_trajectory_enumeration(
    model: &TransitionModel,
    horizon: usize,
    start: StartMode,
) -> Result<Vec<(Vec<u16>, f64)>> {
    let size = (model.k_clu as u128).checked_pow(horizon as u32 + 1);
    if size.is_none_or(|s| s > ENUMERATION_LIMIT) {
        return Err(Error::Capacity(format!(
            "{}^{} trajectories exceed the enumeration limit of {ENUMERATION_LIMIT}",
            model.k_clu,
            horizon + 1
        )));
    }
    let initial: Vec<(usize, f64)> = match start.resolve(model)? {
        StartMode::Fixed(c) => vec![(c, 1.0)],
        _ => model
            .start_dist
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, p)| p > 0.0)
            .collect(),
    };
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(horizon + 1);
    for (s0, p0) in initial {
        path.push(s0 as u16);
        extend(model, horizon, &mut path, p0, &mut out);
        path.pop();
    }
    Ok(out)
}

fn extend(model: &TransitionModel, horizon: usize, path: &mut Vec<u16>, p: f64, out: &mut Vec<(Vec<u16>, f64)>) {
    if path.len() == horizon + 1 {
        out.push((path.clone(), p));
        return;
    }
    let last = *path.last().expect("non-empty path") as usize;
    for (j, &q) in model.matrix[last].iter().enumerate() {
        if q > 0.0 {
            path.push(j as u16);
            extend(model, horizon, path, p * q, out);
            path.pop();
        }
    }
}

/// `sum_tau p(tau) f(tau)` over an enumeration.
pub fn exact_expectation<F: Fn(&[u16]) -> f64>(enumeration: &[(Vec<u16>, f64)], f: F) -> f64 {
    enumeration.iter().map(|(t, p)| p * f(t)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(states: &[usize]) -> StateSequence {
        StateSequence {
            trace_id: "s".into(),
            states: states.to_vec(),
        }
    }

    #[test]
    fn alternating_chain() {
        let m = estimate_transitions(&[seq(&[0, 1, 0, 1, 0])], 2).unwrap();
        assert_eq!(m.counts, vec![vec![0, 2], vec![2, 0]]);
        assert_eq!(m.matrix, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(m.start_dist, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_row_self_absorbing() {
        let m = estimate_transitions(&[seq(&[0, 1])], 2).unwrap();
        assert_eq!(m.counts, vec![vec![0, 1], vec![0, 0]]);
        assert_eq!(m.matrix, vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(m.start_dist, vec![1.0, 0.0]);
    }

    #[test]
    fn start_distribution() {
        let m = estimate_transitions(&[seq(&[0, 1]), seq(&[0]), seq(&[1, 1])], 2).unwrap();
        assert!((m.start_dist[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.start_dist[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.n_traces, 3);
    }

    #[test]
    fn no_pairs_across_traces() {
        let m = estimate_transitions(&[seq(&[0]), seq(&[1])], 2).unwrap();
        assert_eq!(m.counts, vec![vec![0, 0], vec![0, 0]]);
    }

    #[test]
    fn estimation_errors() {
        assert!(matches!(estimate_transitions(&[], 2), Err(Error::Config(_))));
        assert!(matches!(
            estimate_transitions(&[seq(&[0, 2])], 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn start_mode_parsing() {
        assert_eq!("fixed:3".parse::<StartMode>().unwrap(), StartMode::Fixed(3));
        assert_eq!("empirical".parse::<StartMode>().unwrap(), StartMode::Empirical);
        assert!("fixed:x".parse::<StartMode>().is_err());
        let json = serde_json::to_string(&StartMode::Fixed(2)).unwrap();
        assert_eq!(json, "\"fixed:2\"");
    }

    #[test]
    fn modal_start_ties_lowest() {
        let m = TransitionModel::from_matrix(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![0.2, 0.4, 0.4],
        )
        .unwrap();
        assert_eq!(m.modal_start(), 1);
    }

    #[test]
    fn enumeration_examples() {
        let flip = TransitionModel::from_matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, 0.0]).unwrap();
        let e = exact_trajectory_enumeration(&flip, 2, StartMode::Fixed(0)).unwrap();
        assert_eq!(e, vec![(vec![0, 1, 0], 1.0)]);

        let half = TransitionModel::from_matrix(vec![vec![0.5, 0.5], vec![0.0, 1.0]], vec![1.0, 0.0]).unwrap();
        let e = exact_trajectory_enumeration(&half, 1, StartMode::Fixed(0)).unwrap();
        assert_eq!(e, vec![(vec![0, 0], 0.5), (vec![0, 1], 0.5)]);
        // visits to state 0 over s_0..s_2: 1 + 0.5 + 0.25
        let e2 = exact_trajectory_enumeration(&half, 2, StartMode::Fixed(0)).unwrap();
        let visits = exact_expectation(&e2, |t| t.iter().filter(|&&s| s == 0).count() as f64);
        assert!((visits - 1.75).abs() < 1e-12);
    }

    #[test]
    fn enumeration_guard() {
        let m = TransitionModel::from_matrix(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            exact_trajectory_enumeration(&m, 30, StartMode::Empirical),
            Err(Error::Capacity(_))
        ));
    }
}
