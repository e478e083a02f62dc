//! Temporal consistency diagnostics: where clusters sit in real and
//! simulated trajectories, and how well the two orderings agree.
//!
//! Positions are 1-based throughout; `s_0` of a rollout is position 1.

mod spearman;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::abstraction::StateSequence;
use crate::error::{Error, Result};
use crate::markov::RolloutBatch;

pub use spearman::{
    ranks, spearman, spearman_with, Alternative, CorrelationReport, PValueMethod, SpearmanOptions,
    TieMethod, EXACT_MAX_N,
};

/// Mean 1-based position of one cluster's occurrences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionMean {
    /// `None` when the cluster never occurs.
    pub mean: Option<f64>,
    pub count: u64,
}

fn finish(sums: Vec<f64>, counts: Vec<u64>) -> Vec<PositionMean> {
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| PositionMean {
            mean: (c > 0).then(|| s / c as f64),
            count: c,
        })
        .collect()
}

/// Average step index per cluster, pooled over all traces.
pub fn real_cluster_positions(sequences: &[StateSequence], k_clu: usize) -> Result<Vec<PositionMean>> {
    if sequences.is_empty() {
        return Err(Error::Config("no state sequences".into()));
    }
    let mut sums = vec![0.0; k_clu];
    let mut counts = vec![0u64; k_clu];
    for seq in sequences {
        for (t, &s) in seq.states.iter().enumerate() {
            if s >= k_clu {
                return Err(Error::Validation(format!(
                    "sequence {} has state {s}, outside 0..{k_clu}",
                    seq.trace_id
                )));
            }
            sums[s] += (t + 1) as f64;
            counts[s] += 1;
        }
    }
    Ok(finish(sums, counts))
}

/// How simulated positions are averaged over rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SimPooling {
    /// Mean over every occurrence in every rollout.
    #[default]
    Pooled,
    /// Mean of per-rollout means, over rollouts where the cluster occurs.
    PerRollout,
}

pub fn simulated_cluster_positions(batch: &RolloutBatch, pooling: SimPooling) -> Vec<PositionMean> {
    let k = batch.k_clu;
    let mut sums = vec![0.0; k];
    let mut counts = vec![0u64; k];
    match pooling {
        SimPooling::Pooled => {
            for row in batch.rows() {
                for (p, &s) in row.iter().enumerate() {
                    sums[usize::from(s)] += (p + 1) as f64;
                    counts[usize::from(s)] += 1;
                }
            }
            finish(sums, counts)
        }
        SimPooling::PerRollout => {
            let mut occurrences = vec![0u64; k];
            let mut row_sum = vec![0.0; k];
            let mut row_cnt = vec![0u64; k];
            for row in batch.rows() {
                row_sum.iter_mut().for_each(|v| *v = 0.0);
                row_cnt.iter_mut().for_each(|v| *v = 0);
                for (p, &s) in row.iter().enumerate() {
                    row_sum[usize::from(s)] += (p + 1) as f64;
                    row_cnt[usize::from(s)] += 1;
                }
                for c in 0..k {
                    if row_cnt[c] > 0 {
                        sums[c] += row_sum[c] / row_cnt[c] as f64;
                        counts[c] += 1;
                        occurrences[c] += row_cnt[c];
                    }
                }
            }
            sums.into_iter()
                .zip(counts)
                .zip(occurrences)
                .map(|((s, rollouts), occ)| PositionMean {
                    mean: (rollouts > 0).then(|| s / rollouts as f64),
                    count: occ,
                })
                .collect()
        }
    }
}

/// Average real step index of the cluster visited at each rollout position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionCurve {
    /// `values[p]` for rollout position `p + 1`.
    pub values: Vec<f64>,
    /// Standard error of each value; `None` with fewer than two rollouts.
    pub std_errors: Vec<Option<f64>>,
}

pub fn position_curve(batch: &RolloutBatch, real: &[PositionMean]) -> Result<PositionCurve> {
    if real.len() != batch.k_clu {
        return Err(Error::Dimension(format!(
            "{} real means for {} clusters",
            real.len(),
            batch.k_clu
        )));
    }
    let mut visited = vec![false; batch.k_clu];
    batch.states.iter().for_each(|&s| visited[usize::from(s)] = true);
    let missing: Vec<usize> = (0..batch.k_clu)
        .filter(|&c| visited[c] && real[c].mean.is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "rollouts visit clusters {missing:?} that never occur in real traces"
        )));
    }
    let width = batch.width();
    let n = batch.n_rollouts as f64;
    let mut sums = vec![0.0; width];
    let mut squares = vec![0.0; width];
    for row in batch.rows() {
        for (p, &s) in row.iter().enumerate() {
            let v = real[usize::from(s)].mean.expect("checked above");
            sums[p] += v;
            squares[p] += v * v;
        }
    }
    let values: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let std_errors = values
        .iter()
        .zip(&squares)
        .map(|(m, sq)| {
            (batch.n_rollouts >= 2).then(|| {
                let var = ((sq - n * m * m) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            })
        })
        .collect();
    Ok(PositionCurve { values, std_errors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPositionStats {
    pub cluster: usize,
    pub real_mean_index: Option<f64>,
    pub sim_mean_index: Option<f64>,
    pub real_count: u64,
    pub sim_count: u64,
}

/// Simulated-vs-real comparison for one (model, dataset) corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub k_clu: usize,
    pub clusters: Vec<ClusterPositionStats>,
    /// Clusters with both a simulated and a real mean, in index order.
    pub paired_clusters: Vec<usize>,
    /// `None` when fewer than three clusters could be paired.
    pub correlation: Option<CorrelationReport>,
    pub curve: PositionCurve,
    pub sim_pooling: SimPooling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReportOptions {
    pub spearman: SpearmanOptions,
    pub sim_pooling: SimPooling,
}

pub fn consistency_report(
    sequences: &[StateSequence],
    batch: &RolloutBatch,
    k_clu: usize,
    opts: &ReportOptions,
) -> Result<ConsistencyReport> {
    if batch.k_clu != k_clu {
        return Err(Error::Dimension(format!(
            "rollouts have {} clusters, report asked for {k_clu}",
            batch.k_clu
        )));
    }
    let real = real_cluster_positions(sequences, k_clu)?;
    let sim = simulated_cluster_positions(batch, opts.sim_pooling);
    let clusters: Vec<ClusterPositionStats> = (0..k_clu)
        .map(|c| ClusterPositionStats {
            cluster: c,
            real_mean_index: real[c].mean,
            sim_mean_index: sim[c].mean,
            real_count: real[c].count,
            sim_count: sim[c].count,
        })
        .collect();
    let paired: Vec<usize> = clusters
        .iter()
        .filter(|c| c.real_mean_index.is_some() && c.sim_mean_index.is_some())
        .map(|c| c.cluster)
        .collect();
    let correlation = if paired.len() >= 3 {
        let xs: Vec<f64> = paired.iter().map(|&c| clusters[c].sim_mean_index.unwrap()).collect();
        let ys: Vec<f64> = paired.iter().map(|&c| clusters[c].real_mean_index.unwrap()).collect();
        match spearman_with(&xs, &ys, &opts.spearman) {
            Ok(r) => Some(r),
            // constant means carry no ordering information
            Err(Error::Data(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let curve = position_curve(batch, &real)?;
    Ok(ConsistencyReport {
        k_clu,
        clusters,
        paired_clusters: paired,
        correlation,
        curve,
        sim_pooling: opts.sim_pooling,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

impl ConsistencyReport {
    /// Human-readable table: one `sim/real` column per cluster, then rho and p.
    pub fn to_table_text(&self, dataset: &str, model: &str) -> String {
        let mut out = String::new();
        let mut header = format!("{:<12} {:<12}", "dataset", "model");
        let mut row = format!("{dataset:<12} {model:<12}");
        for c in &self.clusters {
            let _ = write!(header, " {:>11}", format!("C{}", c.cluster));
            let cell = format!("{}/{}", fmt_opt(c.sim_mean_index), fmt_opt(c.real_mean_index));
            let _ = write!(row, " {cell:>11}");
        }
        let _ = write!(header, " {:>7} {:>8} {:>3} {:>7}", "rho", "p-value", "n", "method");
        match &self.correlation {
            Some(r) => {
                let method = match r.method {
                    PValueMethod::Exact => "exact",
                    PValueMethod::TApprox => "t",
                };
                let _ = write!(row, " {:>7.3} {:>8.4} {:>3} {:>7}", r.rho, r.p_value, r.n, method);
            }
            None => {
                let _ = write!(row, " {:>7} {:>8} {:>3} {:>7}", "-", "-", self.paired_clusters.len(), "-");
            }
        }
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{row}");
        out
    }

    /// Comma-separated, one line per cluster.
    pub fn to_cluster_csv(&self) -> String {
        let mut out = String::from("cluster,sim_mean_index,real_mean_index,sim_count,real_count\n");
        let num = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        for c in &self.clusters {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.cluster,
                num(c.sim_mean_index),
                num(c.real_mean_index),
                c.sim_count,
                c.real_count
            );
        }
        out
    }

    /// Comma-separated summary row (header + one line) in the same column
    /// order as the text table.
    pub fn to_summary_csv(&self, dataset: &str, model: &str) -> String {
        let mut header = String::from("dataset,model");
        let mut row = format!("{dataset},{model}");
        for c in &self.clusters {
            let _ = write!(header, ",C{}_sim,C{}_real", c.cluster, c.cluster);
            let num = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
            let _ = write!(row, ",{},{}", num(c.sim_mean_index), num(c.real_mean_index));
        }
        header.push_str(",rho,p_value,n,method\n");
        match &self.correlation {
            Some(r) => {
                let method = match r.method {
                    PValueMethod::Exact => "exact",
                    PValueMethod::TApprox => "t_approx",
                };
                let _ = writeln!(row, ",{:.6},{:.6},{},{}", r.rho, r.p_value, r.n, method);
            }
            None => {
                let _ = writeln!(row, ",,,{},", self.paired_clusters.len());
            }
        }
        header + &row
    }
}
