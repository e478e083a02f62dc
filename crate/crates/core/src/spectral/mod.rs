//! Spectral step embeddings.
//!
//! Each step's token matrix `X` (tokens x dim) yields a local Gram matrix
//! `X^T X`. Along a trace the Gram matrices are accumulated, and the sorted
//! top eigenvalues of either the local or the accumulated Gram form the
//! step's embedding.

mod eigen;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace_store::{StepRecord, Trace};

pub use eigen::symmetric_eigenvalues;

/// Which Gram matrix feeds the eigenvalue embedding of step `t`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum GramMode {
    /// Running sum of all local Grams up to and including step `t`.
    #[default]
    Cumulative,
    /// The step's own Gram only.
    Local,
}

/// Dense symmetric `dim x dim` matrix, row-major, `f64` accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// Builds from a row-major buffer; the caller vouches for symmetry.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "{} values for a {dim}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// `X^T X` for one step, accumulated in `f64`.
pub fn local_gram(step: &StepRecord, dim: usize) -> Result<GramMatrix> {
    let n = step.n_tokens as usize;
    if n == 0 || step.token_matrix.len() != n * dim {
        return Err(Error::Validation(format!(
            "step {}: {} values do not form {} x {dim}",
            step.step_index,
            step.token_matrix.len(),
            n
        )));
    }
    let mut g = GramMatrix::zeros(dim);
    let mut row = vec![0.0f64; dim];
    for t in 0..n {
        for (r, &x) in row.iter_mut().zip(step.token(t, dim)) {
            *r = f64::from(x);
        }
        for i in 0..dim {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            let out = &mut g.data[i * dim..i * dim + i + 1];
            for (o, &rj) in out.iter_mut().zip(&row[..=i]) {
                *o += ri * rj;
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            g.data[j * dim + i] = g.data[i * dim + j];
        }
    }
    Ok(g)
}

/// `G_t = G_{t-1} + local`; with no previous matrix returns `local`.
pub fn accumulate(prev: Option<&GramMatrix>, local: &GramMatrix) -> Result<GramMatrix> {
    match prev {
        None => Ok(local.clone()),
        Some(p) if p.dim != local.dim => Err(Error::Dimension(format!(
            "cannot add {}x{} Gram to {}x{} Gram",
            local.dim, local.dim, p.dim, p.dim
        ))),
        Some(p) => Ok(GramMatrix {
            dim: p.dim,
            data: p.data.iter().zip(&local.data).map(|(a, b)| a + b).collect(),
        }),
    }
}

/// Eigenvalues sorted non-increasing, negatives clamped to zero, truncated
/// or zero-padded to exactly `k_eig` entries.
pub fn top_eigenvalues(g: &GramMatrix, k_eig: usize) -> Result<Vec<f64>> {
    let mut ev = symmetric_eigenvalues(&g.data, g.dim)?;
    ev.sort_by(|a, b| b.total_cmp(a));
    let mut out: Vec<f64> = ev.into_iter().take(k_eig).map(|v| v.max(0.0)).collect();
    out.resize(k_eig, 0.0);
    Ok(out)
}

/// Per-trace sequence of spectral embeddings, one row per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralTrajectory {
    pub trace_id: String,
    pub k_eig: usize,
    pub mode: GramMode,
    /// Embedding dimensionality of the source trace. When smaller than
    /// `k_eig` the trailing `k_eig - source_dim` columns are zero padding.
    pub source_dim: usize,
    pub embeddings: Vec<Vec<f64>>,
}

impl SpectralTrajectory {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

pub fn embed_trace(trace: &Trace, k_eig: usize, mode: GramMode) -> Result<SpectralTrajectory> {
    if k_eig == 0 {
        return Err(Error::Config("k_eig must be at least 1".into()));
    }
    trace.validate()?;
    let dim = trace.dim as usize;
    let mut acc: Option<GramMatrix> = None;
    let mut embeddings = Vec::with_capacity(trace.len());
    for step in &trace.steps {
        let local = local_gram(step, dim)?;
        let g = match mode {
            GramMode::Local => local,
            GramMode::Cumulative => {
                let next = accumulate(acc.as_ref(), &local)?;
                acc = Some(next.clone());
                next
            }
        };
        let mut ev = symmetric_eigenvalues(&g.data, dim).map_err(|e| {
            Error::Numerical(format!(
                "trace {} step {}: {e}",
                trace.trace_id, step.step_index
            ))
        })?;
        ev.sort_by(|a, b| b.total_cmp(a));
        let min = ev.last().copied().unwrap_or(0.0);
        let floor = -1e-6 * g.trace().abs().max(1.0);
        if min < floor {
            return Err(Error::Numerical(format!(
                "trace {} step {}: Gram matrix not PSD (min eigenvalue {min:e})",
                trace.trace_id, step.step_index
            )));
        }
        let mut row: Vec<f64> = ev.into_iter().take(k_eig).map(|v| v.max(0.0)).collect();
        row.resize(k_eig, 0.0);
        embeddings.push(row);
    }
    Ok(SpectralTrajectory {
        trace_id: trace.trace_id.clone(),
        k_eig,
        mode,
        source_dim: dim,
        embeddings,
    })
}

/// Embeds every trace in parallel; output order follows input order.
pub fn embed_corpus(
    traces: &[Trace],
    k_eig: usize,
    mode: GramMode,
) -> Result<Vec<SpectralTrajectory>> {
    traces
        .par_iter()
        .map(|t| embed_trace(t, k_eig, mode))
        .collect()
}
