//! Latent state abstraction: feature transform, k-means and state assignment.

mod kmeans;
mod transform;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralTrajectory;

pub use kmeans::{kmeans_fit, KMeansParams};
pub use transform::{fit_transform_params, FeatureMode, FeatureTransform, STD_FLOOR};

/// Fitted clustering of transformed spectral features into `k_clu` states.
///
/// Centroids are kept in lexicographic order (first coordinate first), which
/// fixes the state numbering for a given corpus and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k_clu: usize,
    pub centroids: Vec<Vec<f64>>,
    pub transform: FeatureTransform,
    pub seed: u64,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after every assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn with_transform(mut self, transform: FeatureTransform) -> Self {
        self.transform = transform;
        self
    }

    pub fn width(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Nearest centroid for an already-transformed feature row.
    pub fn assign_row(&self, features: &[f64]) -> usize {
        kmeans::nearest(features, &self.centroids).0
    }
}

/// Latent state per step of one trace (0-based state ids).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSequence {
    pub trace_id: String,
    pub states: Vec<usize>,
}

pub fn assign_states(model: &ClusterModel, traj: &SpectralTrajectory) -> Result<StateSequence> {
    if traj.k_eig != model.width() {
        return Err(Error::Dimension(format!(
            "trajectory {} has k_eig {} but the cluster model expects {}",
            traj.trace_id,
            traj.k_eig,
            model.width()
        )));
    }
    let states = traj
        .embeddings
        .iter()
        .map(|row| model.transform.apply(row).map(|f| model.assign_row(&f)))
        .collect::<Result<_>>()?;
    Ok(StateSequence {
        trace_id: traj.trace_id.clone(),
        states,
    })
}

/// Transformed feature rows of every step, pooled in corpus order.
pub fn pooled_features(
    trajectories: &[SpectralTrajectory],
    transform: &FeatureTransform,
) -> Result<Vec<Vec<f64>>> {
    trajectories
        .iter()
        .flat_map(|t| t.embeddings.iter())
        .map(|r| transform.apply(r))
        .collect()
}

/// Fits the feature transform and k-means on a whole corpus.
pub fn fit_cluster_model(
    trajectories: &[SpectralTrajectory],
    mode: FeatureMode,
    params: &KMeansParams,
) -> Result<ClusterModel> {
    let raw: Vec<&[f64]> = trajectories
        .iter()
        .flat_map(|t| t.embeddings.iter().map(Vec::as_slice))
        .collect();
    let transform = fit_transform_params(&raw, mode)?;
    let features = pooled_features(trajectories, &transform)?;
    Ok(kmeans_fit(&features, params)?.with_transform(transform))
}

pub fn assign_corpus(
    model: &ClusterModel,
    trajectories: &[SpectralTrajectory],
) -> Result<Vec<StateSequence>> {
    trajectories
        .par_iter()
        .map(|t| assign_states(model, t))
        .collect()
}
