use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::abstraction::{FeatureMode, KMeansParams};
use crate::diagnostics::{Alternative, ReportOptions, SimPooling, SpearmanOptions, TieMethod};
use crate::error::{Error, Result};
use crate::markov::StartMode;
use crate::spectral::GramMode;
use crate::viz::TsneParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        let p = KMeansParams::default();
        Self {
            seed: p.seed,
            max_iter: p.max_iter,
            tol: p.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub n: usize,
    pub horizon: usize,
    pub start_mode: StartMode,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            horizon: 10,
            start_mode: StartMode::Modal,
            seed: 0,
        }
    }
}

/// Which step features the t-SNE projection is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TsneFeatures {
    /// The same transformed features k-means sees.
    #[default]
    Transformed,
    /// Untransformed top-k eigenvalues.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Steps beyond this many are subsampled (evenly, in corpus order).
    pub max_points: usize,
    pub features: TsneFeatures,
}

impl Default for TsneConfig {
    fn default() -> Self {
        let p = TsneParams::default();
        Self {
            perplexity: p.perplexity,
            iterations: p.iterations,
            learning_rate: p.learning_rate,
            early_exaggeration: p.early_exaggeration,
            exaggeration_iters: p.exaggeration_iters,
            max_points: 1000,
            features: TsneFeatures::Transformed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SankeyConfig {
    pub layers: usize,
    pub min_count: u64,
}

impl Default for SankeyConfig {
    fn default() -> Self {
        Self {
            layers: 10,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub ties: TieMethod,
    pub alternative: Alternative,
    pub sim_pooling: SimPooling,
    /// Labels for the table row; taken from the traces when empty.
    pub dataset: String,
    pub model: String,
}

/// Effective run configuration. Every field has a default, so a config file
/// only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub trace_dir: PathBuf,
    pub output_dir: PathBuf,
    pub k_eig: usize,
    pub k_clu: usize,
    pub gram_mode: GramMode,
    pub feature_mode: FeatureMode,
    pub kmeans: KMeansConfig,
    pub rollout: RolloutConfig,
    pub tsne: TsneConfig,
    pub sankey: SankeyConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            trace_dir: PathBuf::new(),
            output_dir: PathBuf::new(),
            k_eig: 64,
            k_clu: 5,
            gram_mode: GramMode::Cumulative,
            feature_mode: FeatureMode::Log1pZscore,
            kmeans: KMeansConfig::default(),
            rollout: RolloutConfig::default(),
            tsne: TsneConfig::default(),
            sankey: SankeyConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_eig", self.k_eig),
            ("k_clu", self.k_clu),
            ("kmeans.max_iter", self.kmeans.max_iter),
            ("rollout.n", self.rollout.n),
            ("rollout.horizon", self.rollout.horizon),
            ("tsne.iterations", self.tsne.iterations),
            ("tsne.max_points", self.tsne.max_points),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.k_clu > usize::from(u16::MAX) + 1 {
            return Err(Error::Config(format!("k_clu {} exceeds the u16 state range", self.k_clu)));
        }
        if !(self.kmeans.tol >= 0.0 && self.kmeans.tol.is_finite()) {
            return Err(Error::Config("kmeans.tol must be finite and non-negative".into()));
        }
        if self.sankey.layers < 2 {
            return Err(Error::Config("sankey.layers must be at least 2".into()));
        }
        if let StartMode::Fixed(c) = self.rollout.start_mode {
            if c >= self.k_clu {
                return Err(Error::Config(format!("start state {c} outside 0..{}", self.k_clu)));
            }
        }
        let t = &self.tsne;
        if !(t.perplexity > 1.0 && t.learning_rate > 0.0 && t.early_exaggeration >= 1.0) {
            return Err(Error::Config(
                "tsne needs perplexity > 1, learning_rate > 0 and early_exaggeration >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            k_clu: self.k_clu,
            seed: self.kmeans.seed,
            max_iter: self.kmeans.max_iter,
            tol: self.kmeans.tol,
        }
    }

    /// t-SNE parameters; the seed is the cluster seed.
    pub fn tsne_params(&self) -> TsneParams {
        TsneParams {
            perplexity: self.tsne.perplexity,
            iterations: self.tsne.iterations,
            learning_rate: self.tsne.learning_rate,
            early_exaggeration: self.tsne.early_exaggeration,
            exaggeration_iters: self.tsne.exaggeration_iters,
            seed: self.kmeans.seed,
            ..TsneParams::default()
        }
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            spearman: SpearmanOptions {
                ties: self.report.ties,
                alternative: self.report.alternative,
                force_t_approx: false,
            },
            sim_pooling: self.report.sim_pooling,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!((c.k_eig, c.k_clu, c.rollout.horizon), (64, 5, 10));
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_and_round_trip() {
        let c: PipelineConfig =
            serde_json::from_str(r#"{"k_clu": 3, "rollout": {"start_mode": "fixed:1"}}"#).unwrap();
        assert_eq!(c.k_clu, 3);
        assert_eq!(c.rollout.start_mode, StartMode::Fixed(1));
        assert_eq!(c.rollout.horizon, 10);
        let back: PipelineConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_keys_and_zero_counts() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"k_cluster": 3}"#).is_err());
        let c = PipelineConfig {
            k_clu: 0,
            ..PipelineConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
