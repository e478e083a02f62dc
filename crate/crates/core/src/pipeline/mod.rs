//! End-to-end driver. Every stage reads its inputs from the artifacts of
//! earlier stages in the output directory, so running stages one at a time
//! gives the same files as a one-shot run.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::{
    KMeansConfig, PipelineConfig, ReportConfig, RolloutConfig, SankeyConfig, TsneConfig, TsneFeatures,
};

use crate::abstraction::{assign_corpus, fit_cluster_model, ClusterModel, StateSequence};
use crate::diagnostics::{consistency_report, ConsistencyReport};
use crate::error::{Error, Result};
use crate::markov::{estimate_transitions, read_rollouts, rollout, write_rollouts, TransitionModel};
use crate::spectral::{embed_trace, SpectralTrajectory};
use crate::trace_store::{
    list_trace_files, read_manifest, read_trace, validate_corpus, ValidationEntry,
    ValidationStatus, CHECKSUM_ALGO,
};
use crate::viz::{curve_emit, heatmap_emit, projection_emit, sankey_emit, tsne_project};

/// Artifact file names inside the output directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const VALIDATION: &str = "validation.json";
    pub const CORPUS: &str = "corpus.json";
    pub const TRAJECTORIES: &str = "trajectories.json";
    pub const CLUSTER_MODEL: &str = "cluster_model.json";
    pub const STATES: &str = "states.json";
    pub const CLUSTER_DIGEST: &str = "cluster_digest.json";
    pub const TRANSITION_MODEL: &str = "transition_model.json";
    pub const ROLLOUTS: &str = "rollouts.bin";
    pub const ROLLOUT_HEADER: &str = "rollouts.json";
    pub const REPORT: &str = "report.json";
    pub const REPORT_TEXT: &str = "report.txt";
    pub const REPORT_TABLE: &str = "report_table.csv";
    pub const REPORT_CLUSTERS: &str = "report_clusters.csv";
    pub const HEATMAP: &str = "heatmap";
    pub const SANKEY: &str = "sankey";
    pub const TSNE: &str = "tsne";
    pub const TSNE_POINTS: &str = "tsne_points.csv";
    pub const CURVE: &str = "curve";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Embed,
    Cluster,
    Transitions,
    Rollout,
    Analyze,
    Heatmap,
    Sankey,
    Tsne,
    Curve,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Validate,
        Stage::Embed,
        Stage::Cluster,
        Stage::Transitions,
        Stage::Rollout,
        Stage::Analyze,
        Stage::Heatmap,
        Stage::Sankey,
        Stage::Tsne,
        Stage::Curve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Transitions => "transitions",
            Stage::Rollout => "rollout",
            Stage::Analyze => "analyze",
            Stage::Heatmap => "heatmap",
            Stage::Sankey => "sankey",
            Stage::Tsne => "tsne",
            Stage::Curve => "curve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub trace_id: String,
    pub model_id: String,
    pub dataset_id: String,
    pub file: String,
    pub n_steps: usize,
    pub dim: u32,
    pub checksum: String,
    pub checksum_algo: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Output file names, relative to the output directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureMarker {
    pub stage: Stage,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub cluster_seed: u64,
    pub rollout_seed: u64,
}

/// Run record written to `manifest.json`. Contains no timestamps, so equal
/// runs produce equal manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub seeds: Seeds,
    pub inputs: Vec<InputRecord>,
    pub stages: Vec<StageRecord>,
    pub status: RunStatus,
    pub failure: Option<FailureMarker>,
}

impl RunManifest {
    fn new(cfg: &PipelineConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            seeds: Seeds {
                cluster_seed: cfg.kmeans.seed,
                rollout_seed: cfg.rollout.seed,
            },
            inputs: Vec::new(),
            stages: Vec::new(),
            status: RunStatus::Ok,
            failure: None,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Per-cluster sample of step texts for labelling states by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDigest {
    pub cluster: usize,
    pub count: usize,
    /// Mean 1-based step position of the cluster's steps.
    pub mean_step_index: Option<f64>,
    pub samples: Vec<DigestSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigestSample {
    pub trace_id: String,
    pub step_index: usize,
    pub text: Option<String>,
}

const DIGEST_SAMPLES: usize = 5;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde {
        path: path.to_path_buf(),
        message: e.to_string(),
    })? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Handle on one configured run: the config plus its output directory.
pub struct Run {
    cfg: PipelineConfig,
}

impl Run {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("no output directory given (--out)".into()));
        }
        fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn trace_dir(&self) -> Result<&Path> {
        if self.cfg.trace_dir.as_os_str().is_empty() {
            return Err(Error::Config("no trace directory given (--traces)".into()));
        }
        Ok(&self.cfg.trace_dir)
    }

    fn load_manifest(&self) -> RunManifest {
        match RunManifest::read(&self.path(files::MANIFEST)) {
            Ok(m) if m.config == self.cfg => m,
            _ => RunManifest::new(&self.cfg),
        }
    }

    fn store_manifest(&self, m: &RunManifest) -> Result<()> {
        write_json(&self.path(files::MANIFEST), m)
    }

    /// Runs one stage and records its outputs, or a failure marker, in the
    /// manifest. Files already written by the stage are left in place.
    pub fn run_stage(&self, stage: Stage) -> Result<Vec<String>> {
        tracing::info!(stage = stage.name(), "running stage");
        let result = match stage {
            Stage::Validate => self.validate(),
            Stage::Embed => self.embed(),
            Stage::Cluster => self.cluster(),
            Stage::Transitions => self.transitions(),
            Stage::Rollout => self.rollout(),
            Stage::Analyze => self.analyze(),
            Stage::Heatmap => self.heatmap(),
            Stage::Sankey => self.sankey(),
            Stage::Tsne => self.tsne(),
            Stage::Curve => self.curve(),
        };
        let mut manifest = self.load_manifest();
        match result {
            Ok((outputs, inputs)) => {
                if let Some(inputs) = inputs {
                    manifest.inputs = inputs;
                }
                manifest.stages.retain(|s| s.stage != stage);
                manifest.stages.push(StageRecord {
                    stage,
                    outputs: outputs.clone(),
                });
                manifest.stages.sort_by_key(|s| s.stage);
                if manifest.failure.as_ref().is_some_and(|f| f.stage == stage) {
                    manifest.failure = None;
                    manifest.status = RunStatus::Ok;
                }
                self.store_manifest(&manifest)?;
                Ok(outputs)
            }
            Err(e) => {
                let e = match e {
                    Error::Stage { .. } => e,
                    other => other.in_stage(stage.name(), None),
                };
                tracing::error!(stage = stage.name(), "{e}");
                manifest.status = RunStatus::Failed;
                manifest.failure = Some(FailureMarker {
                    stage,
                    message: e.to_string(),
                    exit_code: e.exit_code(),
                });
                // the stage error matters more than a failed manifest write
                let _ = self.store_manifest(&manifest);
                Err(e)
            }
        }
    }

    /// Every stage in order; stops at the first failure.
    pub fn run_all(&self) -> Result<RunManifest> {
        self.store_manifest(&RunManifest::new(&self.cfg))?;
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        Ok(self.load_manifest())
    }

    fn validate(&self) -> StageResult {
        let entries = validate_corpus(self.trace_dir()?)?;
        let out = self.path(files::VALIDATION);
        write_json(&out, &entries)?;
        check_validation(&entries)?;
        Ok((vec![file_name(&out)], None))
    }

    fn embed(&self) -> StageResult {
        let paths = list_trace_files(self.trace_dir()?)?;
        if paths.is_empty() {
            return Err(Error::Validation(format!(
                "no .cotr traces in {}",
                self.cfg.trace_dir.display()
            )));
        }
        let (k_eig, mode) = (self.cfg.k_eig, self.cfg.gram_mode);
        let results: Vec<Result<(SpectralTrajectory, InputRecord)>> = paths
            .par_iter()
            .map(|p| {
                let context = |e: Error, id: &str| e.in_stage("embed", Some(format!("trace {id}")));
                let stem = file_name(p);
                let trace = read_trace(p).map_err(|e| context(e, &stem))?;
                let manifest = read_manifest(p).map_err(|e| context(e, &trace.trace_id))?;
                let traj = embed_trace(&trace, k_eig, mode).map_err(|e| context(e, &trace.trace_id))?;
                let input = InputRecord {
                    trace_id: trace.trace_id.clone(),
                    model_id: trace.model_id.clone(),
                    dataset_id: trace.dataset_id.clone(),
                    file: stem,
                    n_steps: trace.len(),
                    dim: trace.dim,
                    checksum: manifest.checksum,
                    checksum_algo: CHECKSUM_ALGO.to_string(),
                };
                Ok((traj, input))
            })
            .collect();
        let mut trajectories = Vec::with_capacity(results.len());
        let mut inputs = Vec::with_capacity(results.len());
        for r in results {
            let (t, i) = r?;
            trajectories.push(t);
            inputs.push(i);
        }
        let mut seen = BTreeMap::new();
        for i in &inputs {
            if let Some(prev) = seen.insert(i.trace_id.clone(), i.file.clone()) {
                return Err(Error::Validation(format!(
                    "trace id {} appears in both {prev} and {}",
                    i.trace_id, i.file
                )));
            }
        }
        let traj_path = self.path(files::TRAJECTORIES);
        let corpus_path = self.path(files::CORPUS);
        write_json(&traj_path, &trajectories)?;
        write_json(&corpus_path, &inputs)?;
        Ok((vec![file_name(&corpus_path), file_name(&traj_path)], Some(inputs)))
    }

    fn cluster(&self) -> StageResult {
        let trajectories: Vec<SpectralTrajectory> = read_json(&self.path(files::TRAJECTORIES))?;
        let model = fit_cluster_model(&trajectories, self.cfg.feature_mode, &self.cfg.kmeans_params())?;
        if !model.converged {
            tracing::warn!(iterations = model.iterations, "k-means hit max_iter before converging");
        }
        let states = assign_corpus(&model, &trajectories)?;
        let digest = self.digest(&states)?;
        let outs = [files::CLUSTER_MODEL, files::STATES, files::CLUSTER_DIGEST];
        write_json(&self.path(outs[0]), &model)?;
        write_json(&self.path(outs[1]), &states)?;
        write_json(&self.path(outs[2]), &digest)?;
        Ok((outs.iter().map(|s| s.to_string()).collect(), None))
    }

    fn digest(&self, states: &[StateSequence]) -> Result<Vec<ClusterDigest>> {
        let corpus: Vec<InputRecord> = read_json(&self.path(files::CORPUS))?;
        let dir = self.trace_dir()?;
        let mut texts: BTreeMap<&str, Vec<Option<String>>> = BTreeMap::new();
        for input in &corpus {
            let m = read_manifest(&dir.join(&input.file))?;
            texts.insert(&input.trace_id, m.steps.into_iter().map(|s| s.text).collect());
        }
        let k = self.cfg.k_clu;
        let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
        for (t, seq) in states.iter().enumerate() {
            for (pos, &c) in seq.states.iter().enumerate() {
                members[c].push((t, pos));
            }
        }
        Ok(members
            .iter()
            .enumerate()
            .map(|(cluster, m)| {
                let count = m.len();
                let mean_step_index =
                    (count > 0).then(|| m.iter().map(|&(_, p)| (p + 1) as f64).sum::<f64>() / count as f64);
                let picks = count.min(DIGEST_SAMPLES);
                let samples = (0..picks)
                    .map(|i| {
                        let (t, pos) = m[i * count / picks];
                        let id = &states[t].trace_id;
                        DigestSample {
                            trace_id: id.clone(),
                            step_index: pos + 1,
                            text: texts.get(id.as_str()).and_then(|v| v.get(pos).cloned().flatten()),
                        }
                    })
                    .collect();
                ClusterDigest {
                    cluster,
                    count,
                    mean_step_index,
                    samples,
                }
            })
            .collect())
    }

    fn transitions(&self) -> StageResult {
        let model: ClusterModel = read_json(&self.path(files::CLUSTER_MODEL))?;
        let states: Vec<StateSequence> = read_json(&self.path(files::STATES))?;
        let tm = estimate_transitions(&states, model.k_clu)?;
        write_json(&self.path(files::TRANSITION_MODEL), &tm)?;
        Ok((vec![files::TRANSITION_MODEL.to_string()], None))
    }

    fn rollout(&self) -> StageResult {
        let tm: TransitionModel = read_json(&self.path(files::TRANSITION_MODEL))?;
        let r = &self.cfg.rollout;
        let batch = rollout(&tm, r.n, r.horizon, r.start_mode, r.seed)?;
        write_rollouts(&batch, &self.path(files::ROLLOUTS))?;
        Ok((vec![files::ROLLOUTS.to_string(), files::ROLLOUT_HEADER.to_string()], None))
    }

    fn labels(&self) -> Result<(String, String)> {
        let corpus: Vec<InputRecord> = read_json(&self.path(files::CORPUS))?;
        let join = |f: fn(&InputRecord) -> &str| {
            let mut v: Vec<&str> = corpus.iter().map(f).collect();
            v.sort_unstable();
            v.dedup();
            v.join("+")
        };
        let pick = |given: &str, derived: String| if given.is_empty() { derived } else { given.to_string() };
        Ok((
            pick(&self.cfg.report.dataset, join(|i| &i.dataset_id)),
            pick(&self.cfg.report.model, join(|i| &i.model_id)),
        ))
    }

    fn analyze(&self) -> StageResult {
        let tm: TransitionModel = read_json(&self.path(files::TRANSITION_MODEL))?;
        let states: Vec<StateSequence> = read_json(&self.path(files::STATES))?;
        let batch = read_rollouts(&self.path(files::ROLLOUTS))?;
        let report = consistency_report(&states, &batch, tm.k_clu, &self.cfg.report_options())?;
        let (dataset, model) = self.labels()?;
        write_json(&self.path(files::REPORT), &report)?;
        let text_path = self.path(files::REPORT_TEXT);
        fs::write(&text_path, report.to_table_text(&dataset, &model)).map_err(|e| Error::io(&text_path, e))?;
        let table_path = self.path(files::REPORT_TABLE);
        fs::write(&table_path, report.to_summary_csv(&dataset, &model)).map_err(|e| Error::io(&table_path, e))?;
        let clusters_path = self.path(files::REPORT_CLUSTERS);
        fs::write(&clusters_path, report.to_cluster_csv()).map_err(|e| Error::io(&clusters_path, e))?;
        Ok((
            [files::REPORT, files::REPORT_TEXT, files::REPORT_TABLE, files::REPORT_CLUSTERS]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            None,
        ))
    }

    fn heatmap(&self) -> StageResult {
        let tm: TransitionModel = read_json(&self.path(files::TRANSITION_MODEL))?;
        let out = heatmap_emit(&tm, &self.path(files::HEATMAP))?;
        Ok((vec![file_name(&out.csv), file_name(&out.svg)], None))
    }

    fn sankey(&self) -> StageResult {
        let states: Vec<StateSequence> = read_json(&self.path(files::STATES))?;
        let seqs = states.iter().map(|s| s.states.as_slice());
        let s = &self.cfg.sankey;
        let (_, out) = sankey_emit(seqs, s.layers, s.min_count, &self.path(files::SANKEY))?;
        Ok((vec![file_name(&out.json), file_name(&out.svg)], None))
    }

    fn tsne(&self) -> StageResult {
        let trajectories: Vec<SpectralTrajectory> = read_json(&self.path(files::TRAJECTORIES))?;
        let model: ClusterModel = read_json(&self.path(files::CLUSTER_MODEL))?;
        let states: Vec<StateSequence> = read_json(&self.path(files::STATES))?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut origin = Vec::new();
        for (traj, seq) in trajectories.iter().zip(&states) {
            for (pos, (row, &c)) in traj.embeddings.iter().zip(&seq.states).enumerate() {
                rows.push(match self.cfg.tsne.features {
                    TsneFeatures::Transformed => model.transform.apply(row)?,
                    TsneFeatures::Raw => row.clone(),
                });
                labels.push(c);
                origin.push((traj.trace_id.as_str(), pos + 1));
            }
        }
        let total = rows.len();
        let keep: Vec<usize> = if total > self.cfg.tsne.max_points {
            let m = self.cfg.tsne.max_points;
            (0..m).map(|i| i * total / m).collect()
        } else {
            (0..total).collect()
        };
        let rows: Vec<&[f64]> = keep.iter().map(|&i| rows[i].as_slice()).collect();
        let labels: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
        let mut params = self.cfg.tsne_params();
        let n = rows.len();
        let ceiling = n as f64 / 3.0;
        if params.perplexity >= ceiling {
            let reduced = 0.9 * ceiling;
            tracing::warn!(n, requested = params.perplexity, reduced, "perplexity too large for the point count; reducing");
            params.perplexity = reduced;
        }
        let proj = tsne_project(&rows, &labels, &params)?;
        let out = projection_emit(&proj, &self.path(files::TSNE))?;
        let mut csv = String::from("trace_id,step_index,cluster,x,y\n");
        for (k, &i) in keep.iter().enumerate() {
            let (id, step) = origin[i];
            let [x, y] = proj.points[k];
            csv.push_str(&format!("{id},{step},{},{x:.6},{y:.6}\n", labels[k]));
        }
        let points_path = self.path(files::TSNE_POINTS);
        fs::write(&points_path, csv).map_err(|e| Error::io(&points_path, e))?;
        Ok((vec![file_name(&out.json), file_name(&out.svg), files::TSNE_POINTS.to_string()], None))
    }

    fn curve(&self) -> StageResult {
        let report: ConsistencyReport = read_json(&self.path(files::REPORT))?;
        let out = curve_emit(&report.curve, &self.path(files::CURVE))?;
        Ok((vec![file_name(&out.csv), file_name(&out.svg)], None))
    }
}

type StageResult = Result<(Vec<String>, Option<Vec<InputRecord>>)>;

fn check_validation(entries: &[ValidationEntry]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::Validation("no .cotr traces found".into()));
    }
    let bad: Vec<&ValidationEntry> = entries.iter().filter(|e| e.status == ValidationStatus::Error).collect();
    match bad.first() {
        None => Ok(()),
        Some(first) => Err(Error::Validation(format!(
            "{} of {} traces invalid; first: {} ({})",
            bad.len(),
            entries.len(),
            first.trace_id,
            first.message
        ))),
    }
}

/// Runs the whole pipeline for `cfg`.
pub fn run_pipeline(cfg: PipelineConfig) -> Result<RunManifest> {
    Run::new(cfg)?.run_all()
}
