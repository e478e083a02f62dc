use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cot_dynamics::abstraction::FeatureMode;
use cot_dynamics::diagnostics::{Alternative, SimPooling, TieMethod};
use cot_dynamics::markov::StartMode;
use cot_dynamics::pipeline::{files, PipelineConfig, Run, Stage, TsneFeatures};
use cot_dynamics::spectral::GramMode;
use cot_dynamics::trace_store::ValidationStatus;
use cot_dynamics::Error;

#[derive(Parser)]
#[command(name = "cot-dynamics", version, about = "Spectral state abstraction and Markov simulation of chain-of-thought traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Check every trace file in --traces.
    Validate,
    /// Spectral embeddings of every trace.
    Embed,
    /// Fit the feature transform and k-means, assign states.
    Cluster,
    /// Estimate the transition matrix.
    Transitions,
    /// Sample trajectories from the transition model.
    Rollout,
    /// Simulated-vs-real position report.
    Analyze,
    /// Figure artifacts.
    Viz {
        #[arg(value_enum)]
        figure: Figure,
    },
    /// Every stage in order.
    Pipeline,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Figure {
    Heatmap,
    Sankey,
    Tsne,
    Curve,
}

#[derive(Args)]
struct Opts {
    /// Directory of .cotr traces.
    #[arg(long, global = true)]
    traces: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON config file; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    k_eig: Option<usize>,
    #[arg(long, global = true)]
    k_clu: Option<usize>,
    #[arg(long, global = true, value_enum)]
    gram_mode: Option<GramMode>,
    #[arg(long, global = true, value_enum)]
    feature_mode: Option<FeatureMode>,
    #[arg(long, global = true)]
    cluster_seed: Option<u64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Number of rollouts.
    #[arg(long, global = true)]
    rollouts: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    rollout_seed: Option<u64>,
    /// fixed:<c>, empirical or modal.
    #[arg(long, global = true)]
    start_mode: Option<StartMode>,
    #[arg(long, global = true)]
    perplexity: Option<f64>,
    #[arg(long, global = true)]
    tsne_iters: Option<usize>,
    #[arg(long, global = true, value_enum)]
    tsne_features: Option<TsneFeatures>,
    #[arg(long, global = true)]
    tsne_max_points: Option<usize>,
    #[arg(long, global = true)]
    sankey_layers: Option<usize>,
    #[arg(long, global = true)]
    sankey_min_count: Option<u64>,
    #[arg(long, global = true, value_enum)]
    ties: Option<TieMethod>,
    #[arg(long, global = true, value_enum)]
    alternative: Option<Alternative>,
    #[arg(long, global = true, value_enum)]
    sim_pooling: Option<SimPooling>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

impl Opts {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut c.trace_dir, &self.traces);
        set(&mut c.output_dir, &self.out);
        set(&mut c.k_eig, &self.k_eig);
        set(&mut c.k_clu, &self.k_clu);
        set(&mut c.gram_mode, &self.gram_mode);
        set(&mut c.feature_mode, &self.feature_mode);
        set(&mut c.kmeans.seed, &self.cluster_seed);
        set(&mut c.kmeans.max_iter, &self.max_iter);
        set(&mut c.kmeans.tol, &self.tol);
        set(&mut c.rollout.n, &self.rollouts);
        set(&mut c.rollout.horizon, &self.horizon);
        set(&mut c.rollout.seed, &self.rollout_seed);
        set(&mut c.rollout.start_mode, &self.start_mode);
        set(&mut c.tsne.perplexity, &self.perplexity);
        set(&mut c.tsne.iterations, &self.tsne_iters);
        set(&mut c.tsne.features, &self.tsne_features);
        set(&mut c.tsne.max_points, &self.tsne_max_points);
        set(&mut c.sankey.layers, &self.sankey_layers);
        set(&mut c.sankey.min_count, &self.sankey_min_count);
        set(&mut c.report.ties, &self.ties);
        set(&mut c.report.alternative, &self.alternative);
        set(&mut c.report.sim_pooling, &self.sim_pooling);
        Ok(c)
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("COT_DYNAMICS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("COT_DYNAMICS_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn execute(cli: &Cli) -> Result<(), Error> {
    init_threads()?;
    let run = Run::new(cli.opts.config()?)?;
    let stages: Vec<Stage> = match &cli.command {
        Command::Validate => vec![Stage::Validate],
        Command::Embed => vec![Stage::Embed],
        Command::Cluster => vec![Stage::Cluster],
        Command::Transitions => vec![Stage::Transitions],
        Command::Rollout => vec![Stage::Rollout],
        Command::Analyze => vec![Stage::Analyze],
        Command::Viz { figure } => vec![match figure {
            Figure::Heatmap => Stage::Heatmap,
            Figure::Sankey => Stage::Sankey,
            Figure::Tsne => Stage::Tsne,
            Figure::Curve => Stage::Curve,
        }],
        Command::Pipeline => {
            let manifest = run.run_all()?;
            print!("{}", std::fs::read_to_string(run.path(files::REPORT_TEXT)).unwrap_or_default());
            println!("{} stages ok; manifest at {}", manifest.stages.len(), run.path(files::MANIFEST).display());
            return Ok(());
        }
    };
    for stage in stages {
        let result = run.run_stage(stage);
        if stage == Stage::Validate {
            print_validation(&run);
        }
        for out in result? {
            println!("{}", run.path(&out).display());
        }
    }
    Ok(())
}

fn print_validation(run: &Run) {
    let path = run.path(files::VALIDATION);
    let Ok(text) = std::fs::read_to_string(&path) else {
        return;
    };
    let entries: Vec<cot_dynamics::trace_store::ValidationEntry> = serde_json::from_str(&text).unwrap_or_default();
    for e in entries {
        let status = match e.status {
            ValidationStatus::Ok => "ok",
            ValidationStatus::Error => "ERROR",
        };
        println!("{status:<5} {} {} {}", e.trace_id, e.path.display(), e.message);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = if cli.opts.verbose { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
