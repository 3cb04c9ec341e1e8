use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use herdid_core::pipeline::{
    export_run_embeddings, render_text, run_pipeline, write_synthetic_dataset, DataSource, PipelineConfig,
};
use herdid_core::synthherd::{DetectorNoise, SynthScenario};
use herdid_cli::server::{self, AppState, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "herdid", version, about = "Self-supervised animal re-identification from video tracklets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline (data, train, cluster, evaluate) and write a report.
    Run(RunArgs),
    /// Export embeddings of a finished run's crops and stills to CSV.
    Export {
        /// Output directory of a finished run.
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Serve the label-assist API over a finished run.
    Serve {
        #[arg(long)]
        run_dir: PathBuf,
        /// Label file; defaults to labels.jsonl in the run directory.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Directory holding a built UI bundle.
        #[arg(long)]
        ui: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, env = "HERDID_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
    },
    /// Write a synthetic dataset (frames, detections, stills) to disk.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags below override its fields.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use a dataset directory written by `synth` instead of generating data.
    #[arg(long)]
    ingest: Option<PathBuf>,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    scenario_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Number of mixture components; defaults to the number of identities.
    #[arg(long)]
    clusters: Option<usize>,
    /// Write the effective config as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    identities: usize,
    #[arg(long, default_value_t = 60)]
    videos: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Keep every k-th frame.
    #[arg(long, default_value_t = 6)]
    frame_stride: usize,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_json_file(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(root) = &self.ingest {
            cfg.source = DataSource::Ingested { root: root.clone() };
        }
        if let DataSource::Synthetic { scenario, .. } = &mut cfg.source {
            if let Some(v) = self.identities {
                scenario.n_individuals = v;
            }
            if let Some(v) = self.videos {
                scenario.n_videos = v;
            }
            if let Some(v) = self.scenario_seed {
                scenario.rng_seed = v;
            }
        } else if self.identities.is_some() || self.videos.is_some() || self.scenario_seed.is_some() {
            anyhow::bail!("--identities, --videos and --scenario-seed apply to synthetic data only");
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.training.epochs = v;
        }
        if let Some(v) = self.batches_per_epoch {
            cfg.training.batches_per_epoch = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.training.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            cfg.training.momentum = v;
        }
        if self.clusters.is_some() {
            cfg.clustering.k = self.clusters;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = args.config()?;
            if args.print_config {
                println!("{}", serde_json::to_string_pretty(&cfg)?);
                return Ok(());
            }
            let out = tokio::task::spawn_blocking(move || run_pipeline(&cfg)).await??;
            for s in &out.stages {
                eprintln!("{:<9} {}", s.stage, if s.cached { "cached" } else { "computed" });
            }
            print!("{}", render_text(&out.report));
        }
        Command::Export { run_dir, out } => {
            let n = export_run_embeddings(&run_dir, &out)?;
            eprintln!("wrote {n} embeddings to {}", out.display());
        }
        Command::Serve {
            run_dir,
            labels,
            ui,
            host,
            port,
        } => {
            let labels = labels.unwrap_or_else(|| run_dir.join("labels.jsonl"));
            let state = Arc::new(AppState::load(&run_dir, &labels)?);
            server::serve(state, ui, SocketAddr::new(host, port)).await?;
        }
        Command::Synth(a) => {
            let scenario = SynthScenario {
                n_individuals: a.identities,
                n_videos: a.videos,
                rng_seed: a.seed,
                ..Default::default()
            };
            write_synthetic_dataset(&scenario, &DetectorNoise::default(), &a.out, a.frame_stride)
                .with_context(|| format!("writing dataset to {}", a.out.display()))?;
            eprintln!("wrote synthetic dataset to {}", a.out.display());
        }
    }
    Ok(())
}
