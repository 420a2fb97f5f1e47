//! `vsearch`: corpus generation, feature extraction, model training, index
//! building, search, evaluation, serving and benchmarking.

mod commands;
mod corpus;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

/// Version of the `--json` output schema.
pub const OUTPUT_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "vsearch", version, about = "Cascaded visual search engine")]
pub struct Cli {
    /// Seed for every random choice; equal seeds give identical artifacts.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// TOML file of default flag values: top-level keys apply to every
    /// command, `[command]` and `[train.<model>]` tables to one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print one machine-readable JSON object.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic corpus spec (and optionally its documents).
    GenCorpus(GenCorpusArgs),
    /// Compute features for a directory of images.
    Extract(ExtractArgs),
    /// Train one model.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Train models (unless given) and build a sharded index.
    BuildIndex(BuildIndexArgs),
    /// Run one query through the cascade.
    Search(SearchArgs),
    /// Compression, recall, ranking quality or latency reports.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Concurrent query workers against an in-process engine; writes CSV.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub clusters: usize,
    #[arg(long, default_value_t = 100)]
    pub docs_per_cluster: usize,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    /// Second embedding family; 0 disables it.
    #[arg(long, default_value_t = 0)]
    pub aux_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f32,
    #[arg(long, default_value_t = 0.05)]
    pub noise_sigma: f32,
    #[arg(long, default_value_t = 20)]
    pub categories: usize,
    /// Every n-th document is a near copy of its predecessor; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub duplicate_every: usize,
    /// Also write every document to docs.jsonl.
    #[arg(long)]
    pub materialize: bool,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Directory searched recursively for png/jpeg/bmp/gif files.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Feature pipeline config; defaults to the color histogram alone.
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    /// External embeddings as `family=path` (EMB1 files keyed by image id).
    #[arg(long = "embeddings", value_name = "FAMILY=PATH")]
    pub embeddings: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum TrainCommand {
    /// PCA for one family; writes `pca.<family>.bin`.
    Pca(TrainPcaArgs),
    /// Product quantizer over PCA output; writes `pq.<family>.bin`.
    Pq(TrainPqArgs),
    /// Visual-word codebooks over the Level-1 PCA prefix; writes `vw.<family>.bin`.
    Vw(TrainVwArgs),
    /// Linear triplet embedding; writes model JSON.
    Triplet(TrainTripletArgs),
    /// LambdaMART on simulated judgments; writes model JSON.
    Ranker(TrainRankerArgs),
}

#[derive(Args, Debug)]
pub struct TrainPcaArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub family: String,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Models directory.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    pub train_sample: usize,
}

#[derive(Args, Debug)]
pub struct TrainPqArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, default_value_t = 25)]
    pub subspaces: usize,
    #[arg(long, default_value_t = 256)]
    pub centroids: usize,
    #[arg(long, default_value_t = 20_000)]
    pub train_sample: usize,
}

#[derive(Args, Debug)]
pub struct TrainVwArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Level-1 family; its PCA must already be in the models directory.
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub books: usize,
    #[arg(long, default_value_t = 1024)]
    pub vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub vw_dim: usize,
    #[arg(long, default_value_t = 25)]
    pub kmeans_iters: usize,
    #[arg(long, default_value_t = 20_000)]
    pub train_sample: usize,
}

#[derive(Args, Debug)]
pub struct TrainTripletArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Input family.
    #[arg(long)]
    pub family: String,
    #[arg(long, default_value_t = 32)]
    pub out_dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub triplets: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainRankerArgs {
    /// Synthetic corpus the index was built from.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    #[arg(long, default_value_t = 30)]
    pub candidates: usize,
    #[arg(long, default_value_t = 150)]
    pub pairs: usize,
    /// Share of judged queries used for training; the rest is held out.
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 8)]
    pub leaves: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the simulated pairwise judgments as JSONL.
    #[arg(long)]
    pub judgments_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    /// Keep only PQ codes (no raw vectors for exact Level-2 distances).
    #[arg(long)]
    pub no_raw: bool,
    #[arg(long)]
    pub l1_family: Option<String>,
    /// PQ subspaces per family (4 dims each), capped at what a family's
    /// dim allows; PCA training needs more samples than 4x this.
    #[arg(long)]
    pub pq_subspaces: Option<usize>,
    #[arg(long)]
    pub pq_centroids: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub vw_books: usize,
    #[arg(long, default_value_t = 1024)]
    pub vw_vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub vw_dim: usize,
    #[arg(long, default_value_t = 20_000)]
    pub train_sample: usize,
    #[arg(long, default_value_t = 25)]
    pub kmeans_iters: usize,
    /// Directory of models from `train`; trained from the corpus when absent.
    #[arg(long)]
    pub models: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true)))]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Query by an indexed document's stored features.
    #[arg(long, group = "source")]
    pub image_id: Option<u64>,
    /// Query by an image file (needs --pipeline).
    #[arg(long, group = "source")]
    pub image: Option<PathBuf>,
    /// Query `n` of the corpus given by --corpus.
    #[arg(long, group = "source", requires = "corpus")]
    pub query: Option<u64>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    /// Normalized `x0,y0,x1,y1`.
    #[arg(long)]
    pub crop: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub top_k: usize,
    #[arg(long)]
    pub ranker: Option<PathBuf>,
    #[arg(long)]
    pub deadline_ms: Option<u64>,
    /// Level-2 distances from PQ codes even when raw vectors are stored.
    #[arg(long)]
    pub adc_l2: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Report {
    Compression,
    Recall,
    Ndcg,
    Latency,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub report: Report,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    /// Cutoff for the recall and latency reports.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub ndcg_k: usize,
    #[arg(long)]
    pub ranker: Option<PathBuf>,
    /// Compression report without an index: raw feature dimension.
    #[arg(long, default_value_t = 2048)]
    pub dim: usize,
    #[arg(long, default_value_t = 25)]
    pub subspaces: usize,
    #[arg(long, default_value_t = 256)]
    pub centroids: usize,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Service TOML file; SERVICE_ADDR and INDEX_PATH override it and
    /// flags override both.
    #[arg(long)]
    pub service_config: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    #[arg(long)]
    pub ranker: Option<PathBuf>,
    #[arg(long)]
    pub cache_capacity: Option<usize>,
    #[arg(long)]
    pub default_deadline_ms: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Corpus supplying the queries.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long)]
    pub ranker: Option<PathBuf>,
    #[arg(long)]
    pub deadline_ms: Option<u64>,
    /// Also time a brute-force scan of stored raw vectors and report
    /// recall@top_k against it.
    #[arg(long)]
    pub brute_force: bool,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
}

/// Prints a command's report as JSON or as `key: value` lines.
pub fn emit(json: bool, command: &str, report: Value) {
    let Value::Object(fields) = report else {
        unreachable!("reports are objects")
    };
    if json {
        let mut out = Map::new();
        out.insert("version".into(), OUTPUT_VERSION.into());
        out.insert("command".into(), command.into());
        out.extend(fields);
        println!("{}", Value::Object(out));
        return;
    }
    for (k, v) in fields {
        match v {
            Value::Array(items) if items.iter().all(Value::is_object) => {
                println!("{k}:");
                for item in items {
                    let Value::Object(m) = item else { continue };
                    let line: Vec<String> = m
                        .iter()
                        .map(|(k, v)| format!("{k}={}", scalar(v)))
                        .collect();
                    println!("  {}", line.join(" "));
                }
            }
            v => println!("{k}: {}", scalar(&v)),
        }
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let argv = match options::expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
