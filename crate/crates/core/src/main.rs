use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use analog_retrieval::config::load_config;
use analog_retrieval::corpus::{
    generate_synthetic_corpus, load_manifest, read_feature_file, save_manifest, validate_corpus, Dataset, Manifest, Split,
    SynthConfig, ValidateOptions, ValidationOutcome,
};
use analog_retrieval::curriculum::{build_indices, cluster_captions, evaluate_model, TrainConfig, Trainer};
use analog_retrieval::encoders::{Modality, TriModalModel};
use analog_retrieval::graph::build_graph;
use analog_retrieval::index::EmbeddingIndex;
use analog_retrieval::spice::parse_netlist;

#[derive(Parser)]
#[command(name = "analog-retrieval", version, about = "Tri-modal retrieval over SPICE netlists, captions and schematic features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Code,
    Text,
    Image,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Code => Modality::Code,
            ModalityArg::Text => Modality::Text,
            ModalityArg::Image => Modality::Image,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn keep(self, s: Split) -> bool {
        match self {
            SplitArg::All => true,
            SplitArg::Train => s == Split::Train,
            SplitArg::Test => s == Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the parsed netlist as JSON.
    Parse { file: PathBuf },
    /// Print the circuit graph as JSON.
    Graph { file: PathBuf },
    /// Write a synthetic triplet corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        per_family: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated family names; all when omitted.
        #[arg(long, value_delimiter = ',')]
        families: Vec<String>,
        #[arg(long, default_value_t = 512)]
        feature_dim: usize,
    },
    /// K-means over caption vectors; prints `{id: cluster}`.
    Cluster {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 30)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Store the cluster ids back into the manifest.
        #[arg(long)]
        write: bool,
    },
    /// Run the three-phase training schedule.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `manifest` in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed a corpus and write one index per modality.
    Index {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
    },
    /// Rank indexed items for one query. INPUT is a caption, a netlist
    /// file or a feature file depending on `--from`.
    Query {
        #[arg(long, value_enum)]
        from: ModalityArg,
        #[arg(long, value_enum)]
        to: ModalityArg,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "index")]
        index: PathBuf,
        /// Defaults to the checkpoint recorded when the index was built.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        input: String,
    },
    /// Six-direction Recall@K on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        json: bool,
    },
    /// Compile every netlist with an external SPICE simulator.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        /// Falls back to the ANALOG_RETRIEVAL_SIMULATOR environment variable.
        #[arg(long)]
        simulator: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

/// A failure with its exit code: 1 operational, 2 usage.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

fn op(kind: &'static str) -> impl Fn(&dyn std::fmt::Display) -> Failure {
    move |e| Failure { code: 1, kind, message: e.to_string() }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, kind: "usage", message: message.into() }
}

fn read_input(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &impl serde::Serialize) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("value serializes")));
}

fn load_model(path: &Path) -> Result<TriModalModel, Failure> {
    let f = fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(TriModalModel::load(std::io::BufReader::new(f)).map_err(|e| op("checkpoint")(&e))?.0)
}

fn load_dataset(path: &Path, split: SplitArg) -> Result<Dataset, Failure> {
    if !path.exists() {
        return Err(usage(format!("{}: no such manifest", path.display())));
    }
    let m = load_manifest(path).map_err(|e| op("manifest")(&e))?;
    let mut d = Dataset::from_manifest(&m).map_err(|e| op("dataset")(&e))?;
    d.samples.retain(|s| split.keep(s.split));
    Ok(d)
}

const INDEX_META: &str = "index.json";

fn index_file(dir: &Path, m: Modality) -> PathBuf {
    dir.join(format!("{}.arix", m.name()))
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Parse { file } => {
            let ir = parse_netlist(&read_input(&file)?).map_err(|e| op("parse")(&e))?;
            print_json(&ir);
        }
        Command::Graph { file } => {
            let ir = parse_netlist(&read_input(&file)?).map_err(|e| op("parse")(&e))?;
            print_json(&build_graph(&ir).map_err(|e| op("graph")(&e))?);
        }
        Command::GenData { out, per_family, seed, families, feature_dim } => {
            let cfg = SynthConfig { per_family, seed, families, feature_dim, ..SynthConfig::default() };
            let m = generate_synthetic_corpus(&cfg, &out).map_err(|e| op("gen-data")(&e))?;
            print_json(&json!({ "manifest": out.join("manifest.jsonl"), "records": m.records.len() }));
        }
        Command::Cluster { manifest, k, seed, write } => {
            if !manifest.exists() {
                return Err(usage(format!("{}: no such manifest", manifest.display())));
            }
            let mut m: Manifest = load_manifest(&manifest).map_err(|e| op("manifest")(&e))?;
            let captions: Vec<&str> = m.records.iter().map(|r| r.caption.as_str()).collect();
            let c = cluster_captions(&captions, k, seed).map_err(|e| op("cluster")(&e))?;
            let map: serde_json::Map<String, serde_json::Value> =
                m.records.iter().zip(&c.assignments).map(|(r, &a)| (r.id.clone(), json!(a))).collect();
            if write {
                for (r, &a) in m.records.iter_mut().zip(&c.assignments) {
                    r.cluster_id = Some(a);
                }
                save_manifest(&m, &manifest).map_err(|e| op("manifest")(&e))?;
            }
            print_json(&map);
        }
        Command::Train { config, manifest, out } => {
            if !config.exists() {
                return Err(usage(format!("{}: no such config", config.display())));
            }
            let mut cfg: TrainConfig = load_config(&config).map_err(|e| usage(e.to_string()))?;
            if manifest.is_some() {
                cfg.manifest = manifest;
            }
            if out.is_some() {
                cfg.output_dir = out;
            }
            let manifest = cfg.manifest.clone().ok_or_else(|| usage("no manifest in config or on the command line"))?;
            let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("run"));
            let data = load_dataset(&manifest, SplitArg::All)?;
            fs::create_dir_all(&out).map_err(|e| op("io")(&e))?;
            let log = fs::File::create(out.join("train_log.jsonl")).map_err(|e| op("io")(&e))?;
            let snapshot = serde_json::to_value(&cfg).expect("config serializes");
            let mut trainer = Trainer::new(&data, cfg, BufWriter::new(log)).map_err(|e| op("train")(&e))?;
            trainer.dump_dir = Some(out.clone());
            let outcome = trainer.run().map_err(|e| op("train")(&e))?;
            let ck = fs::File::create(out.join("model.ckpt")).map_err(|e| op("io")(&e))?;
            outcome.model.save(json!({ "train": snapshot }), BufWriter::new(ck)).map_err(|e| op("checkpoint")(&e))?;
            if let Some(r) = &outcome.final_report {
                fs::write(out.join("report.json"), serde_json::to_string_pretty(r).expect("report serializes")).map_err(|e| op("io")(&e))?;
                emit(&r.to_table());
            }
            print_json(&json!({ "checkpoint": out.join("model.ckpt"), "epochs": outcome.history.len() }));
        }
        Command::Index { checkpoint, manifest, out, split } => {
            let model = load_model(&checkpoint)?;
            let data = load_dataset(&manifest, split)?;
            let samples: Vec<_> = data.samples.iter().collect();
            let idx = build_indices(&model, &samples).map_err(|e| op("index")(&e))?;
            fs::create_dir_all(&out).map_err(|e| op("io")(&e))?;
            for m in Modality::ALL {
                let f = fs::File::create(index_file(&out, m)).map_err(|e| op("io")(&e))?;
                idx.get(m).write_to(BufWriter::new(f)).map_err(|e| op("index")(&e))?;
            }
            let checkpoint = fs::canonicalize(&checkpoint).unwrap_or(checkpoint);
            let meta = json!({ "checkpoint": checkpoint, "count": samples.len() });
            fs::write(out.join(INDEX_META), meta.to_string()).map_err(|e| op("io")(&e))?;
            print_json(&meta);
        }
        Command::Query { from, to, k, index, checkpoint, input } => {
            let (from, to) = (Modality::from(from), Modality::from(to));
            let checkpoint = match checkpoint {
                Some(c) => c,
                None => {
                    let meta = fs::read_to_string(index.join(INDEX_META))
                        .map_err(|e| usage(format!("{}: {e}; pass --index or --checkpoint", index.join(INDEX_META).display())))?;
                    let v: serde_json::Value = serde_json::from_str(&meta).map_err(|e| op("index")(&e))?;
                    PathBuf::from(v["checkpoint"].as_str().ok_or_else(|| op("index")(&"index.json has no checkpoint"))?)
                }
            };
            let model = load_model(&checkpoint)?;
            let f = fs::File::open(index_file(&index, to)).map_err(|e| usage(format!("{}: {e}", index_file(&index, to).display())))?;
            let target = EmbeddingIndex::read_from(std::io::BufReader::new(f)).map_err(|e| op("index")(&e))?;
            let emb = match from {
                Modality::Text => model.encode_text(&input),
                Modality::Code => {
                    let ir = parse_netlist(&read_input(Path::new(&input))?).map_err(|e| op("parse")(&e))?;
                    model.encode_circuit(&build_graph(&ir).map_err(|e| op("graph")(&e))?)
                }
                Modality::Image => {
                    let path = Path::new(&input);
                    if !path.exists() {
                        return Err(usage(format!("{input}: no such feature file")));
                    }
                    model.encode_image_features(&read_feature_file(path).map_err(|e| op("features")(&e))?)
                }
            }
            .map_err(|e| op("encode")(&e))?;
            let hits = target.top_k(&emb.vector, k).map_err(|e| op("query")(&e))?;
            print_json(&hits);
        }
        Command::Eval { checkpoint, manifest, split, json } => {
            let model = load_model(&checkpoint)?;
            let data = load_dataset(&manifest, split)?;
            let samples: Vec<_> = data.samples.iter().collect();
            let report = evaluate_model(&model, &samples).map_err(|e| op("eval")(&e))?;
            if json {
                print_json(&report);
            } else {
                emit(&report.to_table());
            }
        }
        Command::Validate { manifest, simulator, timeout_secs, jobs } => {
            if !manifest.exists() {
                return Err(usage(format!("{}: no such manifest", manifest.display())));
            }
            let m = load_manifest(&manifest).map_err(|e| op("manifest")(&e))?;
            let opts = ValidateOptions { simulator, timeout: Duration::from_secs(timeout_secs), parallelism: jobs };
            let outcome = validate_corpus(&m, &opts);
            if let ValidationOutcome::Skipped { reason } = &outcome {
                log::warn!("simulator check skipped: {reason}");
            }
            print_json(&outcome);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim() }));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}
