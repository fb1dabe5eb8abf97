use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use pullnet::config::{Manifest, RunConfig};
use pullnet::io::{write_json, DataLayout, Knowledge};
use pullnet::pipeline::{self, recall_sweep, write_sweep, Dataset, SweepMethod};
use pullnet::synth::generate;
use pullnet::{run_inference, Error, ModelParams};

#[derive(Parser)]
#[command(name = "pullnet", version, about = "Iterative question-subgraph retrieval over a KB and a corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (triples.tsv, corpus.jsonl, lexicon.jsonl, questions_*).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into a directory.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the KB and corpus indexes and report their statistics.
    Build {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; the run directory receives the checkpoint and metrics.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Output directory for eval_{split}.json and eval_{split}.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Answer recall and subgraph size per retrieval budget, as CSV.
    SweepRecall {
        #[command(flatten)]
        common: Common,
        /// ppr, idf or pullnet.
        #[arg(long, default_value = "ppr")]
        method: SweepMethod,
        /// Checkpoint, required for the pullnet method.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the per-iteration expansion records for one question as JSON Lines.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        question: u64,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(e, Error::Config(_));
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}

fn load_config(path: Option<&Path>) -> pullnet::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load(common: &Common) -> pullnet::Result<(RunConfig, Dataset, Manifest)> {
    let cfg = load_config(common.config.as_deref())?;
    let layout = DataLayout::new(&common.data);
    let ds = Dataset::load(&layout, &cfg)?;
    let mut manifest = Manifest::new("", &cfg);
    for p in [layout.triples(), layout.corpus(), layout.lexicon()] {
        manifest.add_input(&p)?;
    }
    for split in pullnet::synth::SPLITS {
        manifest.add_input(&layout.questions(cfg.hops, split))?;
    }
    Ok((cfg, ds, manifest))
}

fn mkdir(dir: &Path) -> pullnet::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn run(cmd: Command) -> pullnet::Result<()> {
    match cmd {
        Command::Synth { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let data = generate(&cfg.synth)?;
            mkdir(&out)?;
            data.write(&DataLayout::new(&out))?;
            let mut m = Manifest::new("synth", &cfg);
            m.seed = cfg.synth.seed;
            m.write(&out)?;
            info!(
                "wrote {} triples, {} sentences, {} question sets to {}",
                data.knowledge.triples.len(),
                data.knowledge.sentences.len(),
                data.questions.len(),
                out.display()
            );
        }
        Command::Build { common, out } => {
            let (_, ds, mut m) = load(&common)?;
            let stats = index_stats(&ds.complete, &ds);
            mkdir(&out)?;
            write_json(&out.join("index_stats.json"), &stats)?;
            m.command = "build".into();
            m.write(&out)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Train { common, run } => {
            let (cfg, ds, mut m) = load(&common)?;
            mkdir(&run)?;
            let out = pipeline::run_training(&cfg, &ds, Some(&run))?;
            m.command = "train".into();
            m.write(&run)?;
            if let Some(best) = out.best_epoch.and_then(|e| out.history.get(e - 1)) {
                println!("best epoch {} dev hits@1 {:.4}", best.epoch, best.dev_hits_at_1);
            }
        }
        Command::Eval { common, model, split, out, jobs } => {
            let (cfg, ds, mut m) = load(&common)?;
            let params = ModelParams::load(&model)?;
            let metrics = pipeline::run_eval(&cfg, &ds, &params, &split, jobs)?;
            mkdir(&out)?;
            pipeline::write_eval(&out, &split, &metrics)?;
            m.command = "eval".into();
            m.add_input(&model)?;
            m.write(&out)?;
            println!("{}", serde_json::to_string(&metrics)?);
        }
        Command::SweepRecall { common, method, model, split, out, jobs } => {
            let (cfg, ds, _) = load(&common)?;
            let params = model.as_deref().map(ModelParams::load).transpose()?;
            let rows = recall_sweep(&cfg, &ds, ds.questions(&split)?, method, params.as_ref(), jobs)?;
            write_sweep(&out, &rows)?;
            info!("wrote {} budget rows to {}", rows.len(), out.display());
        }
        Command::Trace { common, model, question, split } => {
            let (cfg, ds, _) = load(&common)?;
            let params = ModelParams::load(&model)?;
            let q = ds
                .questions(&split)?
                .iter()
                .find(|q| q.id == question)
                .ok_or_else(|| Error::Config(format!("question {question} not found in the {split} split")))?;
            let res = run_inference(q, &params, ds.stores(), &cfg.engine())?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for rec in &res.trace {
                serde_json::to_writer(&mut w, rec)?;
                use std::io::Write;
                writeln!(w).map_err(|e| Error::io("stdout", e))?;
            }
            let top = res.top().and_then(|e| ds.complete.kb.entity_name(e)).unwrap_or("");
            info!("top answer {top:?}");
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct IndexStats {
    entities: usize,
    relations: usize,
    facts: usize,
    retrieval_facts: usize,
    documents: usize,
    vocabulary: usize,
    lexicon_entries: usize,
    questions: Vec<(String, usize)>,
}

fn index_stats(k: &Knowledge, ds: &Dataset) -> IndexStats {
    IndexStats {
        entities: k.kb.num_entities(),
        relations: k.kb.num_relations(),
        facts: k.kb.num_facts(),
        retrieval_facts: ds.retrieval.kb.num_facts(),
        documents: k.corpus.len(),
        vocabulary: k.corpus.vocabulary().count(),
        lexicon_entries: k.corpus.lexicon().len(),
        questions: ds.splits.iter().map(|(s, q)| (s.clone(), q.len())).collect(),
    }
}
