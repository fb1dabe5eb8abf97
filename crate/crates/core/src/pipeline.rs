//! End-to-end steps shared by the command line, the C interface and the
//! acceptance tests: load a dataset directory, train, evaluate, sweep
//! retrieval budgets.

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::baselines::{heuristic_subgraph, idf_subgraph, PprConfig};
use crate::config::{Manifest, RunConfig};
use crate::engine::{run_inference, Question, Stores};
use crate::error::{Error, Result};
use crate::graph::QuestionSubgraph;
use crate::io::{read_jsonl, write_csv, write_json, write_jsonl, DataLayout, Knowledge, QuestionRecord, RawKnowledge};
use crate::nn::ModelParams;
use crate::synth::{SynthData, SPLITS};
use crate::train::{evaluate_outcomes, par_map, summarize, train, word_vocab, Metrics, TrainData, TrainOutcome};

/// Knowledge for one run: the complete stores used for supervision, the
/// stores retrieval runs against (facts dropped per `dropout`), and the
/// linked questions of the configured depth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub complete: Knowledge,
    pub retrieval: Knowledge,
    pub splits: BTreeMap<String, Vec<Question>>,
}

impl Dataset {
    pub fn new(raw: &RawKnowledge, records: &BTreeMap<String, Vec<QuestionRecord>>, cfg: &RunConfig) -> Result<Self> {
        let complete = Knowledge::build(raw)?;
        let retrieval = if cfg.dropout > 0.0 {
            complete.with_dropped_facts(cfg.dropout, cfg.seed)
        } else {
            complete.clone()
        };
        let splits = records
            .iter()
            .map(|(name, recs)| (name.clone(), complete.link_questions(recs).0))
            .collect();
        Ok(Dataset {
            complete,
            retrieval,
            splits,
        })
    }

    /// Reads a data directory; splits whose file is missing are left out.
    pub fn load(layout: &DataLayout, cfg: &RunConfig) -> Result<Self> {
        let raw = layout.read_knowledge()?;
        let mut records = BTreeMap::new();
        for split in SPLITS {
            let path = layout.questions(cfg.hops, split);
            if path.exists() {
                records.insert(split.to_owned(), read_jsonl(&path)?);
            }
        }
        Self::new(&raw, &records, cfg)
    }

    pub fn from_synth(data: &SynthData, cfg: &RunConfig) -> Result<Self> {
        let records = data
            .questions
            .get(&cfg.hops)
            .map(|s| SPLITS.iter().zip(s).map(|(n, q)| (n.to_string(), q.clone())).collect())
            .unwrap_or_default();
        Self::new(&data.knowledge, &records, cfg)
    }

    pub fn questions(&self, split: &str) -> Result<&[Question]> {
        self.splits
            .get(split)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("no {split} questions in the dataset")))
    }

    pub fn stores(&self) -> Stores<'_> {
        self.retrieval.stores()
    }
}

/// Freshly initialised parameters sized for `ds`, with a word vocabulary
/// over the corpus and training questions.
pub fn init_params(cfg: &RunConfig, ds: &Dataset) -> Result<ModelParams> {
    let train = ds.splits.get("train").map(Vec::as_slice).unwrap_or(&[]);
    let words = word_vocab(&ds.complete.corpus, train);
    let kb = &ds.complete.kb;
    ModelParams::init(cfg.model(kb.num_relations(), kb.num_entities()), words, cfg.seed)
}

/// Trains on the train split, selecting by dev Hits@1. With a run
/// directory, writes `model.ckpt`, per-epoch `metrics.jsonl`, `report.csv`,
/// periodic checkpoints and the manifest.
pub fn run_training(cfg: &RunConfig, ds: &Dataset, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = init_params(cfg, ds)?;
    let data = TrainData {
        train: ds.questions("train")?,
        dev: ds.questions("dev")?,
        stores: ds.stores(),
        kb_complete: &ds.complete.kb,
    };
    let ckpt_dir = run_dir.map(|d| d.join("checkpoints"));
    if let Some(dir) = &ckpt_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let out = train(params, &data, &cfg.engine(), &cfg.train, ckpt_dir.as_deref())?;
    if let Some(dir) = run_dir {
        out.params.save(&dir.join("model.ckpt"))?;
        write_jsonl(&dir.join("metrics.jsonl"), &out.history)?;
        let rows: Vec<Vec<String>> = out
            .history
            .iter()
            .map(|r| {
                vec![
                    r.epoch.to_string(),
                    format!("{:.6}", r.loss),
                    format!("{:.6}", r.dev_hits_at_1),
                    format!("{:.6}", r.dev_answer_recall),
                    format!("{:.3}", r.dev_mean_entities),
                ]
            })
            .collect();
        write_csv(
            &dir.join("report.csv"),
            &["epoch", "loss", "dev_hits_at_1", "dev_answer_recall", "dev_mean_entities"],
            &rows,
        )?;
        Manifest::new("train", cfg).write(dir)?;
    }
    info!("best epoch {:?}", out.best_epoch);
    Ok(out)
}

pub fn run_eval(cfg: &RunConfig, ds: &Dataset, params: &ModelParams, split: &str, jobs: usize) -> Result<Metrics> {
    cfg.validate()?;
    let outcomes = evaluate_outcomes(params, ds.questions(split)?, ds.stores(), &cfg.engine(), jobs)?;
    Ok(summarize(&outcomes))
}

/// Writes `eval_{split}.json` and `eval_{split}.csv` into `dir`.
pub fn write_eval(dir: &Path, split: &str, m: &Metrics) -> Result<()> {
    write_json(&dir.join(format!("eval_{split}.json")), m)?;
    write_csv(
        &dir.join(format!("eval_{split}.csv")),
        &["questions", "hits_at_1", "answer_recall", "mean_entities", "mean_facts", "mean_docs"],
        &[vec![
            m.questions.to_string(),
            format!("{:.6}", m.hits_at_1),
            format!("{:.6}", m.answer_recall),
            format!("{:.3}", m.mean_entities),
            format!("{:.3}", m.mean_facts),
            format!("{:.3}", m.mean_docs),
        ]],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    /// PageRank-Nibble neighbourhood; the budget is `m`.
    Ppr,
    /// Single-shot IDF sentence retrieval; the budget is the sentence count.
    Idf,
    /// Trained iterative retrieval; the budget is `k`.
    Pullnet,
}

impl std::str::FromStr for SweepMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppr" => Ok(SweepMethod::Ppr),
            "idf" => Ok(SweepMethod::Idf),
            "pullnet" => Ok(SweepMethod::Pullnet),
            other => Err(Error::Config(format!("unknown sweep method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: usize,
    pub mean_recall: f64,
    pub mean_entities: f64,
    pub mean_facts: f64,
}

pub const SWEEP_HEADER: [&str; 4] = ["budget", "mean_recall", "mean_entities", "mean_facts"];

/// Answer recall and graph size of one retrieval method at each budget.
/// `params` is required for [`SweepMethod::Pullnet`].
pub fn recall_sweep(
    cfg: &RunConfig,
    ds: &Dataset,
    questions: &[Question],
    method: SweepMethod,
    params: Option<&ModelParams>,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let stores = ds.stores();
    let mut rows = Vec::with_capacity(cfg.budgets.len());
    for &budget in &cfg.budgets {
        let build = |q: &Question| -> Result<QuestionSubgraph> {
            match method {
                SweepMethod::Ppr => heuristic_subgraph(stores, q, &PprConfig { m: budget, ..cfg.ppr }, 0),
                SweepMethod::Idf => idf_subgraph(stores, q, budget),
                SweepMethod::Pullnet => {
                    let params = params.ok_or_else(|| Error::Config("the pullnet sweep needs a model".into()))?;
                    let ecfg = crate::engine::EngineConfig { k: budget, ..cfg.engine() };
                    Ok(run_inference(q, params, stores, &ecfg)?.subgraph)
                }
            }
        };
        let sizes = par_map(questions, jobs, |q| {
            let g = build(q)?;
            let hit = q.answers.iter().any(|&a| g.contains_entity(a));
            Ok((hit, g.num_entities(), g.num_facts()))
        })?;
        let n = sizes.len().max(1) as f64;
        rows.push(SweepRow {
            budget,
            mean_recall: sizes.iter().filter(|s| s.0).count() as f64 / n,
            mean_entities: sizes.iter().map(|s| s.1 as f64).sum::<f64>() / n,
            mean_facts: sizes.iter().map(|s| s.2 as f64).sum::<f64>() / n,
        });
    }
    Ok(rows)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.budget.to_string(),
                format!("{:.6}", r.mean_recall),
                format!("{:.3}", r.mean_entities),
                format!("{:.3}", r.mean_facts),
            ]
        })
        .collect();
    write_csv(path, &SWEEP_HEADER, &rows)
}
