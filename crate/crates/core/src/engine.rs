//! The iterative pull/classify loop.
//!
//! Starting from the question entities, each of `T` iterations classifies the
//! unexpanded entity nodes, expands the most promising ones by pulling facts
//! (ranked by learned relation relevance) and documents (ranked by IDF), adds
//! the entities those mention, and closes the edge set. The answer head then
//! ranks every entity of the final graph. Question entities remain eligible
//! answers, and an entity is never expanded twice.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusIndex, Lexicon};
use crate::error::{Error, Result};
use crate::graph::QuestionSubgraph;
use crate::ids::{DocId, EntityId, FactId};
use crate::kb::{Fact, KbIndex};
use crate::nn::{self, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    KbOnly,
    TextOnly,
    Hybrid,
}

impl Mode {
    pub fn uses_kb(self) -> bool {
        matches!(self, Mode::KbOnly | Mode::Hybrid)
    }

    pub fn uses_text(self) -> bool {
        matches!(self, Mode::TextOnly | Mode::Hybrid)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kb_only" | "kb" => Ok(Mode::KbOnly),
            "text_only" | "text" => Ok(Mode::TextOnly),
            "hybrid" => Ok(Mode::Hybrid),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Number of expansion iterations `T`.
    pub iterations: u32,
    /// Entities expanded per iteration at inference time.
    pub k: usize,
    pub n_docs: usize,
    pub n_facts: usize,
    /// Training-time pull threshold.
    pub epsilon: f64,
    pub mode: Mode,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            iterations: 2,
            k: 2,
            n_docs: 10,
            n_facts: 20,
            epsilon: 0.5,
            mode: Mode::KbOnly,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        Ok(())
    }
}

/// The two knowledge sources retrieval runs against.
#[derive(Debug, Clone, Copy)]
pub struct Stores<'a> {
    pub kb: &'a KbIndex,
    pub corpus: &'a CorpusIndex,
}

/// A linked question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: u64,
    pub text: String,
    pub tokens: Vec<String>,
    pub entities: BTreeSet<EntityId>,
    pub answers: BTreeSet<EntityId>,
}

impl Question {
    /// Tokenises and links `text`; answers are resolved by entity name.
    pub fn link(id: u64, text: &str, answers: &[String], lexicon: &Lexicon, kb: &KbIndex) -> Result<Self> {
        let tokens = crate::corpus::tokenize(text);
        let entities = lexicon.link_entities(&tokens);
        let answers = answers
            .iter()
            .map(|a| kb.entity_id(a).ok_or_else(|| Error::UnknownEntityName(a.clone())))
            .collect::<Result<_>>()?;
        Ok(Question {
            id,
            text: text.to_owned(),
            tokens,
            entities,
            answers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub question_id: u64,
    pub iteration: u32,
    pub expanded: Vec<EntityId>,
    pub new_entities: usize,
    pub new_facts: usize,
    pub new_docs: usize,
    pub entities: usize,
    pub facts: usize,
    pub docs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerResult {
    pub ranked: Vec<(EntityId, f64)>,
    pub subgraph: QuestionSubgraph,
    pub trace: Vec<IterationTrace>,
}

impl AnswerResult {
    pub fn top(&self) -> Option<EntityId> {
        self.ranked.first().map(|&(e, _)| e)
    }
}

/// What one expansion retrieved.
#[derive(Debug, Clone, Default)]
pub struct Expansion {
    /// Every incident fact scored while pulling facts, deduplicated.
    pub considered: Vec<Fact>,
    pub trace: Option<IterationTrace>,
}

/// Expands `selected` using precomputed per-relation relevance scores.
pub fn expand_with_scores(
    g: &mut QuestionSubgraph,
    stores: Stores<'_>,
    cfg: &EngineConfig,
    selected: &[EntityId],
    relation_scores: &[f64],
    iteration: u32,
) -> Result<Expansion> {
    let mut considered: BTreeMap<FactId, Fact> = BTreeMap::new();
    let mut new_entities = BTreeSet::new();
    let mut new_facts = BTreeSet::new();
    let mut new_docs: BTreeSet<DocId> = BTreeSet::new();
    for &e in selected {
        if cfg.mode.uses_kb() && stores.kb.contains_entity(e) {
            let mut cands = stores.kb.candidate_facts(e)?;
            for f in &cands {
                considered.insert(f.id, *f);
            }
            let score = |f: &Fact| relation_scores.get(f.relation.index()).copied().unwrap_or(0.0);
            cands.sort_by(|a, b| score(b).total_cmp(&score(a)).then(a.id.cmp(&b.id)));
            for f in cands.into_iter().take(cfg.n_facts) {
                new_facts.insert(f.id);
                new_entities.insert(f.subject);
                new_entities.insert(f.object);
            }
        }
        if cfg.mode.uses_text() {
            for d in stores.corpus.pull_docs(e, g.question(), cfg.n_docs) {
                new_docs.insert(d);
                new_entities.extend(stores.corpus.pull_entities(d)?);
            }
        }
    }
    let before = (g.num_entities(), g.num_facts(), g.num_docs());
    g.update(stores.kb, stores.corpus, new_entities, new_facts, new_docs, iteration);
    g.mark_pulled(selected)?;
    Ok(Expansion {
        considered: considered.into_values().collect(),
        trace: Some(IterationTrace {
            question_id: 0,
            iteration,
            expanded: selected.to_vec(),
            new_entities: g.num_entities() - before.0,
            new_facts: g.num_facts() - before.1,
            new_docs: g.num_docs() - before.2,
            entities: g.num_entities(),
            facts: g.num_facts(),
            docs: g.num_docs(),
        }),
    })
}

/// Pulls facts and documents for `selected` and adds what they mention.
pub fn expand_once(
    g: &mut QuestionSubgraph,
    params: &ModelParams,
    stores: Stores<'_>,
    cfg: &EngineConfig,
    selected: &[EntityId],
) -> Result<IterationTrace> {
    let h_q = nn::encode_question(params, g.question())?;
    let scores = nn::relation_scores(params, &h_q);
    let iteration = g.iteration() + 1;
    let exp = expand_with_scores(g, stores, cfg, selected, &scores, iteration)?;
    Ok(exp.trace.expect("expansion always records a trace"))
}

/// Training-time expansion: every unexpanded entity whose pull probability
/// exceeds epsilon is expanded, then any `forced` entity still missing is
/// added as a bare node.
pub fn expand_for_training(
    g: &mut QuestionSubgraph,
    stores: Stores<'_>,
    cfg: &EngineConfig,
    pull_probs: &BTreeMap<EntityId, f64>,
    relation_scores: &[f64],
    forced: &[EntityId],
    iteration: u32,
) -> Result<Expansion> {
    let selected: Vec<EntityId> = g
        .unpulled()
        .into_iter()
        .filter(|e| pull_probs.get(e).is_some_and(|&p| p > cfg.epsilon))
        .collect();
    let exp = expand_with_scores(g, stores, cfg, &selected, relation_scores, iteration)?;
    let missing: Vec<EntityId> = forced.iter().copied().filter(|&e| !g.contains_entity(e)).collect();
    if !missing.is_empty() {
        g.update(stores.kb, stores.corpus, missing, [], [], iteration);
    }
    Ok(exp)
}

/// Top `k` of `eligible` by probability, ties by ascending id.
pub fn select_top_k(eligible: &[EntityId], probs: &BTreeMap<EntityId, f64>, k: usize) -> Vec<EntityId> {
    let mut v: Vec<(EntityId, f64)> = eligible.iter().map(|&e| (e, probs.get(&e).copied().unwrap_or(0.0))).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(e, _)| e).collect()
}

pub fn run_inference(
    question: &Question,
    params: &ModelParams,
    stores: Stores<'_>,
    cfg: &EngineConfig,
) -> Result<AnswerResult> {
    cfg.validate()?;
    let h_q = nn::encode_question(params, &question.tokens)?;
    let scores = nn::relation_scores(params, &h_q);
    let mut g = QuestionSubgraph::new(question.tokens.clone(), question.entities.clone())?;
    let mut trace = Vec::new();
    for t in 1..=cfg.iterations {
        let eligible = g.unpulled();
        let selected = if eligible.is_empty() {
            Vec::new()
        } else {
            let eg = nn::encode_graph(params, &g, stores.kb, stores.corpus, &h_q);
            let probs = nn::classify_pullnodes(params, &eg);
            select_top_k(&eligible, &probs, cfg.k)
        };
        let exp = expand_with_scores(&mut g, stores, cfg, &selected, &scores, t)?;
        let mut record = exp.trace.expect("expansion always records a trace");
        record.question_id = question.id;
        trace.push(record);
    }
    if g.num_entities() == 0 {
        return Err(Error::EmptyGraph);
    }
    let eg = nn::encode_graph(params, &g, stores.kb, stores.corpus, &h_q);
    let ranked = nn::rank(&nn::classify_answer(params, &eg));
    Ok(AnswerResult {
        ranked,
        subgraph: g,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Vocab;
    use crate::nn::{ModelConfig, UNK_TOKEN};

    // 0 Inception, 1 Nolan, 2 Interstellar, 3 DiCaprio
    fn kb() -> KbIndex {
        KbIndex::build(&[
            ("Inception", "directed_by", "Nolan"),
            ("Interstellar", "directed_by", "Nolan"),
            ("Inception", "starred", "DiCaprio"),
        ])
        .unwrap()
    }

    fn params(kb: &KbIndex) -> ModelParams {
        let cfg = ModelConfig {
            hidden: 4,
            layers: 2,
            words: 0,
            relations: kb.num_relations(),
            entities: kb.num_entities(),
        };
        ModelParams::init(cfg, Vocab::from_names([UNK_TOKEN, "who", "directed"]), 3).unwrap()
    }

    fn question() -> Question {
        Question {
            id: 7,
            text: "who directed inception".into(),
            tokens: crate::tokenize("who directed inception"),
            entities: BTreeSet::from([EntityId(0)]),
            answers: BTreeSet::from([EntityId(1)]),
        }
    }

    #[test]
    fn expand_pulls_all_incident_facts_within_budget() {
        let kb = kb();
        let corpus = CorpusIndex::empty();
        let stores = Stores { kb: &kb, corpus: &corpus };
        let p = params(&kb);
        let cfg = EngineConfig { n_facts: 10, ..Default::default() };
        let mut g = QuestionSubgraph::new(question().tokens, question().entities).unwrap();
        expand_once(&mut g, &p, stores, &cfg, &[EntityId(0)]).unwrap();
        assert_eq!(g.facts().collect::<Vec<_>>(), vec![FactId(0), FactId(2)]);
        assert_eq!(g.entities().collect::<Vec<_>>(), vec![EntityId(0), EntityId(1), EntityId(3)]);
        assert!(g.is_pulled(EntityId(0)));
    }

    #[test]
    fn fact_budget_follows_relation_scores() {
        let kb = kb();
        let corpus = CorpusIndex::empty();
        let stores = Stores { kb: &kb, corpus: &corpus };
        let cfg = EngineConfig { n_facts: 1, ..Default::default() };
        let mut g = QuestionSubgraph::new(question().tokens, question().entities).unwrap();
        // directed_by preferred
        expand_with_scores(&mut g, stores, &cfg, &[EntityId(0)], &[0.9, 0.1], 1).unwrap();
        assert_eq!(g.facts().collect::<Vec<_>>(), vec![FactId(0)]);
        let mut g = QuestionSubgraph::new(question().tokens, question().entities).unwrap();
        expand_with_scores(&mut g, stores, &cfg, &[EntityId(0)], &[0.1, 0.9], 1).unwrap();
        assert_eq!(g.facts().collect::<Vec<_>>(), vec![FactId(2)]);
    }

    #[test]
    fn text_only_never_pulls_facts() {
        let kb = kb();
        let corpus = CorpusIndex::empty();
        let stores = Stores { kb: &kb, corpus: &corpus };
        let cfg = EngineConfig { mode: Mode::TextOnly, ..Default::default() };
        let mut g = QuestionSubgraph::new(question().tokens, question().entities).unwrap();
        let exp = expand_with_scores(&mut g, stores, &cfg, &[EntityId(0)], &[0.9, 0.9], 1).unwrap();
        assert!(exp.considered.is_empty());
        assert_eq!(g.num_facts(), 0);
    }

    #[test]
    fn training_threshold_extremes() {
        let kb = kb();
        let corpus = CorpusIndex::empty();
        let stores = Stores { kb: &kb, corpus: &corpus };
        let probs = BTreeMap::from([(EntityId(0), 0.7)]);
        let cfg = EngineConfig { epsilon: 1.0, ..Default::default() };
        let mut g = QuestionSubgraph::new(question().tokens, question().entities).unwrap();
        expand_for_training(&mut g, stores, &cfg, &probs, &[0.5, 0.5], &[EntityId(1)], 1).unwrap();
        assert_eq!(g.num_facts(), 0);
        assert!(g.contains_entity(EntityId(1)));
        assert!(!g.is_pulled(EntityId(0)));

        let cfg = EngineConfig { epsilon: 0.0, ..Default::default() };
        let mut g = QuestionSubgraph::new(question().tokens, question().entities).unwrap();
        expand_for_training(&mut g, stores, &cfg, &probs, &[0.5, 0.5], &[], 1).unwrap();
        assert!(g.is_pulled(EntityId(0)));
    }

    #[test]
    fn inference_is_deterministic_and_ranks_every_entity() {
        let kb = kb();
        let corpus = CorpusIndex::empty();
        let stores = Stores { kb: &kb, corpus: &corpus };
        let p = params(&kb);
        let cfg = EngineConfig { iterations: 2, k: 10, ..Default::default() };
        let a = run_inference(&question(), &p, stores, &cfg).unwrap();
        let b = run_inference(&question(), &p, stores, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ranked.len(), a.subgraph.num_entities());
        assert_eq!(a.subgraph.num_entities(), 4);
        assert_eq!(a.trace.len(), 2);
        assert_eq!(a.trace[0].question_id, 7);
    }

    #[test]
    fn rejects_zero_iterations() {
        let cfg = EngineConfig { iterations: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!("tree".parse::<Mode>().is_err());
        assert_eq!("hybrid".parse::<Mode>().unwrap(), Mode::Hybrid);
    }
}
