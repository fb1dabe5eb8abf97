//! One-shot retrieval baselines: a PageRank-Nibble neighbourhood of the
//! question entities on the KB side and IDF-ranked sentences on the text side.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::{Question, Stores};
use crate::error::{Error, Result};
use crate::graph::QuestionSubgraph;
use crate::ids::{EntityId, FactId};
use crate::kb::KbIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PprConfig {
    /// Teleport probability.
    pub alpha: f64,
    /// Push tolerance, relative to degree.
    pub epsilon: f64,
    /// Number of top-mass entities kept.
    pub m: usize,
    /// Entities further than this from every question entity are discarded.
    pub k_hops: u32,
}

impl Default for PprConfig {
    fn default() -> Self {
        PprConfig {
            alpha: 0.15,
            epsilon: 1e-6,
            m: 100,
            k_hops: 3,
        }
    }
}

impl PprConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("PPR epsilon must be positive".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        Ok(())
    }
}

/// Approximate PageRank vector `p` and the residual `r` left at exit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PushResult {
    pub p: BTreeMap<EntityId, f64>,
    pub r: BTreeMap<EntityId, f64>,
    pub pushes: usize,
}

/// Lazy-walk push approximation of personalised PageRank seeded uniformly
/// on `seeds`. Degrees count incident facts, so parallel facts weigh twice.
pub fn pagerank_nibble(kb: &KbIndex, seeds: &BTreeSet<EntityId>, cfg: &PprConfig) -> Result<PushResult> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::NoQuestionEntities);
    }
    for &s in seeds {
        if !kb.contains_entity(s) {
            return Err(Error::UnknownEntity(s.0));
        }
    }
    let mut p: BTreeMap<EntityId, f64> = BTreeMap::new();
    let mut r: BTreeMap<EntityId, f64> = BTreeMap::new();
    let share = 1.0 / seeds.len() as f64;
    for &s in seeds {
        r.insert(s, share);
    }
    let active = |v: EntityId, rv: f64| {
        let d = kb.degree(v);
        if d == 0 {
            rv > 0.0
        } else {
            rv >= cfg.epsilon * d as f64
        }
    };
    let mut work: BTreeSet<EntityId> = seeds.iter().copied().filter(|&s| active(s, share)).collect();
    let mut pushes = 0;
    while let Some(v) = work.pop_first() {
        let rv = r[&v];
        if !active(v, rv) {
            continue;
        }
        pushes += 1;
        let d = kb.degree(v);
        if d == 0 {
            *p.entry(v).or_insert(0.0) += rv;
            r.insert(v, 0.0);
            continue;
        }
        *p.entry(v).or_insert(0.0) += cfg.alpha * rv;
        let stay = (1.0 - cfg.alpha) * rv / 2.0;
        r.insert(v, stay);
        let spread = (1.0 - cfg.alpha) * rv / (2.0 * d as f64);
        for u in kb.neighbors(v) {
            let ru = r.entry(u).or_insert(0.0);
            *ru += spread;
            if active(u, *ru) {
                work.insert(u);
            }
        }
        if active(v, r[&v]) {
            work.insert(v);
        }
    }
    Ok(PushResult { p, r, pushes })
}

/// Top `m` entities by mass, ties by ascending id.
pub fn top_by_mass(p: &BTreeMap<EntityId, f64>, m: usize) -> Vec<EntityId> {
    let mut v: Vec<(EntityId, f64)> = p.iter().filter(|(_, &x)| x > 0.0).map(|(&e, &x)| (e, x)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(m).map(|(e, _)| e).collect()
}

/// Entity set of the KB side of the heuristic subgraph. Question entities
/// are always kept.
pub fn ppr_entities(kb: &KbIndex, q_entities: &BTreeSet<EntityId>, cfg: &PprConfig) -> Result<BTreeSet<EntityId>> {
    let seeds: BTreeSet<EntityId> = q_entities.iter().copied().filter(|&e| kb.contains_entity(e)).collect();
    let mut out = q_entities.clone();
    if seeds.is_empty() {
        return Ok(out);
    }
    let push = pagerank_nibble(kb, &seeds, cfg)?;
    let dist = kb.bfs(seeds.iter().copied(), cfg.k_hops);
    out.extend(
        top_by_mass(&push.p, cfg.m)
            .into_iter()
            .filter(|e| dist[e.index()] <= cfg.k_hops),
    );
    Ok(out)
}

/// One-shot subgraph: the PPR entity set with every fact joining two of its
/// members, plus the `text_budget` best sentences for the whole question and
/// the entities they mention. A zero `text_budget` gives the KB-only
/// baseline; an empty KB gives the single-shot IDF baseline.
pub fn heuristic_subgraph(
    stores: Stores<'_>,
    question: &Question,
    cfg: &PprConfig,
    text_budget: usize,
) -> Result<QuestionSubgraph> {
    let mut g = QuestionSubgraph::new(question.tokens.clone(), question.entities.clone())?;
    let entities = ppr_entities(stores.kb, &question.entities, cfg)?;
    let mut facts: BTreeSet<FactId> = BTreeSet::new();
    for &e in &entities {
        if !stores.kb.contains_entity(e) {
            continue;
        }
        for &f in stores.kb.incident(e) {
            if stores.kb.fact(f).other(e).is_some_and(|o| entities.contains(&o)) {
                facts.insert(f);
            }
        }
    }
    let docs = stores.corpus.retrieve(&question.tokens, text_budget);
    let mut all = entities;
    for &d in &docs {
        all.extend(stores.corpus.pull_entities(d)?);
    }
    g.update(stores.kb, stores.corpus, all, facts, docs, 1);
    Ok(g)
}

/// Single-shot text retrieval: the question entities plus the
/// `text_budget` best sentences for the whole question and their entities.
pub fn idf_subgraph(stores: Stores<'_>, question: &Question, text_budget: usize) -> Result<QuestionSubgraph> {
    let mut g = QuestionSubgraph::new(question.tokens.clone(), question.entities.clone())?;
    let docs = stores.corpus.retrieve(&question.tokens, text_budget);
    let mut all = question.entities.clone();
    for &d in &docs {
        all.extend(stores.corpus.pull_entities(d)?);
    }
    g.update(stores.kb, stores.corpus, all, [], docs, 1);
    Ok(g)
}
