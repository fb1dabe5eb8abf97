//! The heterogeneous question subgraph.
//!
//! Nodes are entities, facts and documents, stored by key; the backing
//! [`KbIndex`] and [`CorpusIndex`] remain the source of truth. Edges always
//! pair an entity with a fact or a document, and are kept closed: an edge
//! exists exactly when both nodes are present and the fact has the entity as
//! an endpoint (or the document mentions it).

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusIndex;
use crate::error::{Error, Result};
use crate::ids::{DocId, EntityId, FactId};
use crate::kb::KbIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "key", rename_all = "lowercase")]
pub enum NodeRef {
    Entity(EntityId),
    Fact(FactId),
    Text(DocId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub added_at: u32,
    pub pulled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionSubgraph {
    question: Vec<String>,
    q_entities: BTreeSet<EntityId>,
    entities: BTreeMap<EntityId, EntityNode>,
    facts: BTreeMap<FactId, u32>,
    docs: BTreeMap<DocId, u32>,
    /// (fact or text node, entity)
    edges: BTreeSet<(NodeRef, EntityId)>,
    iteration: u32,
}

impl QuestionSubgraph {
    pub fn new(question: Vec<String>, q_entities: BTreeSet<EntityId>) -> Result<Self> {
        if q_entities.is_empty() {
            return Err(Error::NoQuestionEntities);
        }
        let entities = q_entities
            .iter()
            .map(|&e| (e, EntityNode { added_at: 0, pulled: false }))
            .collect();
        Ok(QuestionSubgraph {
            question,
            q_entities,
            entities,
            facts: BTreeMap::new(),
            docs: BTreeMap::new(),
            edges: BTreeSet::new(),
            iteration: 0,
        })
    }

    pub fn question(&self) -> &[String] {
        &self.question
    }

    pub fn q_entities(&self) -> &BTreeSet<EntityId> {
        &self.q_entities
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn entity_nodes(&self) -> &BTreeMap<EntityId, EntityNode> {
        &self.entities
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.entities.keys().copied()
    }

    pub fn facts(&self) -> impl Iterator<Item = FactId> + '_ {
        self.facts.keys().copied()
    }

    pub fn docs(&self) -> impl Iterator<Item = DocId> + '_ {
        self.docs.keys().copied()
    }

    pub fn edges(&self) -> &BTreeSet<(NodeRef, EntityId)> {
        &self.edges
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        self.entities.contains_key(&e)
    }

    pub fn contains_fact(&self, f: FactId) -> bool {
        self.facts.contains_key(&f)
    }

    pub fn contains_doc(&self, d: DocId) -> bool {
        self.docs.contains_key(&d)
    }

    pub fn is_pulled(&self, e: EntityId) -> bool {
        self.entities.get(&e).is_some_and(|n| n.pulled)
    }

    /// Entity nodes not yet expanded, ascending.
    pub fn unpulled(&self) -> Vec<EntityId> {
        self.entities
            .iter()
            .filter(|(_, n)| !n.pulled)
            .map(|(&e, _)| e)
            .collect()
    }

    /// Adds nodes discovered during iteration `iteration` and closes the edge
    /// set, including edges between new and pre-existing nodes. Re-adding a
    /// node keeps its original `added_at`.
    pub fn update(
        &mut self,
        kb: &KbIndex,
        corpus: &CorpusIndex,
        new_entities: impl IntoIterator<Item = EntityId>,
        new_facts: impl IntoIterator<Item = FactId>,
        new_docs: impl IntoIterator<Item = DocId>,
        iteration: u32,
    ) {
        self.iteration = self.iteration.max(iteration);
        let mut fresh_entities = Vec::new();
        for e in new_entities {
            if let Entry::Vacant(slot) = self.entities.entry(e) {
                slot.insert(EntityNode { added_at: iteration, pulled: false });
                fresh_entities.push(e);
            }
        }
        let mut fresh_facts = Vec::new();
        for f in new_facts {
            if let Entry::Vacant(slot) = self.facts.entry(f) {
                slot.insert(iteration);
                fresh_facts.push(f);
            }
        }
        let mut fresh_docs = Vec::new();
        for d in new_docs {
            if let Entry::Vacant(slot) = self.docs.entry(d) {
                slot.insert(iteration);
                fresh_docs.push(d);
            }
        }

        for &f in &fresh_facts {
            let fact = kb.fact(f);
            for e in [fact.subject, fact.object] {
                if self.entities.contains_key(&e) {
                    self.edges.insert((NodeRef::Fact(f), e));
                }
            }
        }
        for &d in &fresh_docs {
            if let Ok(doc) = corpus.doc(d) {
                for m in &doc.mentions {
                    if self.entities.contains_key(&m.entity) {
                        self.edges.insert((NodeRef::Text(d), m.entity));
                    }
                }
            }
        }
        for &e in &fresh_entities {
            for &f in kb.incident(e) {
                if self.facts.contains_key(&f) {
                    self.edges.insert((NodeRef::Fact(f), e));
                }
            }
            for &d in corpus.docs_mentioning(e) {
                if self.docs.contains_key(&d) {
                    self.edges.insert((NodeRef::Text(d), e));
                }
            }
        }
    }

    /// Marks entities as expanded. Idempotent.
    pub fn mark_pulled(&mut self, entities: &[EntityId]) -> Result<()> {
        if let Some(e) = entities.iter().find(|e| !self.entities.contains_key(e)) {
            return Err(Error::NotInGraph(e.0));
        }
        for e in entities {
            if let Some(n) = self.entities.get_mut(e) {
                n.pulled = true;
            }
        }
        Ok(())
    }

    /// Canonical JSON rendering (keys ascending within each kind).
    pub fn to_debug_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct EntityRow {
            id: EntityId,
            added_at: u32,
            pulled: bool,
            question: bool,
        }
        let entities: Vec<EntityRow> = self
            .entities
            .iter()
            .map(|(&id, n)| EntityRow {
                id,
                added_at: n.added_at,
                pulled: n.pulled,
                question: self.q_entities.contains(&id),
            })
            .collect();
        let edges: Vec<(NodeRef, NodeRef)> = self
            .edges
            .iter()
            .map(|&(node, e)| (node, NodeRef::Entity(e)))
            .collect();
        serde_json::json!({
            "question": self.question,
            "iteration": self.iteration,
            "entities": entities,
            "facts": self.facts.keys().collect::<Vec<_>>(),
            "docs": self.docs.keys().collect::<Vec<_>>(),
            "edges": edges,
        })
    }
}

/// Edge set mandated by the current node sets, recomputed from scratch.
pub fn closure_edges(g: &QuestionSubgraph, kb: &KbIndex, corpus: &CorpusIndex) -> BTreeSet<(NodeRef, EntityId)> {
    let mut edges = BTreeSet::new();
    for f in g.facts() {
        let fact = kb.fact(f);
        for e in [fact.subject, fact.object] {
            if g.contains_entity(e) {
                edges.insert((NodeRef::Fact(f), e));
            }
        }
    }
    for d in g.docs() {
        for m in &corpus.docs()[d.index()].mentions {
            if g.contains_entity(m.entity) {
                edges.insert((NodeRef::Text(d), m.entity));
            }
        }
    }
    edges
}
