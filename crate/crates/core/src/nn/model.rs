//! Question encoder, fact relevance scorer, heterogeneous graph
//! convolution and the two entity classification heads.
//!
//! Per layer `l`, entity states are updated as
//!
//! ```text
//! h_e' = relu( W_self h_e
//!            + W_fact · mean_{(f, e)} σ(h_r·h_q) (rel_emb[r] + h_other)
//!            + W_out  · mean_{mentions of e} lstm_state(end of mention)
//!            + W_q h_q )
//! ```
//!
//! where each document is re-read by the shared LSTM with
//! `word_emb[w_i] + Σ_{mentions covering i} W_in h_e` as input, so entity
//! states flow into documents and mention states flow back out.
//! Initial states are `entity_emb[e] + b_q·[e is a question entity]`.

use std::collections::BTreeMap;

use super::mat::{matmul, sigmoid, Mat};
use super::params::*;
use super::tape::{Tape, Var};
use crate::corpus::CorpusIndex;
use crate::error::{Error, Result};
use crate::graph::{NodeRef, QuestionSubgraph};
use crate::ids::{EntityId, RelationId};
use crate::kb::KbIndex;

/// Which classification head to apply to the shared trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Pull,
    Answer,
}

impl Head {
    fn params(self) -> (usize, usize) {
        match self {
            Head::Pull => (PULL_W, PULL_B),
            Head::Answer => (ANSWER_W, ANSWER_B),
        }
    }
}

fn lstm_step(t: &mut Tape, n: usize, x: Var, h: Var, c: Var) -> (Var, Var) {
    let w = t.param(LSTM_W);
    let b = t.param(LSTM_B);
    let xh = t.concat_cols(x, h);
    let z = t.matmul(xh, w);
    let z = t.add_row(z, b);
    let i = t.slice_cols(z, 0, n);
    let i = t.sigmoid(i);
    let f = t.slice_cols(z, n, 2 * n);
    let f = t.sigmoid(f);
    let o = t.slice_cols(z, 2 * n, 3 * n);
    let o = t.sigmoid(o);
    let g = t.slice_cols(z, 3 * n, 4 * n);
    let g = t.tanh(g);
    let fc = t.mul(f, c);
    let ig = t.mul(i, g);
    let c = t.add(fc, ig);
    let tc = t.tanh(c);
    let h = t.mul(o, tc);
    (h, c)
}

/// Last LSTM state over the question's word embeddings (1×n).
pub fn question_var(t: &mut Tape, params: &ModelParams, tokens: &[String]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    let n = params.hidden();
    let mut h = t.constant(Mat::zeros(1, n));
    let mut c = t.constant(Mat::zeros(1, n));
    for id in params.word_ids(tokens) {
        let x = t.gather(WORD_EMB, vec![id]);
        (h, c) = lstm_step(t, n, x, h, c);
    }
    Ok(h)
}

/// Relevance logits `h_r·h_q` for every relation (|R|×1).
pub fn relation_logits_var(t: &mut Tape, h_q: Var) -> Var {
    let rel = t.param(RELATION_EMB);
    t.matmul_bt(rel, h_q)
}

struct DocStep {
    words: Vec<usize>,
    inject_docs: Vec<usize>,
    inject_entities: Vec<Option<usize>>,
    emit_docs: Vec<Option<usize>>,
    emit_entities: Vec<usize>,
}

/// Index arrays describing one subgraph in canonical order (ascending keys).
pub struct GraphLayout {
    pub entities: Vec<EntityId>,
    q_flag: Vec<f64>,
    edge_relation: Vec<usize>,
    edge_target: Vec<usize>,
    edge_other: Vec<Option<usize>>,
    num_docs: usize,
    steps: Vec<DocStep>,
}

impl GraphLayout {
    pub fn new(params: &ModelParams, g: &QuestionSubgraph, kb: &KbIndex, corpus: &CorpusIndex) -> Self {
        let entities: Vec<EntityId> = g.entities().collect();
        let row: BTreeMap<EntityId, usize> = entities.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let q_flag = entities
            .iter()
            .map(|e| if g.q_entities().contains(e) { 1.0 } else { 0.0 })
            .collect();

        let mut edge_relation = Vec::new();
        let mut edge_target = Vec::new();
        let mut edge_other = Vec::new();
        for &(node, e) in g.edges() {
            if let NodeRef::Fact(f) = node {
                let fact = kb.fact(f);
                let other = fact.other(e).unwrap_or(e);
                edge_relation.push(fact.relation.index());
                edge_target.push(row[&e]);
                edge_other.push(row.get(&other).copied());
            }
        }

        // documents that carry at least one in-graph mention
        let mut docs = Vec::new();
        for d in g.docs() {
            let doc = &corpus.docs()[d.index()];
            let mentions: Vec<_> = doc
                .mentions
                .iter()
                .filter_map(|m| row.get(&m.entity).map(|&r| (m.start, m.end, r)))
                .collect();
            if !mentions.is_empty() {
                docs.push((params.word_ids(&doc.tokens), mentions));
            }
        }
        let max_len = docs.iter().map(|(w, _)| w.len()).max().unwrap_or(0);
        let steps = (0..max_len)
            .map(|i| {
                let mut step = DocStep {
                    words: docs.iter().map(|(w, _)| w.get(i).copied().unwrap_or(UNK)).collect(),
                    inject_docs: Vec::new(),
                    inject_entities: Vec::new(),
                    emit_docs: Vec::new(),
                    emit_entities: Vec::new(),
                };
                for (d, (_, mentions)) in docs.iter().enumerate() {
                    for &(start, end, r) in mentions {
                        if start <= i && i < end {
                            step.inject_docs.push(d);
                            step.inject_entities.push(Some(r));
                        }
                        if end - 1 == i {
                            step.emit_docs.push(Some(d));
                            step.emit_entities.push(r);
                        }
                    }
                }
                step
            })
            .collect();

        GraphLayout {
            entities,
            q_flag,
            edge_relation,
            edge_target,
            edge_other,
            num_docs: docs.len(),
            steps,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }
}

/// Final entity states (N×n) after all graph layers.
pub fn graph_var(t: &mut Tape, params: &ModelParams, layout: &GraphLayout, h_q: Var, rel_logits: Var) -> Var {
    let n = params.hidden();
    let num = layout.num_entities();
    let rows = layout.entities.iter().map(|e| e.index()).collect();
    let emb = t.gather(ENTITY_EMB, rows);
    let flag = t.constant(Mat::column(layout.q_flag.clone()));
    let bq = t.param(QUESTION_FLAG);
    let flag = t.matmul(flag, bq);
    let mut h = t.add_col(emb, flag);

    let facts = if layout.edge_target.is_empty() {
        None
    } else {
        let rel = t.gather(RELATION_EMB, layout.edge_relation.clone());
        let gate = t.sigmoid(rel_logits);
        let gate = t.gather_rows(gate, layout.edge_relation.iter().map(|&r| Some(r)).collect());
        Some((rel, gate))
    };
    let words: Vec<Var> = layout
        .steps
        .iter()
        .map(|s| t.gather(WORD_EMB, s.words.clone()))
        .collect();
    let has_doc_messages = layout.steps.iter().any(|s| !s.emit_docs.is_empty());

    for l in 0..params.config.layers {
        let w_self = t.param(layer_param(l, LayerWeight::SelfLoop));
        let mut acc = t.matmul(h, w_self);

        if let Some((rel, gate)) = facts {
            let other = t.gather_rows(h, layout.edge_other.clone());
            let msg = t.add(rel, other);
            let msg = t.scale_rows(msg, gate);
            let agg = t.segment_mean(msg, layout.edge_target.clone(), num);
            let w_fact = t.param(layer_param(l, LayerWeight::Fact));
            let m = t.matmul(agg, w_fact);
            acc = t.add(acc, m);
        }

        if has_doc_messages {
            let w_in = t.param(layer_param(l, LayerWeight::DocIn));
            let into_docs = t.matmul(h, w_in);
            let mut hs = t.constant(Mat::zeros(layout.num_docs, n));
            let mut cs = t.constant(Mat::zeros(layout.num_docs, n));
            let mut outs = Vec::new();
            let mut targets = Vec::new();
            for (step, &x) in layout.steps.iter().zip(&words) {
                let mut x = x;
                if !step.inject_docs.is_empty() {
                    let inj = t.gather_rows(into_docs, step.inject_entities.clone());
                    let inj = t.segment(inj, step.inject_docs.clone(), vec![1.0; step.inject_docs.len()], layout.num_docs);
                    x = t.add(x, inj);
                }
                (hs, cs) = lstm_step(t, n, x, hs, cs);
                if !step.emit_docs.is_empty() {
                    outs.push(t.gather_rows(hs, step.emit_docs.clone()));
                    targets.extend_from_slice(&step.emit_entities);
                }
            }
            let msgs = t.concat_rows(outs);
            let agg = t.segment_mean(msgs, targets, num);
            let w_out = t.param(layer_param(l, LayerWeight::DocOut));
            let m = t.matmul(agg, w_out);
            acc = t.add(acc, m);
        }

        let w_q = t.param(layer_param(l, LayerWeight::Question));
        let q = t.matmul(h_q, w_q);
        acc = t.add_row(acc, q);
        h = t.relu(acc);
    }
    h
}

/// Classification logits (N×1) of one head over entity states.
pub fn head_var(t: &mut Tape, hidden: Var, head: Head) -> Var {
    let (w, b) = head.params();
    let w = t.param(w);
    let b = t.param(b);
    let z = t.matmul(hidden, w);
    t.add_row(z, b)
}

/// Entity states for a subgraph together with the question encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGraph {
    pub entities: Vec<EntityId>,
    pub hidden: Mat,
    pub h_q: Vec<f64>,
}

pub fn encode_question(params: &ModelParams, tokens: &[String]) -> Result<Vec<f64>> {
    let mut t = Tape::new(&params.tensors);
    let h = question_var(&mut t, params, tokens)?;
    Ok(t.value(h).data().to_vec())
}

/// `sigmoid(h_r · h_q)`
pub fn fact_score(params: &ModelParams, r: RelationId, h_q: &[f64]) -> Result<f64> {
    let table = &params.tensors[RELATION_EMB];
    if r.index() >= table.rows() {
        return Err(Error::UnknownRelation(r.0));
    }
    let dot: f64 = table.row(r.index()).iter().zip(h_q).map(|(a, b)| a * b).sum();
    Ok(sigmoid(dot))
}

/// Relevance score of every relation for a question encoding.
pub fn relation_scores(params: &ModelParams, h_q: &[f64]) -> Vec<f64> {
    let q = Mat::column(h_q.to_vec());
    matmul(&params.tensors[RELATION_EMB], &q).data().iter().map(|&z| sigmoid(z)).collect()
}

pub fn encode_graph(
    params: &ModelParams,
    g: &QuestionSubgraph,
    kb: &KbIndex,
    corpus: &CorpusIndex,
    h_q: &[f64],
) -> EncodedGraph {
    let layout = GraphLayout::new(params, g, kb, corpus);
    let mut t = Tape::new(&params.tensors);
    let hq = t.constant(Mat::row_vector(h_q.to_vec()));
    let logits = relation_logits_var(&mut t, hq);
    let h = graph_var(&mut t, params, &layout, hq, logits);
    EncodedGraph {
        entities: layout.entities,
        hidden: t.value(h).clone(),
        h_q: h_q.to_vec(),
    }
}

fn classify(params: &ModelParams, eg: &EncodedGraph, head: Head) -> BTreeMap<EntityId, f64> {
    let (w, b) = head.params();
    let logits = matmul(&eg.hidden, &params.tensors[w]);
    let bias = params.tensors[b].data()[0];
    eg.entities
        .iter()
        .zip(logits.data())
        .map(|(&e, &z)| (e, sigmoid(z + bias)))
        .collect()
}

/// Probability that each entity node should be expanded next.
pub fn classify_pullnodes(params: &ModelParams, eg: &EncodedGraph) -> BTreeMap<EntityId, f64> {
    classify(params, eg, Head::Pull)
}

/// Probability that each entity node answers the question.
pub fn classify_answer(params: &ModelParams, eg: &EncodedGraph) -> BTreeMap<EntityId, f64> {
    classify(params, eg, Head::Answer)
}

/// Entities by descending probability, ties by ascending id.
pub fn rank(probs: &BTreeMap<EntityId, f64>) -> Vec<(EntityId, f64)> {
    let mut v: Vec<(EntityId, f64)> = probs.iter().map(|(&e, &p)| (e, p)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}
