//! Independent reference implementations used by the property tests and
//! the acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use pullnet::baselines::{pagerank_nibble, PprConfig, PushResult};
use pullnet::corpus::{CorpusIndex, Lexicon};
use pullnet::io::Knowledge;
use pullnet::nn::{ModelConfig, Tape};
use pullnet::supervision::SupervisionLabels;
use pullnet::synth::{generate, SynthConfig};
use pullnet::train::{question_loss_var, word_vocab};
use pullnet::{DocId, EngineConfig, EntityId, Fact, KbIndex, Mode, ModelParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random simple graph on `n` named nodes with relation-labelled edges,
/// no self-loops and no duplicate triples.
pub fn random_triples(rng: &mut impl Rng, n: usize, edges: usize, relations: usize) -> Vec<(String, String, String)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..edges {
        let s = rng.gen_range(0..n);
        let o = rng.gen_range(0..n);
        let r = rng.gen_range(0..relations.max(1));
        if s == o || !seen.insert((s, r, o)) {
            continue;
        }
        out.push((format!("e{s}"), format!("r{r}"), format!("e{o}")));
    }
    out
}

/// KB over `n` nodes where every node exists even when isolated; entity
/// `EntityId(i)` is named `e{i}`.
pub fn kb_with_nodes(n: usize, triples: &[(String, String, String)]) -> KbIndex {
    let mut b = pullnet::kb::KbBuilder::new();
    for i in 0..n {
        b.add_entity(&format!("e{i}"));
    }
    for (i, (s, r, o)) in triples.iter().enumerate() {
        b.add(i + 1, s, r, o).unwrap();
    }
    b.finish()
}

/// All-pairs distances by Floyd–Warshall over the undirected entity graph.
pub fn floyd_warshall(kb: &KbIndex) -> Vec<Vec<u32>> {
    let n = kb.num_entities();
    let inf = u32::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for f in kb.facts() {
        let (s, o) = (f.subject.index(), f.object.index());
        d[s][o] = d[s][o].min(1);
        d[o][s] = d[o][s].min(1);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    for row in &mut d {
        for x in row.iter_mut() {
            if *x >= inf {
                *x = u32::MAX;
            }
        }
    }
    d
}

/// Entities on some shortest path from a source to an answer, found by
/// enumerating every simple path.
pub fn shortest_path_entities_by_enumeration(
    kb: &KbIndex,
    sources: &BTreeSet<EntityId>,
    answers: &BTreeSet<EntityId>,
) -> BTreeMap<EntityId, u32> {
    let n = kb.num_entities();
    let mut adj = vec![BTreeSet::new(); n];
    for f in kb.facts() {
        adj[f.subject.index()].insert(f.object.index());
        adj[f.object.index()].insert(f.subject.index());
    }
    // all simple paths from any source, grouped by endpoint
    let mut paths: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    fn dfs(v: usize, adj: &[BTreeSet<usize>], path: &mut Vec<usize>, on: &mut [bool], out: &mut BTreeMap<usize, Vec<Vec<usize>>>) {
        out.entry(v).or_default().push(path.clone());
        for &u in &adj[v] {
            if !on[u] {
                on[u] = true;
                path.push(u);
                dfs(u, adj, path, on, out);
                path.pop();
                on[u] = false;
            }
        }
    }
    for &s in sources {
        let mut on = vec![false; n];
        on[s.index()] = true;
        dfs(s.index(), &adj, &mut vec![s.index()], &mut on, &mut paths);
    }
    // the shortest distance to anything is the length of its shortest path
    let dist = |v: usize| paths.get(&v).and_then(|ps| ps.iter().map(|p| p.len() - 1).min());
    let mut out = BTreeMap::new();
    for &a in answers {
        let Some(best) = dist(a.index()) else { continue };
        for p in &paths[&a.index()] {
            if p.len() - 1 == best {
                for &v in p {
                    out.insert(EntityId(v as u32), dist(v).unwrap() as u32);
                }
            }
        }
    }
    out
}

/// Documents mentioning `e`, ranked by summed IDF of the distinct question
/// words they contain, recomputed from the raw documents.
pub fn brute_force_pull_docs(corpus: &CorpusIndex, e: EntityId, question: &[String], budget: usize) -> Vec<DocId> {
    let docs = corpus.docs();
    let n = docs.len() as f64;
    let idf = |w: &str| {
        let df = docs.iter().filter(|d| d.tokens.iter().any(|t| t == w)).count() as f64;
        ((n + 1.0) / (df + 1.0)).ln() + 1.0
    };
    let mut scored: Vec<(f64, DocId)> = docs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.mentions.iter().any(|m| m.entity == e))
        .map(|(i, d)| {
            // same summation order as the index: first occurrence in the question
            let mut seen = BTreeSet::new();
            let s: f64 = question
                .iter()
                .filter(|w| seen.insert(w.as_str()))
                .filter(|w| d.tokens.iter().any(|t| t == *w))
                .map(|w| idf(w))
                .sum();
            (s, DocId(i as u32))
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(budget).map(|(_, d)| d).collect()
}

pub fn linear_scan_facts(kb: &KbIndex, e: EntityId) -> Vec<Fact> {
    kb.facts().iter().copied().filter(|f| f.subject == e || f.object == e).collect()
}

/// Exact personalised PageRank of the lazy walk by dense power iteration:
/// `p = alpha·s + (1 - alpha)·p·W` with `W = (I + D⁻¹A)/2`; isolated nodes
/// keep their mass.
pub fn dense_ppr(kb: &KbIndex, seeds: &BTreeSet<EntityId>, alpha: f64, tol: f64) -> Vec<f64> {
    let n = kb.num_entities();
    let mut a = vec![vec![0.0; n]; n];
    for f in kb.facts() {
        let (s, o) = (f.subject.index(), f.object.index());
        a[s][o] += 1.0;
        a[o][s] += 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut s = vec![0.0; n];
    for e in seeds {
        s[e.index()] = 1.0 / seeds.len() as f64;
    }
    let mut p = s.clone();
    for _ in 0..100_000 {
        let mut next: Vec<f64> = s.iter().map(|x| alpha * x).collect();
        for u in 0..n {
            if p[u] == 0.0 {
                continue;
            }
            if deg[u] == 0.0 {
                next[u] += (1.0 - alpha) * p[u];
                continue;
            }
            next[u] += (1.0 - alpha) * p[u] / 2.0;
            for v in 0..n {
                if a[u][v] > 0.0 {
                    next[v] += (1.0 - alpha) * p[u] * a[u][v] / (2.0 * deg[u]);
                }
            }
        }
        let diff: f64 = next.iter().zip(&p).map(|(x, y)| (x - y).abs()).sum();
        p = next;
        if diff < tol {
            break;
        }
    }
    p
}

/// Checks the push termination invariant and the per-node error bound
/// against the dense solution. Returns a description of the first failure.
pub fn check_ppr(kb: &KbIndex, seeds: &BTreeSet<EntityId>, cfg: &PprConfig) -> Result<PushResult, String> {
    let res = pagerank_nibble(kb, seeds, cfg).map_err(|e| e.to_string())?;
    let exact = dense_ppr(kb, seeds, cfg.alpha, 1e-12);
    let total: f64 = res.p.values().sum::<f64>() + res.r.values().sum::<f64>();
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("mass not conserved: {total}"));
    }
    for i in 0..kb.num_entities() {
        let e = EntityId(i as u32);
        let d = kb.degree(e) as f64;
        let r = res.r.get(&e).copied().unwrap_or(0.0);
        if d > 0.0 && r >= cfg.epsilon * d {
            return Err(format!("residual {r} at {i} not below {}", cfg.epsilon * d));
        }
        let p = res.p.get(&e).copied().unwrap_or(0.0);
        // the dense solution carries its own ~1e-12 convergence error
        if (p - exact[i]).abs() > cfg.epsilon * d + 1e-11 {
            return Err(format!("node {i}: push {p} exact {} bound {}", exact[i], cfg.epsilon * d));
        }
    }
    Ok(res)
}

/// A small hybrid instance for gradient checks: knowledge, one question,
/// its labels, parameters and an engine config whose budgets exceed every
/// degree so graph structure does not depend on the parameters.
pub struct GradInstance {
    pub knowledge: Knowledge,
    pub question: pullnet::Question,
    pub labels: SupervisionLabels,
    pub params: ModelParams,
    pub ecfg: EngineConfig,
}

pub fn grad_instance(seed: u64) -> GradInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hops = 1 + (seed % 3) as u32;
    let data = generate(&SynthConfig {
        n_entities: 30 + rng.gen_range(0..15),
        n_facts: 50 + rng.gen_range(0..20),
        n_questions: 4,
        hops: vec![hops],
        corpus_coverage: 0.7,
        seed,
        ..Default::default()
    })
    .unwrap();
    let knowledge = Knowledge::build(&data.knowledge).unwrap();
    let (qs, _) = knowledge.link_questions(&data.questions[&hops][0]);
    let question = qs.into_iter().next().unwrap();
    let labels = SupervisionLabels::build(&knowledge.kb, &question.entities, &question.answers);
    let words = word_vocab(&knowledge.corpus, [&question]);
    let cfg = ModelConfig {
        hidden: 3 + rng.gen_range(0..3),
        layers: 1 + rng.gen_range(0..2),
        words: 0,
        relations: knowledge.kb.num_relations(),
        entities: knowledge.kb.num_entities(),
    };
    let params = ModelParams::init(cfg, words, seed).unwrap();
    let ecfg = EngineConfig {
        iterations: hops,
        mode: Mode::Hybrid,
        n_facts: 10_000,
        n_docs: 10_000,
        epsilon: 0.0,
        k: 2,
    };
    GradInstance {
        knowledge,
        question,
        labels,
        params,
        ecfg,
    }
}

impl GradInstance {
    pub fn loss(&self, params: &ModelParams) -> (f64, pullnet::nn::Grads) {
        let mut t = Tape::new(&params.tensors);
        let (v, _) = question_loss_var(
            &mut t,
            params,
            &self.question,
            &self.labels,
            self.knowledge.stores(),
            &self.knowledge.kb,
            &self.ecfg,
            [1.0, 1.0, 1.0],
        )
        .unwrap();
        (t.scalar(v), t.backward(v))
    }

    /// Worst relative error per tensor between analytic and central
    /// difference gradients over up to `per_tensor` entries, preferring
    /// entries with a non-zero analytic gradient. Entries where both
    /// gradients are below `1e-8` in magnitude are compared absolutely.
    pub fn worst_errors(&self, step: f64, per_tensor: usize) -> Vec<(String, f64, usize)> {
        let (_, g) = self.loss(&self.params);
        let names = self.params.config.tensor_shapes();
        let mut params = self.params.clone();
        let mut out = Vec::new();
        for (ti, (name, _, _)) in names.iter().enumerate() {
            let grad = g.tensors[ti].data();
            let mut idx: Vec<usize> = (0..grad.len()).filter(|&j| grad[j] != 0.0).collect();
            let stride = (idx.len() / per_tensor).max(1);
            idx = idx.into_iter().step_by(stride).take(per_tensor).collect();
            if idx.is_empty() {
                idx = (0..grad.len()).step_by((grad.len() / 3).max(1)).take(3).collect();
            }
            let mut worst = 0.0f64;
            for &j in &idx {
                let old = params.tensors[ti].data()[j];
                params.tensors[ti].data_mut()[j] = old + step;
                let lp = self.loss(&params).0;
                params.tensors[ti].data_mut()[j] = old - step;
                let lm = self.loss(&params).0;
                params.tensors[ti].data_mut()[j] = old;
                let num = (lp - lm) / (2.0 * step);
                let a = grad[j];
                let scale = a.abs().max(num.abs());
                let err = if scale < 1e-8 { (a - num).abs() } else { (a - num).abs() / scale };
                worst = worst.max(err);
            }
            out.push((name.clone(), worst, idx.len()));
        }
        out
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_kb(seed: u64, max_nodes: usize, density: f64) -> KbIndex {
    let mut r = rng(seed);
    let n = r.gen_range(1..=max_nodes);
    let edges = (n as f64 * density) as usize + r.gen_range(0..=n);
    kb_with_nodes(n, &random_triples(&mut r, n, edges, 3))
}

pub fn random_subset(r: &mut impl Rng, n: usize, max: usize) -> BTreeSet<EntityId> {
    let k = r.gen_range(1..=max.min(n));
    (0..k).map(|_| EntityId(r.gen_range(0..n) as u32)).collect()
}

/// Sentences over a small vocabulary mentioning entities `e0..e{n}`.
pub fn random_corpus(seed: u64, n_entities: usize, n_docs: usize) -> CorpusIndex {
    let mut r = rng(seed);
    let words = ["alpha", "beta", "gamma", "delta", "film", "star", "year", "the", "of"];
    let mut lex = Lexicon::new();
    for i in 0..n_entities {
        lex.insert(&format!("e{i}"), EntityId(i as u32));
    }
    let sentences: Vec<String> = (0..n_docs)
        .map(|_| {
            let len = r.gen_range(1..8);
            (0..len)
                .map(|_| {
                    if r.gen_bool(0.3) {
                        format!("e{}", r.gen_range(0..n_entities))
                    } else {
                        words.choose(&mut r).unwrap().to_string()
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    CorpusIndex::build(&sentences, lex).0
}
