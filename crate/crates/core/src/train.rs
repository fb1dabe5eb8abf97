//! Losses, optimiser, the minibatch training loop and evaluation.
//!
//! Each training question replays the full retrieval loop with teacher
//! forcing: every entity whose pull probability exceeds epsilon is expanded
//! and missed candidate intermediate entities are injected. Binary
//! cross-entropy is collected for the pull decisions of every iteration,
//! for the relevance of every fact scored during retrieval, and for the
//! answer head on the final graph; the total is a weighted mean of the three.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{expand_for_training, run_inference, EngineConfig, Question, Stores};
use crate::error::{Error, Result};
use crate::graph::QuestionSubgraph;
use crate::corpus::CorpusIndex;
use crate::kb::{KbIndex, Vocab};
use crate::nn::mat::Mat;
use crate::nn::model::{graph_var, head_var, question_var, relation_logits_var, GraphLayout, Head};
use crate::nn::{Grads, ModelParams, Tape, Var, UNK_TOKEN};
use crate::supervision::{answer_targets, pull_targets, relation_targets, SupervisionLabels};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 disables).
    pub checkpoint_interval: usize,
    /// Weights of the pull, relation and answer losses.
    pub loss_weights: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            checkpoint_interval: 1,
            loss_weights: [1.0, 1.0, 1.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 || self.weight_decay < 0.0 {
            return bad("adam_eps must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.loss_weights.iter().any(|&w| w < 0.0) || self.loss_weights.iter().sum::<f64>() <= 0.0 {
            return bad("loss weights must be non-negative with a positive sum");
        }
        Ok(())
    }
}

/// Adam with optional L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &[Mat]) -> Self {
        let zeros = || params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &Grads) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads.tensors[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j] + self.weight_decay * *w;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Per-component loss values for one question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub pull: Option<f64>,
    pub relation: Option<f64>,
    pub answer: f64,
}

struct Collected {
    logits: Vec<Var>,
    targets: Vec<f64>,
}

impl Collected {
    fn new() -> Self {
        Collected {
            logits: Vec::new(),
            targets: Vec::new(),
        }
    }

    fn bce(self, t: &mut Tape) -> Option<Var> {
        if self.targets.is_empty() {
            return None;
        }
        let z = t.concat_rows(self.logits);
        Some(t.bce_with_logits(z, self.targets))
    }
}

fn as_target(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Runs the teacher-forced retrieval loop for one question on `tape` and
/// returns the scalar loss node. `kb_complete` supplies path supervision.
#[allow(clippy::too_many_arguments)]
pub fn question_loss_var(
    t: &mut Tape,
    params: &ModelParams,
    question: &Question,
    labels: &SupervisionLabels,
    stores: Stores<'_>,
    kb_complete: &KbIndex,
    ecfg: &EngineConfig,
    weights: [f64; 3],
) -> Result<(Var, LossBreakdown)> {
    let h_q = question_var(t, params, &question.tokens)?;
    let rel_logits = relation_logits_var(t, h_q);
    let rel_scores: Vec<f64> = t.value(rel_logits).data().iter().map(|&z| crate::nn::mat::sigmoid(z)).collect();
    let mut g = QuestionSubgraph::new(question.tokens.clone(), question.entities.clone())?;

    let mut pull = Collected::new();
    let mut relation = Collected::new();
    for it in 1..=ecfg.iterations {
        let layout = GraphLayout::new(params, &g, stores.kb, stores.corpus);
        let hidden = graph_var(t, params, &layout, h_q, rel_logits);
        let logits = head_var(t, hidden, Head::Pull);
        let targets = pull_targets(labels, &g, kb_complete, it);
        let mut rows = Vec::new();
        let mut probs = BTreeMap::new();
        for (i, e) in layout.entities.iter().enumerate() {
            if let Some(&y) = targets.get(e) {
                rows.push(Some(i));
                pull.targets.push(as_target(y));
                probs.insert(*e, crate::nn::mat::sigmoid(t.value(logits).data()[i]));
            }
        }
        if !rows.is_empty() {
            pull.logits.push(t.gather_rows(logits, rows));
        }
        let forced: Vec<_> = labels.ring(it).collect();
        let exp = expand_for_training(&mut g, stores, ecfg, &probs, &rel_scores, &forced, it)?;
        if !exp.considered.is_empty() {
            let rows = exp.considered.iter().map(|f| Some(f.relation.index())).collect();
            relation.logits.push(t.gather_rows(rel_logits, rows));
            let targets = relation_targets(labels, &exp.considered, it);
            relation.targets.extend(exp.considered.iter().map(|f| as_target(targets[&f.id])));
        }
    }
    let layout = GraphLayout::new(params, &g, stores.kb, stores.corpus);
    let hidden = graph_var(t, params, &layout, h_q, rel_logits);
    let logits = head_var(t, hidden, Head::Answer);
    let targets = answer_targets(labels, &g);
    let answer = Collected {
        logits: vec![logits],
        targets: layout.entities.iter().map(|e| as_target(targets[e])).collect(),
    };

    let parts = [pull.bce(t), relation.bce(t), answer.bce(t)];
    let mut total: Option<Var> = None;
    let mut weight_sum = 0.0;
    for (part, &w) in parts.iter().zip(&weights) {
        if let Some(v) = part {
            if w == 0.0 {
                continue;
            }
            let scaled = t.scale(*v, w);
            total = Some(match total {
                Some(acc) => t.add(acc, scaled),
                None => scaled,
            });
            weight_sum += w;
        }
    }
    let total = total.ok_or_else(|| Error::Config("all active loss components have zero weight".into()))?;
    let total = t.scale(total, 1.0 / weight_sum);
    let breakdown = LossBreakdown {
        total: t.scalar(total),
        pull: parts[0].map(|v| t.scalar(v)),
        relation: parts[1].map(|v| t.scalar(v)),
        answer: parts[2].map(|v| t.scalar(v)).unwrap_or(0.0),
    };
    Ok((total, breakdown))
}

/// Loss and parameter gradients for one question. `None` when the question
/// cannot be supervised (no answer reachable in the complete KB).
pub fn question_loss(
    params: &ModelParams,
    question: &Question,
    stores: Stores<'_>,
    kb_complete: &KbIndex,
    ecfg: &EngineConfig,
    tcfg: &TrainConfig,
) -> Result<Option<(LossBreakdown, Grads)>> {
    let labels = SupervisionLabels::build(kb_complete, &question.entities, &question.answers);
    if labels.is_empty() {
        return Ok(None);
    }
    let mut t = Tape::new(&params.tensors);
    let (root, parts) = question_loss_var(&mut t, params, question, &labels, stores, kb_complete, ecfg, tcfg.loss_weights)?;
    Ok(Some((parts, t.backward(root))))
}

/// Word vocabulary over corpus and question tokens: `<unk>` first, the rest
/// sorted so the vocabulary does not depend on hash order.
pub fn word_vocab<'q>(corpus: &CorpusIndex, questions: impl IntoIterator<Item = &'q Question>) -> Vocab {
    let mut words: BTreeSet<&str> = corpus.vocabulary().collect();
    let questions: Vec<&Question> = questions.into_iter().collect();
    for q in &questions {
        words.extend(q.tokens.iter().map(String::as_str));
    }
    words.remove(UNK_TOKEN);
    Vocab::from_names(std::iter::once(UNK_TOKEN).chain(words))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub questions: usize,
    pub hits_at_1: f64,
    pub answer_recall: f64,
    pub mean_entities: f64,
    pub mean_facts: f64,
    pub mean_docs: f64,
}

/// Outcome of answering one question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub hit: bool,
    pub recalled: bool,
    pub entities: usize,
    pub facts: usize,
    pub docs: usize,
}

pub fn answer_outcome(q: &Question, params: &ModelParams, stores: Stores<'_>, ecfg: &EngineConfig) -> Result<QuestionOutcome> {
    let res = run_inference(q, params, stores, ecfg)?;
    let g = &res.subgraph;
    Ok(QuestionOutcome {
        hit: res.top().is_some_and(|e| q.answers.contains(&e)),
        recalled: q.answers.iter().any(|&a| g.contains_entity(a)),
        entities: g.num_entities(),
        facts: g.num_facts(),
        docs: g.num_docs(),
    })
}

pub fn summarize(outcomes: &[QuestionOutcome]) -> Metrics {
    let n = outcomes.len();
    if n == 0 {
        return Metrics::default();
    }
    let mean = |f: &dyn Fn(&QuestionOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n as f64;
    Metrics {
        questions: n,
        hits_at_1: mean(&|o| as_target(o.hit)),
        answer_recall: mean(&|o| as_target(o.recalled)),
        mean_entities: mean(&|o| o.entities as f64),
        mean_facts: mean(&|o| o.facts as f64),
        mean_docs: mean(&|o| o.docs as f64),
    }
}

/// Per-question outcomes, computed on up to `jobs` threads. Results are in
/// question order regardless of `jobs`.
pub fn evaluate_outcomes(
    params: &ModelParams,
    questions: &[Question],
    stores: Stores<'_>,
    ecfg: &EngineConfig,
    jobs: usize,
) -> Result<Vec<QuestionOutcome>> {
    par_map(questions, jobs, |q| answer_outcome(q, params, stores, ecfg))
}

/// Order-preserving map over up to `jobs` scoped threads.
pub(crate) fn par_map<I, T, F>(items: &[I], jobs: usize, f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<T>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker thread panicked")?);
        }
        Ok(out)
    })
}

pub fn evaluate(params: &ModelParams, questions: &[Question], stores: Stores<'_>, ecfg: &EngineConfig) -> Result<Metrics> {
    Ok(summarize(&evaluate_outcomes(params, questions, stores, ecfg, 1)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub pull_loss: f64,
    pub relation_loss: f64,
    pub answer_loss: f64,
    pub trained: usize,
    pub skipped: usize,
    pub dev_hits_at_1: f64,
    pub dev_answer_recall: f64,
    pub dev_mean_entities: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best epoch by dev Hits@1 (initial ones if no epoch ran).
    pub params: ModelParams,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

/// Training data and the stores it runs against.
pub struct TrainData<'a> {
    pub train: &'a [Question],
    pub dev: &'a [Question],
    /// Stores retrieval runs against (possibly a fact-dropped KB).
    pub stores: Stores<'a>,
    /// Complete KB used for path supervision.
    pub kb_complete: &'a KbIndex,
}

pub fn train(
    params: ModelParams,
    data: &TrainData<'_>,
    ecfg: &EngineConfig,
    tcfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    ecfg.validate()?;
    let mut params = params;
    let mut best = params.clone();
    let mut best_epoch = None;
    let mut best_hits = f64::NEG_INFINITY;
    let mut history = Vec::new();
    let mut adam = Adam::new(tcfg, &params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);

    let labels: Vec<SupervisionLabels> = data
        .train
        .iter()
        .map(|q| SupervisionLabels::build(data.kb_complete, &q.entities, &q.answers))
        .collect();
    let usable: Vec<usize> = (0..data.train.len()).filter(|&i| !labels[i].is_empty()).collect();
    let skipped = data.train.len() - usable.len();
    if skipped > 0 {
        warn!("{skipped} training question(s) have no reachable answer and are skipped");
    }

    for epoch in 1..=tcfg.epochs {
        let mut order = usable.clone();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut counts = [0usize; 4];
        for batch in order.chunks(tcfg.batch_size) {
            let mut grads = Grads::zeros_like(&params.tensors);
            for &i in batch {
                let mut t = Tape::new(&params.tensors);
                let (root, parts) = question_loss_var(
                    &mut t,
                    &params,
                    &data.train[i],
                    &labels[i],
                    data.stores,
                    data.kb_complete,
                    ecfg,
                    tcfg.loss_weights,
                )?;
                if !parts.total.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss at epoch {epoch} on question {}",
                        data.train[i].id
                    )));
                }
                t.backward_into(root, &mut grads);
                let comps = [Some(parts.total), parts.pull, parts.relation, Some(parts.answer)];
                for (k, c) in comps.iter().enumerate() {
                    if let Some(c) = c {
                        sums[k] += c;
                        counts[k] += 1;
                    }
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Diverged(format!("non-finite gradient at epoch {epoch}")));
            }
            adam.step(&mut params.tensors, &grads);
        }
        let avg = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
        let dev = evaluate(&params, data.dev, data.stores, ecfg)?;
        let record = EpochRecord {
            epoch,
            loss: avg(0),
            pull_loss: avg(1),
            relation_loss: avg(2),
            answer_loss: avg(3),
            trained: usable.len(),
            skipped,
            dev_hits_at_1: dev.hits_at_1,
            dev_answer_recall: dev.answer_recall,
            dev_mean_entities: dev.mean_entities,
        };
        info!(
            "epoch {epoch}: loss {:.4} dev hits@1 {:.4} recall {:.4}",
            record.loss, record.dev_hits_at_1, record.dev_answer_recall
        );
        if dev.hits_at_1 > best_hits {
            best_hits = dev.hits_at_1;
            best = params.clone();
            best_epoch = Some(epoch);
        }
        if let Some(dir) = checkpoint_dir {
            if tcfg.checkpoint_interval > 0 && epoch % tcfg.checkpoint_interval == 0 {
                params.save(&dir.join(format!("epoch_{epoch:03}.ckpt")))?;
            }
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_single_step_by_hand() {
        // one parameter, gradient 2: m = 0.2, v = 0.004, mhat = 2, vhat = 4
        let cfg = TrainConfig { learning_rate: 0.1, ..Default::default() };
        let mut p = vec![Mat::scalar(1.0)];
        let mut adam = Adam::new(&cfg, &p);
        adam.step(&mut p, &Grads { tensors: vec![Mat::scalar(2.0)] });
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn bce_anchors() {
        let ps: Vec<Mat> = Vec::new();
        let mut t = Tape::new(&ps);
        let labels = [1.0, 0.0, 0.0, 1.0];
        let clip = |y: f64| y.clamp(1e-6, 1.0 - 1e-6);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let z = t.constant(Mat::column(labels.iter().map(|&y| logit(clip(y))).collect()));
        let l = t.bce_with_logits(z, labels.to_vec());
        assert!(t.scalar(l) <= 1e-5);
        let z = t.constant(Mat::column(vec![0.0; 4]));
        let l = t.bce_with_logits(z, labels.to_vec());
        assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn summary_respects_hits_below_recall() {
        let o = |hit, recalled| QuestionOutcome { hit, recalled, entities: 3, facts: 2, docs: 0 };
        let m = summarize(&[o(true, true), o(false, true), o(false, false), o(false, false)]);
        assert_eq!(m.hits_at_1, 0.25);
        assert_eq!(m.answer_recall, 0.5);
        assert_eq!(m.mean_entities, 3.0);
        assert_eq!(summarize(&[]), Metrics::default());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { loss_weights: [0.0; 3], ..Default::default() }.validate().is_err());
    }
}
