//! Weak supervision from question-answer pairs.
//!
//! Entities on shortest KB paths from the question entities to the answers
//! are candidate intermediate entities; their distance `t_e` from the
//! question assigns them to a ring. Iterations are 1-based, so iteration `t`
//! is expected to discover ring `t`: expanding an entity is a positive pull
//! decision at iteration `t` when it touches a ring-`t` candidate, and a
//! retrieved fact is relevant when it joins ring `t - 1` to ring `t`.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::QuestionSubgraph;
use crate::ids::{EntityId, FactId};
use crate::kb::{Fact, KbIndex};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisionLabels {
    pub candidates: BTreeMap<EntityId, u32>,
    pub answers: BTreeSet<EntityId>,
    pub q_entities: BTreeSet<EntityId>,
}

impl SupervisionLabels {
    /// Candidates computed on `kb`, which should be the complete KB even
    /// when retrieval runs against a reduced one.
    pub fn build(kb: &KbIndex, q_entities: &BTreeSet<EntityId>, answers: &BTreeSet<EntityId>) -> Self {
        let candidates = kb.entities_on_shortest_paths(q_entities, answers).into_iter().collect();
        SupervisionLabels {
            candidates,
            answers: answers.clone(),
            q_entities: q_entities.clone(),
        }
    }

    /// No answer is reachable; the question cannot be supervised.
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn max_distance(&self) -> u32 {
        self.candidates.values().copied().max().unwrap_or(0)
    }

    pub fn ring(&self, t: u32) -> impl Iterator<Item = EntityId> + '_ {
        self.candidates.iter().filter(move |(_, &d)| d == t).map(|(&e, _)| e)
    }

    fn in_ring(&self, e: EntityId, t: u32) -> bool {
        self.candidates.get(&e) == Some(&t) || (t == 0 && self.q_entities.contains(&e))
    }
}

/// Labels for every unpulled entity node at the start of iteration `t`.
pub fn pull_targets(
    labels: &SupervisionLabels,
    g: &QuestionSubgraph,
    kb_complete: &KbIndex,
    t: u32,
) -> BTreeMap<EntityId, bool> {
    g.unpulled()
        .into_iter()
        .map(|e| {
            let positive = t >= 1 && kb_complete.neighbors(e).any(|n| labels.candidates.get(&n) == Some(&t));
            (e, positive)
        })
        .collect()
}

/// Relevance labels for the facts scored while pulling in iteration `t`.
pub fn relation_targets(labels: &SupervisionLabels, facts: &[Fact], t: u32) -> BTreeMap<FactId, bool> {
    facts
        .iter()
        .map(|f| {
            let positive = t >= 1
                && ((labels.in_ring(f.subject, t - 1) && labels.in_ring(f.object, t))
                    || (labels.in_ring(f.object, t - 1) && labels.in_ring(f.subject, t)));
            (f.id, positive)
        })
        .collect()
}

/// Answer labels over the entity nodes of the final graph.
pub fn answer_targets(labels: &SupervisionLabels, g: &QuestionSubgraph) -> BTreeMap<EntityId, bool> {
    g.entities().map(|e| (e, labels.answers.contains(&e))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusIndex;

    // 0 Inception, 1 Nolan, 2 Interstellar, 3 DiCaprio
    fn kb() -> KbIndex {
        KbIndex::build(&[
            ("Inception", "directed_by", "Nolan"),
            ("Interstellar", "directed_by", "Nolan"),
            ("Inception", "starred", "DiCaprio"),
        ])
        .unwrap()
    }

    fn ids(v: &[u32]) -> BTreeSet<EntityId> {
        v.iter().map(|&i| EntityId(i)).collect()
    }

    #[test]
    fn one_hop_labels() {
        let kb = kb();
        let l = SupervisionLabels::build(&kb, &ids(&[0]), &ids(&[1]));
        assert_eq!(l.candidates, BTreeMap::from([(EntityId(0), 0), (EntityId(1), 1)]));
        let g = QuestionSubgraph::new(vec!["who".into()], ids(&[0])).unwrap();
        assert_eq!(pull_targets(&l, &g, &kb, 1), BTreeMap::from([(EntityId(0), true)]));
        let rel = relation_targets(&l, kb.facts(), 1);
        assert!(rel[&FactId(0)]);
        assert!(!rel[&FactId(1)]);
        assert!(!rel[&FactId(2)]);
    }

    #[test]
    fn two_hop_chain() {
        let kb = kb();
        let l = SupervisionLabels::build(&kb, &ids(&[0]), &ids(&[2]));
        assert_eq!(l.candidates.values().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(l.max_distance(), 2);
        assert_eq!(l.ring(1).collect::<Vec<_>>(), vec![EntityId(1)]);
    }

    #[test]
    fn self_answer_has_no_positive_pulls() {
        let kb = kb();
        let l = SupervisionLabels::build(&kb, &ids(&[0]), &ids(&[0]));
        let g = QuestionSubgraph::new(vec!["who".into()], ids(&[0])).unwrap();
        assert!(pull_targets(&l, &g, &kb, 1).values().all(|&p| !p));
    }

    #[test]
    fn answer_targets_follow_answer_set() {
        let kb = kb();
        let corpus = CorpusIndex::empty();
        let l = SupervisionLabels::build(&kb, &ids(&[0]), &ids(&[1]));
        let mut g = QuestionSubgraph::new(vec!["who".into()], ids(&[0])).unwrap();
        g.update(&kb, &corpus, ids(&[1, 3]), [FactId(0), FactId(2)], [], 1);
        let t = answer_targets(&l, &g);
        assert_eq!(t.values().filter(|&&p| p).count(), 1);
        assert!(t[&EntityId(1)]);
        let l2 = SupervisionLabels::build(&kb, &ids(&[0]), &ids(&[2]));
        assert!(answer_targets(&l2, &g).values().all(|&p| !p));
    }

    #[test]
    fn unreachable_is_empty() {
        let kb = kb();
        let l = SupervisionLabels::build(&kb, &ids(&[0]), &ids(&[9]));
        assert!(l.is_empty());
    }
}
