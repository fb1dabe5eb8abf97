//! In-memory knowledge-base index: facts, per-entity adjacency, fact
//! dropout and breadth-first distances on the undirected entity graph.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{EntityId, FactId, RelationId};

/// Bidirectional string/id table. Ids are assigned in first-insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::new();
        for n in names {
            v.intern(n);
        }
        v
    }

    /// Returns the id of `name`, inserting it if absent.
    pub fn intern(&mut self, name: impl Into<String>) -> u32 {
        let name = name.into();
        if let Some(&id) = self.ids.get(&name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.ids.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub id: FactId,
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Fact {
    /// The endpoint opposite to `e`, if `e` is an endpoint.
    #[inline]
    pub fn other(&self, e: EntityId) -> Option<EntityId> {
        if self.subject == e {
            Some(self.object)
        } else if self.object == e {
            Some(self.subject)
        } else {
            None
        }
    }

    #[inline]
    pub fn touches(&self, e: EntityId) -> bool {
        self.subject == e || self.object == e
    }
}

/// Immutable KB index. Every entity in the vocabulary has an adjacency
/// list, possibly empty.
#[derive(Debug, Clone)]
pub struct KbIndex {
    facts: Vec<Fact>,
    by_entity: Vec<Vec<FactId>>,
    entities: Vocab,
    relations: Vocab,
}

/// Incremental KB construction that remembers source line numbers for
/// diagnostics.
#[derive(Debug, Default)]
pub struct KbBuilder {
    entities: Vocab,
    relations: Vocab,
    facts: Vec<Fact>,
    seen: HashSet<(u32, u32, u32)>,
}

impl KbBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, line: usize, subject: &str, relation: &str, object: &str) -> Result<()> {
        if subject.is_empty() || relation.is_empty() || object.is_empty() {
            return Err(Error::EmptyField { line });
        }
        let s = self.entities.intern(subject);
        let r = self.relations.intern(relation);
        let o = self.entities.intern(object);
        if !self.seen.insert((s, r, o)) {
            return Err(Error::DuplicateTriple {
                line,
                subject: subject.to_owned(),
                relation: relation.to_owned(),
                object: object.to_owned(),
            });
        }
        self.facts.push(Fact {
            id: FactId::from(self.facts.len()),
            subject: EntityId(s),
            relation: RelationId(r),
            object: EntityId(o),
        });
        Ok(())
    }

    /// Registers an entity that may have no facts (e.g. one only seen in the
    /// corpus lexicon).
    pub fn add_entity(&mut self, name: &str) -> EntityId {
        EntityId(self.entities.intern(name))
    }

    pub fn finish(self) -> KbIndex {
        KbIndex::from_parts(self.facts, self.entities, self.relations)
    }
}

impl KbIndex {
    /// Builds an index from `(subject, relation, object)` triples. Line
    /// numbers in diagnostics are 1-based positions in `triples`.
    pub fn build<S: AsRef<str>>(triples: &[(S, S, S)]) -> Result<Self> {
        let mut b = KbBuilder::new();
        for (i, (s, r, o)) in triples.iter().enumerate() {
            b.add(i + 1, s.as_ref(), r.as_ref(), o.as_ref())?;
        }
        Ok(b.finish())
    }

    fn from_parts(facts: Vec<Fact>, entities: Vocab, relations: Vocab) -> Self {
        let mut by_entity = vec![Vec::new(); entities.len()];
        for f in &facts {
            by_entity[f.subject.index()].push(f.id);
            if f.object != f.subject {
                by_entity[f.object.index()].push(f.id);
            }
        }
        // facts are pushed in id order, so every list is already sorted
        KbIndex {
            facts,
            by_entity,
            entities,
            relations,
        }
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn fact(&self, id: FactId) -> &Fact {
        &self.facts[id.index()]
    }

    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn entity_name(&self, e: EntityId) -> Option<&str> {
        self.entities.name(e.0)
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        e.index() < self.entities.len()
    }

    /// Sorted ids of facts with `e` as subject or object. Empty for ids
    /// outside the vocabulary.
    pub fn incident(&self, e: EntityId) -> &[FactId] {
        self.by_entity.get(e.index()).map_or(&[], Vec::as_slice)
    }

    /// Facts having `e` as subject or object, ascending by fact id.
    pub fn candidate_facts(&self, e: EntityId) -> Result<Vec<Fact>> {
        if !self.contains_entity(e) {
            return Err(Error::UnknownEntity(e.0));
        }
        Ok(self.incident(e).iter().map(|&f| self.facts[f.index()]).collect())
    }

    /// Neighbours of `e` in the undirected entity graph, one per incident
    /// fact (a pair joined by two facts appears twice).
    pub fn neighbors(&self, e: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        self.incident(e)
            .iter()
            .map(move |&f| self.facts[f.index()].other(e).unwrap_or(e))
    }

    pub fn degree(&self, e: EntityId) -> usize {
        self.incident(e).len()
    }

    /// Returns a copy in which every fact is independently dropped with
    /// probability `p`. Surviving facts are renumbered densely in their
    /// original order; vocabularies are preserved.
    pub fn drop_facts(&self, p: f64, seed: u64) -> KbIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let facts = self
            .facts
            .iter()
            .filter(|_| rng.gen::<f64>() >= p)
            .enumerate()
            .map(|(i, f)| Fact {
                id: FactId::from(i),
                ..*f
            })
            .collect();
        KbIndex::from_parts(facts, self.entities.clone(), self.relations.clone())
    }

    /// Multi-source BFS distances. Unreachable entities are absent.
    pub fn shortest_distances(&self, sources: &BTreeSet<EntityId>) -> BTreeMap<EntityId, u32> {
        let dist = self.bfs(sources.iter().copied(), u32::MAX);
        dist.into_iter()
            .enumerate()
            .filter(|(_, d)| *d != u32::MAX)
            .map(|(i, d)| (EntityId::from(i), d))
            .collect()
    }

    /// Dense BFS distance vector (`u32::MAX` = unreachable), exploring no
    /// further than `max_depth`.
    pub(crate) fn bfs(&self, sources: impl IntoIterator<Item = EntityId>, max_depth: u32) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.num_entities()];
        let mut queue = VecDeque::new();
        for s in sources {
            if self.contains_entity(s) && dist[s.index()] != 0 {
                dist[s.index()] = 0;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v.index()];
            if d >= max_depth {
                continue;
            }
            for u in self.neighbors(v) {
                if dist[u.index()] == u32::MAX {
                    dist[u.index()] = d + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Every entity lying on at least one shortest path from a question
    /// entity to a reachable answer, with its distance from the question
    /// entities. Sorted by entity id; empty if no answer is reachable.
    pub fn entities_on_shortest_paths(
        &self,
        q_entities: &BTreeSet<EntityId>,
        answers: &BTreeSet<EntityId>,
    ) -> Vec<(EntityId, u32)> {
        let fwd = self.bfs(q_entities.iter().copied(), u32::MAX);
        let mut on_path = vec![false; self.num_entities()];
        for &a in answers {
            if !self.contains_entity(a) {
                continue;
            }
            let target = fwd[a.index()];
            if target == u32::MAX {
                continue;
            }
            let bwd = self.bfs([a], target);
            for (i, (&df, &db)) in fwd.iter().zip(&bwd).enumerate() {
                if df != u32::MAX && db != u32::MAX && df + db == target {
                    on_path[i] = true;
                }
            }
        }
        on_path
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (EntityId::from(i), fwd[i]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn movies() -> KbIndex {
        KbIndex::build(&[
            ("Inception", "directed_by", "Nolan"),
            ("Interstellar", "directed_by", "Nolan"),
        ])
        .unwrap()
    }

    fn set(ids: &[u32]) -> BTreeSet<EntityId> {
        ids.iter().map(|&i| EntityId(i)).collect()
    }

    #[test]
    fn minimal_kb() {
        let kb = KbIndex::build(&[("Inception", "directed_by", "Nolan")]).unwrap();
        assert_eq!(kb.num_entities(), 2);
        assert_eq!(kb.num_relations(), 1);
        assert_eq!(kb.num_facts(), 1);
        assert_eq!(kb.entity_id("Inception"), Some(EntityId(0)));
        assert_eq!(kb.entity_id("Nolan"), Some(EntityId(1)));
    }

    #[test]
    fn empty_kb() {
        let kb = KbIndex::build::<&str>(&[]).unwrap();
        assert_eq!(kb.num_entities(), 0);
        assert_eq!(kb.num_relations(), 0);
        assert!(kb.facts().is_empty());
    }

    #[test]
    fn duplicate_triple_names_the_line() {
        let err = KbIndex::build(&[
            ("a", "r", "b"),
            ("c", "r", "b"),
            ("a", "r", "b"),
        ])
        .unwrap_err();
        match err {
            Error::DuplicateTriple { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_field_rejected() {
        assert!(matches!(
            KbIndex::build(&[("a", "", "b")]),
            Err(Error::EmptyField { line: 1 })
        ));
    }

    #[test]
    fn candidate_facts_by_endpoint() {
        let kb = movies();
        let nolan = kb.entity_id("Nolan").unwrap();
        let inception = kb.entity_id("Inception").unwrap();
        let ids: Vec<u32> = kb.candidate_facts(nolan).unwrap().iter().map(|f| f.id.0).collect();
        assert_eq!(ids, vec![0, 1]);
        let ids: Vec<u32> = kb.candidate_facts(inception).unwrap().iter().map(|f| f.id.0).collect();
        assert_eq!(ids, vec![0]);
        assert!(matches!(kb.candidate_facts(EntityId(9)), Err(Error::UnknownEntity(9))));
    }

    #[test]
    fn drop_extremes() {
        let kb = movies();
        assert_eq!(kb.drop_facts(0.0, 7).facts(), kb.facts());
        let none = kb.drop_facts(1.0, 7);
        assert_eq!(none.num_facts(), 0);
        assert_eq!(none.num_entities(), kb.num_entities());
        assert_eq!(none.num_relations(), kb.num_relations());
        assert!(none.incident(EntityId(1)).is_empty());
    }

    #[test]
    fn chain_distances() {
        let kb = movies();
        let d = kb.shortest_distances(&set(&[0]));
        assert_eq!(d.into_iter().collect::<Vec<_>>(), vec![
            (EntityId(0), 0),
            (EntityId(1), 1),
            (EntityId(2), 2)
        ]);
        let d = kb.shortest_distances(&set(&[0, 2]));
        assert_eq!(d[&EntityId(1)], 1);
        assert_eq!(d[&EntityId(2)], 0);
    }

    #[test]
    fn shortest_path_entities_on_chain() {
        let kb = movies();
        assert_eq!(
            kb.entities_on_shortest_paths(&set(&[0]), &set(&[2])),
            vec![(EntityId(0), 0), (EntityId(1), 1), (EntityId(2), 2)]
        );
        assert_eq!(kb.entities_on_shortest_paths(&set(&[0]), &set(&[0])), vec![(EntityId(0), 0)]);
    }

    #[test]
    fn unreachable_answer_gives_empty() {
        let mut b = KbBuilder::new();
        b.add(1, "a", "r", "b").unwrap();
        b.add_entity("island");
        let kb = b.finish();
        assert!(kb.entities_on_shortest_paths(&set(&[0]), &set(&[2])).is_empty());
        assert!(!kb.shortest_distances(&set(&[0])).contains_key(&EntityId(2)));
    }
}
