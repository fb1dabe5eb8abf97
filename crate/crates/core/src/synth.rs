//! Synthetic movie-domain benchmark: a typed KB of films, people and
//! attribute values, a corpus restating a fraction of its facts, and
//! compositional 1 to 3 hop questions with exhaustively computed answers.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{DataLayout, LexiconEntry, QuestionRecord, RawKnowledge, Triple};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_entities: usize,
    /// Number of relation types used, at most [`RELATIONS`]`.len()`.
    pub n_relations: usize,
    pub n_facts: usize,
    /// Question depths to generate, each in 1..=3.
    pub hops: Vec<u32>,
    /// Questions generated per depth before splitting.
    pub n_questions: usize,
    /// Probability that a fact is restated as a sentence.
    pub corpus_coverage: f64,
    pub seed: u64,
    /// Train and dev fractions; the test split gets the rest.
    pub split: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_entities: 2000,
            n_relations: RELATIONS.len(),
            n_facts: 10_000,
            hops: vec![1, 2, 3],
            n_questions: 2000,
            corpus_coverage: 1.0,
            seed: 0,
            split: [0.8, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Kind {
    Movie,
    Person,
    Year,
    Language,
    Genre,
}

/// A movie-valued relation with its wording.
pub struct RelationSpec {
    pub name: &'static str,
    target: Kind,
    /// Share of the facts beyond one per film and relation. Zero makes the
    /// relation functional.
    extra: f64,
    /// Phrases for following the relation from a film.
    forward: &'static [&'static str],
    /// Phrases for following it back to films.
    inverse: &'static [&'static str],
    /// Sentence templates with `{m}` for the film and `{o}` for the value.
    sentences: &'static [&'static str],
}

pub const RELATIONS: &[RelationSpec] = &[
    RelationSpec {
        name: "directed_by",
        target: Kind::Person,
        extra: 0.0,
        forward: &["the director of", "the person who directed"],
        inverse: &["the films directed by", "the movies that were directed by"],
        sentences: &["{m} was directed by {o}.", "{o} directed {m}.", "{m} is a film directed by {o}."],
    },
    RelationSpec {
        name: "written_by",
        target: Kind::Person,
        extra: 0.5,
        forward: &["the writer of", "the screenwriter of"],
        inverse: &["the films written by", "the movies whose screenplay was by"],
        sentences: &["{m} was written by {o}.", "{o} wrote the screenplay for {m}.", "the writer of {m} is {o}."],
    },
    RelationSpec {
        name: "starred_actors",
        target: Kind::Person,
        extra: 3.0,
        forward: &["the actors in", "the stars of"],
        inverse: &["the films starring", "the movies featuring actor"],
        sentences: &["{o} starred in {m}.", "{m} stars {o}.", "{m} featured actor {o} in a leading role."],
    },
    RelationSpec {
        name: "release_year",
        target: Kind::Year,
        extra: 0.0,
        forward: &["the release year of", "the year of release of"],
        inverse: &["the films released in", "the movies that came out in"],
        sentences: &["{m} was released in {o}.", "{m} came out in {o}.", "the release year of {m} is {o}."],
    },
    RelationSpec {
        name: "in_language",
        target: Kind::Language,
        extra: 0.0,
        forward: &["the language of", "the spoken language in"],
        inverse: &["the films in the language", "the movies spoken in"],
        sentences: &["{m} is in the {o} language.", "{m} was filmed in {o}.", "the language of {m} is {o}."],
    },
    RelationSpec {
        name: "has_genre",
        target: Kind::Genre,
        extra: 0.7,
        forward: &["the genre of", "the kind of film that is"],
        inverse: &["the films of genre", "the movies in the genre"],
        sentences: &["{m} is a {o} film.", "{m} belongs to the {o} genre.", "the genre of {m} is {o}."],
    },
];

const QUESTION_PREFIX: &str = "what are";

/// A generated dataset before it is written out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthData {
    pub knowledge: RawKnowledge,
    /// Per depth: train, dev and test questions.
    pub questions: BTreeMap<u32, [Vec<QuestionRecord>; 3]>,
}

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

impl SynthData {
    pub fn write(&self, layout: &DataLayout) -> Result<()> {
        layout.write_knowledge(&self.knowledge)?;
        for (&h, splits) in &self.questions {
            for (name, qs) in SPLITS.iter().zip(splits) {
                crate::io::write_jsonl(&layout.questions(h, name), qs)?;
            }
        }
        Ok(())
    }
}

struct Entity {
    name: String,
    kind: Kind,
}

/// One step of a question chain: relation index and whether it is
/// followed from the film (forward) or back to films.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Step {
    relation: usize,
    forward: bool,
}

struct Graph {
    /// (entity, relation, forward) -> neighbours, sorted.
    adj: BTreeMap<(usize, usize, bool), Vec<usize>>,
}

impl Graph {
    fn follow(&self, frontier: &BTreeSet<usize>, step: Step) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &e in frontier {
            if let Some(ns) = self.adj.get(&(e, step.relation, step.forward)) {
                out.extend(ns.iter().copied());
            }
        }
        out
    }
}

fn template_words() -> HashSet<String> {
    let mut words = HashSet::new();
    let mut add = |s: &str| words.extend(crate::corpus::tokenize(s));
    add(QUESTION_PREFIX);
    for r in RELATIONS {
        r.forward.iter().chain(r.inverse).chain(r.sentences).for_each(|s| add(s));
    }
    words.remove("m");
    words.remove("o");
    words
}

struct Namer {
    used: HashSet<String>,
    reserved: HashSet<String>,
}

impl Namer {
    const CONSONANTS: &'static [u8] = b"bdfgklmnprstvz";
    const VOWELS: &'static [u8] = b"aeiou";

    /// A fresh capitalised pseudo-word, distinct from every earlier one and
    /// from template vocabulary.
    fn word(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(*Self::CONSONANTS.choose(rng).unwrap() as char);
                w.push(*Self::VOWELS.choose(rng).unwrap() as char);
            }
            if rng.gen_bool(0.5) {
                w.push(*Self::CONSONANTS.choose(rng).unwrap() as char);
            }
            if self.reserved.contains(&w) || !self.used.insert(w.clone()) {
                continue;
            }
            let mut c = w.chars();
            let first = c.next().unwrap().to_ascii_uppercase();
            return std::iter::once(first).chain(c).collect();
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.corpus_coverage) {
            return bad("corpus_coverage must lie in [0, 1]".into());
        }
        if self.n_relations == 0 || self.n_relations > RELATIONS.len() {
            return bad(format!("n_relations must lie in 1..={}", RELATIONS.len()));
        }
        if self.hops.is_empty() || self.hops.iter().any(|h| !(1..=3).contains(h)) {
            return bad("hops must be a non-empty subset of 1..=3".into());
        }
        if self.n_entities < 20 {
            return bad("n_entities must be at least 20".into());
        }
        if self.split.iter().any(|&f| f < 0.0) || self.split[0] + self.split[1] > 1.0 {
            return bad("split fractions must be non-negative and sum to at most 1".into());
        }
        Ok(())
    }

    /// Entity counts per kind. Films get about ten facts each when the fact
    /// budget allows, people take the remaining entities.
    fn allocation(&self) -> BTreeMap<Kind, usize> {
        let n = self.n_entities;
        let years = (n / 25).clamp(1, 70);
        let languages = (n / 100).clamp(1, 20);
        let genres = (n / 100).clamp(1, 20);
        let rest = n - years - languages - genres;
        let movies = ((self.n_facts as f64 / 9.5).round() as usize).clamp(1, rest * 3 / 5);
        BTreeMap::from([
            (Kind::Movie, movies),
            (Kind::Person, rest - movies),
            (Kind::Year, years),
            (Kind::Language, languages),
            (Kind::Genre, genres),
        ])
    }
}

/// Share of person facts drawn from people whose main role matches.
const ROLE_STICKINESS: f64 = 0.85;

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let relations = &RELATIONS[..cfg.n_relations];
    let alloc = cfg.allocation();
    let n_movies = alloc[&Kind::Movie];

    let base = n_movies * relations.len();
    let extra_total: f64 = relations.iter().map(|r| r.extra).sum();
    let extra_capacity: usize = relations
        .iter()
        .filter(|r| r.extra > 0.0)
        .map(|r| n_movies * (alloc[&r.target] - 1))
        .sum();
    if cfg.n_facts < base || cfg.n_facts - base > extra_capacity {
        return Err(Error::Infeasible(format!(
            "{} facts requested; {n_movies} films with {} relations admit between {base} and {} distinct facts",
            cfg.n_facts,
            relations.len(),
            base + extra_capacity
        )));
    }
    let n_extra = cfg.n_facts - base;

    let mut namer = Namer {
        used: HashSet::new(),
        reserved: template_words(),
    };
    let mut entities: Vec<Entity> = Vec::with_capacity(cfg.n_entities);
    let mut by_kind: BTreeMap<Kind, Vec<usize>> = BTreeMap::new();
    for (&kind, &count) in &alloc {
        for i in 0..count {
            let name = match kind {
                Kind::Person => format!("{} {}", namer.word(&mut rng), namer.word(&mut rng)),
                Kind::Movie if rng.gen_bool(0.3) => format!("{} {}", namer.word(&mut rng), namer.word(&mut rng)),
                Kind::Year => (1950 + i).to_string(),
                _ => namer.word(&mut rng),
            };
            by_kind.entry(kind).or_default().push(entities.len());
            entities.push(Entity { name, kind });
        }
    }
    let movies = by_kind[&Kind::Movie].clone();

    // Each person gets a main role in proportion to the expected number of
    // facts of each person-valued relation.
    let demand: Vec<f64> = relations
        .iter()
        .map(|r| {
            if r.target != Kind::Person {
                0.0
            } else {
                n_movies as f64 + n_extra as f64 * r.extra / extra_total.max(f64::MIN_POSITIVE)
            }
        })
        .collect();
    let total_demand: f64 = demand.iter().sum();
    let mut roles: Vec<Vec<usize>> = vec![Vec::new(); relations.len()];
    if total_demand > 0.0 {
        let people = by_kind.get(&Kind::Person).cloned().unwrap_or_default();
        for p in people {
            let mut x = rng.gen::<f64>() * total_demand;
            let mut ri = demand.iter().rposition(|&d| d > 0.0).unwrap();
            for (i, &d) in demand.iter().enumerate() {
                if x < d {
                    ri = i;
                    break;
                }
                x -= d;
            }
            roles[ri].push(p);
        }
    }
    let pick = |rng: &mut ChaCha8Rng, ri: usize| -> usize {
        let r = &relations[ri];
        if r.target == Kind::Person && !roles[ri].is_empty() && rng.gen_bool(ROLE_STICKINESS) {
            *roles[ri].choose(rng).unwrap()
        } else {
            *by_kind[&r.target].choose(rng).unwrap()
        }
    };

    // (movie, relation, value) facts: one per film and relation, then the
    // extra budget spread over the multi-valued relations.
    let mut facts: Vec<(usize, usize, usize)> = Vec::with_capacity(cfg.n_facts);
    let mut seen = HashSet::new();
    for &m in &movies {
        for ri in 0..relations.len() {
            let o = pick(&mut rng, ri);
            seen.insert((m, ri, o));
            facts.push((m, ri, o));
        }
    }
    let mut attempts = 0usize;
    while facts.len() < cfg.n_facts {
        attempts += 1;
        if attempts > 100 * cfg.n_facts {
            return Err(Error::Infeasible("fact budget too close to the number of distinct triples".into()));
        }
        let mut x = rng.gen::<f64>() * extra_total;
        let mut ri = relations.iter().rposition(|r| r.extra > 0.0).unwrap();
        for (i, r) in relations.iter().enumerate() {
            if x < r.extra {
                ri = i;
                break;
            }
            x -= r.extra;
        }
        let m = *movies.choose(&mut rng).unwrap();
        let o = pick(&mut rng, ri);
        if seen.insert((m, ri, o)) {
            facts.push((m, ri, o));
        }
    }

    let triples: Vec<Triple> = facts
        .iter()
        .map(|&(m, r, o)| (entities[m].name.clone(), relations[r].name.to_owned(), entities[o].name.clone()))
        .collect();
    let mut sentences = Vec::new();
    for &(m, r, o) in &facts {
        if rng.gen::<f64>() < cfg.corpus_coverage {
            let t = relations[r].sentences.choose(&mut rng).unwrap();
            sentences.push(t.replace("{m}", &entities[m].name).replace("{o}", &entities[o].name));
        }
    }
    let lexicon = entities
        .iter()
        .map(|e| LexiconEntry {
            surface: e.name.clone(),
            entity: e.name.clone(),
        })
        .collect();

    let mut graph = Graph { adj: BTreeMap::new() };
    for &(m, r, o) in &facts {
        graph.adj.entry((m, r, true)).or_default().push(o);
        graph.adj.entry((o, r, false)).or_default().push(m);
    }
    for v in graph.adj.values_mut() {
        v.sort_unstable();
    }

    let mut questions = BTreeMap::new();
    let mut next_id = 0u64;
    let active: Vec<usize> = (0..entities.len())
        .filter(|&e| graph.adj.range((e, 0, false)..=(e, usize::MAX, true)).next().is_some())
        .collect();
    if active.is_empty() {
        return Err(Error::Infeasible("the generated KB has no facts".into()));
    }
    for &h in &cfg.hops {
        let mut qs = Vec::with_capacity(cfg.n_questions);
        let mut texts = HashSet::new();
        let mut attempts = 0usize;
        while qs.len() < cfg.n_questions {
            attempts += 1;
            if attempts > 200 * cfg.n_questions.max(10) {
                return Err(Error::Infeasible(format!(
                    "could not generate {} distinct answerable {h}-hop questions",
                    cfg.n_questions
                )));
            }
            let start = *active.choose(&mut rng).unwrap();
            let Some(chain) = sample_chain(&mut rng, relations, &graph, entities[start].kind, start, h) else {
                continue;
            };
            let mut frontier = BTreeSet::from([start]);
            for &s in &chain {
                frontier = graph.follow(&frontier, s);
            }
            frontier.remove(&start);
            if frontier.is_empty() {
                continue;
            }
            let mut text = String::from(QUESTION_PREFIX);
            for s in chain.iter().rev() {
                let r = &relations[s.relation];
                let phrases = if s.forward { r.forward } else { r.inverse };
                text.push(' ');
                text.push_str(phrases.choose(&mut rng).unwrap());
            }
            text.push(' ');
            text.push_str(&entities[start].name);
            if !texts.insert(text.clone()) {
                continue;
            }
            let answers = frontier.iter().map(|&e| entities[e].name.clone()).collect();
            qs.push((start, chain, QuestionRecord { id: next_id, text, answers }));
            next_id += 1;
        }
        self_check(&facts, &qs)?;
        let mut records: Vec<QuestionRecord> = qs.into_iter().map(|(_, _, r)| r).collect();
        records.shuffle(&mut rng);
        let n_train = (records.len() as f64 * cfg.split[0]).round() as usize;
        let n_dev = ((records.len() as f64 * cfg.split[1]).round() as usize).min(records.len() - n_train);
        let test = records.split_off(n_train + n_dev);
        let dev = records.split_off(n_train);
        questions.insert(h, [records, dev, test]);
    }

    Ok(SynthData {
        knowledge: RawKnowledge {
            triples,
            sentences,
            lexicon,
        },
        questions,
    })
}

/// Random valid chain of `hops` steps from `start`. Steps alternate between
/// films and values; a step never undoes the previous one.
fn sample_chain(
    rng: &mut ChaCha8Rng,
    relations: &[RelationSpec],
    graph: &Graph,
    kind: Kind,
    start: usize,
    hops: u32,
) -> Option<Vec<Step>> {
    let mut chain: Vec<Step> = Vec::new();
    let mut kind = kind;
    let mut frontier = BTreeSet::from([start]);
    for _ in 0..hops {
        let options: Vec<Step> = (0..relations.len())
            .filter_map(|ri| {
                let step = if kind == Kind::Movie {
                    Step { relation: ri, forward: true }
                } else if relations[ri].target == kind {
                    Step { relation: ri, forward: false }
                } else {
                    return None;
                };
                let undoes = chain.last().is_some_and(|p| p.relation == ri && p.forward != step.forward);
                (!undoes).then_some(step)
            })
            .filter(|&s| !graph.follow(&frontier, s).is_empty())
            .collect();
        let step = *options.choose(rng)?;
        frontier = graph.follow(&frontier, step);
        kind = if step.forward { relations[step.relation].target } else { Kind::Movie };
        chain.push(step);
    }
    Some(chain)
}

/// Recomputes every answer set by scanning the fact list and fails on any
/// difference.
fn self_check(facts: &[(usize, usize, usize)], qs: &[(usize, Vec<Step>, QuestionRecord)]) -> Result<()> {
    for (start, chain, rec) in qs {
        let mut frontier: HashSet<usize> = HashSet::from([*start]);
        for s in chain {
            let mut next = HashSet::new();
            for &(m, r, o) in facts {
                if r != s.relation {
                    continue;
                }
                let (from, to) = if s.forward { (m, o) } else { (o, m) };
                if frontier.contains(&from) {
                    next.insert(to);
                }
            }
            frontier = next;
        }
        frontier.remove(start);
        if frontier.len() != rec.answers.len() {
            return Err(Error::Infeasible(format!(
                "answer self-check failed for question {}: {} vs {} answers",
                rec.id,
                frontier.len(),
                rec.answers.len()
            )));
        }
    }
    Ok(())
}
