//! Entity-linked sentence corpus with an inverted index and IDF ranking.
//!
//! Tokenisation is shared by retrieval, entity linking and the question
//! encoder: lowercase, then split on runs of non-alphanumeric characters.
//! The IDF weighting is `ln((N + 1) / (df + 1)) + 1` summed over the
//! distinct question terms present in a sentence; there is no term
//! frequency component since documents are single sentences.

use std::collections::{BTreeSet, HashMap, HashSet};

use log::warn;

use crate::error::{Error, Result};
use crate::ids::{DocId, EntityId};

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub entity: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: DocId,
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
}

impl Document {
    pub fn entities(&self) -> BTreeSet<EntityId> {
        self.mentions.iter().map(|m| m.entity).collect()
    }
}

/// Surface-form dictionary for exact-match entity linking.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    forms: HashMap<Vec<String>, EntityId>,
    max_len: usize,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a surface form. Returns `false` (keeping the first mapping) if the
    /// tokenised form is empty or already bound to another entity.
    pub fn insert(&mut self, surface: &str, entity: EntityId) -> bool {
        let toks = tokenize(surface);
        if toks.is_empty() {
            return false;
        }
        match self.forms.get(&toks) {
            Some(&e) => e == entity,
            None => {
                self.max_len = self.max_len.max(toks.len());
                self.forms.insert(toks, entity);
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    /// Greedy left-to-right longest match.
    pub fn link(&self, tokens: &[String]) -> Vec<Mention> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = self.max_len.min(tokens.len() - i);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.forms.get(&tokens[i..i + len]).map(|&e| (len, e)));
            match hit {
                Some((len, entity)) => {
                    out.push(Mention {
                        start: i,
                        end: i + len,
                        entity,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    pub fn link_entities(&self, tokens: &[String]) -> BTreeSet<EntityId> {
        self.link(tokens).into_iter().map(|m| m.entity).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CorpusIndex {
    docs: Vec<Document>,
    postings: HashMap<String, Vec<DocId>>,
    by_entity: HashMap<EntityId, Vec<DocId>>,
    lexicon: Lexicon,
}

impl CorpusIndex {
    /// Tokenises, links and indexes `sentences`. Sentences with no tokens are
    /// dropped; the returned count says how many.
    pub fn build<S: AsRef<str>>(sentences: &[S], lexicon: Lexicon) -> (Self, usize) {
        let mut docs = Vec::with_capacity(sentences.len());
        let mut dropped = 0;
        for s in sentences {
            let tokens = tokenize(s.as_ref());
            if tokens.is_empty() {
                dropped += 1;
                continue;
            }
            let mentions = lexicon.link(&tokens);
            docs.push(Document {
                id: DocId::from(docs.len()),
                tokens,
                mentions,
            });
        }
        if dropped > 0 {
            warn!("dropped {dropped} sentence(s) with no tokens");
        }
        (Self::index(docs, lexicon), dropped)
    }

    pub fn empty() -> Self {
        Self::index(Vec::new(), Lexicon::new())
    }

    fn index(docs: Vec<Document>, lexicon: Lexicon) -> Self {
        let mut postings: HashMap<String, Vec<DocId>> = HashMap::new();
        let mut by_entity: HashMap<EntityId, Vec<DocId>> = HashMap::new();
        for d in &docs {
            let distinct: HashSet<&str> = d.tokens.iter().map(String::as_str).collect();
            for w in distinct {
                postings.entry(w.to_owned()).or_default().push(d.id);
            }
            for e in d.entities() {
                by_entity.entry(e).or_default().push(d.id);
            }
        }
        CorpusIndex {
            docs,
            postings,
            by_entity,
            lexicon,
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc(&self, id: DocId) -> Result<&Document> {
        self.docs.get(id.index()).ok_or(Error::UnknownDocument(id.0))
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn df(&self, word: &str) -> usize {
        self.postings.get(word).map_or(0, Vec::len)
    }

    pub fn postings(&self, word: &str) -> &[DocId] {
        self.postings.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn docs_mentioning(&self, e: EntityId) -> &[DocId] {
        self.by_entity.get(&e).map_or(&[], Vec::as_slice)
    }

    pub fn idf(&self, word: &str) -> f64 {
        let n = self.docs.len() as f64;
        ((n + 1.0) / (self.df(word) as f64 + 1.0)).ln() + 1.0
    }

    /// Distinct question terms paired with their IDF weights.
    pub fn query_terms(&self, question: &[String]) -> Vec<(String, f64)> {
        let mut seen = HashSet::new();
        question
            .iter()
            .filter(|w| seen.insert(w.as_str()))
            .map(|w| (w.clone(), self.idf(w)))
            .collect()
    }

    fn score_terms(&self, doc: &Document, terms: &[(String, f64)]) -> f64 {
        terms
            .iter()
            .filter(|(w, _)| doc.tokens.iter().any(|t| t == w))
            .map(|(_, idf)| idf)
            .sum()
    }

    pub fn idf_score(&self, doc: DocId, question: &[String]) -> Result<f64> {
        let d = self.doc(doc)?;
        Ok(self.score_terms(d, &self.query_terms(question)))
    }

    fn rank(&self, candidates: impl Iterator<Item = DocId>, terms: &[(String, f64)], budget: usize) -> Vec<DocId> {
        let mut scored: Vec<(f64, DocId)> = candidates
            .map(|id| (self.score_terms(&self.docs[id.index()], terms), id))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(budget);
        scored.into_iter().map(|(_, id)| id).collect()
    }

    /// Top `budget` documents linked to `e`, by IDF similarity to the
    /// question (ties by ascending doc id).
    pub fn pull_docs(&self, e: EntityId, question: &[String], budget: usize) -> Vec<DocId> {
        if budget == 0 {
            return Vec::new();
        }
        let terms = self.query_terms(question);
        self.rank(self.docs_mentioning(e).iter().copied(), &terms, budget)
    }

    /// Top `budget` documents of the whole corpus by IDF similarity. Only
    /// documents sharing at least one term with the question are candidates.
    pub fn retrieve(&self, question: &[String], budget: usize) -> Vec<DocId> {
        if budget == 0 {
            return Vec::new();
        }
        let terms = self.query_terms(question);
        let candidates: BTreeSet<DocId> = terms
            .iter()
            .flat_map(|(w, _)| self.postings(w).iter().copied())
            .collect();
        self.rank(candidates.into_iter(), &terms, budget)
    }

    pub fn pull_entities(&self, doc: DocId) -> Result<BTreeSet<EntityId>> {
        Ok(self.doc(doc)?.entities())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(toks("Inception was directed by Nolan."), vec![
            "inception", "was", "directed", "by", "nolan"
        ]);
        assert!(toks(" ... ").is_empty());
    }

    #[test]
    fn link_simple() {
        let mut lex = Lexicon::new();
        lex.insert("inception", EntityId(1));
        lex.insert("nolan", EntityId(2));
        let m = lex.link(&toks("inception was directed by nolan"));
        assert_eq!(m, vec![
            Mention { start: 0, end: 1, entity: EntityId(1) },
            Mention { start: 4, end: 5, entity: EntityId(2) },
        ]);
        assert!(lex.link(&toks("nothing here")).is_empty());
    }

    #[test]
    fn link_prefers_longer_span() {
        let mut lex = Lexicon::new();
        lex.insert("new york", EntityId(1));
        lex.insert("new york city", EntityId(2));
        let m = lex.link(&toks("she moved to new york city last year"));
        assert_eq!(m, vec![Mention { start: 3, end: 6, entity: EntityId(2) }]);
    }

    #[test]
    fn lexicon_keeps_first_binding() {
        let mut lex = Lexicon::new();
        assert!(lex.insert("Nolan", EntityId(1)));
        assert!(!lex.insert("nolan", EntityId(2)));
        assert!(!lex.insert("--", EntityId(3)));
        assert_eq!(lex.link_entities(&toks("nolan")), BTreeSet::from([EntityId(1)]));
    }

    fn movie_corpus() -> CorpusIndex {
        let mut lex = Lexicon::new();
        lex.insert("Inception", EntityId(0));
        lex.insert("Nolan", EntityId(1));
        CorpusIndex::build(&["Inception was directed by Nolan."], lex).0
    }

    #[test]
    fn build_single_sentence() {
        let c = movie_corpus();
        assert_eq!(c.len(), 1);
        assert_eq!(c.vocabulary().count(), 5);
        assert_eq!(c.docs_mentioning(EntityId(0)), &[DocId(0)]);
        assert_eq!(c.docs_mentioning(EntityId(1)), &[DocId(0)]);
        assert_eq!(
            c.pull_entities(DocId(0)).unwrap(),
            BTreeSet::from([EntityId(0), EntityId(1)])
        );
        assert!(matches!(c.pull_entities(DocId(3)), Err(Error::UnknownDocument(3))));
    }

    #[test]
    fn duplicates_kept_and_empty_dropped() {
        let (c, dropped) = CorpusIndex::build(&["a b", "a b", "!!"], Lexicon::new());
        assert_eq!(c.len(), 2);
        assert_eq!(dropped, 1);
        assert_eq!(c.df("a"), 2);
    }

    #[test]
    fn repeated_mentions_collapse() {
        let mut lex = Lexicon::new();
        lex.insert("nolan", EntityId(4));
        let (c, _) = CorpusIndex::build(&["Nolan met Nolan"], lex);
        assert_eq!(c.pull_entities(DocId(0)).unwrap(), BTreeSet::from([EntityId(4)]));
        assert_eq!(c.docs_mentioning(EntityId(4)), &[DocId(0)]);
    }

    #[test]
    fn idf_closed_form() {
        let (c, _) = CorpusIndex::build(&["nolan"], Lexicon::new());
        assert_eq!(c.idf_score(DocId(0), &toks("nolan")).unwrap(), 1.0);
        assert_eq!(c.idf_score(DocId(0), &toks("who")).unwrap(), 0.0);
    }

    #[test]
    fn pull_docs_budget() {
        let c = movie_corpus();
        assert_eq!(c.pull_docs(EntityId(0), &toks("who directed inception"), 5), vec![DocId(0)]);
        assert!(c.pull_docs(EntityId(0), &toks("who"), 0).is_empty());
        assert!(c.pull_docs(EntityId(7), &toks("who"), 3).is_empty());
    }
}
