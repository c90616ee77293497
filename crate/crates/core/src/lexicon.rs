//! Iterative lexicon expansion.
//!
//! Two candidate sources feed a human review step:
//!
//! * model neighbours of lexicon terms above a cosine threshold;
//! * external messages that mention a lexicon term, where every co-occurring
//!   token is a candidate if the model has never seen it, or if its vector
//!   lies close to the lexicon centroid (the normalized mean of the
//!   in-vocabulary lexicon vectors).
//!
//! Accepted candidates are merged with [`review_merge`], which never removes
//! terms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::{is_normalized_token, normalize_text};
use crate::query::SimilarityIndex;

pub const DEFAULT_NEIGHBOR_THRESHOLD: f64 = 0.7;
pub const DEFAULT_EXTERNAL_THRESHOLD: f64 = 0.5;
pub const MAX_SAMPLE_CONTEXTS: usize = 3;
const EXCERPT_CHARS: usize = 200;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("`{0}` is not a normalized token")]
    InvalidTerm(String),
    #[error("duplicate term `{term}` at line {line}")]
    Duplicate { term: String, line: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("threshold must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("per-term neighbour count must be at least 1")]
    InvalidCount,
    #[error("none of the lexicon terms is in the model vocabulary")]
    NoTermInVocabulary,
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    Neighbor,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    Neighbor,
    External,
}

impl From<CandidateSource> for Provenance {
    fn from(s: CandidateSource) -> Self {
        match s {
            CandidateSource::Neighbor => Provenance::Neighbor,
            CandidateSource::External => Provenance::External,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub provenance: Provenance,
    pub score: Option<f64>,
    /// Unix seconds.
    pub first_seen: i64,
}

/// One JSON Lines record of a persisted lexicon.
#[derive(Debug, Serialize, Deserialize)]
struct LexiconRecord {
    term: String,
    provenance: Provenance,
    #[serde(default)]
    score: Option<f64>,
    first_seen: i64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, LexiconEntry>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// A lexicon of seed terms.
    pub fn from_seeds<I, S>(terms: I, now: i64) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Lexicon::new();
        for t in terms {
            lex.add_seed(t.as_ref(), now)?;
        }
        Ok(lex)
    }

    /// Adds a seed term; returns false if it was already present.
    pub fn add_seed(&mut self, term: &str, now: i64) -> Result<bool, LexiconError> {
        if !is_normalized_token(term) {
            return Err(LexiconError::InvalidTerm(term.to_string()));
        }
        if self.entries.contains_key(term) {
            return Ok(false);
        }
        self.entries.insert(term.to_string(), LexiconEntry { provenance: Provenance::Seed, score: None, first_seen: now });
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.contains_key(term)
    }

    pub fn get(&self, term: &str) -> Option<&LexiconEntry> {
        self.entries.get(term)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LexiconEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, LexiconError> {
        let mut entries = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LexiconRecord =
                serde_json::from_str(&line).map_err(|e| LexiconError::Parse { line: line_no, message: e.to_string() })?;
            if !is_normalized_token(&rec.term) {
                return Err(LexiconError::InvalidTerm(rec.term));
            }
            if entries.contains_key(&rec.term) {
                return Err(LexiconError::Duplicate { term: rec.term, line: line_no });
            }
            entries.insert(
                rec.term,
                LexiconEntry { provenance: rec.provenance, score: rec.score, first_seen: rec.first_seen },
            );
        }
        Ok(Lexicon { entries })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), LexiconError> {
        for (term, e) in &self.entries {
            let rec = LexiconRecord { term: term.clone(), provenance: e.provenance, score: e.score, first_seen: e.first_seen };
            serde_json::to_writer(&mut out, &rec).map_err(io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Normalized mean of the in-vocabulary term vectors; `None` when no term
    /// is in the model or the mean is zero.
    pub fn centroid(&self, index: &SimilarityIndex<'_>) -> Option<Vec<f32>> {
        let model = index.model();
        let mut sum = vec![0f64; model.dim()];
        let mut found = 0usize;
        for term in self.terms() {
            if let Some(v) = model.vector_of(term) {
                for (s, &x) in sum.iter_mut().zip(v) {
                    *s += x as f64;
                }
                found += 1;
            }
        }
        if found == 0 {
            return None;
        }
        let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        Some(sum.iter().map(|x| (x / norm) as f32).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTerm {
    pub term: String,
    pub evidence_count: u64,
    pub sample_contexts: Vec<String>,
    pub source: CandidateSource,
    /// Highest similarity observed (to a lexicon term or to the centroid);
    /// absent for out-of-vocabulary terms.
    pub score: Option<f64>,
}

/// Accumulates candidates from any number of scans or shards.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    by_term: HashMap<String, CandidateTerm>,
}

impl CandidateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, term: &str, source: CandidateSource, score: Option<f64>, context: Option<String>) {
        let entry = self.by_term.entry(term.to_string()).or_insert_with(|| CandidateTerm {
            term: term.to_string(),
            evidence_count: 0,
            sample_contexts: Vec::new(),
            source,
            score: None,
        });
        entry.evidence_count += 1;
        entry.score = max_score(entry.score, score);
        if let Some(ctx) = context {
            if entry.sample_contexts.len() < MAX_SAMPLE_CONTEXTS && !entry.sample_contexts.contains(&ctx) {
                entry.sample_contexts.push(ctx);
            }
        }
    }

    pub fn merge(&mut self, other: CandidateSet) {
        for (term, c) in other.by_term {
            match self.by_term.get_mut(&term) {
                Some(mine) => {
                    mine.evidence_count += c.evidence_count;
                    mine.score = max_score(mine.score, c.score);
                    for ctx in c.sample_contexts {
                        if mine.sample_contexts.len() < MAX_SAMPLE_CONTEXTS && !mine.sample_contexts.contains(&ctx) {
                            mine.sample_contexts.push(ctx);
                        }
                    }
                }
                None => {
                    self.by_term.insert(term, c);
                }
            }
        }
    }

    /// Candidates by evidence (descending), then term.
    pub fn into_sorted(self) -> Vec<CandidateTerm> {
        let mut out: Vec<_> = self.by_term.into_values().collect();
        out.sort_by(|a, b| b.evidence_count.cmp(&a.evidence_count).then_with(|| a.term.cmp(&b.term)));
        out
    }
}

fn max_score(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn check_threshold(threshold: f64) -> Result<(), LexiconError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(LexiconError::InvalidThreshold(threshold))
    }
}

/// Neighbours of every in-vocabulary lexicon term with cosine at least
/// `threshold`, excluding terms already in the lexicon.
pub fn expand_by_neighbors(
    lexicon: &Lexicon,
    index: &SimilarityIndex<'_>,
    threshold: f64,
    per_term: usize,
) -> Result<Vec<CandidateTerm>, LexiconError> {
    check_threshold(threshold)?;
    if per_term == 0 {
        return Err(LexiconError::InvalidCount);
    }
    let mut set = CandidateSet::new();
    let mut any_in_vocab = false;
    for term in lexicon.terms() {
        if index.model().index_of(term).is_none() {
            continue;
        }
        any_in_vocab = true;
        let result = match index.most_similar(term, per_term) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping `{term}`: {e}");
                continue;
            }
        };
        for n in result.neighbors {
            if n.score >= threshold && !lexicon.contains(&n.word) {
                let ctx = format!("neighbor of {term} ({:.2})", n.score);
                set.add(&n.word, CandidateSource::Neighbor, Some(n.score), Some(ctx));
            }
        }
    }
    if !any_in_vocab {
        return Err(LexiconError::NoTermInVocabulary);
    }
    Ok(set.into_sorted())
}

/// Scans raw messages for unknown words co-occurring with lexicon terms.
pub fn scan_external<I, S>(messages: I, lexicon: &Lexicon, index: &SimilarityIndex<'_>, threshold: f64) -> Vec<CandidateTerm>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    scan_into(messages, lexicon, index, threshold).into_sorted()
}

/// Like [`scan_external`] but returns the unsorted set, for merging shards.
pub fn scan_into<I, S>(messages: I, lexicon: &Lexicon, index: &SimilarityIndex<'_>, threshold: f64) -> CandidateSet
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let centroid = lexicon.centroid(index);
    let model = index.model();
    let mut set = CandidateSet::new();
    for message in messages {
        let message = message.as_ref();
        let doc = normalize_text(message);
        if !doc.tokens.iter().any(|t| lexicon.contains(t)) {
            continue;
        }
        let distinct: BTreeSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for token in distinct {
            if lexicon.contains(token) {
                continue;
            }
            let score = match model.index_of(token) {
                None => None,
                Some(row) => match centroid.as_deref().map(|c| index.similarity_to(c, row)) {
                    Some(Ok(s)) if s >= threshold => Some(s),
                    _ => continue,
                },
            };
            set.add(token, CandidateSource::External, score, Some(excerpt(message)));
        }
    }
    set
}

fn excerpt(message: &str) -> String {
    let trimmed = message.trim();
    match trimmed.char_indices().nth(EXCERPT_CHARS) {
        Some((cut, _)) => format!("{}…", &trimmed[..cut]),
        None => trimmed.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub lexicon: Lexicon,
    pub added: Vec<String>,
    /// Accepted terms that were already present; left unchanged.
    pub duplicates: Vec<String>,
}

/// Returns a new lexicon with the accepted candidates added. The input
/// lexicon is not modified.
pub fn review_merge(lexicon: &Lexicon, accepted: &[CandidateTerm], now: i64) -> Result<MergeOutcome, LexiconError> {
    let mut next = lexicon.clone();
    let mut added = Vec::new();
    let mut duplicates = Vec::new();
    for c in accepted {
        if !is_normalized_token(&c.term) {
            return Err(LexiconError::InvalidTerm(c.term.clone()));
        }
        if next.contains(&c.term) {
            log::warn!("`{}` is already in the lexicon; ignoring", c.term);
            duplicates.push(c.term.clone());
            continue;
        }
        next.entries.insert(
            c.term.clone(),
            LexiconEntry { provenance: c.source.into(), score: c.score, first_seen: now },
        );
        added.push(c.term.clone());
    }
    Ok(MergeOutcome { lexicon: next, added, duplicates })
}
