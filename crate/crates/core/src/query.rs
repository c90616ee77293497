//! Exact cosine nearest-neighbour search over a loaded model.

use serde::Serialize;
use thiserror::Error;

use crate::model_io::EmbeddingModel;

/// Suggestions for an out-of-vocabulary word are within this edit distance.
pub const OOV_SUGGESTION_DISTANCE: usize = 2;
const MAX_SUGGESTIONS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("vector has {got} dimensions, model has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("`{word}` is not in the model vocabulary{}", suggestion_suffix(.suggestions))]
    OutOfVocabulary { word: String, suggestions: Vec<String> },
    #[error("n must be at least 1")]
    InvalidCount,
}

fn suggestion_suffix(suggestions: &[String]) -> String {
    if suggestions.is_empty() {
        String::new()
    } else {
        format!(" (did you mean: {}?)", suggestions.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub word: String,
    pub index: usize,
    pub score: f64,
}

impl Neighbor {
    /// Score rounded to two decimals for display.
    pub fn score_rounded(&self) -> f64 {
        (self.score * 100.0).round() / 100.0
    }
}

/// Neighbours in descending score order, ties by vocabulary index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimilarityResult {
    pub neighbors: Vec<Neighbor>,
}

impl SimilarityResult {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn words(&self) -> Vec<&str> {
        self.neighbors.iter().map(|n| n.word.as_str()).collect()
    }

    pub fn get(&self, word: &str) -> Option<&Neighbor> {
        self.neighbors.iter().find(|n| n.word == word)
    }

    /// `[{word, score, score_rounded}, ...]`
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.neighbors
                .iter()
                .map(|n| serde_json::json!({"word": n.word, "score": n.score, "score_rounded": n.score_rounded()}))
                .collect(),
        )
    }
}

fn norm<T: Copy + Into<f64>>(v: &[T]) -> f64 {
    v.iter().map(|&x| x.into() * x.into()).sum::<f64>().sqrt()
}

fn dot<A: Copy + Into<f64>, B: Copy + Into<f64>>(a: &[A], b: &[B]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.into() * y.into()).sum()
}

/// `a·b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64, QueryError> {
    if a.len() != b.len() {
        return Err(QueryError::Dimension { expected: a.len(), got: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(QueryError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Exhaustive-scan index with precomputed row norms. Rows with zero norm
/// never appear in results.
#[derive(Debug, Clone)]
pub struct SimilarityIndex<'m> {
    model: &'m EmbeddingModel,
    norms: Vec<f64>,
}

impl<'m> SimilarityIndex<'m> {
    pub fn new(model: &'m EmbeddingModel) -> Self {
        let norms = (0..model.len()).map(|i| norm(model.vector(i))).collect();
        SimilarityIndex { model, norms }
    }

    pub fn model(&self) -> &'m EmbeddingModel {
        self.model
    }

    /// Row index of `word`, or an OOV error carrying close spellings.
    pub fn lookup(&self, word: &str) -> Result<usize, QueryError> {
        self.model.index_of(word).ok_or_else(|| QueryError::OutOfVocabulary {
            word: word.to_string(),
            suggestions: suggest(self.model, word),
        })
    }

    /// `n` nearest words to `word`, excluding `word` itself.
    pub fn most_similar(&self, word: &str, n: usize) -> Result<SimilarityResult, QueryError> {
        let index = self.lookup(word)?;
        self.scan(self.model.vector(index), self.norms[index], n, Some(index))
    }

    /// `n` nearest words to an arbitrary vector.
    pub fn nearest_to_vector(&self, v: &[f32], n: usize) -> Result<SimilarityResult, QueryError> {
        if v.len() != self.model.dim() {
            return Err(QueryError::Dimension { expected: self.model.dim(), got: v.len() });
        }
        self.scan(v, norm(v), n, None)
    }

    /// Cosine between the rows of two vocabulary words.
    pub fn similarity(&self, a: usize, b: usize) -> Result<f64, QueryError> {
        if self.norms[a] == 0.0 || self.norms[b] == 0.0 {
            return Err(QueryError::ZeroVector);
        }
        Ok((dot(self.model.vector(a), self.model.vector(b)) / (self.norms[a] * self.norms[b])).clamp(-1.0, 1.0))
    }

    /// Cosine between a vector and a vocabulary row.
    pub fn similarity_to(&self, v: &[f32], row: usize) -> Result<f64, QueryError> {
        let nv = norm(v);
        if nv == 0.0 || self.norms[row] == 0.0 {
            return Err(QueryError::ZeroVector);
        }
        Ok((dot(v, self.model.vector(row)) / (nv * self.norms[row])).clamp(-1.0, 1.0))
    }

    fn scan(&self, query: &[f32], query_norm: f64, n: usize, exclude: Option<usize>) -> Result<SimilarityResult, QueryError> {
        if n == 0 {
            return Err(QueryError::InvalidCount);
        }
        if query_norm == 0.0 {
            return Err(QueryError::ZeroVector);
        }
        let mut scored: Vec<(f64, usize)> = (0..self.model.len())
            .filter(|&i| Some(i) != exclude && self.norms[i] > 0.0)
            .map(|i| {
                let s = dot(query, self.model.vector(i)) / (query_norm * self.norms[i]);
                (s.clamp(-1.0, 1.0), i)
            })
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if scored.len() > n {
            scored.select_nth_unstable_by(n - 1, order);
            scored.truncate(n);
        }
        scored.sort_unstable_by(order);
        Ok(SimilarityResult {
            neighbors: scored
                .into_iter()
                .map(|(score, index)| Neighbor { word: self.model.word(index).to_string(), index, score })
                .collect(),
        })
    }
}

/// Vocabulary words within [`OOV_SUGGESTION_DISTANCE`] edits of `word`,
/// closest first.
pub fn suggest(model: &EmbeddingModel, word: &str) -> Vec<String> {
    let len = word.chars().count();
    let mut close: Vec<(usize, usize)> = model
        .words()
        .iter()
        .enumerate()
        .filter(|(_, w)| w.chars().count().abs_diff(len) <= OOV_SUGGESTION_DISTANCE)
        .filter_map(|(i, w)| {
            let d = strsim::levenshtein(word, w);
            (d <= OOV_SUGGESTION_DISTANCE).then_some((d, i))
        })
        .collect();
    close.sort_unstable();
    close.truncate(MAX_SUGGESTIONS);
    close.into_iter().map(|(_, i)| model.word(i).to_string()).collect()
}

/// Convenience wrapper building a throwaway index.
pub fn most_similar(model: &EmbeddingModel, word: &str, n: usize) -> Result<SimilarityResult, QueryError> {
    SimilarityIndex::new(model).most_similar(word, n)
}

pub fn nearest_to_vector(model: &EmbeddingModel, v: &[f32], n: usize) -> Result<SimilarityResult, QueryError> {
    SimilarityIndex::new(model).nearest_to_vector(v, n)
}
