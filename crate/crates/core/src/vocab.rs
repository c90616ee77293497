//! Vocabulary, frequent-word subsampling and the negative-sampling table.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

pub const DEFAULT_MIN_COUNT: u64 = 5;
pub const DEFAULT_NS_POWER: f64 = 0.75;
pub const DEFAULT_TABLE_SIZE: usize = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no word occurs at least {min_count} times")]
    EmptyVocabulary { min_count: u64 },
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("negative-sampling table size {size} is smaller than the vocabulary ({vocab})")]
    TableTooSmall { size: usize, vocab: usize },
    #[error("negative-sampling power must be positive, got {0}")]
    InvalidPower(f64),
}

/// Word list in descending-frequency order (ties lexicographic), with counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index_of: HashMap<String, usize>,
    counts: Vec<u64>,
    total_tokens: u64,
    min_count: u64,
}

impl Vocabulary {
    /// Counts tokens over `documents` and keeps words seen at least
    /// `min_count` times.
    pub fn build<I, D, S>(documents: I, min_count: u64) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counter = VocabCounter::default();
        for doc in documents {
            counter.add_document(doc);
        }
        counter.finish(min_count)
    }

    /// Builds from explicit `(word, count)` pairs, applying the same
    /// threshold and ordering as [`Vocabulary::build`].
    pub fn from_counts<I, S>(counts: I, min_count: u64) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut counter = VocabCounter::default();
        for (w, c) in counts {
            *counter.counts.entry(w.into()).or_insert(0) += c;
            counter.seen_tokens += c;
        }
        counter.finish(min_count)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index_of.get(word).copied()
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Sum of counts over retained words.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// `word<TAB>count` lines in index order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (w, c) in self.words.iter().zip(&self.counts) {
            out.push_str(w);
            out.push('\t');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }
}

/// Incremental token counter for corpora that are streamed.
#[derive(Debug, Default, Clone)]
pub struct VocabCounter {
    counts: HashMap<String, u64>,
    seen_tokens: u64,
}

impl VocabCounter {
    pub fn add_document<D, S>(&mut self, doc: D)
    where
        D: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for tok in doc {
            let tok = tok.as_ref();
            match self.counts.get_mut(tok) {
                Some(c) => *c += 1,
                None => {
                    self.counts.insert(tok.to_owned(), 1);
                }
            }
            self.seen_tokens += 1;
        }
    }

    pub fn seen_tokens(&self) -> u64 {
        self.seen_tokens
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Number of distinct words with count at least `min_count`.
    pub fn size_at(&self, min_count: u64) -> usize {
        self.counts.values().filter(|&&c| c >= min_count).count()
    }

    pub fn finish(self, min_count: u64) -> Result<Vocabulary, VocabError> {
        if min_count == 0 {
            return Err(VocabError::InvalidMinCount);
        }
        if self.seen_tokens == 0 {
            return Err(VocabError::EmptyCorpus);
        }
        let mut kept: Vec<(String, u64)> = self.counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        if kept.is_empty() {
            return Err(VocabError::EmptyVocabulary { min_count });
        }
        kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let total_tokens = kept.iter().map(|(_, c)| c).sum();
        let (words, counts): (Vec<_>, Vec<_>) = kept.into_iter().unzip();
        let index_of = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Vocabulary { words, index_of, counts, total_tokens, min_count })
    }
}

/// Probability of keeping one occurrence of word `index` under frequent-word
/// subsampling with threshold `t`. `t == 0` disables subsampling.
pub fn keep_probability(vocab: &Vocabulary, index: usize, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let ratio = t / (vocab.count(index) as f64 / vocab.total_tokens() as f64);
    (ratio.sqrt() + ratio).min(1.0)
}

/// Slot array for O(1) draws from the unigram^p noise distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSamplingTable {
    slots: Vec<u32>,
    power: f64,
}

impl NegativeSamplingTable {
    /// Fills `size` slots by the cumulative method: walking slots in order,
    /// slot `a` holds the first word whose cumulative normalized `f^p` mass
    /// reaches `a / size`.
    pub fn build(vocab: &Vocabulary, power: f64, size: usize) -> Result<Self, VocabError> {
        if power.is_nan() || power <= 0.0 || !power.is_finite() {
            return Err(VocabError::InvalidPower(power));
        }
        let v = vocab.len();
        if size < v {
            return Err(VocabError::TableTooSmall { size, vocab: v });
        }
        let weights: Vec<f64> = vocab.counts().iter().map(|&c| (c as f64).powf(power)).collect();
        let total: f64 = weights.iter().sum();

        let mut slots = Vec::with_capacity(size);
        let mut word = 0usize;
        let mut cumulative = weights[0] / total;
        for a in 0..size {
            let position = a as f64 / size as f64;
            while position > cumulative && word + 1 < v {
                word += 1;
                cumulative += weights[word] / total;
            }
            slots.push(word as u32);
        }
        Ok(NegativeSamplingTable { slots, power })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn slots(&self) -> &[u32] {
        &self.slots
    }

    /// Number of slots held by each word.
    pub fn slot_counts(&self, vocab_len: usize) -> Vec<usize> {
        let mut counts = vec![0; vocab_len];
        for &s in &self.slots {
            counts[s as usize] += 1;
        }
        counts
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.slots[rng.random_range(0..self.slots.len())] as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn docs(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| l.split_whitespace().map(String::from).collect()).collect()
    }

    #[test]
    fn counts_and_order() {
        let v = Vocabulary::build(docs(&["a b a", "a c"]), 1).unwrap();
        assert_eq!(v.words(), ["a", "b", "c"]);
        assert_eq!(v.counts(), [3, 1, 1]);
        assert_eq!(v.total_tokens(), 5);
        assert_eq!(v.index_of("c"), Some(2));
        assert_eq!(v.index_of("d"), None);
    }

    #[test]
    fn min_count_threshold() {
        let v = Vocabulary::build(docs(&["a b a", "a c"]), 2).unwrap();
        assert_eq!(v.words(), ["a"]);
        assert_eq!(v.total_tokens(), 3);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert_eq!(Vocabulary::build(docs(&[]), 1), Err(VocabError::EmptyCorpus));
        assert_eq!(Vocabulary::build(docs(&["", ""]), 1), Err(VocabError::EmptyCorpus));
        assert_eq!(Vocabulary::build(docs(&["a b"]), 2), Err(VocabError::EmptyVocabulary { min_count: 2 }));
        assert_eq!(Vocabulary::build(docs(&["a"]), 0), Err(VocabError::InvalidMinCount));
    }

    #[test]
    fn tie_break_is_lexicographic_and_deterministic() {
        let a = Vocabulary::build(docs(&["z y x w", "w x y z", "q"]), 1).unwrap();
        assert_eq!(a.words(), ["w", "x", "y", "z", "q"]);
        let b = Vocabulary::build(docs(&["z y x w", "w x y z", "q"]), 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tsv_dump() {
        let v = Vocabulary::build(docs(&["a b a"]), 1).unwrap();
        assert_eq!(v.to_tsv(), "a\t2\nb\t1\n");
    }

    #[test]
    fn ns_table_two_words() {
        let v = Vocabulary::from_counts([("a", 3), ("b", 1)], 1).unwrap();
        let t = NegativeSamplingTable::build(&v, 0.75, 8).unwrap();
        assert_eq!(t.slots(), [0, 0, 0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn ns_table_single_word() {
        let v = Vocabulary::from_counts([("a", 7)], 1).unwrap();
        let t = NegativeSamplingTable::build(&v, 0.75, 100).unwrap();
        assert!(t.slots().iter().all(|&s| s == 0));
    }

    #[test]
    fn ns_table_uniform_counts() {
        let v = Vocabulary::from_counts((0..7).map(|i| (format!("w{i}"), 4)), 1).unwrap();
        for power in [0.3, 0.75, 1.0, 2.0] {
            let t = NegativeSamplingTable::build(&v, power, 1000).unwrap();
            for c in t.slot_counts(7) {
                assert!((c as i64 - 1000 / 7).abs() <= 1, "power {power}: {c}");
            }
        }
    }

    #[test]
    fn ns_table_slot_shares_match_mass() {
        let counts: Vec<u64> = vec![1000, 400, 90, 33, 12, 5, 5, 2, 1, 1];
        let v = Vocabulary::from_counts(counts.iter().enumerate().map(|(i, &c)| (format!("w{i}"), c)), 1).unwrap();
        let size = 10_007;
        let t = NegativeSamplingTable::build(&v, 0.75, size).unwrap();
        let mass: Vec<f64> = v.counts().iter().map(|&c| (c as f64).powf(0.75)).collect();
        let total: f64 = mass.iter().sum();
        for (i, c) in t.slot_counts(v.len()).into_iter().enumerate() {
            let expected = mass[i] / total * size as f64;
            assert!((c as f64 - expected).abs() <= 1.0 + 1e-9, "word {i}: {c} vs {expected}");
        }
    }

    #[test]
    fn ns_table_empirical_draws() {
        let counts: Vec<u64> = vec![500, 300, 120, 80, 40, 30, 20, 10, 5, 1];
        let v = Vocabulary::from_counts(counts.iter().enumerate().map(|(i, &c)| (format!("w{i}"), c)), 1).unwrap();
        let t = NegativeSamplingTable::build(&v, 0.75, 1_000_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 1_000_000;
        let mut hist = vec![0u64; v.len()];
        for _ in 0..draws {
            hist[t.sample(&mut rng)] += 1;
        }
        let mass: Vec<f64> = v.counts().iter().map(|&c| (c as f64).powf(0.75)).collect();
        let total: f64 = mass.iter().sum();
        for i in 0..v.len() {
            let empirical = hist[i] as f64 / draws as f64;
            assert!((empirical - mass[i] / total).abs() < 0.01, "word {i}");
        }
    }

    #[test]
    fn ns_table_errors() {
        let v = Vocabulary::from_counts([("a", 3), ("b", 1)], 1).unwrap();
        assert_eq!(NegativeSamplingTable::build(&v, 0.75, 1), Err(VocabError::TableTooSmall { size: 1, vocab: 2 }));
        assert!(matches!(NegativeSamplingTable::build(&v, 0.0, 8), Err(VocabError::InvalidPower(_))));
        assert!(matches!(NegativeSamplingTable::build(&v, f64::NAN, 8), Err(VocabError::InvalidPower(_))));
    }

    #[test]
    fn keep_probability_values() {
        // a: 100 of 10_000 tokens -> phi = 0.01
        let v = Vocabulary::from_counts([("a", 100), ("b", 9_900)], 1).unwrap();
        let a = v.index_of("a").unwrap();
        assert_eq!(keep_probability(&v, a, 0.0), 1.0);
        assert_eq!(keep_probability(&v, a, 0.01), 1.0);
        assert!((keep_probability(&v, a, 1e-4) - 0.11).abs() < 1e-12);
    }
}
