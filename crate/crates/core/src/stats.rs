//! Corpus summaries and the ingest metadata sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::vocab::{VocabCounter, Vocabulary};

pub const DEFAULT_MIN_COUNTS: [u64; 5] = [1, 2, 5, 10, 100];
pub const DEFAULT_TOP_N: usize = 50;

/// Per-platform document counts recorded by `ingest` next to the corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub documents_by_platform: BTreeMap<String, u64>,
    #[serde(default)]
    pub documents_by_board: BTreeMap<String, u64>,
}

impl CorpusMeta {
    pub fn sidecar_path(corpus: &Path) -> PathBuf {
        let mut name = corpus.as_os_str().to_owned();
        name.push(".meta.json");
        PathBuf::from(name)
    }

    pub fn record(&mut self, platform: &str, board: &str, documents: u64) {
        if documents == 0 {
            return;
        }
        *self.documents_by_platform.entry(platform.to_string()).or_default() += documents;
        *self.documents_by_board.entry(board.to_string()).or_default() += documents;
    }

    pub fn merge(&mut self, other: &CorpusMeta) {
        for (k, v) in &other.documents_by_platform {
            *self.documents_by_platform.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.documents_by_board {
            *self.documents_by_board.entry(k.clone()).or_default() += v;
        }
    }

    /// Reads the sidecar of `corpus`; `Ok(None)` when there is none.
    pub fn load_for(corpus: &Path) -> io::Result<Option<CorpusMeta>> {
        let path = Self::sidecar_path(corpus);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn save_for(&self, corpus: &Path) -> io::Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(io::Error::from)?;
        fs::write(Self::sidecar_path(corpus), json)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatformShare {
    pub platform: String,
    pub documents: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub documents: u64,
    pub tokens: u64,
    pub distinct_tokens: usize,
    /// `(min_count, vocabulary size)` pairs.
    pub vocab_sizes: Vec<(u64, usize)>,
    pub top_tokens: Vec<(String, u64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub platforms: Option<Vec<PlatformShare>>,
}

impl CorpusStats {
    pub fn to_report(&self) -> String {
        let mut out = format!("documents\t{}\ntokens\t{}\ndistinct\t{}\n", self.documents, self.tokens, self.distinct_tokens);
        for (m, n) in &self.vocab_sizes {
            out += &format!("vocab@min_count={m}\t{n}\n");
        }
        if let Some(platforms) = &self.platforms {
            for p in platforms {
                out += &format!("platform\t{}\t{}\t{:.1}%\n", p.platform, p.documents, p.share * 100.0);
            }
        }
        for (rank, (w, c)) in self.top_tokens.iter().enumerate() {
            out += &format!("top\t{}\t{w}\t{c}\n", rank + 1);
        }
        out
    }
}

/// Counts one pass over `corpus`. Every line is a document, including blank
/// ones. The returned vocabulary keeps every word (`min_count` 1) and is
/// `None` for a corpus without tokens.
pub fn corpus_stats(
    corpus: &Corpus,
    min_counts: &[u64],
    top_n: usize,
    meta: Option<&CorpusMeta>,
) -> io::Result<(CorpusStats, Option<Vocabulary>)> {
    let mut counter = VocabCounter::default();
    let mut documents = 0u64;
    corpus.for_each_document(|doc| {
        documents += 1;
        counter.add_document(doc.iter().copied());
    })?;
    let tokens = counter.seen_tokens();
    let distinct_tokens = counter.distinct();
    let vocab_sizes = min_counts.iter().map(|&m| (m, counter.size_at(m))).collect();
    let vocab = if tokens > 0 { counter.finish(1).ok() } else { None };
    let top_tokens = vocab
        .as_ref()
        .map(|v| v.words().iter().zip(v.counts()).take(top_n).map(|(w, &c)| (w.clone(), c)).collect())
        .unwrap_or_default();
    let platforms = meta.map(|m| {
        let total: u64 = m.documents_by_platform.values().sum();
        m.documents_by_platform
            .iter()
            .map(|(p, &n)| PlatformShare {
                platform: p.clone(),
                documents: n,
                share: if total == 0 { 0.0 } else { n as f64 / total as f64 },
            })
            .collect()
    });
    let stats = CorpusStats { documents, tokens, distinct_tokens, vocab_sizes, top_tokens, platforms };
    Ok((stats, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_line_corpus() {
        let c = Corpus::from_lines(["a b c", "a d"]);
        let (s, v) = corpus_stats(&c, &[1, 2], 50, None).unwrap();
        assert_eq!((s.documents, s.tokens, s.distinct_tokens), (2, 5, 4));
        assert_eq!(s.vocab_sizes, [(1, 4), (2, 1)]);
        assert_eq!(s.top_tokens[0], ("a".to_string(), 2));
        assert_eq!(v.unwrap().len(), 4);
        assert!(s.platforms.is_none());
    }

    #[test]
    fn empty_corpus() {
        let c = Corpus::Memory(Vec::new().into());
        let (s, v) = corpus_stats(&c, &DEFAULT_MIN_COUNTS, 50, None).unwrap();
        assert_eq!((s.documents, s.tokens), (0, 0));
        assert!(v.is_none());
        assert!(s.top_tokens.is_empty());
    }

    #[test]
    fn top_n_is_bounded_and_ordered() {
        let lines: Vec<String> = (0..100).map(|i| format!("w{i} common")).collect();
        let (s, _) = corpus_stats(&Corpus::from_lines(&lines), &[1], 50, None).unwrap();
        assert_eq!(s.top_tokens.len(), 50);
        assert_eq!(s.top_tokens[0], ("common".to_string(), 100));
        assert_eq!(s.top_tokens[1].0, "w0");
    }

    #[test]
    fn platform_share_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.txt");
        let mut meta = CorpusMeta::default();
        meta.record("fourchan", "pol", 9);
        meta.record("eightchan", "pol", 1);
        meta.save_for(&corpus).unwrap();
        let loaded = CorpusMeta::load_for(&corpus).unwrap().unwrap();
        assert_eq!(loaded, meta);
        assert_eq!(CorpusMeta::sidecar_path(&corpus).file_name().unwrap(), "corpus.txt.meta.json");
        let (s, _) = corpus_stats(&Corpus::from_lines(["x"]), &[1], 5, Some(&loaded)).unwrap();
        let p = s.platforms.unwrap();
        assert_eq!(p[1].platform, "fourchan");
        assert!((p[1].share - 0.9).abs() < 1e-12);
        assert!(CorpusMeta::load_for(&dir.path().join("other.txt")).unwrap().is_none());
    }
}
