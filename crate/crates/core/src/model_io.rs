//! word2vec-compatible model files.
//!
//! Text ("raw") layout: a `V D` header line, then one `word v1 .. vD` line
//! per word. Values are written in the shortest form that parses back to
//! the same `f32`. Binary layout: the same header line, then per word the
//! UTF-8 word, one space, `D` little-endian `f32`s and a newline. The binary
//! loader also accepts files without the per-record newline.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Longest word the binary loader will accept before assuming the file is
/// not a binary model.
const MAX_WORD_BYTES: usize = 4096;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("bad header at line 1: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Text { line: usize, message: String },
    #[error("header declares {expected} words but the file ends at line {line} after {found}")]
    MissingRecords { expected: usize, found: usize, line: usize },
    #[error("truncated binary model at byte {offset}: {message}")]
    Truncated { offset: u64, message: String },
    #[error("not a binary word2vec model (byte {offset}): {message}")]
    Format { offset: u64, message: String },
    #[error("invalid word {0:?}: words must be non-empty and contain no whitespace")]
    InvalidWord(String),
    #[error("matrix shape mismatch: {0}")]
    Shape(String),
}

/// Vocabulary in file order plus a `V x D` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    dim: usize,
}

impl EmbeddingModel {
    pub fn new(words: Vec<String>, vectors: Vec<f32>, dim: usize) -> Result<Self, ModelError> {
        if vectors.len() != words.len() * dim {
            return Err(ModelError::Shape(format!(
                "{} words x {} dims needs {} values, got {}",
                words.len(),
                dim,
                words.len() * dim,
                vectors.len()
            )));
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::Shape(format!("non-finite value in row {}", pos / dim.max(1))));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            index.entry(w.clone()).or_insert(i);
        }
        Ok(EmbeddingModel { words, index, vectors, dim })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    /// First row holding `word`.
    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vector_of(&self, word: &str) -> Option<&[f32]> {
        self.index_of(word).map(|i| self.vector(i))
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        EmbeddingModel {
            words: self.words.clone(),
            index: self.index.clone(),
            vectors: self.vectors.iter().map(|v| v * factor).collect(),
            dim: self.dim,
        }
    }

    fn check_words(&self) -> Result<(), ModelError> {
        match self.words.iter().find(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
            Some(w) => Err(ModelError::InvalidWord(w.clone())),
            None => Ok(()),
        }
    }

    pub fn write_text<W: Write>(&self, out: W) -> Result<(), ModelError> {
        self.check_words()?;
        let mut out = BufWriter::new(out);
        writeln!(out, "{} {}", self.len(), self.dim)?;
        let mut line = String::new();
        for (i, word) in self.words.iter().enumerate() {
            line.clear();
            line.push_str(word);
            for &v in self.vector(i) {
                line.push(' ');
                line.push_str(&format_value(v));
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(mut reader: R) -> Result<Self, ModelError> {
        let mut buf = Vec::new();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Err(ModelError::Header("empty file".into()));
        }
        let header = std::str::from_utf8(&buf).map_err(|_| ModelError::Header("not UTF-8".into()))?;
        let (count, dim) = parse_header(header)?;

        let mut words = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count * dim);
        let mut line_no = 1;
        while words.len() < count {
            buf.clear();
            if reader.read_until(b'\n', &mut buf)? == 0 {
                return Err(ModelError::MissingRecords { expected: count, found: words.len(), line: line_no });
            }
            line_no += 1;
            let text_err = |message: String| ModelError::Text { line: line_no, message };
            let line = std::str::from_utf8(&buf).map_err(|_| text_err("not valid UTF-8".into()))?;
            let mut fields = line.split_ascii_whitespace();
            let word = fields.next().ok_or_else(|| text_err("empty record".into()))?;
            let before = vectors.len();
            for field in fields {
                let v = f32::from_str(field).map_err(|_| text_err(format!("non-numeric value {field:?}")))?;
                if !v.is_finite() {
                    return Err(text_err(format!("non-finite value {field:?}")));
                }
                vectors.push(v);
            }
            let got = vectors.len() - before;
            if got != dim {
                return Err(text_err(format!("expected {dim} values for {word:?}, found {got}")));
            }
            words.push(word.to_owned());
        }
        loop {
            buf.clear();
            if reader.read_until(b'\n', &mut buf)? == 0 {
                break;
            }
            line_no += 1;
            if !buf.iter().all(u8::is_ascii_whitespace) {
                return Err(ModelError::Text {
                    line: line_no,
                    message: format!("unexpected record beyond the {count} declared in the header"),
                });
            }
        }
        EmbeddingModel::new(words, vectors, dim)
    }

    pub fn write_binary<W: Write>(&self, out: W) -> Result<(), ModelError> {
        self.check_words()?;
        let mut out = BufWriter::new(out);
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (i, word) in self.words.iter().enumerate() {
            out.write_all(word.as_bytes())?;
            out.write_all(b" ")?;
            for &v in self.vector(i) {
                out.write_all(&v.to_le_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary<R: BufRead>(reader: R) -> Result<Self, ModelError> {
        let mut r = CountingReader { inner: reader, offset: 0 };
        let mut buf = Vec::new();
        r.read_until_limited(b'\n', &mut buf, 128)?;
        if buf.last() != Some(&b'\n') {
            return Err(ModelError::Header("missing or overlong header line".into()));
        }
        let header = std::str::from_utf8(&buf).map_err(|_| ModelError::Header("not UTF-8".into()))?;
        let (count, dim) = parse_header(header)?;

        let mut words = Vec::with_capacity(count);
        let mut vectors = vec![0f32; count * dim];
        let mut raw = vec![0u8; 4 * dim];
        for i in 0..count {
            // optional newline left over from the previous record
            while r.peek()? == Some(b'\n') {
                r.consume(1);
            }
            let word_start = r.offset;
            buf.clear();
            r.read_until_limited(b' ', &mut buf, MAX_WORD_BYTES)?;
            match buf.last() {
                Some(b' ') => {
                    buf.pop();
                }
                _ if buf.len() >= MAX_WORD_BYTES => {
                    return Err(ModelError::Format { offset: word_start, message: "word too long".into() })
                }
                _ => {
                    return Err(ModelError::Truncated {
                        offset: r.offset,
                        message: format!("end of file inside word {} of {count}", i + 1),
                    })
                }
            }
            let word = String::from_utf8(std::mem::take(&mut buf))
                .map_err(|_| ModelError::Format { offset: word_start, message: "word is not UTF-8".into() })?;
            if word.is_empty() || word.contains('\n') {
                return Err(ModelError::Format { offset: word_start, message: format!("malformed word {word:?}") });
            }

            let vec_start = r.offset;
            let got = r.read_fully(&mut raw)?;
            if got < raw.len() {
                return Err(ModelError::Truncated {
                    offset: r.offset,
                    message: format!("end of file inside the vector of {word:?} ({got} of {} bytes)", raw.len()),
                });
            }
            if i == 0 && looks_like_text(&raw) {
                return Err(ModelError::Format { offset: vec_start, message: "vector data is ASCII text; is this a text-format model?".into() });
            }
            for (j, chunk) in raw.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
                if !v.is_finite() {
                    return Err(ModelError::Format {
                        offset: vec_start + 4 * j as u64,
                        message: format!("non-finite value in the vector of {word:?}"),
                    });
                }
                vectors[i * dim + j] = v;
            }
            words.push(word);
        }
        while let Some(b) = r.peek()? {
            if !b.is_ascii_whitespace() {
                return Err(ModelError::Format { offset: r.offset, message: "trailing data after the last record".into() });
            }
            r.consume(1);
        }
        EmbeddingModel::new(words, vectors, dim)
    }

    pub fn save_text(&self, path: &Path) -> Result<(), ModelError> {
        self.write_text(File::create(path)?)
    }

    pub fn load_text(path: &Path) -> Result<Self, ModelError> {
        Self::read_text(BufReader::new(File::open(path)?))
    }

    pub fn save_binary(&self, path: &Path) -> Result<(), ModelError> {
        self.write_binary(File::create(path)?)
    }

    pub fn load_binary(path: &Path) -> Result<Self, ModelError> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: &Path, format: ModelFormat) -> Result<(), ModelError> {
        match format {
            ModelFormat::Text => self.save_text(path),
            ModelFormat::Binary => self.save_binary(path),
        }
    }

    pub fn load(path: &Path, format: ModelFormat) -> Result<Self, ModelError> {
        match format {
            ModelFormat::Text => Self::load_text(path),
            ModelFormat::Binary => Self::load_binary(path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFormat {
    Text,
    Binary,
}

impl ModelFormat {
    /// `.bin` is binary; `.txt`, `.vec` and anything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("bin") => ModelFormat::Binary,
            _ => ModelFormat::Text,
        }
    }
}

impl FromStr for ModelFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "txt" | "text" => Ok(ModelFormat::Text),
            "bin" | "binary" => Ok(ModelFormat::Binary),
            _ => Err(format!("unknown model format `{s}` (expected bin or txt)")),
        }
    }
}

fn parse_header(line: &str) -> Result<(usize, usize), ModelError> {
    let mut parts = line.split_ascii_whitespace();
    let mut number = |what: &str| -> Result<usize, ModelError> {
        let field = parts.next().ok_or_else(|| ModelError::Header(format!("missing {what}")))?;
        field.parse().map_err(|_| ModelError::Header(format!("{what} {field:?} is not a number")))
    };
    let count = number("word count")?;
    let dim = number("dimension")?;
    if parts.next().is_some() {
        return Err(ModelError::Header("expected exactly two numbers".into()));
    }
    if dim == 0 {
        return Err(ModelError::Header("dimension must be positive".into()));
    }
    Ok((count, dim))
}

/// Shortest text that parses back to the same `f32`.
pub fn format_value(v: f32) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e7).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn looks_like_text(raw: &[u8]) -> bool {
    raw.contains(&b' ')
        && raw
            .iter()
            .all(|b| b.is_ascii_digit() || matches!(b, b' ' | b'.' | b'-' | b'+' | b'e' | b'E' | b'\n' | b'\r'))
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: BufRead> CountingReader<R> {
    fn peek(&mut self) -> io::Result<Option<u8>> {
        Ok(self.inner.fill_buf()?.first().copied())
    }

    fn consume(&mut self, n: usize) {
        self.inner.consume(n);
        self.offset += n as u64;
    }

    /// Like `read_until`, but stops after `limit` bytes.
    fn read_until_limited(&mut self, delim: u8, out: &mut Vec<u8>, limit: usize) -> io::Result<()> {
        while out.len() < limit {
            let available = self.inner.fill_buf()?;
            if available.is_empty() {
                return Ok(());
            }
            let room = limit - out.len();
            let window = &available[..available.len().min(room)];
            match window.iter().position(|&b| b == delim) {
                Some(i) => {
                    out.extend_from_slice(&window[..=i]);
                    self.consume(i + 1);
                    return Ok(());
                }
                None => {
                    let n = window.len();
                    out.extend_from_slice(window);
                    self.consume(n);
                }
            }
        }
        Ok(())
    }

    /// Reads until `buf` is full or EOF; returns bytes read.
    fn read_fully(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let mut filled = 0;
        while filled < buf.len() {
            let n = self.inner.read(&mut buf[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
            self.offset += n as u64;
        }
        Ok(filled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn toy() -> EmbeddingModel {
        EmbeddingModel::new(vec!["a".into(), "b".into()], vec![1.0, 0.0, 0.0, 1.0], 2).unwrap()
    }

    fn text_bytes(m: &EmbeddingModel) -> Vec<u8> {
        let mut out = Vec::new();
        m.write_text(&mut out).unwrap();
        out
    }

    fn binary_bytes(m: &EmbeddingModel) -> Vec<u8> {
        let mut out = Vec::new();
        m.write_binary(&mut out).unwrap();
        out
    }

    #[test]
    fn text_exact_bytes() {
        assert_eq!(text_bytes(&toy()), b"2 2\na 1 0\nb 0 1\n");
    }

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(0.5), "0.5");
        assert_eq!(format_value(-0.0), "-0");
        assert_eq!(format_value(1e-7), "1e-7");
        assert_eq!(format_value(3.0e9), "3e9");
        assert_eq!(format_value(0.1), "0.1");
        for v in [1.0e-30f32, 0.333_333_34, 123_456.79, f32::MIN_POSITIVE, f32::MAX] {
            assert_eq!(format_value(v).parse::<f32>().unwrap(), v);
        }
    }

    #[test]
    fn text_missing_record() {
        let err = EmbeddingModel::read_text(Cursor::new("3 2\na 1 0\nb 0 1\n")).unwrap_err();
        match err {
            ModelError::MissingRecords { expected: 3, found: 2, line: 3 } => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn text_errors() {
        assert!(matches!(
            EmbeddingModel::read_text(Cursor::new("2 2\na 1 x\nb 0 1\n")),
            Err(ModelError::Text { line: 2, .. })
        ));
        assert!(matches!(
            EmbeddingModel::read_text(Cursor::new("2 2\na 1 0\nb 0\n")),
            Err(ModelError::Text { line: 3, .. })
        ));
        assert!(matches!(
            EmbeddingModel::read_text(Cursor::new("1 2\na 1 0\nb 0 1\n")),
            Err(ModelError::Text { line: 3, .. })
        ));
        assert!(matches!(EmbeddingModel::read_text(Cursor::new("")), Err(ModelError::Header(_))));
        assert!(matches!(EmbeddingModel::read_text(Cursor::new("two 2\n")), Err(ModelError::Header(_))));
        assert!(matches!(
            EmbeddingModel::read_text(Cursor::new("1 1\na nan\n")),
            Err(ModelError::Text { line: 2, .. })
        ));
    }

    #[test]
    fn text_loader_is_lenient_about_whitespace_and_dimension() {
        let m = EmbeddingModel::read_text(Cursor::new("2 3\r\nfoo 0.1 -2e-3 7 \r\nbar 1 2 3\n\n")).unwrap();
        assert_eq!(m.dim(), 3);
        assert_eq!(m.vector_of("foo").unwrap(), [0.1, -0.002, 7.0]);
    }

    #[test]
    fn binary_layout_and_size() {
        let m = EmbeddingModel::new(vec!["ab".into(), "c".into()], vec![1.5, -2.0, 0.25, 8.0], 2).unwrap();
        let bytes = binary_bytes(&m);
        let header = b"2 2\n".len();
        assert_eq!(bytes.len(), header + (2 + 1 + 8 + 1) + (1 + 1 + 8 + 1));
        assert_eq!(&bytes[header..header + 3], b"ab ");
        assert_eq!(&bytes[header + 3..header + 7], &1.5f32.to_le_bytes());
        assert_eq!(bytes[header + 11], b'\n');
    }

    #[test]
    fn binary_without_record_newlines() {
        let mut bytes = b"2 1\n".to_vec();
        for (w, v) in [("x", 1.0f32), ("y", 2.0)] {
            bytes.extend_from_slice(w.as_bytes());
            bytes.push(b' ');
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = EmbeddingModel::read_binary(Cursor::new(bytes)).unwrap();
        assert_eq!(m.words(), ["x", "y"]);
        assert_eq!(m.vectors(), [1.0, 2.0]);
    }

    #[test]
    fn binary_truncation_reports_offset() {
        let bytes = binary_bytes(&toy());
        // cut in the middle of the second vector
        let cut = bytes.len() - 4;
        match EmbeddingModel::read_binary(Cursor::new(&bytes[..cut])) {
            Err(ModelError::Truncated { offset, .. }) => assert_eq!(offset, cut as u64),
            other => panic!("unexpected {other:?}"),
        }
        // cut inside the second word's header
        let cut = b"2 2\na ".len() + 8 + 1;
        match EmbeddingModel::read_binary(Cursor::new(&bytes[..cut + 1])) {
            Err(ModelError::Truncated { offset, .. }) => assert_eq!(offset, cut as u64 + 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_rejects_text_model() {
        let text = text_bytes(&toy());
        assert!(matches!(EmbeddingModel::read_binary(Cursor::new(text)), Err(ModelError::Format { .. } | ModelError::Truncated { .. })));
        let big = EmbeddingModel::new(
            (0..5).map(|i| format!("w{i}")).collect(),
            (0..20).map(|i| i as f32 * 0.125 - 1.0).collect(),
            4,
        )
        .unwrap();
        assert!(matches!(EmbeddingModel::read_binary(Cursor::new(text_bytes(&big))), Err(ModelError::Format { .. })));
    }

    #[test]
    fn save_rejects_bad_words() {
        for bad in ["has space", "new\nline", ""] {
            let m = EmbeddingModel::new(vec![bad.into()], vec![1.0], 1).unwrap();
            assert!(matches!(m.write_binary(Vec::new()), Err(ModelError::InvalidWord(_))));
            assert!(matches!(m.write_text(Vec::new()), Err(ModelError::InvalidWord(_))));
        }
    }

    #[test]
    fn shape_and_finiteness_checked() {
        assert!(EmbeddingModel::new(vec!["a".into()], vec![1.0, 2.0], 1).is_err());
        assert!(EmbeddingModel::new(vec!["a".into()], vec![f32::INFINITY], 1).is_err());
    }

    fn arb_model() -> impl Strategy<Value = EmbeddingModel> {
        (1usize..6, 1usize..8).prop_flat_map(|(v, d)| {
            (
                proptest::collection::hash_set("[a-z\u{e0}-\u{ff}'-]{1,8}", v),
                proptest::collection::vec(
                    prop_oneof![-1e3f32..1e3f32, any::<f32>().prop_filter("finite", |x| x.is_finite())],
                    v * d,
                ),
            )
                .prop_map(move |(words, vals)| EmbeddingModel::new(words.into_iter().collect(), vals, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bitwise(m in arb_model()) {
            let back = EmbeddingModel::read_binary(Cursor::new(binary_bytes(&m))).unwrap();
            prop_assert_eq!(back.words(), m.words());
            let bits = |m: &EmbeddingModel| m.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&m));
        }

        #[test]
        fn text_round_trip_is_exact(m in arb_model()) {
            let back = EmbeddingModel::read_text(Cursor::new(text_bytes(&m))).unwrap();
            prop_assert_eq!(back.words(), m.words());
            for (a, b) in back.vectors().iter().zip(m.vectors()) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs());
            }
        }
    }
}
