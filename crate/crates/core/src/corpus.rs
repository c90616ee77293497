//! Normalized corpus access: one document per line, tokens separated by
//! single spaces.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::normalize::CorpusDocument;

/// A normalized corpus held on disk or in memory.
///
/// Lines are addressed by byte ranges so training workers can split the
/// corpus without an index: a line belongs to the range holding its first
/// byte.
#[derive(Debug, Clone)]
pub enum Corpus {
    File(PathBuf),
    Memory(Arc<[u8]>),
}

impl Corpus {
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        Corpus::File(path.into())
    }

    pub fn from_lines<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut buf = Vec::new();
        for line in lines {
            buf.extend_from_slice(line.as_ref().as_bytes());
            buf.push(b'\n');
        }
        Corpus::Memory(buf.into())
    }

    pub fn len_bytes(&self) -> io::Result<u64> {
        match self {
            Corpus::File(path) => Ok(std::fs::metadata(path)?.len()),
            Corpus::Memory(bytes) => Ok(bytes.len() as u64),
        }
    }

    /// Splits `[0, len)` into `parts` contiguous, near-equal byte ranges.
    pub fn byte_ranges(&self, parts: usize) -> io::Result<Vec<Range<u64>>> {
        let len = self.len_bytes()?;
        let parts = parts.max(1) as u64;
        Ok((0..parts).map(|i| (len * i / parts)..(len * (i + 1) / parts)).collect())
    }

    /// Calls `f` with every line whose first byte lies in `range`, without
    /// its line terminator.
    pub fn for_each_line_in<F>(&self, range: Range<u64>, mut f: F) -> io::Result<()>
    where
        F: FnMut(&str),
    {
        match self {
            Corpus::File(path) => {
                let mut file = File::open(path)?;
                let start = line_start_at_or_after(&mut file, range.start)?;
                file.seek(SeekFrom::Start(start))?;
                scan_lines(BufReader::with_capacity(1 << 16, file), start, range.end, &mut f)
            }
            Corpus::Memory(bytes) => {
                let mut cursor = io::Cursor::new(&bytes[..]);
                let start = line_start_at_or_after(&mut cursor, range.start)?;
                cursor.set_position(start);
                scan_lines(cursor, start, range.end, &mut f)
            }
        }
    }

    pub fn for_each_line<F: FnMut(&str)>(&self, f: F) -> io::Result<()> {
        self.for_each_line_in(0..u64::MAX, f)
    }

    /// Every line as a token list. Blank lines yield empty documents.
    pub fn for_each_document<F: FnMut(&[&str])>(&self, mut f: F) -> io::Result<()> {
        self.for_each_line(|line| {
            let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
            f(&tokens);
        })
    }
}

fn line_start_at_or_after<R: Read + Seek>(src: &mut R, pos: u64) -> io::Result<u64> {
    if pos == 0 {
        return Ok(0);
    }
    src.seek(SeekFrom::Start(pos - 1))?;
    let mut reader = BufReader::new(src);
    let mut skipped = Vec::new();
    let n = reader.read_until(b'\n', &mut skipped)?;
    Ok(pos - 1 + n as u64)
}

fn scan_lines<R: BufRead, F: FnMut(&str)>(mut reader: R, mut pos: u64, end: u64, f: &mut F) -> io::Result<()> {
    let mut buf = Vec::new();
    while pos < end {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        pos += n as u64;
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        f(&String::from_utf8_lossy(&buf));
    }
    Ok(())
}

/// Writes documents in corpus line format.
pub struct CorpusWriter<W: Write> {
    out: W,
    documents: u64,
    tokens: u64,
}

impl<W: Write> CorpusWriter<W> {
    pub fn new(out: W) -> Self {
        CorpusWriter { out, documents: 0, tokens: 0 }
    }

    pub fn write(&mut self, doc: &CorpusDocument) -> io::Result<()> {
        self.out.write_all(doc.to_line().as_bytes())?;
        self.out.write_all(b"\n")?;
        self.documents += 1;
        self.tokens += doc.len() as u64;
        Ok(())
    }

    pub fn documents(&self) -> u64 {
        self.documents
    }

    pub fn tokens(&self) -> u64 {
        self.tokens
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Opens a corpus file for reading, failing early if it is unreadable.
pub fn open_corpus(path: &Path) -> io::Result<Corpus> {
    File::open(path)?;
    Ok(Corpus::from_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lines_in(corpus: &Corpus, range: Range<u64>) -> Vec<String> {
        let mut out = Vec::new();
        corpus.for_each_line_in(range, |l| out.push(l.to_string())).unwrap();
        out
    }

    #[test]
    fn whole_corpus() {
        let c = Corpus::from_lines(["a b", "", "c"]);
        assert_eq!(lines_in(&c, 0..u64::MAX), ["a b", "", "c"]);
    }

    #[test]
    fn file_and_memory_agree() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "one two\nthree\nfour five six\n").unwrap();
        let file = Corpus::from_path(&path);
        let mem = Corpus::from_lines(["one two", "three", "four five six"]);
        for r in [0..3, 3..9, 8..14, 14..100] {
            assert_eq!(lines_in(&file, r.clone()), lines_in(&mem, r));
        }
    }

    proptest! {
        #[test]
        fn ranges_partition_lines(lines in proptest::collection::vec("[a-z ]{0,12}", 0..40), parts in 1usize..9) {
            let c = Corpus::from_lines(&lines);
            let mut seen = Vec::new();
            for r in c.byte_ranges(parts).unwrap() {
                seen.extend(lines_in(&c, r));
            }
            prop_assert_eq!(seen, lines);
        }
    }
}
