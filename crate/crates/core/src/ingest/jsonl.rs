use std::io::BufRead;

use super::{IngestError, ParseStats, RawPost};

/// Streams [`RawPost`] records from JSON Lines. Blank lines are ignored and
/// not counted; any other line that does not deserialize is skipped.
pub fn parse_jsonl<R: BufRead>(reader: R) -> JsonlParser<R> {
    JsonlParser { reader, line: Vec::new(), stats: ParseStats::default(), done: false }
}

pub struct JsonlParser<R> {
    reader: R,
    line: Vec<u8>,
    stats: ParseStats,
    done: bool,
}

impl<R: BufRead> JsonlParser<R> {
    pub fn stats(&self) -> ParseStats {
        self.stats
    }
}

impl<R: BufRead> Iterator for JsonlParser<R> {
    type Item = Result<RawPost, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.line.clear();
            match self.reader.read_until(b'\n', &mut self.line) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    if self.line.iter().all(u8::is_ascii_whitespace) {
                        continue;
                    }
                    match serde_json::from_slice::<RawPost>(&self.line) {
                        Ok(post) => {
                            self.stats.yielded += 1;
                            return Some(Ok(post));
                        }
                        Err(e) => {
                            log::debug!("skipping JSONL line: {e}");
                            self.stats.skipped += 1;
                        }
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
        }
        None
    }
}
