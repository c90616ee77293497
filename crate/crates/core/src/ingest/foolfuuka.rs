use std::collections::VecDeque;
use std::io::BufRead;

use serde_json::Value;

use super::{json_i64, json_u64, IngestError, ParseStats, PostSource, RawPost};

/// Streams posts out of a FoolFuuka JSON export.
///
/// The top level may be an array of post objects, or an object whose values
/// are post objects or thread objects (`{"op": {...}, "posts": [...]}`, the
/// shape of the `/_/api/chan/index/` endpoint). Only one top-level element
/// is buffered at a time.
pub fn parse_foolfuuka_json<R: BufRead>(reader: R, source: PostSource) -> FoolFuukaParser<R> {
    FoolFuukaParser {
        reader,
        source,
        offset: 0,
        state: State::Start,
        buf: Vec::new(),
        pending: VecDeque::new(),
        stats: ParseStats::default(),
        max_buffered: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Start,
    Array { first: bool },
    Object { first: bool },
    Done,
}

pub struct FoolFuukaParser<R> {
    reader: R,
    source: PostSource,
    offset: u64,
    state: State,
    buf: Vec<u8>,
    pending: VecDeque<RawPost>,
    stats: ParseStats,
    max_buffered: usize,
}

impl<R: BufRead> FoolFuukaParser<R> {
    pub fn stats(&self) -> ParseStats {
        self.stats
    }

    /// Largest single top-level element held in memory so far, in bytes.
    pub fn max_buffered(&self) -> usize {
        self.max_buffered
    }

    /// Bytes consumed from the underlying reader.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn syntax(&self, offset: u64, message: impl Into<String>) -> IngestError {
        IngestError::Syntax { offset, message: message.into() }
    }

    fn peek(&mut self) -> Result<Option<u8>, IngestError> {
        let buf = self.reader.fill_buf()?;
        Ok(buf.first().copied())
    }

    fn bump(&mut self) {
        self.reader.consume(1);
        self.offset += 1;
    }

    fn skip_ws(&mut self) -> Result<(), IngestError> {
        while let Some(b) = self.peek()? {
            if matches!(b, b' ' | b'\t' | b'\n' | b'\r') {
                self.bump();
            } else {
                break;
            }
        }
        Ok(())
    }

    fn expect(&mut self, want: u8) -> Result<(), IngestError> {
        match self.peek()? {
            Some(b) if b == want => {
                self.bump();
                Ok(())
            }
            Some(b) => Err(self.syntax(self.offset, format!("expected `{}`, found `{}`", want as char, b as char))),
            None => Err(self.syntax(self.offset, format!("unexpected end of input, expected `{}`", want as char))),
        }
    }

    /// Copies the raw bytes of the next JSON value into `self.buf`.
    fn capture_value(&mut self) -> Result<u64, IngestError> {
        self.buf.clear();
        let start = self.offset;
        let first = match self.peek()? {
            Some(b) => b,
            None => return Err(self.syntax(self.offset, "unexpected end of input, expected a value")),
        };
        match first {
            b'{' | b'[' => {
                let mut depth = 0usize;
                let mut in_string = false;
                let mut escaped = false;
                loop {
                    let b = match self.peek()? {
                        Some(b) => b,
                        None => return Err(self.syntax(self.offset, "unexpected end of input inside a record")),
                    };
                    self.bump();
                    self.buf.push(b);
                    if in_string {
                        if escaped {
                            escaped = false;
                        } else if b == b'\\' {
                            escaped = true;
                        } else if b == b'"' {
                            in_string = false;
                        }
                        continue;
                    }
                    match b {
                        b'"' => in_string = true,
                        b'{' | b'[' => depth += 1,
                        b'}' | b']' => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                }
            }
            b'"' => {
                self.bump();
                self.buf.push(b'"');
                let mut escaped = false;
                loop {
                    let b = match self.peek()? {
                        Some(b) => b,
                        None => return Err(self.syntax(self.offset, "unexpected end of input inside a string")),
                    };
                    self.bump();
                    self.buf.push(b);
                    if escaped {
                        escaped = false;
                    } else if b == b'\\' {
                        escaped = true;
                    } else if b == b'"' {
                        break;
                    }
                }
            }
            _ => {
                while let Some(b) = self.peek()? {
                    if matches!(b, b',' | b']' | b'}' | b' ' | b'\t' | b'\n' | b'\r') {
                        break;
                    }
                    self.bump();
                    self.buf.push(b);
                }
                if self.buf.is_empty() {
                    return Err(self.syntax(self.offset, format!("expected a value, found `{}`", first as char)));
                }
            }
        }
        self.max_buffered = self.max_buffered.max(self.buf.len());
        Ok(start)
    }

    fn parse_captured(&self, start: u64) -> Result<Value, IngestError> {
        serde_json::from_slice(&self.buf).map_err(|e| {
            let within = byte_index(&self.buf, e.line(), e.column());
            self.syntax(start + within as u64, e.to_string())
        })
    }

    fn next_element(&mut self) -> Result<Option<Value>, IngestError> {
        loop {
            match self.state {
                State::Done => return Ok(None),
                State::Start => {
                    self.skip_ws()?;
                    if self.peek_bom()? {
                        self.skip_ws()?;
                    }
                    match self.peek()? {
                        Some(b'[') => {
                            self.bump();
                            self.state = State::Array { first: true };
                        }
                        Some(b'{') => {
                            self.bump();
                            self.state = State::Object { first: true };
                        }
                        Some(b) => {
                            return Err(self.syntax(self.offset, format!("expected `[` or `{{` at top level, found `{}`", b as char)))
                        }
                        None => return Err(self.syntax(self.offset, "empty input, expected a JSON array or object")),
                    }
                }
                State::Array { first } => {
                    self.skip_ws()?;
                    if self.peek()? == Some(b']') {
                        self.bump();
                        self.finish()?;
                        continue;
                    }
                    if !first {
                        self.expect(b',')?;
                        self.skip_ws()?;
                    }
                    self.state = State::Array { first: false };
                    let start = self.capture_value()?;
                    return self.parse_captured(start).map(Some);
                }
                State::Object { first } => {
                    self.skip_ws()?;
                    if self.peek()? == Some(b'}') {
                        self.bump();
                        self.finish()?;
                        continue;
                    }
                    if !first {
                        self.expect(b',')?;
                        self.skip_ws()?;
                    }
                    self.state = State::Object { first: false };
                    if self.peek()? != Some(b'"') {
                        return Err(self.syntax(self.offset, "expected a string key"));
                    }
                    let key_start = self.capture_value()?;
                    self.parse_captured(key_start)?;
                    self.skip_ws()?;
                    self.expect(b':')?;
                    self.skip_ws()?;
                    let start = self.capture_value()?;
                    return self.parse_captured(start).map(Some);
                }
            }
        }
    }

    fn peek_bom(&mut self) -> Result<bool, IngestError> {
        let buf = self.reader.fill_buf()?;
        if buf.starts_with(&[0xEF, 0xBB, 0xBF]) {
            self.reader.consume(3);
            self.offset += 3;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn finish(&mut self) -> Result<(), IngestError> {
        self.skip_ws()?;
        if let Some(b) = self.peek()? {
            return Err(self.syntax(self.offset, format!("trailing data after top-level value: `{}`", b as char)));
        }
        self.state = State::Done;
        Ok(())
    }
}

impl<R: BufRead> Iterator for FoolFuukaParser<R> {
    type Item = Result<RawPost, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(post) = self.pending.pop_front() {
                return Some(Ok(post));
            }
            match self.next_element() {
                Ok(Some(value)) => {
                    let mut out = Vec::new();
                    collect_posts(value, &self.source, &mut out, &mut self.stats);
                    self.pending.extend(out);
                }
                Ok(None) => return None,
                Err(e) => {
                    self.state = State::Done;
                    self.pending.clear();
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Maps one top-level element (a post or a thread wrapper) to posts,
/// counting each post object as one record.
pub(crate) fn collect_posts(value: Value, source: &PostSource, out: &mut Vec<RawPost>, stats: &mut ParseStats) {
    let Value::Object(mut map) = value else {
        stats.skipped += 1;
        return;
    };
    if map.contains_key("num") {
        match post_from_object(&map, source) {
            Some(post) => {
                stats.yielded += 1;
                out.push(post);
            }
            None => stats.skipped += 1,
        }
        return;
    }
    if !map.contains_key("op") && !map.contains_key("posts") {
        stats.skipped += 1;
        return;
    }
    if let Some(op) = map.remove("op") {
        collect_posts(op, source, out, stats);
    }
    match map.remove("posts") {
        Some(Value::Array(posts)) => {
            for p in posts {
                collect_posts(p, source, out, stats);
            }
        }
        Some(Value::Object(posts)) => {
            for (_, p) in posts {
                collect_posts(p, source, out, stats);
            }
        }
        Some(_) => stats.skipped += 1,
        None => {}
    }
}

fn post_from_object(map: &serde_json::Map<String, Value>, source: &PostSource) -> Option<RawPost> {
    let post_id = json_u64(map.get("num")?)?;
    let timestamp = json_i64(map.get("timestamp")?)?;
    let body_html = map.get("comment")?.as_str()?.to_owned();
    Some(RawPost {
        platform: source.platform,
        board: source.board.clone(),
        post_id,
        timestamp,
        body_html,
    })
}

/// Converts serde_json's 1-based line/column into a byte index into `buf`.
fn byte_index(buf: &[u8], line: usize, column: usize) -> usize {
    let mut line_start = 0;
    let mut current = 1;
    for (i, &b) in buf.iter().enumerate() {
        if current == line {
            break;
        }
        if b == b'\n' {
            current += 1;
            line_start = i + 1;
        }
    }
    (line_start + column.saturating_sub(1)).min(buf.len())
}
