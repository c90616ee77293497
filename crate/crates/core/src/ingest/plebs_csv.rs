use std::io::BufRead;

use super::{IngestError, ParseStats, PostSource, RawPost};

/// Header columns every 4plebs CSV dump must carry. Other columns are ignored.
pub const CSV_REQUIRED_COLUMNS: [&str; 3] = ["num", "timestamp", "comment"];

/// Streams posts from an RFC-4180 CSV dump with a header row.
///
/// Fails immediately when a required column is missing from the header.
pub fn parse_4plebs_csv<R: BufRead>(reader: R, source: PostSource) -> Result<PlebsCsvParser<R>, IngestError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = csv.byte_headers().map_err(csv_fatal)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| String::from_utf8_lossy(h).trim().trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let num = column("num")?;
    let timestamp = column("timestamp")?;
    let comment = column("comment")?;
    Ok(PlebsCsvParser {
        csv,
        source,
        num,
        timestamp,
        comment,
        record: csv::ByteRecord::new(),
        stats: ParseStats::default(),
        done: false,
    })
}

pub struct PlebsCsvParser<R> {
    csv: csv::Reader<R>,
    source: PostSource,
    num: usize,
    timestamp: usize,
    comment: usize,
    record: csv::ByteRecord,
    stats: ParseStats,
    done: bool,
}

impl<R: BufRead> PlebsCsvParser<R> {
    pub fn stats(&self) -> ParseStats {
        self.stats
    }

    fn map_record(&self) -> Option<RawPost> {
        let field = |i: usize| self.record.get(i).and_then(|b| std::str::from_utf8(b).ok());
        let post_id = field(self.num)?.trim().parse().ok()?;
        let timestamp = field(self.timestamp)?.trim().parse().ok()?;
        let comment = field(self.comment)?;
        if comment.is_empty() {
            return None;
        }
        Some(RawPost {
            platform: self.source.platform,
            board: self.source.board.clone(),
            post_id,
            timestamp,
            body_html: comment.to_owned(),
        })
    }
}

impl<R: BufRead> Iterator for PlebsCsvParser<R> {
    type Item = Result<RawPost, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            match self.csv.read_byte_record(&mut self.record) {
                Ok(false) => self.done = true,
                Ok(true) => match self.map_record() {
                    Some(post) => {
                        self.stats.yielded += 1;
                        return Some(Ok(post));
                    }
                    None => self.stats.skipped += 1,
                },
                Err(e) if e.is_io_error() => {
                    self.done = true;
                    return Some(Err(csv_fatal(e)));
                }
                Err(e) => {
                    log::debug!("skipping CSV row: {e}");
                    self.stats.skipped += 1;
                }
            }
        }
        None
    }
}

fn csv_fatal(e: csv::Error) -> IngestError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Io(io),
        other => IngestError::Syntax { offset: 0, message: format!("{other:?}") },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(input: &str) -> Result<(Vec<RawPost>, ParseStats), IngestError> {
        let mut parser = parse_4plebs_csv(Cursor::new(input.as_bytes().to_vec()), PostSource::default())?;
        let posts = parser.by_ref().collect::<Result<Vec<_>, _>>()?;
        Ok((posts, parser.stats()))
    }

    #[test]
    fn header_and_one_row() {
        let (posts, stats) = parse("num,timestamp,comment\n7,1500000000,hello there\n").unwrap();
        assert_eq!(posts.len(), 1);
        assert_eq!(posts[0].post_id, 7);
        assert_eq!(posts[0].timestamp, 1_500_000_000);
        assert_eq!(posts[0].body_html, "hello there");
        assert_eq!(stats, ParseStats { yielded: 1, skipped: 0 });
    }

    #[test]
    fn empty_comment_is_skipped() {
        let (posts, stats) = parse("num,timestamp,comment\n7,1,\n8,2,x\n").unwrap();
        assert_eq!(posts.iter().map(|p| p.post_id).collect::<Vec<_>>(), [8]);
        assert_eq!(stats, ParseStats { yielded: 1, skipped: 1 });
    }

    #[test]
    fn quoted_field_with_comma_and_newline() {
        let (posts, _) = parse("num,timestamp,comment\n1,2,\"a, b\nc \"\"d\"\"\"\n").unwrap();
        assert_eq!(posts.len(), 1);
        assert_eq!(posts[0].body_html, "a, b\nc \"d\"");
    }

    #[test]
    fn extra_columns_any_order() {
        let (posts, _) = parse("doc_id,comment,thread_num,num,timestamp\n9,hi,3,44,55\n").unwrap();
        assert_eq!(posts[0].post_id, 44);
        assert_eq!(posts[0].timestamp, 55);
        assert_eq!(posts[0].body_html, "hi");
    }

    #[test]
    fn missing_column_is_fatal() {
        match parse("num,comment\n1,x\n") {
            Err(IngestError::MissingColumn(c)) => assert_eq!(c, "timestamp"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }

    #[test]
    fn bad_rows_are_counted() {
        let (posts, stats) = parse("num,timestamp,comment\nx,1,a\n2\n3,4,ok\n5,notatime,b\n").unwrap();
        assert_eq!(posts.len(), 1);
        assert_eq!(stats, ParseStats { yielded: 1, skipped: 3 });
    }
}
