//! Archive ingestion: streaming parsers for on-disk dumps and a paginating
//! client for FoolFuuka-style archive APIs.
//!
//! All parsers share one skip policy: a record that cannot be mapped to a
//! [`RawPost`] is counted in [`ParseStats::skipped`] and parsing continues.
//! Only errors that make the rest of the stream unreadable are fatal.

mod archive;
mod foolfuuka;
mod jsonl;
mod plebs_csv;

use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{
    ArchiveClient, ArchiveConfig, ArchiveCursor, FetchSummary, HttpResponse, PageFetcher,
    UreqFetcher, CURSOR_FILE_NAME,
};
pub use foolfuuka::{parse_foolfuuka_json, FoolFuukaParser};
pub use jsonl::{parse_jsonl, JsonlParser};
pub use plebs_csv::{parse_4plebs_csv, PlebsCsvParser, CSV_REQUIRED_COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Fourchan,
    Eightchan,
    Other,
}

impl Platform {
    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Fourchan => "fourchan",
            Platform::Eightchan => "eightchan",
            Platform::Other => "other",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Platform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fourchan" | "4chan" => Ok(Platform::Fourchan),
            "eightchan" | "8chan" => Ok(Platform::Eightchan),
            "other" => Ok(Platform::Other),
            _ => Err(format!("unknown platform `{s}` (expected fourchan, eightchan or other)")),
        }
    }
}

/// One message as found in an archive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub platform: Platform,
    pub board: String,
    pub post_id: u64,
    /// Unix seconds.
    pub timestamp: i64,
    /// May contain HTML tags, entities and quote-links; empty for image-only posts.
    pub body_html: String,
}

/// Board and platform for dumps that do not carry them per record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostSource {
    pub platform: Platform,
    pub board: String,
}

impl PostSource {
    pub fn new(platform: Platform, board: impl Into<String>) -> Self {
        PostSource { platform, board: board.into() }
    }
}

impl Default for PostSource {
    fn default() -> Self {
        PostSource::new(Platform::Fourchan, "pol")
    }
}

/// Record accounting for one parse. Every record encountered is either
/// yielded or skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub yielded: u64,
    pub skipped: u64,
}

impl ParseStats {
    pub fn encountered(&self) -> u64 {
        self.yielded + self.skipped
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("JSON syntax error at byte {offset}: {message}")]
    Syntax { offset: u64, message: String },
    #[error("CSV header is missing required column `{0}`")]
    MissingColumn(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("HTTP {status} from {url} after {attempts} attempts")]
    Http { status: u16, url: String, attempts: u32 },
    #[error("network error fetching {url}: {message}")]
    Network { url: String, message: String },
    #[error("cursor state file {path}: {message}")]
    Cursor { path: String, message: String },
}

impl IngestError {
    /// Network and cursor-persistence failures are resource errors; the
    /// rest are problems with the data itself.
    pub fn is_resource_error(&self) -> bool {
        matches!(
            self,
            IngestError::Io(_) | IngestError::Http { .. } | IngestError::Network { .. } | IngestError::Cursor { .. }
        )
    }
}

/// Supported dump formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    FoolFuukaJson,
    PlebsCsv,
    Jsonl,
}

impl FromStr for DumpFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "foolfuuka-json" => Ok(DumpFormat::FoolFuukaJson),
            "4plebs-csv" => Ok(DumpFormat::PlebsCsv),
            "jsonl" => Ok(DumpFormat::Jsonl),
            _ => Err(format!("unknown format `{s}` (expected foolfuuka-json, 4plebs-csv or jsonl)")),
        }
    }
}

/// Any of the three parsers behind one iterator type.
pub enum DumpParser<R: io::BufRead> {
    FoolFuuka(FoolFuukaParser<R>),
    Csv(PlebsCsvParser<R>),
    Jsonl(JsonlParser<R>),
}

impl<R: io::BufRead> DumpParser<R> {
    pub fn new(format: DumpFormat, reader: R, source: PostSource) -> Result<Self, IngestError> {
        Ok(match format {
            DumpFormat::FoolFuukaJson => DumpParser::FoolFuuka(parse_foolfuuka_json(reader, source)),
            DumpFormat::PlebsCsv => DumpParser::Csv(parse_4plebs_csv(reader, source)?),
            DumpFormat::Jsonl => DumpParser::Jsonl(parse_jsonl(reader)),
        })
    }

    pub fn stats(&self) -> ParseStats {
        match self {
            DumpParser::FoolFuuka(p) => p.stats(),
            DumpParser::Csv(p) => p.stats(),
            DumpParser::Jsonl(p) => p.stats(),
        }
    }
}

impl<R: io::BufRead> Iterator for DumpParser<R> {
    type Item = Result<RawPost, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            DumpParser::FoolFuuka(p) => p.next(),
            DumpParser::Csv(p) => p.next(),
            DumpParser::Jsonl(p) => p.next(),
        }
    }
}

/// Accepts a JSON number or a string of digits, as FoolFuuka APIs emit both.
pub(crate) fn json_u64(v: &serde_json::Value) -> Option<u64> {
    match v {
        serde_json::Value::Number(n) => n.as_u64(),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

pub(crate) fn json_i64(v: &serde_json::Value) -> Option<i64> {
    match v {
        serde_json::Value::Number(n) => n.as_i64(),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}
