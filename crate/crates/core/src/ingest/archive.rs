//! Resumable pagination over a FoolFuuka-compatible archive API.
//!
//! A crawl walks `/_/api/chan/index/?board=B&page=N` from the cursor page
//! until an empty page or the page limit. Posts are yielded only if their id
//! is above the committed high-water mark and was not already yielded in the
//! current crawl; when a crawl reaches an empty page the largest id seen is
//! committed as the new high-water mark and the cursor rewinds to page 1.
//! The cursor is persisted after every page that was handed to the sink.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::foolfuuka::collect_posts;
use super::{IngestError, ParseStats, PostSource, RawPost};

pub const CURSOR_FILE_NAME: &str = "ingest.cursor.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveCursor {
    pub endpoint: String,
    pub board: String,
    /// Next page to fetch, 1-based.
    pub page: u32,
    /// Largest post id committed by a completed crawl.
    pub high_water_mark: u64,
    /// Ids yielded by the crawl in progress.
    #[serde(default)]
    pub crawl_seen: BTreeSet<u64>,
}

impl ArchiveCursor {
    pub fn new(endpoint: impl Into<String>, board: impl Into<String>) -> Self {
        ArchiveCursor {
            endpoint: endpoint.into(),
            board: board.into(),
            page: 1,
            high_water_mark: 0,
            crawl_seen: BTreeSet::new(),
        }
    }

    pub fn page_url(&self) -> String {
        format!(
            "{}/_/api/chan/index/?board={}&page={}",
            self.endpoint.trim_end_matches('/'),
            self.board,
            self.page
        )
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|e| cursor_error(path, e))?;
        let cursor: ArchiveCursor = serde_json::from_str(&text).map_err(|e| cursor_error(path, e))?;
        if cursor.page == 0 {
            return Err(cursor_error(path, "page must be at least 1"));
        }
        Ok(cursor)
    }

    /// Loads the cursor at `path`, or starts a fresh one if the file does not
    /// exist. A stored cursor for a different endpoint or board is an error.
    pub fn load_or_new(path: &Path, endpoint: &str, board: &str) -> Result<Self, IngestError> {
        if !path.exists() {
            return Ok(ArchiveCursor::new(endpoint, board));
        }
        let cursor = Self::load(path)?;
        if cursor.endpoint.trim_end_matches('/') != endpoint.trim_end_matches('/') || cursor.board != board {
            return Err(cursor_error(
                path,
                format!("belongs to {} /{}/, not {} /{}/", cursor.endpoint, cursor.board, endpoint, board),
            ));
        }
        Ok(cursor)
    }

    /// Writes via a temporary file and rename so a crash never leaves a
    /// half-written state file.
    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let tmp = path.with_extension("json.tmp");
        let json = serde_json::to_vec_pretty(self).map_err(|e| cursor_error(path, e))?;
        let mut f = fs::File::create(&tmp).map_err(|e| cursor_error(path, e))?;
        f.write_all(&json).and_then(|_| f.sync_all()).map_err(|e| cursor_error(path, e))?;
        fs::rename(&tmp, path).map_err(|e| cursor_error(path, e))
    }

    fn accepts(&self, post_id: u64) -> bool {
        post_id > self.high_water_mark && !self.crawl_seen.contains(&post_id)
    }

    fn complete_crawl(&mut self) {
        if let Some(&max) = self.crawl_seen.iter().next_back() {
            self.high_water_mark = self.high_water_mark.max(max);
        }
        self.crawl_seen.clear();
        self.page = 1;
    }
}

fn cursor_error(path: &Path, e: impl ToString) -> IngestError {
    IngestError::Cursor { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

/// Transport behind the archive client. `Err` means the request never got a
/// response (connection refused, reset, timeout).
pub trait PageFetcher {
    fn get(&mut self, url: &str) -> Result<HttpResponse, String>;
}

/// Blocking HTTP transport.
pub struct UreqFetcher {
    agent: ureq::Agent,
}

impl UreqFetcher {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .user_agent(concat!("toxivec/", env!("CARGO_PKG_VERSION")))
            .build();
        UreqFetcher { agent: ureq::Agent::new_with_config(config) }
    }
}

impl Default for UreqFetcher {
    fn default() -> Self {
        UreqFetcher::new(Duration::from_secs(60))
    }
}

impl PageFetcher for UreqFetcher {
    fn get(&mut self, url: &str) -> Result<HttpResponse, String> {
        let mut resp = self.agent.get(url).call().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_vec().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveConfig {
    /// Minimum spacing between consecutive requests.
    pub rate_limit: Duration,
    /// First backoff delay after a 429/5xx; doubled on every retry.
    pub backoff_base: Duration,
    pub max_retries: u32,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        ArchiveConfig {
            rate_limit: Duration::from_millis(1000),
            backoff_base: Duration::from_secs(2),
            max_retries: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FetchSummary {
    pub pages_fetched: u32,
    pub posts_yielded: u64,
    /// Posts filtered out by the high-water mark or the crawl's seen set.
    pub posts_already_seen: u64,
    pub records: ParseStats,
    /// True when the crawl ended on an empty page.
    pub reached_end: bool,
}

pub struct ArchiveClient<F> {
    fetcher: F,
    config: ArchiveConfig,
    source: PostSource,
    last_request: Option<Instant>,
}

impl<F: PageFetcher> ArchiveClient<F> {
    pub fn new(fetcher: F, config: ArchiveConfig, source: PostSource) -> Self {
        ArchiveClient { fetcher, config, source, last_request: None }
    }

    pub fn fetcher(&self) -> &F {
        &self.fetcher
    }

    /// Fetches up to `limit` pages starting at `cursor.page`, handing each
    /// page's new posts to `sink` before the cursor advances. With a
    /// `cursor_path`, the cursor is persisted after every page, so a failure
    /// leaves it at the last page the sink fully received.
    pub fn fetch_archive_pages<S>(
        &mut self,
        cursor: &mut ArchiveCursor,
        cursor_path: Option<&Path>,
        limit: u32,
        mut sink: S,
    ) -> Result<FetchSummary, IngestError>
    where
        S: FnMut(&[RawPost]) -> Result<(), IngestError>,
    {
        let mut summary = FetchSummary::default();
        while summary.pages_fetched < limit {
            let url = cursor.page_url();
            let body = self.request(&url)?;
            let mut page_stats = ParseStats::default();
            let posts = match body {
                Some(body) => self.parse_page(&body, &mut page_stats)?,
                None => Vec::new(),
            };
            summary.pages_fetched += 1;
            summary.records.yielded += page_stats.yielded;
            summary.records.skipped += page_stats.skipped;

            if posts.is_empty() && page_stats.encountered() == 0 {
                log::info!("page {} of /{}/ is empty; crawl complete", cursor.page, cursor.board);
                cursor.complete_crawl();
                if let Some(path) = cursor_path {
                    cursor.save(path)?;
                }
                summary.reached_end = true;
                break;
            }

            let mut fresh = Vec::with_capacity(posts.len());
            for post in posts {
                if cursor.accepts(post.post_id) && !fresh.iter().any(|p: &RawPost| p.post_id == post.post_id) {
                    fresh.push(post);
                } else {
                    summary.posts_already_seen += 1;
                }
            }
            sink(&fresh)?;
            summary.posts_yielded += fresh.len() as u64;
            cursor.crawl_seen.extend(fresh.iter().map(|p| p.post_id));
            cursor.page += 1;
            if let Some(path) = cursor_path {
                cursor.save(path)?;
            }
        }
        Ok(summary)
    }

    fn wait_for_rate_limit(&mut self) {
        if let Some(last) = self.last_request {
            let elapsed = last.elapsed();
            if elapsed < self.config.rate_limit {
                thread::sleep(self.config.rate_limit - elapsed);
            }
        }
        self.last_request = Some(Instant::now());
    }

    /// Returns the body of a successful response, or `None` for a 404
    /// (FoolFuuka answers past-the-end pages that way).
    fn request(&mut self, url: &str) -> Result<Option<Vec<u8>>, IngestError> {
        let mut attempt = 0;
        loop {
            self.wait_for_rate_limit();
            let resp = self
                .fetcher
                .get(url)
                .map_err(|message| IngestError::Network { url: url.to_string(), message })?;
            match resp.status {
                200..=299 => return Ok(Some(resp.body)),
                404 => return Ok(None),
                429 | 500..=599 if attempt < self.config.max_retries => {
                    let delay = self.config.backoff_base * 2u32.pow(attempt);
                    log::warn!("HTTP {} from {url}; retrying in {delay:?}", resp.status);
                    thread::sleep(delay);
                    attempt += 1;
                }
                status => {
                    return Err(IngestError::Http { status, url: url.to_string(), attempts: attempt + 1 });
                }
            }
        }
    }

    fn parse_page(&self, body: &[u8], stats: &mut ParseStats) -> Result<Vec<RawPost>, IngestError> {
        let value: Value = serde_json::from_slice(body).map_err(|e| IngestError::Syntax {
            offset: 0,
            message: format!("archive page: {e}"),
        })?;
        let mut posts = Vec::new();
        match value {
            Value::Object(map) if map.contains_key("error") => {}
            Value::Object(map) => {
                for (_, v) in map {
                    collect_posts(v, &self.source, &mut posts, stats);
                }
            }
            Value::Array(items) => {
                for v in items {
                    collect_posts(v, &self.source, &mut posts, stats);
                }
            }
            _ => {
                return Err(IngestError::Syntax { offset: 0, message: "archive page is not an object or array".into() })
            }
        }
        Ok(posts)
    }
}
