use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use super::{
    CliError, Cli, Command, ConvertArgs, ExpandArgs, IngestArgs, QueryCommand, SimilarArgs, StatsArgs, TrainArgs,
};
use crate::corpus::{open_corpus, CorpusWriter};
use crate::ingest::{
    ArchiveClient, ArchiveConfig, ArchiveCursor, DumpParser, IngestError, PostSource, RawPost, UreqFetcher,
    CURSOR_FILE_NAME,
};
use crate::lexicon::{
    expand_by_neighbors, review_merge, scan_into, CandidateSet, CandidateTerm, Lexicon, LexiconError,
    DEFAULT_EXTERNAL_THRESHOLD, DEFAULT_NEIGHBOR_THRESHOLD,
};
use crate::manifest::{digest_file, RunManifest, RunStats, TOOL_VERSION};
use crate::model_io::{EmbeddingModel, ModelError, ModelFormat};
use crate::normalize::normalize_post;
use crate::query::{QueryError, SimilarityIndex};
use crate::stats::{corpus_stats, CorpusMeta, DEFAULT_MIN_COUNTS};
use crate::trainer::{train, TrainConfig, TrainError};
use crate::vocab::{NegativeSamplingTable, VocabCounter, VocabError, DEFAULT_NS_POWER};

type Result<T> = std::result::Result<T, CliError>;

pub(super) fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Train(a) => train_cmd(&a, cli.config.as_deref()),
        Command::Convert(a) => convert(&a),
        Command::Query(QueryCommand::Similar(a)) => similar(&a),
        Command::Expand(a) => expand(&a),
        Command::Stats(a) => stats(&a),
    }
}

fn read_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::data(format!("cannot read {}: {e}", path.display()))
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::resource(format!("cannot write {}: {e}", path.display()))
}

fn ingest_err(e: IngestError) -> CliError {
    if e.is_resource_error() {
        CliError::resource(e.to_string())
    } else {
        CliError::data(e.to_string())
    }
}

fn model_load_err(path: &Path, e: ModelError) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

fn model_save_err(path: &Path, e: ModelError) -> CliError {
    match e {
        ModelError::Io(io) => write_err(path, io),
        other => CliError::data(format!("{}: {other}", path.display())),
    }
}

fn now_secs() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}

fn load_model(path: &Path, format: Option<ModelFormat>) -> Result<EmbeddingModel> {
    let format = format.unwrap_or_else(|| ModelFormat::from_path(path));
    EmbeddingModel::load(path, format).map_err(|e| model_load_err(path, e))
}

// ---------------------------------------------------------------- ingest

/// Streams normalized documents into the corpus, tracking platform counts.
struct CorpusSink {
    writer: CorpusWriter<BufWriter<File>>,
    path: PathBuf,
    meta: CorpusMeta,
    empty: u64,
}

impl CorpusSink {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| write_err(path, e))?;
        let meta = if append {
            CorpusMeta::load_for(path).map_err(|e| read_err(path, e))?.unwrap_or_default()
        } else {
            CorpusMeta::default()
        };
        Ok(CorpusSink { writer: CorpusWriter::new(BufWriter::new(file)), path: path.to_path_buf(), meta, empty: 0 })
    }

    fn push(&mut self, post: &RawPost) -> io::Result<()> {
        match normalize_post(post) {
            Some(doc) => {
                self.writer.write(&doc)?;
                self.meta.record(post.platform.as_str(), &post.board, 1);
            }
            None => self.empty += 1,
        }
        Ok(())
    }

    /// Makes everything pushed so far durable, corpus first.
    fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()?;
        self.meta.save_for(&self.path)
    }

    fn finish(mut self) -> Result<(u64, u64, u64)> {
        self.flush().map_err(|e| write_err(&self.path, e))?;
        let (docs, tokens) = (self.writer.documents(), self.writer.tokens());
        Ok((docs, tokens, self.empty))
    }
}

fn ingest(a: &IngestArgs) -> Result<()> {
    if a.endpoint.is_some() {
        if !a.inputs.is_empty() {
            return Err(CliError::usage("--endpoint and --input are mutually exclusive"));
        }
        return crawl(a);
    }
    let format = a.format.ok_or_else(|| CliError::usage("--format is required when ingesting files"))?;
    if a.inputs.is_empty() {
        return Err(CliError::usage("at least one --input is required (or --endpoint to crawl an archive)"));
    }
    let mut sink = CorpusSink::open(&a.output, a.append)?;
    for input in &a.inputs {
        let file = File::open(input).map_err(|e| read_err(input, e))?;
        let source = PostSource::new(a.platform, a.board.clone());
        let mut parser = DumpParser::new(format, BufReader::with_capacity(1 << 16, file), source)
            .map_err(|e| CliError::data(format!("{}: {e}", input.display())))?;
        for post in parser.by_ref() {
            let post = post.map_err(|e| match e {
                IngestError::Io(io) => read_err(input, io),
                other => CliError::data(format!("{}: {other}", input.display())),
            })?;
            sink.push(&post).map_err(|e| write_err(&a.output, e))?;
        }
        let s = parser.stats();
        log::info!("{}: {} posts, {} skipped records", input.display(), s.yielded, s.skipped);
    }
    let (docs, tokens, empty) = sink.finish()?;
    log::info!("wrote {docs} documents ({tokens} tokens) to {}; {empty} posts were empty after normalization", a.output.display());
    Ok(())
}

fn crawl(a: &IngestArgs) -> Result<()> {
    let endpoint = a.endpoint.as_deref().unwrap_or_default().trim_end_matches('/').to_string();
    let cursor_path = a.cursor.clone().unwrap_or_else(|| {
        a.output.parent().map(|p| p.join(CURSOR_FILE_NAME)).unwrap_or_else(|| PathBuf::from(CURSOR_FILE_NAME))
    });
    let mut cursor = ArchiveCursor::load_or_new(&cursor_path, &endpoint, &a.board).map_err(ingest_err)?;
    let config = ArchiveConfig {
        rate_limit: Duration::from_millis(a.rate_limit_ms),
        max_retries: a.max_retries,
        ..ArchiveConfig::default()
    };
    let source = PostSource::new(a.platform, a.board.clone());
    let mut client = ArchiveClient::new(UreqFetcher::new(Duration::from_secs(a.timeout_secs)), config, source);
    let mut sink = CorpusSink::open(&a.output, true)?;
    let summary = client.fetch_archive_pages(&mut cursor, Some(&cursor_path), a.max_pages, |posts| {
        for p in posts {
            sink.push(p)?;
        }
        sink.flush()?;
        Ok(())
    });
    let summary = match summary {
        Ok(s) => s,
        Err(e) => {
            let _ = sink.finish();
            return Err(ingest_err(e));
        }
    };
    let (docs, tokens, _) = sink.finish()?;
    log::info!(
        "fetched {} pages: {} new posts, {} already seen, {} skipped records; wrote {docs} documents ({tokens} tokens){}",
        summary.pages_fetched,
        summary.posts_yielded,
        summary.posts_already_seen,
        summary.records.skipped,
        if summary.reached_end { "; crawl complete" } else { "" }
    );
    Ok(())
}

// ---------------------------------------------------------------- train

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        dim: a.dim,
        window: a.window,
        negative: a.negative,
        epochs: a.epochs,
        alpha: a.alpha,
        subsample: a.subsample,
        seed: a.seed,
        workers: a.threads,
        dynamic_window: a.dynamic_window,
    }
}

fn train_cmd(a: &TrainArgs, config_file: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let config = train_config(a);
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    if a.min_count == 0 {
        return Err(CliError::usage("--min-count must be at least 1"));
    }
    let corpus = open_corpus(&a.corpus).map_err(|e| read_err(&a.corpus, e))?;

    let mut counter = VocabCounter::default();
    let mut documents = 0u64;
    corpus
        .for_each_document(|doc| {
            documents += 1;
            counter.add_document(doc.iter().copied());
        })
        .map_err(|e| read_err(&a.corpus, e))?;
    let tokens = counter.seen_tokens();
    let vocab = counter.finish(a.min_count).map_err(|e| match e {
        VocabError::InvalidMinCount => CliError::usage(e.to_string()),
        other => CliError::data(format!("{}: {other}", a.corpus.display())),
    })?;
    log::info!("{documents} documents, {tokens} tokens, vocabulary {} words at min_count {}", vocab.len(), a.min_count);
    let table = NegativeSamplingTable::build(&vocab, DEFAULT_NS_POWER, a.table_size)
        .map_err(|e| CliError::usage(e.to_string()))?;

    let format = a.format.unwrap_or_else(|| ModelFormat::from_path(&a.output));
    let outcome = match train::<f32>(&corpus, &vocab, &table, &config) {
        Ok(o) => o,
        Err(TrainError::CorpusRead { epoch, source, checkpoint }) => {
            let partial = partial_path(&a.output);
            let model = EmbeddingModel::new(vocab.words().to_vec(), checkpoint.input_vectors_f32(), a.dim)
                .map_err(|e| CliError::data(e.to_string()))?;
            model.save_text(&partial).map_err(|e| model_save_err(&partial, e))?;
            log::warn!(
                "saved parameters after {} completed epochs to {}",
                checkpoint.epochs_completed,
                partial.display()
            );
            return Err(read_err(&a.corpus, format!("epoch {epoch}: {source}")));
        }
        Err(e @ TrainError::Config(_)) => return Err(CliError::usage(e.to_string())),
        Err(e) => return Err(CliError::data(e.to_string())),
    };

    let model = EmbeddingModel::new(vocab.words().to_vec(), outcome.params.input_vectors_f32(), a.dim)
        .map_err(|e| CliError::data(e.to_string()))?;
    model.save(&a.output, format).map_err(|e| model_save_err(&a.output, e))?;

    let mut inputs = vec![digest_file(&a.corpus).map_err(|e| read_err(&a.corpus, e))?];
    if let Some(cfg) = config_file {
        inputs.push(digest_file(cfg).map_err(|e| read_err(cfg, e))?);
    }
    let manifest = RunManifest {
        command: "train".into(),
        tool_version: TOOL_VERSION.into(),
        config: resolved_config(a, format),
        inputs,
        outputs: vec![digest_file(&a.output).map_err(|e| read_err(&a.output, e))?],
        wall_time_secs: started.elapsed().as_secs_f64(),
        stats: RunStats { documents, tokens, vocab_size: vocab.len(), epoch_losses: outcome.epoch_losses },
    };
    let path = manifest.write_for(&a.output).map_err(|e| write_err(&RunManifest::path_for(&a.output), e))?;
    log::info!("wrote {} and {}", a.output.display(), path.display());
    Ok(())
}

fn partial_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".partial.txt");
    PathBuf::from(name)
}

fn resolved_config(a: &TrainArgs, format: ModelFormat) -> BTreeMap<String, String> {
    let value = serde_json::to_value(a).unwrap_or_default();
    let mut out: BTreeMap<String, String> = value
        .as_object()
        .map(|m| {
            m.iter()
                .map(|(k, v)| {
                    let v = match v {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    (k.replace('_', "-"), v)
                })
                .collect()
        })
        .unwrap_or_default();
    out.insert("format".into(), if format == ModelFormat::Binary { "bin" } else { "txt" }.into());
    out
}

// ---------------------------------------------------------------- convert

fn convert(a: &ConvertArgs) -> Result<()> {
    let model = load_model(&a.input, a.in_format)?;
    let out_format = a.out_format.unwrap_or_else(|| ModelFormat::from_path(&a.output));
    model.save(&a.output, out_format).map_err(|e| model_save_err(&a.output, e))?;
    log::info!("converted {} words x {} dims to {}", model.len(), model.dim(), a.output.display());
    Ok(())
}

// ---------------------------------------------------------------- query

fn similar(a: &SimilarArgs) -> Result<()> {
    let model = load_model(&a.model, a.model_format)?;
    let index = SimilarityIndex::new(&model);
    let result = index.most_similar(&a.word, a.n).map_err(|e| match e {
        QueryError::InvalidCount => CliError::usage(e.to_string()),
        other => CliError::data(other.to_string()),
    })?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let written = if a.json {
        writeln!(out, "{}", result.to_json())
    } else {
        result.neighbors.iter().try_for_each(|n| writeln!(out, "{}\t{:.4}", n.word, n.score))
    };
    written.map_err(|e| CliError::resource(format!("cannot write to stdout: {e}")))
}

// ---------------------------------------------------------------- expand

fn lexicon_err(path: &Path, e: LexiconError) -> CliError {
    match e {
        LexiconError::InvalidThreshold(_) | LexiconError::InvalidCount => CliError::usage(e.to_string()),
        LexiconError::InvalidTerm(_) => CliError::usage(e.to_string()),
        LexiconError::Io(io) => read_err(path, io),
        other => CliError::data(format!("{}: {other}", path.display())),
    }
}

fn load_lexicon(path: &Path) -> Result<Lexicon> {
    match File::open(path) {
        Ok(f) => Lexicon::read_jsonl(BufReader::new(f)).map_err(|e| lexicon_err(path, e)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Lexicon::new()),
        Err(e) => Err(read_err(path, e)),
    }
}

fn save_lexicon(lexicon: &Lexicon, path: &Path) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    let file = File::create(&tmp).map_err(|e| write_err(&tmp, e))?;
    lexicon.write_jsonl(BufWriter::new(file)).map_err(|e| write_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| write_err(path, e))
}

fn read_candidates(path: &Path) -> Result<Vec<CandidateTerm>> {
    let file = File::open(path).map_err(|e| read_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| read_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let c = serde_json::from_str(&line)
            .map_err(|e| CliError::data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(c);
    }
    Ok(out)
}

fn write_candidates(candidates: &[CandidateTerm], path: Option<&Path>) -> Result<()> {
    let mut buf = Vec::new();
    for c in candidates {
        serde_json::to_writer(&mut buf, c).map_err(|e| CliError::data(e.to_string()))?;
        buf.push(b'\n');
    }
    match path {
        Some(p) => fs::write(p, buf).map_err(|e| write_err(p, e)),
        None => io::stdout().write_all(&buf).map_err(|e| CliError::resource(format!("cannot write to stdout: {e}"))),
    }
}

fn expand(a: &ExpandArgs) -> Result<()> {
    let now = now_secs();
    let mut lexicon = load_lexicon(&a.lexicon)?;
    let mut changed = false;
    for seed in &a.seeds {
        changed |= lexicon.add_seed(seed.trim(), now).map_err(|e| lexicon_err(&a.lexicon, e))?;
    }

    if let Some(accept) = &a.accept {
        let accepted = read_candidates(accept)?;
        let merged = review_merge(&lexicon, &accepted, now).map_err(|e| lexicon_err(accept, e))?;
        save_lexicon(&merged.lexicon, &a.lexicon)?;
        log::info!("added {} terms; lexicon now has {}", merged.added.len(), merged.lexicon.len());
        return Ok(());
    }

    if lexicon.is_empty() {
        return Err(CliError::usage("the lexicon is empty; pass --seeds or an existing --lexicon"));
    }
    let model_path = a.model.as_deref().ok_or_else(|| CliError::usage("--model is required to expand"))?;
    let model = load_model(model_path, a.model_format)?;
    let index = SimilarityIndex::new(&model);

    let candidates = match &a.external {
        None => {
            let threshold = a.threshold.unwrap_or(DEFAULT_NEIGHBOR_THRESHOLD);
            expand_by_neighbors(&lexicon, &index, threshold, a.n).map_err(|e| lexicon_err(&a.lexicon, e))?
        }
        Some(messages) => {
            let threshold = a.threshold.unwrap_or(DEFAULT_EXTERNAL_THRESHOLD);
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(CliError::usage(LexiconError::InvalidThreshold(threshold).to_string()));
            }
            scan_file(messages, &lexicon, &index, threshold, a.threads.max(1))?
        }
    };
    log::info!("{} candidates", candidates.len());
    write_candidates(&candidates, a.candidates.as_deref())?;

    if a.accept_all {
        let merged = review_merge(&lexicon, &candidates, now).map_err(|e| lexicon_err(&a.lexicon, e))?;
        lexicon = merged.lexicon;
        changed = true;
        log::info!("accepted {} candidates; lexicon now has {}", merged.added.len(), lexicon.len());
    }
    if changed {
        save_lexicon(&lexicon, &a.lexicon)?;
    }
    Ok(())
}

fn scan_file(
    path: &Path,
    lexicon: &Lexicon,
    index: &SimilarityIndex<'_>,
    threshold: f64,
    threads: usize,
) -> Result<Vec<CandidateTerm>> {
    let text = fs::read(path).map_err(|e| read_err(path, e))?;
    let text = String::from_utf8_lossy(&text);
    let messages: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let chunk = messages.len().div_ceil(threads).max(1);
    let merged = std::thread::scope(|s| {
        let handles: Vec<_> =
            messages.chunks(chunk).map(|shard| s.spawn(move || scan_into(shard, lexicon, index, threshold))).collect();
        let mut all = CandidateSet::new();
        for h in handles {
            all.merge(h.join().expect("scan worker panicked"));
        }
        all
    });
    Ok(merged.into_sorted())
}

// ---------------------------------------------------------------- stats

fn stats(a: &StatsArgs) -> Result<()> {
    let corpus = open_corpus(&a.corpus).map_err(|e| read_err(&a.corpus, e))?;
    let meta = CorpusMeta::load_for(&a.corpus).unwrap_or_else(|e| {
        log::warn!("ignoring unreadable metadata: {e}");
        None
    });
    let (report, vocab) =
        corpus_stats(&corpus, &DEFAULT_MIN_COUNTS, a.top, meta.as_ref()).map_err(|e| read_err(&a.corpus, e))?;
    if report.documents == 0 {
        log::warn!("{} contains no documents", a.corpus.display());
    }
    let text = if a.json {
        serde_json::to_string_pretty(&report).map_err(|e| CliError::data(e.to_string()))? + "\n"
    } else {
        report.to_report()
    };
    io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::resource(format!("cannot write to stdout: {e}")))?;
    if let Some(tsv) = &a.tsv {
        let body = match vocab {
            Some(v) => v
                .words()
                .iter()
                .zip(v.counts())
                .filter(|(_, &c)| c >= a.min_count)
                .map(|(w, c)| format!("{w}\t{c}\n"))
                .collect::<String>(),
            None => String::new(),
        };
        fs::write(tsv, body).map_err(|e| write_err(tsv, e))?;
    }
    Ok(())
}
