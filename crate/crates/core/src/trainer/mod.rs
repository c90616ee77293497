//! CBOW training with negative sampling.
//!
//! Workers share one [`ModelParameters`] and update it without locks
//! (asynchronous SGD); with `workers > 1` results vary between runs. With a
//! single worker, training is a pure function of corpus, config and seed.

mod cbow;
mod params;

use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::vocab::{keep_probability, NegativeSamplingTable, Vocabulary};

pub use cbow::{
    cbow_step, cbow_update, neg_log_sigmoid, ns_gradient, ns_loss, sigmoid, NsGradient, Scratch,
    MAX_NEGATIVE_REDRAWS, SIGMOID_CLAMP,
};
pub use params::{init_parameters, ModelParameters, Real, SharedMatrix};

/// Learning rate never decays below this fraction of its initial value.
pub const ALPHA_FLOOR_FRACTION: f64 = 1e-4;
const PROGRESS_EVERY: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    /// Context radius in tokens on each side of the target.
    pub window: usize,
    /// Negatives per target.
    pub negative: usize,
    pub epochs: usize,
    pub alpha: f64,
    /// Subsampling threshold; 0 keeps every token.
    pub subsample: f64,
    pub seed: u64,
    pub workers: usize,
    /// Sample the radius uniformly from `1..=window` per position.
    pub dynamic_window: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 150,
            window: 5,
            negative: 5,
            epochs: 5,
            alpha: 0.025,
            subsample: 0.0,
            seed: 1,
            workers: 1,
            dynamic_window: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::Config(what.to_string()));
        if self.dim < 1 {
            return bad("dim must be at least 1");
        }
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if self.negative < 1 {
            return bad("negative must be at least 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.subsample >= 0.0 && self.subsample.is_finite()) {
            return bad("subsample must be non-negative");
        }
        if self.workers < 1 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }

    /// Learning rate after `processed` of `planned` tokens.
    pub fn learning_rate(&self, processed: u64, planned: u64) -> f64 {
        let progress = if planned == 0 { 1.0 } else { processed as f64 / planned as f64 };
        (self.alpha * (1.0 - progress)).max(self.alpha * ALPHA_FLOOR_FRACTION)
    }
}

/// Parameters as of the end of the last completed epoch, widened to `f64`
/// so one type serves both training precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epochs_completed: usize,
    pub dim: usize,
    pub w_in: Vec<f64>,
    pub w_out: Vec<f64>,
}

impl Checkpoint {
    fn capture<F: Real>(epochs_completed: usize, params: &ModelParameters<F>) -> Self {
        let widen = |m: &SharedMatrix<F>| m.to_vec().into_iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        Checkpoint { epochs_completed, dim: params.dim(), w_in: widen(&params.w_in), w_out: widen(&params.w_out) }
    }

    pub fn vocab_len(&self) -> usize {
        self.w_in.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn input_vectors_f32(&self) -> Vec<f32> {
        self.w_in.iter().map(|&v| v as f32).collect()
    }

    /// Rebuilds parameters to resume training from this point.
    pub fn to_params<F: Real>(&self, alpha: f64) -> ModelParameters<F> {
        let narrow = |v: &[f64]| v.iter().map(|&x| F::from_f64_lossy(x)).collect();
        let rows = self.vocab_len();
        ModelParameters::new(
            SharedMatrix::from_vec(rows, self.dim, narrow(&self.w_in)),
            SharedMatrix::from_vec(rows, self.dim, narrow(&self.w_out)),
            alpha,
        )
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("corpus read failed during epoch {epoch}: {source}")]
    CorpusRead {
        epoch: usize,
        #[source]
        source: io::Error,
        checkpoint: Box<Checkpoint>,
    },
    #[error("parameters became non-finite during epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("vocabulary and parameters disagree: {0}")]
    Shape(String),
}

fn corpus_read(epoch: usize, source: io::Error, checkpoint: &Checkpoint) -> TrainError {
    TrainError::CorpusRead { epoch, source, checkpoint: Box::new(checkpoint.clone()) }
}

#[derive(Debug)]
pub struct TrainOutcome<F: Real> {
    pub params: ModelParameters<F>,
    /// Mean negative-sampling loss per update step, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    /// Update steps taken per epoch.
    pub epoch_steps: Vec<u64>,
}

/// Trains from freshly initialized parameters.
pub fn train<F: Real>(
    corpus: &Corpus,
    vocab: &Vocabulary,
    table: &NegativeSamplingTable,
    config: &TrainConfig,
) -> Result<TrainOutcome<F>, TrainError> {
    config.validate()?;
    let params = init_parameters::<F>(vocab.len(), config);
    train_from(params, corpus, vocab, table, config)
}

/// Runs `config.epochs` passes over `corpus`, updating `params` in place.
pub fn train_from<F: Real>(
    params: ModelParameters<F>,
    corpus: &Corpus,
    vocab: &Vocabulary,
    table: &NegativeSamplingTable,
    config: &TrainConfig,
) -> Result<TrainOutcome<F>, TrainError> {
    config.validate()?;
    if params.vocab_len() != vocab.len() || params.dim() != config.dim {
        return Err(TrainError::Shape(format!(
            "parameters are {}x{}, vocabulary has {} words at dim {}",
            params.vocab_len(),
            params.dim(),
            vocab.len(),
            config.dim
        )));
    }
    let planned = config.epochs as u64 * vocab.total_tokens();
    let mut checkpoint = Checkpoint::capture(0, &params);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut epoch_steps = Vec::with_capacity(config.epochs);
    let started = Instant::now();

    for epoch in 0..config.epochs {
        let ranges = corpus.byte_ranges(config.workers).map_err(|e| corpus_read(epoch + 1, e, &checkpoint))?;
        let stop = AtomicBool::new(false);
        let results: Vec<io::Result<WorkerTotals>> = std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .into_iter()
                .enumerate()
                .map(|(worker, range)| {
                    let job = WorkerJob {
                        corpus,
                        vocab,
                        table,
                        config,
                        params: &params,
                        planned,
                        stop: &stop,
                        started,
                        stream: 1 + (epoch * config.workers + worker) as u64,
                    };
                    scope.spawn(move || job.run(range))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
        });

        let mut totals = WorkerTotals::default();
        for r in results {
            match r {
                Ok(t) => {
                    totals.loss += t.loss;
                    totals.steps += t.steps;
                }
                Err(e) => return Err(corpus_read(epoch + 1, e, &checkpoint)),
            }
        }
        if !params.all_finite() {
            return Err(TrainError::NonFinite { epoch: epoch + 1 });
        }
        let mean = if totals.steps == 0 { 0.0 } else { totals.loss / totals.steps as f64 };
        log::info!(
            "epoch {}/{} done: mean loss {:.6}, {} steps, alpha {:.6}",
            epoch + 1,
            config.epochs,
            mean,
            totals.steps,
            params.alpha()
        );
        epoch_losses.push(mean);
        epoch_steps.push(totals.steps);
        if epoch + 1 < config.epochs {
            checkpoint = Checkpoint::capture(epoch + 1, &params);
        }
    }
    Ok(TrainOutcome { params, epoch_losses, epoch_steps })
}

#[derive(Debug, Default, Clone, Copy)]
struct WorkerTotals {
    loss: f64,
    steps: u64,
}

struct WorkerJob<'a, F: Real> {
    corpus: &'a Corpus,
    vocab: &'a Vocabulary,
    table: &'a NegativeSamplingTable,
    config: &'a TrainConfig,
    params: &'a ModelParameters<F>,
    planned: u64,
    stop: &'a AtomicBool,
    started: Instant,
    stream: u64,
}

impl<F: Real> WorkerJob<'_, F> {
    fn run(self, range: std::ops::Range<u64>) -> io::Result<WorkerTotals> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.stream);
        let mut scratch = Scratch::<F>::new(self.config.dim, self.config.negative);
        let keep: Vec<f64> = if self.config.subsample > 0.0 {
            (0..self.vocab.len()).map(|i| keep_probability(self.vocab, i, self.config.subsample)).collect()
        } else {
            Vec::new()
        };
        let mut doc = Vec::new();
        let mut totals = WorkerTotals::default();
        let result = self.corpus.for_each_line_in(range, |line| {
            if self.stop.load(Ordering::Relaxed) {
                return;
            }
            doc.clear();
            let mut in_vocab = 0u64;
            for tok in line.split_ascii_whitespace() {
                if let Some(i) = self.vocab.index_of(tok) {
                    in_vocab += 1;
                    if keep.is_empty() || rng.random::<f64>() < keep[i] {
                        doc.push(i);
                    }
                }
            }
            let before = self.params.processed_tokens();
            let alpha = self.config.learning_rate(before, self.planned);
            self.params.set_alpha(alpha);
            let alpha_f = F::from_f64_lossy(alpha);
            for pos in 0..doc.len() {
                if let Some(loss) =
                    cbow_step(&doc, pos, self.params, self.config, self.table, alpha_f, &mut rng, &mut scratch)
                {
                    totals.loss += loss.to_f64().unwrap_or(f64::NAN);
                    totals.steps += 1;
                }
            }
            let prev = self.params.add_processed(in_vocab);
            if (prev + in_vocab) / PROGRESS_EVERY > prev / PROGRESS_EVERY {
                let done = prev + in_vocab;
                let rate = done as f64 / self.started.elapsed().as_secs_f64().max(1e-9);
                let running = if totals.steps == 0 { 0.0 } else { totals.loss / totals.steps as f64 };
                log::info!(
                    "progress tokens={done} tokens_per_sec={rate:.0} alpha={alpha:.6} mean_loss={running:.6}"
                );
            }
        });
        if result.is_err() {
            self.stop.store(true, Ordering::Relaxed);
        }
        result.map(|_| totals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_corpus() -> (Corpus, Vocabulary) {
        let words = ["the", "cat", "sat", "on", "mat", "dog", "ran", "far", "away", "home"];
        let mut lines = Vec::new();
        for i in 0..20 {
            let line: Vec<&str> = (0..10).map(|j| words[(i * 3 + j * 7) % words.len()]).collect();
            lines.push(line.join(" "));
        }
        let vocab = Vocabulary::build(lines.iter().map(|l| l.split(' ')), 1).unwrap();
        (Corpus::from_lines(&lines), vocab)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { dim: 0, ..TrainConfig::default() },
            TrainConfig { window: 0, ..TrainConfig::default() },
            TrainConfig { negative: 0, ..TrainConfig::default() },
            TrainConfig { alpha: 0.0, ..TrainConfig::default() },
            TrainConfig { workers: 0, ..TrainConfig::default() },
            TrainConfig { subsample: -1.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig { alpha: 0.025, ..TrainConfig::default() };
        assert_eq!(c.learning_rate(0, 100), 0.025);
        assert!((c.learning_rate(50, 100) - 0.0125).abs() < 1e-15);
        assert_eq!(c.learning_rate(100, 100), 0.025 * 1e-4);
        assert_eq!(c.learning_rate(500, 100), 0.025 * 1e-4);
        let mut last = f64::INFINITY;
        for p in 0..=120 {
            let a = c.learning_rate(p, 100);
            assert!(a <= last && a >= 0.025 * 1e-4);
            last = a;
        }
    }

    #[test]
    fn toy_run_is_reproducible() {
        let (corpus, vocab) = toy_corpus();
        assert_eq!(vocab.total_tokens(), 200);
        let table = NegativeSamplingTable::build(&vocab, 0.75, 10_000).unwrap();
        let config = TrainConfig { dim: 16, epochs: 3, seed: 42, ..TrainConfig::default() };
        let a = train::<f32>(&corpus, &vocab, &table, &config).unwrap();
        let b = train::<f32>(&corpus, &vocab, &table, &config).unwrap();
        let bits = |p: &ModelParameters<f32>| p.w_in.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.params), bits(&b.params));
        assert_eq!(a.params.processed_tokens(), 600);
        assert_eq!(a.epoch_losses.len(), 3);
        assert!(a.params.all_finite());

        let c = train::<f32>(&corpus, &vocab, &table, &TrainConfig { seed: 43, ..config }).unwrap();
        assert_ne!(bits(&a.params), bits(&c.params));
    }

    #[test]
    fn multi_worker_run_completes() {
        let (corpus, vocab) = toy_corpus();
        let table = NegativeSamplingTable::build(&vocab, 0.75, 10_000).unwrap();
        let config = TrainConfig { dim: 8, epochs: 2, workers: 4, dynamic_window: true, subsample: 1e-3, ..TrainConfig::default() };
        let out = train::<f32>(&corpus, &vocab, &table, &config).unwrap();
        assert_eq!(out.params.processed_tokens(), 400);
        assert!(out.params.all_finite());
        assert!(out.params.alpha() >= config.alpha * ALPHA_FLOOR_FRACTION);
    }

    #[test]
    fn zero_epochs_rejected() {
        let (corpus, vocab) = toy_corpus();
        let table = NegativeSamplingTable::build(&vocab, 0.75, 100).unwrap();
        let config = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(train::<f32>(&corpus, &vocab, &table, &config), Err(TrainError::Config(_))));
    }

    #[test]
    fn unreadable_corpus_returns_checkpoint() {
        let (_, vocab) = toy_corpus();
        let table = NegativeSamplingTable::build(&vocab, 0.75, 100).unwrap();
        let corpus = Corpus::from_path("/nonexistent/corpus.txt");
        let config = TrainConfig { dim: 4, ..TrainConfig::default() };
        match train::<f32>(&corpus, &vocab, &table, &config) {
            Err(TrainError::CorpusRead { epoch: 1, checkpoint, .. }) => {
                assert_eq!(checkpoint.epochs_completed, 0);
                assert_eq!(checkpoint.vocab_len(), vocab.len());
                assert_eq!(checkpoint.to_params::<f32>(0.025).dim(), 4);
            }
            other => panic!("expected corpus read error, got {other:?}"),
        }
    }
}
