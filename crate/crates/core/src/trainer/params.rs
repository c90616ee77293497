use std::fmt::Debug;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;

/// Floating-point type usable for training. Each value lives in an atomic
/// cell so that workers can read and write shared rows without locks; all
/// accesses are `Relaxed`, and a read-modify-write is a separate load and
/// store, so concurrent updates to one element may be lost.
pub trait Real: Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static {
    type Cell: Send + Sync + Debug;

    fn cell(v: Self) -> Self::Cell;
    fn load(cell: &Self::Cell) -> Self;
    fn store(cell: &Self::Cell, v: Self);

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

impl Real for f32 {
    type Cell = AtomicU32;

    fn cell(v: f32) -> AtomicU32 {
        AtomicU32::new(v.to_bits())
    }

    #[inline]
    fn load(cell: &AtomicU32) -> f32 {
        f32::from_bits(cell.load(Ordering::Relaxed))
    }

    #[inline]
    fn store(cell: &AtomicU32, v: f32) {
        cell.store(v.to_bits(), Ordering::Relaxed)
    }
}

impl Real for f64 {
    type Cell = AtomicU64;

    fn cell(v: f64) -> AtomicU64 {
        AtomicU64::new(v.to_bits())
    }

    #[inline]
    fn load(cell: &AtomicU64) -> f64 {
        f64::from_bits(cell.load(Ordering::Relaxed))
    }

    #[inline]
    fn store(cell: &AtomicU64, v: f64) {
        cell.store(v.to_bits(), Ordering::Relaxed)
    }
}

/// Row-major matrix shared between training workers.
#[derive(Debug)]
pub struct SharedMatrix<F: Real> {
    rows: usize,
    cols: usize,
    data: Vec<F::Cell>,
}

impl<F: Real> SharedMatrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SharedMatrix { rows, cols, data: (0..rows * cols).map(|_| F::cell(F::zero())).collect() }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<F>) -> Self {
        assert_eq!(values.len(), rows * cols, "matrix shape mismatch");
        SharedMatrix { rows, cols, data: values.into_iter().map(F::cell).collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> F {
        F::load(&self.data[row * self.cols + col])
    }

    #[inline]
    pub fn set(&self, row: usize, col: usize, v: F) {
        F::store(&self.data[row * self.cols + col], v)
    }

    /// Copies row `row` into `out`.
    #[inline]
    pub fn read_row(&self, row: usize, out: &mut [F]) {
        let cells = &self.data[row * self.cols..(row + 1) * self.cols];
        for (o, c) in out.iter_mut().zip(cells) {
            *o = F::load(c);
        }
    }

    pub fn row(&self, row: usize) -> Vec<F> {
        let mut out = vec![F::zero(); self.cols];
        self.read_row(row, &mut out);
        out
    }

    /// `row += scale * delta`.
    #[inline]
    pub fn add_scaled(&self, row: usize, delta: &[F], scale: F) {
        let cells = &self.data[row * self.cols..(row + 1) * self.cols];
        for (c, &d) in cells.iter().zip(delta) {
            F::store(c, F::load(c) + scale * d);
        }
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.data.iter().map(F::load).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|c| F::load(c).is_finite())
    }
}

impl<F: Real> Clone for SharedMatrix<F> {
    fn clone(&self) -> Self {
        SharedMatrix::from_vec(self.rows, self.cols, self.to_vec())
    }
}

/// Learnable state: input (context) vectors, output vectors and progress.
#[derive(Debug)]
pub struct ModelParameters<F: Real> {
    /// Input vectors; these are the published embeddings.
    pub w_in: SharedMatrix<F>,
    pub w_out: SharedMatrix<F>,
    processed: AtomicU64,
    alpha: AtomicU64,
}

impl<F: Real> ModelParameters<F> {
    pub fn new(w_in: SharedMatrix<F>, w_out: SharedMatrix<F>, alpha: f64) -> Self {
        assert_eq!((w_in.rows(), w_in.cols()), (w_out.rows(), w_out.cols()));
        ModelParameters { w_in, w_out, processed: AtomicU64::new(0), alpha: AtomicU64::new(alpha.to_bits()) }
    }

    pub fn vocab_len(&self) -> usize {
        self.w_in.rows()
    }

    pub fn dim(&self) -> usize {
        self.w_in.cols()
    }

    pub fn processed_tokens(&self) -> u64 {
        self.processed.load(Ordering::Relaxed)
    }

    /// Adds to the progress counter, returning the previous value.
    pub fn add_processed(&self, tokens: u64) -> u64 {
        self.processed.fetch_add(tokens, Ordering::Relaxed)
    }

    pub fn alpha(&self) -> f64 {
        f64::from_bits(self.alpha.load(Ordering::Relaxed))
    }

    pub fn set_alpha(&self, alpha: f64) {
        self.alpha.store(alpha.to_bits(), Ordering::Relaxed)
    }

    pub fn all_finite(&self) -> bool {
        self.w_in.all_finite() && self.w_out.all_finite()
    }

    /// Input vectors as a dense row-major `f32` matrix.
    pub fn input_vectors_f32(&self) -> Vec<f32> {
        self.w_in.to_vec().into_iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect()
    }
}

impl<F: Real> Clone for ModelParameters<F> {
    fn clone(&self) -> Self {
        ModelParameters {
            w_in: self.w_in.clone(),
            w_out: self.w_out.clone(),
            processed: AtomicU64::new(self.processed_tokens()),
            alpha: AtomicU64::new(self.alpha().to_bits()),
        }
    }
}

/// Input vectors i.i.d. uniform in `[-0.5/D, 0.5/D]` from the seeded PRNG,
/// output vectors zero.
pub fn init_parameters<F: Real>(vocab_len: usize, config: &TrainConfig) -> ModelParameters<F> {
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = 1.0 / dim as f64;
    let values = (0..vocab_len * dim).map(|_| F::from_f64_lossy((rng.random::<f64>() - 0.5) * scale)).collect();
    ModelParameters::new(
        SharedMatrix::from_vec(vocab_len, dim, values),
        SharedMatrix::zeros(vocab_len, dim),
        config.alpha,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_range_and_zeros() {
        let config = TrainConfig { dim: 150, ..TrainConfig::default() };
        let p = init_parameters::<f32>(40, &config);
        let bound = 0.5 / 150.0;
        assert!(p.w_in.to_vec().iter().all(|v| v.abs() <= bound));
        assert!(p.w_in.to_vec().iter().any(|&v| v != 0.0));
        assert!(p.w_out.to_vec().iter().all(|&v| v == 0.0));
        assert_eq!(p.alpha(), config.alpha);
    }

    #[test]
    fn init_is_seeded() {
        let config = TrainConfig { dim: 8, seed: 3, ..TrainConfig::default() };
        let a = init_parameters::<f64>(10, &config);
        let b = init_parameters::<f64>(10, &config);
        assert_eq!(a.w_in.to_vec(), b.w_in.to_vec());
        let c = init_parameters::<f64>(10, &TrainConfig { seed: 4, ..config });
        assert_ne!(a.w_in.to_vec(), c.w_in.to_vec());
    }

    #[test]
    fn matrix_ops() {
        let m = SharedMatrix::<f32>::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(m.row(1), [4., 5., 6.]);
        m.add_scaled(0, &[1., 1., 1.], 0.5);
        assert_eq!(m.row(0), [1.5, 2.5, 3.5]);
        m.set(1, 2, f32::NAN);
        assert!(!m.all_finite());
    }
}
