use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Mat;

/// Borrowed view of one named parameter block.
pub struct BlockRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Named, ordered access to every parameter block of a layer or network.
///
/// Gradients use the same container type as the parameters they belong to, so
/// `blocks()` of a gradient lines up index-for-index with `blocks_mut()` of the
/// parameters.
pub trait Params {
    fn blocks(&self) -> Vec<BlockRef<'_>>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    fn fill_zero(&mut self) {
        for (_, d) in self.blocks_mut() {
            d.fill(0.0);
        }
    }

    /// `self += alpha * other`, block by block.
    fn axpy(&mut self, alpha: f64, other: &Self)
    where
        Self: Sized,
    {
        let src = other.blocks();
        for ((_, dst), s) in self.blocks_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s.data) {
                *d += alpha * v;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.data.iter().all(|v| v.is_finite()))
    }
}

/// Weight initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(-a, a)` with `a = gain * sqrt(3 / fan_in)`, i.e. variance `gain^2 / fan_in`.
    UniformFanIn { gain: f64 },
    Zeros,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::UniformFanIn { gain: 1.0 }
    }
}

impl InitScheme {
    pub fn target_variance(self, fan_in: usize) -> f64 {
        match self {
            InitScheme::UniformFanIn { gain } => gain * gain / fan_in.max(1) as f64,
            InitScheme::Zeros => 0.0,
        }
    }

    pub fn sample(self, rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
        match self {
            InitScheme::UniformFanIn { gain } => {
                let a = gain * (3.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..=a)).collect()
            }
            InitScheme::Zeros => vec![0.0; n],
        }
    }

    pub fn matrix(self, rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Mat {
        Mat::from_vec(rows, cols, self.sample(rng, rows * cols, fan_in))
    }
}

/// A `rows x cols` weight matrix drawn from `scheme` with fan-in `rows`.
pub fn init_params(seed: u64, scheme: InitScheme, rows: usize, cols: usize) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scheme.matrix(&mut rng, rows, cols, rows)
}
