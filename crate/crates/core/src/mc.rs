//! Reproducible chunked Monte Carlo.
//!
//! Draws are split into fixed-size chunks. Chunk `j` of a run keyed by
//! `(seed, purpose)` owns the ChaCha8 stream `j` of that key, so results do
//! not depend on how many worker threads evaluate the chunks. Reductions are
//! always performed in chunk order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type McRng = ChaCha8Rng;

/// Draws per chunk.
pub const CHUNK: usize = 4096;

/// Stream for chunk `chunk` of the run keyed by `(seed, purpose)`.
pub fn chunk_rng(seed: u64, purpose: u64, chunk: u64) -> McRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(chunk);
    rng
}

/// A seed and a purpose tag identifying an independent family of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: u64) -> Self {
        Self { seed, purpose }
    }

    /// A key for a sub-task, e.g. one scenario in a grid.
    pub fn derive(&self, tag: u64) -> Self {
        // SplitMix64 finalizer keeps derived purposes well separated.
        let mut z = self.purpose ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Self { seed: self.seed, purpose: z ^ (z >> 31) }
    }

    pub fn rng(&self, chunk: u64) -> McRng {
        chunk_rng(self.seed, self.purpose, chunk)
    }
}

/// Runs `f(rng, len)` over every chunk of `n` draws and returns the chunk
/// results in chunk order.
pub fn map_chunks<T, F>(n: usize, key: StreamKey, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut McRng, usize) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let run = |j: usize| {
        let len = CHUNK.min(n - j * CHUNK);
        let mut rng = key.rng(j as u64);
        f(&mut rng, len)
    };
    if chunks <= 1 {
        (0..chunks).map(run).collect()
    } else {
        (0..chunks).into_par_iter().map(run).collect()
    }
}

/// Collects one value per draw, in draw order.
pub fn sample<F>(n: usize, key: StreamKey, f: F) -> Vec<f64>
where
    F: Fn(&mut McRng) -> f64 + Sync,
{
    map_chunks(n, key, |rng, len| (0..len).map(|_| f(rng)).collect::<Vec<_>>())
        .into_iter()
        .flatten()
        .collect()
}

/// Mean and standard error of one value per draw.
pub fn mean<F>(n: usize, key: StreamKey, f: F) -> MeanAcc
where
    F: Fn(&mut McRng) -> f64 + Sync,
{
    map_chunks(n, key, |rng, len| {
        let mut acc = MeanAcc::default();
        for _ in 0..len {
            acc.push(f(rng));
        }
        acc
    })
    .into_iter()
    .fold(MeanAcc::default(), |a, b| a.merge(&b))
}

/// Running mean and sum of squared deviations (Welford, merged with Chan's
/// pairwise update).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAcc {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl MeanAcc {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &MeanAcc) -> MeanAcc {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        MeanAcc {
            n,
            mean: self.mean + d * w,
            m2: self.m2 + other.m2 + d * d * self.n as f64 * w,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    /// `(mean − target)/std_error`, or 0 when both the error and the
    /// deviation vanish.
    pub fn t_stat(&self, target: f64) -> f64 {
        let se = self.std_error();
        let d = self.mean - target;
        if se == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / se
        }
    }
}

impl FromIterator<f64> for MeanAcc {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MeanAcc::default();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let whole: MeanAcc = xs.iter().copied().collect();
        let left: MeanAcc = xs[..313].iter().copied().collect();
        let right: MeanAcc = xs[313..].iter().copied().collect();
        let merged = left.merge(&right);
        assert_eq!(merged.n, whole.n);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.m2 - whole.m2).abs() < 1e-9 * whole.m2);
    }

    #[test]
    fn chunk_streams_differ_and_repeat() {
        let a: u64 = chunk_rng(1, 2, 0).random();
        let b: u64 = chunk_rng(1, 2, 1).random();
        let c: u64 = chunk_rng(1, 3, 0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, chunk_rng(1, 2, 0).random::<u64>());
    }

    #[test]
    fn results_independent_of_thread_count() {
        let key = StreamKey::new(42, 7);
        let n = 3 * CHUNK + 17;
        let f = |rng: &mut McRng| rng.random::<f64>();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sample(n, key, f));
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| sample(n, key, f));
        assert_eq!(one.len(), n);
        assert_eq!(one, four);
        let m1 = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| mean(n, key, f));
        assert_eq!(m1, mean(n, key, f));
    }

    #[test]
    fn derived_keys_are_distinct() {
        let k = StreamKey::new(5, 0);
        assert_ne!(k.derive(1), k.derive(2));
        assert_eq!(k.derive(1), k.derive(1));
    }
}
