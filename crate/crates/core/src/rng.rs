//! Keyed ChaCha streams for path noise.
//!
//! Path `p` draws its Gaussian increments from ChaCha stream `2p` and its
//! initial-state uniforms from stream `2p + 1`, so every draw is a pure
//! function of `(seed, path, step)` regardless of scheduling or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Seeded family of per-path streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
}

/// Sequential Gaussian increments of one path.
#[derive(Debug, Clone)]
pub struct PathNoise {
    rng: ChaCha12Rng,
}

impl PathNoise {
    /// Three independent standard normals for the next step.
    #[inline]
    pub fn next3(&mut self) -> [f64; 3] {
        std::array::from_fn(|_| self.rng.sample(StandardNormal))
    }
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn stream(&self, id: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }

    /// Increments of `path` starting at step 0.
    pub fn path(&self, path: u64) -> PathNoise {
        PathNoise { rng: self.stream(2 * path) }
    }

    /// The normals of `step` of `path`, by replaying the path's stream.
    pub fn normal3(&self, path: u64, step: u64) -> [f64; 3] {
        let mut p = self.path(path);
        for _ in 0..step {
            p.next3();
        }
        p.next3()
    }

    /// Four uniforms on [0, 1) for attempt `attempt` of the initial-state
    /// sampler of `path`.
    pub fn init_uniform4(&self, path: u64, attempt: u32) -> [f64; 4] {
        let mut rng = self.stream(2 * path + 1);
        // Each f64 consumes one 64-bit word, two ChaCha words.
        rng.set_word_pos(8 * u128::from(attempt));
        std::array::from_fn(|_| rng.random::<f64>())
    }
}
