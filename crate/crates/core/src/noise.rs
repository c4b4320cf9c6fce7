//! Reproducible Gaussian increments.
//!
//! Every path owns its own ChaCha8 stream (`stream = path index`) keyed by the
//! master seed, so path `i` is the same no matter which thread simulates it or
//! how many paths run alongside it. Normals are drawn in the fixed order
//! `step * d + channel`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const DEFAULT_SEED: u64 = 0x5DE5_EED0;

#[derive(Clone, Debug)]
pub struct NoiseStream {
    seed: u64,
    path: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        NoiseStream { seed, path, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> u64 {
        self.path
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_normals(&mut self, out: &mut [f64]) {
        for z in out {
            *z = self.normal();
        }
    }
}

/// Brownian increments for one Euler step of size `delta`, built from `m`
/// sub-increments of size `delta / m`. With `m = 1` this is `sqrt(delta) * Z`;
/// larger `m` gives the coarse increment that matches a fine path run with
/// step `delta / m` on the same stream.
#[derive(Clone, Debug)]
pub struct Increments {
    stream: NoiseStream,
    noise_dim: usize,
    m: usize,
    sub_scale: f64,
    scratch: Vec<f64>,
}

impl Increments {
    pub fn new(stream: NoiseStream, noise_dim: usize, delta: f64, m: usize) -> Self {
        assert!(m >= 1, "sub-step count must be positive");
        Increments { stream, noise_dim, m, sub_scale: (delta / m as f64).sqrt(), scratch: vec![0.0; noise_dim] }
    }

    /// Next increment vector.
    pub fn next_into(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..self.m {
            self.stream.fill_normals(&mut self.scratch);
            for (o, z) in out.iter_mut().zip(&self.scratch) {
                *o += self.sub_scale * z;
            }
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }
}
