//! Seeded random-number protocol.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by a
//! `(key, stream)` pair: sample `k` of a dataset with seed `s` reads stream `k`
//! of the generator keyed by `s`. Normals are produced by the Box–Muller
//! transform from open-interval uniforms. Seeds for replicates and auxiliary
//! datasets are derived with [`derive_seed`], a SplitMix64-style mix of the
//! parent seed and the coordinates of the draw.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of coordinates.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(parent ^ GOLDEN), |acc, &c| {
        mix64(acc ^ mix64(c.wrapping_add(GOLDEN)))
    })
}

/// Seed namespaces for auxiliary datasets.
pub mod namespace {
    pub const POPULATION_PROXY: u64 = 0x0050_524f_5859; // "PROXY"
    pub const INITIAL_DIRECTION: u64 = 0x4449_5245_4354; // "DIRECT"
    pub const MONTE_CARLO: u64 = 0x4d43_4d43; // "MCMC"
}

/// Random stream for one addressed draw.
#[derive(Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(key: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval (0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (a, b) = box_muller(self.uniform(), self.uniform());
        self.spare = Some(b);
        a
    }

    /// Bernoulli draw with success probability `prob`.
    pub fn bernoulli(&mut self, prob: f64) -> bool {
        self.uniform() < prob
    }

    /// Rademacher sign ±1.
    pub fn sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Uniformly distributed unit vector.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let n = crate::numeric::norm(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

/// Box–Muller transform of two uniforms in (0, 1) into two independent normals.
pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    (radius * angle.cos(), radius * angle.sin())
}
