//! Seeded, domain-separated random streams.
//!
//! Every consumer (split shuffles, device sampling, SGD mini-batch orders,
//! synthetic draws) opens its own [`SeededStream`] from the experiment seed
//! and a hierarchical label such as `"sgd:round:3:device:17"`. The stream
//! state is the SHA-256 digest of `seed (little-endian) || label`, which
//! seeds a Xoshiro256** generator. Adding a new consumer therefore never
//! shifts the sequence seen by an existing one.
//!
//! The derived distributions are fixed here so that sequences are defined
//! by this crate rather than by the platform or a dependency's version:
//!
//! * uniforms: top 53 bits of the next output, scaled by 2^-53 into `[0, 1)`;
//! * gaussians: Box-Muller over two uniforms using `libm`'s pure-Rust
//!   `log`/`cos`/`sin`, both outputs of a pair are used;
//! * bounded integers: Lemire's widening multiply (no modulo);
//! * permutations: Fisher-Yates, iterating from the last position down.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct SeededStream {
    seed: u64,
    label: String,
    rng: Xoshiro256StarStar,
    spare_gaussian: Option<f64>,
}

impl SeededStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let digest = Sha256::new()
            .chain_update(seed.to_le_bytes())
            .chain_update(label.as_bytes())
            .finalize();
        let mut state = [0u8; 32];
        state.copy_from_slice(&digest);
        Self {
            seed,
            label,
            rng: Xoshiro256StarStar::from_seed(state),
            spare_gaussian: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Opens a child stream whose label extends this one.
    pub fn child(&self, suffix: &str) -> Self {
        Self::new(self.seed, format!("{}:{}", self.label, suffix))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`; safe as the argument of a logarithm or a negative power.
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform01()
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform01();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_gaussian = Some(radius * libm::sin(angle));
        radius * libm::cos(angle)
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        mean + std_dev * self.gaussian()
    }

    /// Uniform integer in `0..bound`. `bound` must be positive.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "below() needs a positive bound");
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
