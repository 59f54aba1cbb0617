//! Counter-based random streams.
//!
//! Every draw in the crate is addressed by a [`StreamKey`] plus two indices
//! (typically a time step and a member or run index). The stream for a given
//! address is the same no matter which thread asks for it or in which order,
//! so parallel and sequential evaluation give bit-identical results.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Named noise channels. Keeping them disjoint guarantees that, e.g., the
/// process noise of run 3 never aliases the measurement noise of run 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    EnsembleInit = 1,
    EnsemblePredict = 2,
    EnsembleUpdate = 3,
    ProcessNoise = 4,
    MeasurementNoise = 5,
    InitialState = 6,
    Tracker = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub channel: Channel,
}

impl StreamKey {
    pub fn new(seed: u64, channel: Channel) -> Self {
        Self { seed, channel }
    }

    pub fn rng(&self, a: u64, b: u64) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        bytes[0..8].copy_from_slice(&self.seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&(self.channel as u64).to_le_bytes());
        bytes[16..24].copy_from_slice(&a.to_le_bytes());
        bytes[24..32].copy_from_slice(&b.to_le_bytes());
        ChaCha8Rng::from_seed(bytes)
    }
}

/// Derives an independent seed for sub-experiment `index` (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws from N(0, Σ) for a fixed, possibly singular, PSD covariance.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
    zero: bool,
}

impl GaussianSampler {
    pub fn new(cov: &DMatrix<f64>) -> Self {
        let zero = cov.iter().all(|v| *v == 0.0);
        let factor = if zero {
            DMatrix::zeros(cov.nrows(), cov.ncols())
        } else {
            crate::linalg::psd_sqrt(cov)
        };
        Self { factor, zero }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        if self.zero {
            return DVector::zeros(n);
        }
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
        &self.factor * z
    }
}
