//! Seeded randomness and Gaussian noise injection.
//!
//! Every random draw in the pipeline comes from a stream derived from one
//! root [`Seed`] plus a domain key, so runs replay bit-for-bit and parallel
//! evaluation order cannot change any output. Noise streams are keyed by
//! `(content id, pool index, validation index)`: the same tensor always sees
//! the same draws no matter when or where it is scored.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Root seed for all pseudo-randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

/// Domain tags keep streams for unrelated purposes disjoint even when their
/// numeric keys collide.
pub mod domain {
    pub const NOISE: u64 = 0x4e4f495345; // "NOISE"
    pub const SYNTH_BG: u64 = 0x42475458; // "BGTX"
    pub const SYNTH_TRIGGER: u64 = 0x54524947; // "TRIG"
    pub const PATTERN: u64 = 0x5041545f; // "PAT_"
    pub const CALIBRATION: u64 = 0x43414c49; // "CALI"
    pub const TEST: u64 = 0x54455354; // "TEST"
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Seed {
    /// Deterministic child stream for a domain key.
    pub fn stream(&self, key: &[u64]) -> ChaCha8Rng {
        let mut state = self.0 ^ 0x6a09e667f3bcc908;
        let mut acc = splitmix64(&mut state);
        for &k in key {
            state ^= k;
            acc ^= splitmix64(&mut state);
        }
        let mut seed_bytes = [0u8; 32];
        let mut s = acc;
        for chunk in seed_bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed_bytes)
    }

    /// Stream for the Gaussian perturbation of one (sample, pool index,
    /// validation index) coordinate.
    pub fn noise_stream(&self, sample_id: u64, pool_index: usize, val_index: usize) -> ChaCha8Rng {
        self.stream(&[domain::NOISE, sample_id, pool_index as u64, val_index as u64])
    }
}

/// Adds i.i.d. `N(0, variance)` noise to every pixel (standard deviation
/// `sqrt(variance)`). No clipping unless `clip` is set, in which case the
/// result is clamped to `[0, 1]`.
pub fn add_noise(
    image: &ImageTensor,
    variance: f64,
    rng: &mut ChaCha8Rng,
    clip: bool,
) -> Result<ImageTensor> {
    if variance <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise variance {variance} must be > 0"
        )));
    }
    let sd = variance.sqrt() as f32;
    let mut out = image.clone();
    for v in out.data_mut() {
        let eps: f32 = rng.sample(StandardNormal);
        let mut nv = *v + sd * eps;
        if clip {
            nv = nv.clamp(0.0, 1.0);
        }
        *v = nv;
    }
    Ok(out)
}
