//! Seeded random generation and the distributions the benchmarks draw from.
//!
//! A single root [`Seed`] deterministically derives per-purpose
//! sub-streams (dataset axes, measurement noise, oracle noise, weight
//! init, dropout masks, ...) so every stage can be re-run independently
//! while the whole pipeline stays reproducible from one number.
//!
//! Splitting scheme: `derive(tag)` mixes the parent value with the tag
//! through the SplitMix64 finalizer, i.e.
//! `child = mix64(parent ^ mix64(tag ^ GOLDEN))`. Children of distinct
//! tags are statistically independent and the derivation is pure, so a
//! worker owning `seed.derive(i)` never contends with its siblings.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; bijective on u64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of a reproducible random stream.
///
/// Identical seed and identical call sequence give a bit-identical
/// sample stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    /// Derive an independent child stream for `tag`.
    pub fn derive(self, tag: u64) -> Seed {
        Seed(mix64(self.0 ^ mix64(tag ^ GOLDEN)))
    }

    /// Derive a child stream from a textual purpose label (FNV-1a over
    /// the bytes, then the same mixing as [`Seed::derive`]).
    pub fn derive_str(self, label: &str) -> Seed {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.derive(h)
    }

    /// A generator positioned at the start of this stream.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Three-parameter Gamma: `location + Gamma(shape, scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub location: f64,
    pub scale: f64,
}

impl GammaParams {
    pub fn new(shape: f64, location: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0) {
            return Err(Error::Parameter(format!("gamma shape must be > 0, got {shape}")));
        }
        if !(scale > 0.0) {
            return Err(Error::Parameter(format!("gamma scale must be > 0, got {scale}")));
        }
        Ok(GammaParams { shape, location, scale })
    }

    /// Analytic mean `shape * scale + location`.
    pub fn mean(&self) -> f64 {
        self.shape * self.scale + self.location
    }

    /// Analytic variance `shape * scale^2`.
    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }
}

/// Fitted tree-diameter distribution, in centimeters.
pub const DIAMETER_GAMMA: GammaParams = GammaParams {
    shape: 0.68,
    location: 5.00,
    scale: 30.18,
};

/// Fitted tree-height distribution, in meters.
pub const HEIGHT_GAMMA: GammaParams = GammaParams {
    shape: 1.92,
    location: 1.18,
    scale: 7.75,
};

/// Draw `n` i.i.d. samples from the shifted Gamma.
///
/// Valid for any `shape > 0`, including `shape < 1`.
pub fn sample_gamma(params: &GammaParams, n: usize, seed: Seed) -> Result<Vec<f64>> {
    if !(params.shape > 0.0) || !(params.scale > 0.0) {
        return Err(Error::Parameter(format!(
            "gamma requires shape > 0 and scale > 0, got shape {} scale {}",
            params.shape, params.scale
        )));
    }
    let dist = Gamma::new(params.shape, params.scale)
        .map_err(|e| Error::Parameter(format!("gamma: {e}")))?;
    let mut rng = seed.rng();
    Ok((0..n).map(|_| params.location + dist.sample(&mut rng)).collect())
}

/// Draw `n` i.i.d. normal samples.
pub fn sample_gaussian(mean: f64, stddev: f64, n: usize, seed: Seed) -> Result<Vec<f64>> {
    if !(stddev >= 0.0) {
        return Err(Error::Parameter(format!("stddev must be >= 0, got {stddev}")));
    }
    let dist =
        Normal::new(mean, stddev).map_err(|e| Error::Parameter(format!("normal: {e}")))?;
    let mut rng = seed.rng();
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Draw `n` i.i.d. Poisson counts.
///
/// Exact for the whole benchmark range (the image-noise model uses
/// `lambda = 255 * n` up to roughly 2040): the underlying sampler is
/// inversion for small `lambda` and exact rejection for large, never a
/// rounded normal.
pub fn sample_poisson(lambda: f64, n: usize, seed: Seed) -> Result<Vec<u64>> {
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(vec![0; n]);
    }
    let dist =
        Poisson::new(lambda).map_err(|e| Error::Parameter(format!("poisson: {e}")))?;
    let mut rng = seed.rng();
    Ok((0..n).map(|_| dist.sample(&mut rng) as u64).collect())
}

/// Standard-normal draw helper used by the hot loops.
#[inline]
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}
