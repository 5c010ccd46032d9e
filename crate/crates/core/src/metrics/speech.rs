use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dtw::{dtw_by, dtw_channels};
use crate::corpus::AudioFeatures;
use crate::error::{Error, Result};

/// `(10 / ln 10) · √2`
pub const MCD_CONSTANT: f64 = 10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2;

/// First cepstral channel; 0 is F0 and 1 is energy.
pub const FIRST_CEPSTRAL: usize = 2;

pub const F0_CHANNEL: usize = 0;
pub const ENERGY_CHANNEL: usize = 1;

/// Mel-cepstral distortion over a DTW alignment computed on the cepstral
/// channels.
pub fn mcd(a: &AudioFeatures, b: &AudioFeatures) -> Result<f64> {
    if a.channels() <= FIRST_CEPSTRAL {
        return Err(Error::Argument(format!(
            "{} channels leave no cepstral channel",
            a.channels()
        )));
    }
    let path = dtw_channels(a, b, FIRST_CEPSTRAL..a.channels())?;
    // The local DTW distance on these channels is exactly the per-pair
    // cepstral distance, so the path cost is their sum.
    Ok(MCD_CONSTANT * path.cost / path.len() as f64)
}

/// RMSE of one channel over a DTW alignment computed on that channel.
pub fn channel_rmse(a: &AudioFeatures, b: &AudioFeatures, channel: usize) -> Result<f64> {
    if channel >= a.channels() || channel >= b.channels() {
        return Err(Error::Argument(format!("no channel {channel}")));
    }
    let path = dtw_by(a.frames(), b.frames(), |i, j| {
        (a.frame(i)[channel] - b.frame(j)[channel]).abs()
    })?;
    let sq: f64 = path
        .pairs
        .iter()
        .map(|&(i, j)| {
            let d = a.frame(i)[channel] - b.frame(j)[channel];
            d * d
        })
        .sum();
    Ok((sq / path.len() as f64).sqrt())
}

/// Seed of the speaker-encoder projection.
pub const SPEAKER_SEED: u64 = 0x5EC5;
pub const SPEAKER_DIM: usize = 16;

/// Fixed centre and scale for each channel's statistics: F0 in Hz, energy,
/// then cepstra.
const F0_CENTER: f64 = 180.0;
const F0_SCALE: f64 = 50.0;
const ENERGY_CENTER: f64 = 1.0;
const ENERGY_SCALE: f64 = 0.5;

/// Toy speaker encoder: per-channel mean and standard deviation, each
/// standardized with fixed constants, mapped through a seeded Gaussian
/// projection to [`SPEAKER_DIM`] dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEncoder {
    channels: usize,
    /// `SPEAKER_DIM × 2C`, row-major.
    projection: Vec<f64>,
}

impl SpeakerEncoder {
    pub fn new(channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(SPEAKER_SEED ^ channels as u64);
        let width = 2 * channels;
        let projection = (0..SPEAKER_DIM * width)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { channels, projection }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    fn center_scale(c: usize) -> (f64, f64) {
        match c {
            F0_CHANNEL => (F0_CENTER, F0_SCALE),
            ENERGY_CHANNEL => (ENERGY_CENTER, ENERGY_SCALE),
            _ => (0.0, 1.0),
        }
    }

    /// Standardized statistics: `C` means followed by `C` standard
    /// deviations.
    pub fn statistics(&self, x: &AudioFeatures) -> Result<Vec<f64>> {
        if x.channels() != self.channels {
            return Err(Error::Shape(format!(
                "speaker encoder for {} channels given {}",
                self.channels,
                x.channels()
            )));
        }
        let n = x.frames() as f64;
        let mut means = Vec::with_capacity(self.channels);
        let mut stds = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let (center, scale) = Self::center_scale(c);
            let mean = x.channel(c).sum::<f64>() / n;
            let var = x.channel(c).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means.push((mean - center) / scale);
            stds.push(var.sqrt() / scale);
        }
        means.extend(stds);
        Ok(means)
    }

    /// Projected, unit-length speaker embedding.
    pub fn embed(&self, x: &AudioFeatures) -> Result<Vec<f64>> {
        let s = self.statistics(x)?;
        let width = s.len();
        let mut e: Vec<f64> = self
            .projection
            .chunks_exact(width)
            .map(|row| row.iter().zip(&s).map(|(w, v)| w * v).sum())
            .collect();
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-12) {
            return Err(Error::DegenerateEmbedding(norm));
        }
        e.iter_mut().for_each(|v| *v /= norm);
        Ok(e)
    }

    pub fn secs(&self, x: &AudioFeatures, y: &AudioFeatures) -> Result<f64> {
        let (a, b) = (self.embed(x)?, self.embed(y)?);
        Ok(a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0))
    }
}

/// Speaker-embedding cosine similarity.
pub fn secs(x: &AudioFeatures, y: &AudioFeatures) -> Result<f64> {
    if x.channels() != y.channels() {
        return Err(Error::Shape(format!("{} vs {} channels", x.channels(), y.channels())));
    }
    SpeakerEncoder::new(x.channels()).secs(x, y)
}
