use serde::Serialize;

use super::speech::{channel_rmse, mcd, secs, ENERGY_CHANNEL, F0_CHANNEL};
use crate::corpus::AudioFeatures;
use crate::error::{Error, Result};

/// Per-item values of one metric and their mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSeries {
    pub mean: f64,
    pub values: Vec<f64>,
}

impl MetricSeries {
    pub fn new(values: Vec<f64>) -> Self {
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Self { mean, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TtsReport {
    pub energy_rmse: MetricSeries,
    pub f0_rmse: MetricSeries,
    pub mcd: MetricSeries,
    pub secs: MetricSeries,
}

/// Metrics of one generated item against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TtsScores {
    pub energy_rmse: f64,
    pub f0_rmse: f64,
    pub mcd: f64,
    pub secs: f64,
}

pub fn tts_scores(output: &AudioFeatures, truth: &AudioFeatures) -> Result<TtsScores> {
    Ok(TtsScores {
        energy_rmse: channel_rmse(output, truth, ENERGY_CHANNEL)?,
        f0_rmse: channel_rmse(output, truth, F0_CHANNEL)?,
        mcd: mcd(output, truth)?,
        secs: secs(output, truth)?,
    })
}

impl TtsReport {
    pub fn from_scores(scores: &[TtsScores]) -> Self {
        let col = |f: fn(&TtsScores) -> f64| MetricSeries::new(scores.iter().map(f).collect());
        Self {
            energy_rmse: col(|s| s.energy_rmse),
            f0_rmse: col(|s| s.f0_rmse),
            mcd: col(|s| s.mcd),
            secs: col(|s| s.secs),
        }
    }

    pub fn len(&self) -> usize {
        self.secs.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secs.values.is_empty()
    }
}

/// Scores generated outputs against ground truths, pairwise in order.
pub fn tts_eval(outputs: &[AudioFeatures], truths: &[AudioFeatures]) -> Result<TtsReport> {
    if outputs.len() != truths.len() {
        return Err(Error::Data(format!(
            "{} outputs for {} ground truths",
            outputs.len(),
            truths.len()
        )));
    }
    let scores = outputs
        .iter()
        .zip(truths)
        .map(|(o, t)| tts_scores(o, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(TtsReport::from_scores(&scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_item_mean_is_the_item() {
        let s = MetricSeries::new(vec![0.42]);
        assert_eq!(s.mean, 0.42);
    }

    #[test]
    fn count_mismatch_is_a_data_error() {
        let a = AudioFeatures::new(4, 3, vec![1.0; 12]).unwrap();
        assert!(matches!(tts_eval(&[a], &[]), Err(Error::Data(_))));
    }
}
