use super::model::{audio_backward, audio_forward, text_backward, text_forward, AudioNorm, StyleEmbedding, LOG_TAU};
use crate::corpus::AudioFeatures;
use crate::error::{Error, Result};
use crate::micrograd::{dot, ParamSet, Tensor};

/// `N×N` matrix with entry `(i, j)` = cosine(text_i, audio_j).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Tensor);

impl SimilarityMatrix {
    /// Wraps a square matrix of similarities in `[-1, 1]`.
    pub fn new(m: Tensor) -> Result<Self> {
        let (r, c) = m.dims2()?;
        if r != c {
            return Err(Error::Shape(format!("similarity matrix is {r}x{c}")));
        }
        if m.data().iter().any(|v| v.abs() > 1.0 + 1e-9) {
            return Err(Error::Argument("similarity outside [-1, 1]".into()));
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.at(i, j)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }
}

pub fn similarity_matrix(texts: &[StyleEmbedding], audios: &[StyleEmbedding]) -> Result<SimilarityMatrix> {
    if texts.len() != audios.len() {
        return Err(Error::Shape(format!(
            "{} texts vs {} audios",
            texts.len(),
            audios.len()
        )));
    }
    let n = texts.len();
    let dim = texts.first().map_or(0, StyleEmbedding::dim);
    if texts.iter().chain(audios).any(|e| e.dim() != dim) {
        return Err(Error::Shape("embedding widths differ".into()));
    }
    let mut data = Vec::with_capacity(n * n);
    for t in texts {
        for a in audios {
            data.push(t.cosine(a));
        }
    }
    Ok(SimilarityMatrix(Tensor::matrix(n, n, data)?))
}

#[derive(Debug, Clone)]
pub struct ContrastiveLoss {
    pub loss: f64,
    /// ∂L/∂M
    pub d_sim: Tensor,
    /// ∂L/∂log τ
    pub d_log_tau: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Symmetric InfoNCE over logits `M/τ`, negated so that it is minimized:
///
/// `L = -(1/2N) Σ_i [log softmax_row_i(M/τ)_ii + log softmax_col_i(M/τ)_ii]`
pub fn contrastive_loss(m: &SimilarityMatrix, log_tau: f64) -> Result<ContrastiveLoss> {
    if !log_tau.is_finite() {
        return Err(Error::NonFinite("log tau".into()));
    }
    let n = m.n();
    let inv_tau = (-log_tau).exp();
    let logits = m.0.map(|v| v * inv_tau);
    logits.check_finite("contrastive logits")?;
    let row_lse: Vec<f64> = (0..n).map(|i| log_sum_exp(logits.row(i).iter().copied())).collect();
    let col_lse: Vec<f64> = (0..n).map(|j| log_sum_exp((0..n).map(|i| logits.at(i, j)))).collect();

    let mut total = 0.0;
    for i in 0..n {
        total += (row_lse[i] - logits.at(i, i)) + (col_lse[i] - logits.at(i, i));
    }
    let scale = 1.0 / (2 * n) as f64;
    let loss = total * scale;

    let mut d_logits = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let l = logits.at(i, j);
            let p_row = (l - row_lse[i]).exp();
            let p_col = (l - col_lse[j]).exp();
            let target = if i == j { 2.0 } else { 0.0 };
            d_logits[i * n + j] = (p_row + p_col - target) * scale;
        }
    }
    let d_log_tau = -d_logits.iter().zip(logits.data()).map(|(g, l)| g * l).sum::<f64>();
    let d_sim = Tensor::matrix(n, n, d_logits.iter().map(|g| g * inv_tau).collect())?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("contrastive loss".into()));
    }
    Ok(ContrastiveLoss { loss, d_sim, d_log_tau })
}

/// One paired example: current text, its context, and the paired audio.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub current: &'a [u32],
    pub context: Vec<u32>,
    pub audio: &'a AudioFeatures,
}

/// Loss of one batch under `params`, with the analytic gradient written into
/// the parameter set's gradient buffers (which are zeroed first).
pub fn batch_objective(params: &mut ParamSet, norm: &AudioNorm, vocab: usize, batch: &[Example<'_>]) -> Result<f64> {
    params.zero_grad();
    let mut text_caches = Vec::with_capacity(batch.len());
    let mut audio_caches = Vec::with_capacity(batch.len());
    let mut texts = Vec::with_capacity(batch.len());
    let mut audios = Vec::with_capacity(batch.len());
    for ex in batch {
        let (t, tc) = text_forward(params, vocab, ex.current, &ex.context)?;
        let (a, ac) = audio_forward(params, norm, ex.audio)?;
        texts.push(t);
        audios.push(a);
        text_caches.push(tc);
        audio_caches.push(ac);
    }
    let n = batch.len();
    let mut sim = Vec::with_capacity(n * n);
    for t in &texts {
        for a in &audios {
            sim.push(dot(t.data(), a.data()));
        }
    }
    let log_tau = params.get(LOG_TAU)?.data()[0];
    let out = contrastive_loss(&SimilarityMatrix(Tensor::matrix(n, n, sim)?), log_tau)?;

    // M = T·Aᵀ, so ∂L/∂T_i = Σ_j dM_ij A_j and ∂L/∂A_j = Σ_i dM_ij T_i.
    let dim = texts.first().map_or(0, Tensor::len);
    for i in 0..n {
        let mut d_text = vec![0.0; dim];
        let mut d_audio = vec![0.0; dim];
        for j in 0..n {
            let (g_ij, g_ji) = (out.d_sim.at(i, j), out.d_sim.at(j, i));
            for k in 0..dim {
                d_text[k] += g_ij * audios[j].data()[k];
                d_audio[k] += g_ji * texts[j].data()[k];
            }
        }
        for (name, delta) in text_backward(params, &text_caches[i], &Tensor::vector(d_text)?)? {
            params.accumulate(name, &delta)?;
        }
        for (name, delta) in audio_backward(params, &audio_caches[i], &Tensor::vector(d_audio)?)? {
            params.accumulate(name, &delta)?;
        }
    }
    params.accumulate(LOG_TAU, &Tensor::vector(vec![out.d_log_tau])?)?;
    Ok(out.loss)
}
