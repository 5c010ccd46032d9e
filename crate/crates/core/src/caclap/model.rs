use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::AudioFeatures;
use crate::error::{Error, Result};
use crate::micrograd::{
    cross_attention, cross_attention_backward, dot, l2_normalize, l2_normalize_backward, linear, linear_backward,
    mean_pool, mean_pool_backward, tanh, tanh_backward, AttentionCache, ParamSet, Tensor,
};

pub const EMBEDDING: &str = "text.embedding";
pub const TOKEN_WEIGHT: &str = "text.token.weight";
pub const TOKEN_BIAS: &str = "text.token.bias";
pub const ATTN_QUERY: &str = "text.attn.query";
pub const ATTN_KEY: &str = "text.attn.key";
pub const ATTN_VALUE: &str = "text.attn.value";
pub const TEXT_PROJ_WEIGHT: &str = "text.proj.weight";
pub const TEXT_PROJ_BIAS: &str = "text.proj.bias";
pub const FRAME_WEIGHT: &str = "audio.frame.weight";
pub const FRAME_BIAS: &str = "audio.frame.bias";
pub const AUDIO_PROJ_WEIGHT: &str = "audio.proj.weight";
pub const AUDIO_PROJ_BIAS: &str = "audio.proj.bias";
pub const LOG_TAU: &str = "log_tau";

/// Tolerance on the unit norm of a [`StyleEmbedding`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CaClapConfig {
    pub vocab_size: usize,
    pub channels: usize,
    /// Shared text feature width `d`.
    pub dim: usize,
    pub audio_hidden: usize,
    /// Width `p` of the shared embedding space.
    pub proj_dim: usize,
    pub tau_init: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub context_len: usize,
    /// Draw each batch from a single book instead of mixing books.
    pub same_book_batches: bool,
}

impl Default for CaClapConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            channels: 16,
            dim: 32,
            audio_hidden: 32,
            proj_dim: 16,
            tau_init: 0.07,
            learning_rate: 0.05,
            epochs: 100,
            batch_size: 32,
            seed: 7,
            context_len: 5,
            same_book_batches: false,
        }
    }
}

impl CaClapConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size < 2 {
            return fail("vocab_size must be at least 2");
        }
        if self.channels < 2 {
            return fail("channels must be at least 2");
        }
        if self.dim == 0 || self.audio_hidden == 0 {
            return fail("dim and audio_hidden must be positive");
        }
        if self.proj_dim < 2 {
            return fail("proj_dim must be at least 2");
        }
        if !(self.tau_init > 0.0) || !self.tau_init.is_finite() {
            return fail("tau_init must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail("learning_rate must be non-negative");
        }
        Ok(())
    }

    pub fn validate_training(&self) -> Result<()> {
        self.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 for a contrastive loss".into(),
            ));
        }
        Ok(())
    }
}

/// Unit-norm vector in the shared text/audio space.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleEmbedding(Vec<f64>);

impl StyleEmbedding {
    /// Wraps a vector that is already unit-norm within [`UNIT_TOLERANCE`].
    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let n = dot(&v, &v).sqrt();
        if v.is_empty() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Shape(format!("embedding norm {n} is not 1")));
        }
        Ok(Self(v))
    }

    pub fn normalize(v: Vec<f64>) -> Result<Self> {
        let (u, _) = l2_normalize(&Tensor::vector(v)?)?;
        Ok(Self(u.into_data()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &StyleEmbedding) -> f64 {
        dot(&self.0, &other.0).clamp(-1.0, 1.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Per-channel standardization applied to audio frames before the frame
/// transform. Fitted once on training data and stored with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AudioNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn fit<'a>(audios: impl IntoIterator<Item = &'a AudioFeatures>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for a in audios {
            if sum.is_empty() {
                sum = vec![0.0; a.channels()];
                sq = vec![0.0; a.channels()];
            } else if a.channels() != sum.len() {
                return Err(Error::Shape("channel counts differ".into()));
            }
            for t in 0..a.frames() {
                for (c, &v) in a.frame(t).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += a.frames();
        }
        if count == 0 {
            return Err(Error::EmptyAudio);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Ok(Self { mean, std })
    }

    fn apply(&self, audio: &AudioFeatures) -> Result<Tensor> {
        if audio.channels() != self.mean.len() {
            return Err(Error::Shape(format!(
                "audio has {} channels, model expects {}",
                audio.channels(),
                self.mean.len()
            )));
        }
        let c = audio.channels();
        let data = audio
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect();
        Tensor::matrix(audio.frames(), c, data)
    }
}

/// Context-aware contrastive language-audio model.
///
/// Text side: shared token embedding and `tanh(x·W + b)` transform for the
/// current text and its context, single-head cross attention with the current
/// text as queries, mean pooling, projection, L2 normalization. Audio side:
/// per-frame `tanh(x·W + b)`, mean pooling over frames, projection, L2
/// normalization. The temperature is stored as `log τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaClap {
    pub(crate) config: CaClapConfig,
    pub(crate) params: ParamSet,
    pub(crate) audio_norm: AudioNorm,
    pub(crate) step: u64,
}

impl CaClap {
    /// Freshly initialized model; weights are uniform(−1/√fan_in, 1/√fan_in).
    pub fn init(config: CaClapConfig, audio_norm: AudioNorm) -> Result<Self> {
        config.validate()?;
        if audio_norm.mean.len() != config.channels || audio_norm.std.len() != config.channels {
            return Err(Error::Shape("audio normalization width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (v, d, h, p, c) = (
            config.vocab_size,
            config.dim,
            config.audio_hidden,
            config.proj_dim,
            config.channels,
        );
        let mut ps = ParamSet::new();
        ps.insert_uniform(EMBEDDING, &[v, d], v, &mut rng)?;
        ps.insert_uniform(TOKEN_WEIGHT, &[d, d], d, &mut rng)?;
        ps.insert_uniform(TOKEN_BIAS, &[d], d, &mut rng)?;
        ps.insert_uniform(ATTN_QUERY, &[d, d], d, &mut rng)?;
        ps.insert_uniform(ATTN_KEY, &[d, d], d, &mut rng)?;
        ps.insert_uniform(ATTN_VALUE, &[d, d], d, &mut rng)?;
        ps.insert_uniform(TEXT_PROJ_WEIGHT, &[d, p], d, &mut rng)?;
        ps.insert_uniform(TEXT_PROJ_BIAS, &[p], d, &mut rng)?;
        ps.insert_uniform(FRAME_WEIGHT, &[c, h], c, &mut rng)?;
        ps.insert_uniform(FRAME_BIAS, &[h], c, &mut rng)?;
        ps.insert_uniform(AUDIO_PROJ_WEIGHT, &[h, p], h, &mut rng)?;
        ps.insert_uniform(AUDIO_PROJ_BIAS, &[p], h, &mut rng)?;
        ps.insert(LOG_TAU, Tensor::vector(vec![config.tau_init.ln()])?)?;
        Ok(Self {
            config,
            params: ps,
            audio_norm,
            step: 0,
        })
    }

    pub fn config(&self) -> &CaClapConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn audio_norm(&self) -> &AudioNorm {
        &self.audio_norm
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn tau(&self) -> f64 {
        self.log_tau().exp()
    }

    pub fn log_tau(&self) -> f64 {
        self.params.get(LOG_TAU).map(|t| t.data()[0]).unwrap_or(f64::NAN)
    }

    /// Style-related text embedding of `current` read in the light of
    /// `context`. With `context == current` this is the context-free query.
    pub fn encode_text(&self, current: &[u32], context: &[u32]) -> Result<StyleEmbedding> {
        let (y, _) = text_forward(&self.params, self.config.vocab_size, current, context)?;
        Ok(StyleEmbedding(y.into_data()))
    }

    pub fn encode_audio(&self, audio: &AudioFeatures) -> Result<StyleEmbedding> {
        let (y, _) = audio_forward(&self.params, &self.audio_norm, audio)?;
        Ok(StyleEmbedding(y.into_data()))
    }
}

pub(crate) type Deltas = Vec<(&'static str, Tensor)>;

pub(crate) struct TextCache {
    cur_tokens: Vec<u32>,
    con_tokens: Vec<u32>,
    x_cur: Tensor,
    h_cur: Tensor,
    x_con: Tensor,
    h_con: Tensor,
    attention: AttentionCache,
    pooled: Tensor,
    out: Tensor,
    norm: f64,
}

pub(crate) struct AudioCache {
    x: Tensor,
    h: Tensor,
    pooled: Tensor,
    out: Tensor,
    norm: f64,
}

fn lookup(params: &ParamSet, vocab: usize, tokens: &[u32]) -> Result<Tensor> {
    let table = params.get(EMBEDDING)?;
    let d = table.cols();
    let mut data = Vec::with_capacity(tokens.len() * d);
    for &t in tokens {
        if t as usize >= vocab {
            return Err(Error::Vocabulary { token: t, vocab });
        }
        data.extend_from_slice(table.row(t as usize));
    }
    Tensor::matrix(tokens.len(), d, data)
}

fn as_row(v: &Tensor) -> Result<Tensor> {
    Tensor::matrix(1, v.len(), v.data().to_vec())
}

pub(crate) fn text_forward(
    params: &ParamSet,
    vocab: usize,
    current: &[u32],
    context: &[u32],
) -> Result<(Tensor, TextCache)> {
    if current.is_empty() {
        return Err(Error::Argument("current text has no tokens".into()));
    }
    if context.is_empty() {
        return Err(Error::EmptyContext);
    }
    let (w_tok, b_tok) = (params.get(TOKEN_WEIGHT)?, params.get(TOKEN_BIAS)?);
    let x_cur = lookup(params, vocab, current)?;
    let x_con = lookup(params, vocab, context)?;
    let h_cur = tanh(&linear(&x_cur, w_tok, b_tok)?);
    let h_con = tanh(&linear(&x_con, w_tok, b_tok)?);
    let (fused, attention) = cross_attention(
        &h_cur,
        &h_con,
        params.get(ATTN_QUERY)?,
        params.get(ATTN_KEY)?,
        params.get(ATTN_VALUE)?,
    )?;
    let pooled = as_row(&mean_pool(&fused)?)?;
    let z = linear(&pooled, params.get(TEXT_PROJ_WEIGHT)?, params.get(TEXT_PROJ_BIAS)?)?;
    let (out, norm) = l2_normalize(&Tensor::vector(z.into_data())?)?;
    Ok((
        out.clone(),
        TextCache {
            cur_tokens: current.to_vec(),
            con_tokens: context.to_vec(),
            x_cur,
            h_cur,
            x_con,
            h_con,
            attention,
            pooled,
            out,
            norm,
        },
    ))
}

pub(crate) fn text_backward(params: &ParamSet, cache: &TextCache, d_out: &Tensor) -> Result<Deltas> {
    let dz = l2_normalize_backward(&cache.out, cache.norm, d_out)?;
    let proj = linear_backward(&cache.pooled, params.get(TEXT_PROJ_WEIGHT)?, &as_row(&dz)?)?;
    let d_fused = mean_pool_backward(cache.h_cur.rows(), &Tensor::vector(proj.dx.into_data())?)?;
    let (wq, wk, wv) = (params.get(ATTN_QUERY)?, params.get(ATTN_KEY)?, params.get(ATTN_VALUE)?);
    let att = cross_attention_backward(&cache.attention, wq, wk, wv, &d_fused)?;

    let w_tok = params.get(TOKEN_WEIGHT)?;
    let cur = linear_backward(&cache.x_cur, w_tok, &tanh_backward(&cache.h_cur, &att.d_cur)?)?;
    let con = linear_backward(&cache.x_con, w_tok, &tanh_backward(&cache.h_con, &att.d_con)?)?;

    let table = params.get(EMBEDDING)?;
    let mut d_table = Tensor::zeros(table.shape());
    for (tokens, dx) in [(&cache.cur_tokens, &cur.dx), (&cache.con_tokens, &con.dx)] {
        for (r, &t) in tokens.iter().enumerate() {
            for (acc, g) in d_table.row_mut(t as usize).iter_mut().zip(dx.row(r)) {
                *acc += g;
            }
        }
    }
    let mut d_w_tok = cur.dw;
    d_w_tok.add_assign(&con.dw)?;
    let mut d_b_tok = cur.db;
    d_b_tok.add_assign(&con.db)?;

    Ok(vec![
        (EMBEDDING, d_table),
        (TOKEN_WEIGHT, d_w_tok),
        (TOKEN_BIAS, d_b_tok),
        (ATTN_QUERY, att.d_wq),
        (ATTN_KEY, att.d_wk),
        (ATTN_VALUE, att.d_wv),
        (TEXT_PROJ_WEIGHT, proj.dw),
        (TEXT_PROJ_BIAS, proj.db),
    ])
}

pub(crate) fn audio_forward(
    params: &ParamSet,
    norm: &AudioNorm,
    audio: &AudioFeatures,
) -> Result<(Tensor, AudioCache)> {
    if audio.frames() < 1 {
        return Err(Error::EmptyAudio);
    }
    let x = norm.apply(audio)?;
    let h = tanh(&linear(&x, params.get(FRAME_WEIGHT)?, params.get(FRAME_BIAS)?)?);
    let pooled = as_row(&mean_pool(&h)?)?;
    let z = linear(&pooled, params.get(AUDIO_PROJ_WEIGHT)?, params.get(AUDIO_PROJ_BIAS)?)?;
    let (out, n) = l2_normalize(&Tensor::vector(z.into_data())?)?;
    Ok((
        out.clone(),
        AudioCache {
            x,
            h,
            pooled,
            out,
            norm: n,
        },
    ))
}

pub(crate) fn audio_backward(params: &ParamSet, cache: &AudioCache, d_out: &Tensor) -> Result<Deltas> {
    let dz = l2_normalize_backward(&cache.out, cache.norm, d_out)?;
    let proj = linear_backward(&cache.pooled, params.get(AUDIO_PROJ_WEIGHT)?, &as_row(&dz)?)?;
    let d_h = mean_pool_backward(cache.h.rows(), &Tensor::vector(proj.dx.into_data())?)?;
    let frame = linear_backward(&cache.x, params.get(FRAME_WEIGHT)?, &tanh_backward(&cache.h, &d_h)?)?;
    Ok(vec![
        (FRAME_WEIGHT, frame.dw),
        (FRAME_BIAS, frame.db),
        (AUDIO_PROJ_WEIGHT, proj.dw),
        (AUDIO_PROJ_BIAS, proj.db),
    ])
}
