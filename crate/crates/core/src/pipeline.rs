//! Generation stage: pick the first `P` retrieved prompts, concatenate their
//! audio, and hand the result to a synthesizer together with the target text.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::caclap::CaClap;
use crate::corpus::{mix, AudioFeatures, ContextMode, Corpus, Split, FRAMES_PER_TOKEN};
use crate::error::{Error, Result};
use crate::index::{EmbeddingIndex, PoolIndexes, PoolScope, Ranked, RankedResult};
use crate::metrics::{tts_scores, TtsReport, TtsScores};

/// The top-`K` ranking and its length-`P` prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptSelection {
    pub ranked: RankedResult,
    pub chosen: Vec<String>,
}

pub fn select_prompts(ranked: RankedResult, p: usize) -> Result<PromptSelection> {
    if p == 0 || p > ranked.len() {
        return Err(Error::Selection(format!(
            "cannot choose {p} prompts from {} ranked",
            ranked.len()
        )));
    }
    let chosen = ranked.0[..p].iter().map(|r| r.key.clone()).collect();
    Ok(PromptSelection { ranked, chosen })
}

/// Frame-wise concatenation of the chosen prompts, in order.
pub fn concat_prompts(selection: &PromptSelection, corpus: &Corpus) -> Result<AudioFeatures> {
    let parts = selection
        .chosen
        .iter()
        .map(|k| corpus.get(k).map(|u| &u.audio))
        .collect::<Result<Vec<_>>>()?;
    AudioFeatures::concat(parts)
}

/// A speech generator conditioned on a prompt. Implementations must be
/// deterministic in their inputs and keep the prompt's channel count.
pub trait Synthesizer {
    fn name(&self) -> &'static str;
    fn synthesize(&self, prompt: &AudioFeatures, tokens: &[u32]) -> Result<AudioFeatures>;
}

/// Deterministic stand-in for a prompt-based TTS model. See
/// [`synthesize_stub`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StubSynthesizer;

impl Synthesizer for StubSynthesizer {
    fn name(&self) -> &'static str {
        "stub"
    }

    fn synthesize(&self, prompt: &AudioFeatures, tokens: &[u32]) -> Result<AudioFeatures> {
        synthesize_stub(prompt, tokens)
    }
}

/// Returns the prompt unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentitySynthesizer;

impl Synthesizer for IdentitySynthesizer {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn synthesize(&self, prompt: &AudioFeatures, tokens: &[u32]) -> Result<AudioFeatures> {
        if tokens.is_empty() {
            return Err(Error::Argument("no target tokens".into()));
        }
        Ok(prompt.clone())
    }
}

const STUB_SEED: u64 = 0x57_0B;
const STUB_F0_DEPTH: f64 = 15.0;
const STUB_ENERGY_DEPTH: f64 = 0.2;
const STUB_CEP_DEPTH: f64 = 0.25;

fn unit_hash(token: u32, slot: usize, channel: usize) -> f64 {
    let h = mix(STUB_SEED, u64::from(token), slot as u64, channel as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Output of `4 × len(tokens)` frames whose contours come from the tokens and
/// whose level comes from the prompt.
///
/// Each channel starts from a token-hashed pattern with zero mean. F0 and the
/// cepstra add it to the prompt's channel mean; energy scales the prompt's
/// mean by `1 + 0.2·pattern`, which keeps it non-negative.
pub fn synthesize_stub(prompt: &AudioFeatures, tokens: &[u32]) -> Result<AudioFeatures> {
    if tokens.is_empty() {
        return Err(Error::Argument("no target tokens".into()));
    }
    let c = prompt.channels();
    let frames = FRAMES_PER_TOKEN * tokens.len();
    let mut pattern = vec![0.0; frames * c];
    for (n, &tok) in tokens.iter().enumerate() {
        for s in 0..FRAMES_PER_TOKEN {
            let t = n * FRAMES_PER_TOKEN + s;
            for ch in 0..c {
                pattern[t * c + ch] = unit_hash(tok, s, ch);
            }
        }
    }
    let mut data = vec![0.0; frames * c];
    for ch in 0..c {
        let mean = (0..frames).map(|t| pattern[t * c + ch]).sum::<f64>() / frames as f64;
        let level = prompt.channel_mean(ch);
        for t in 0..frames {
            let z = pattern[t * c + ch] - mean;
            data[t * c + ch] = match ch {
                0 => level + STUB_F0_DEPTH * z,
                1 => level * (1.0 + STUB_ENERGY_DEPTH * z),
                _ => level + STUB_CEP_DEPTH * z,
            };
        }
    }
    AudioFeatures::new(frames, c, data)
}

/// Result of one pass through the pipeline for one test utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct RagOutput {
    pub key: String,
    pub selection: PromptSelection,
    pub prompt: AudioFeatures,
    pub output: AudioFeatures,
}

/// The retrieval-augmented path for one test utterance (corpus index
/// `test`): query with its text in context, select, concatenate and
/// synthesize.
#[allow(clippy::too_many_arguments)]
pub fn run_rag_tts(
    corpus: &Corpus,
    model: &CaClap,
    index: &EmbeddingIndex,
    test: usize,
    context_len: usize,
    k: usize,
    p: usize,
    synth: &dyn Synthesizer,
) -> Result<RagOutput> {
    let u = corpus
        .utterances()
        .get(test)
        .ok_or_else(|| Error::NotFound(format!("utterance index {test}")))?;
    let key = u.key();
    if index.contains(&key) {
        return Err(Error::Leakage(key));
    }
    let context = corpus.context_tokens(test, context_len, ContextMode::Neighbours)?;
    let query = model.encode_text(&u.tokens, &context)?;
    let selection = select_prompts(index.query(&query, k)?, p)?;
    let prompt = concat_prompts(&selection, corpus)?;
    let output = synth.synthesize(&prompt, &u.tokens)?;
    Ok(RagOutput {
        key,
        selection,
        prompt,
        output,
    })
}

/// How the prompt for a test utterance is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// The utterance's own ground-truth audio.
    #[serde(rename = "self")]
    SelfPrompt,
    /// Seeded uniform choice from the pool.
    Random,
    /// Text-to-text match of the current sentence alone.
    TextOnly,
    /// Context-aware text-to-audio retrieval.
    CaClap,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::SelfPrompt,
        Strategy::Random,
        Strategy::TextOnly,
        Strategy::CaClap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SelfPrompt => "self",
            Strategy::Random => "random",
            Strategy::TextOnly => "text",
            Strategy::CaClap => "caclap",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown strategy {s:?}, expected self, random, text or caclap")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RagSettings {
    pub strategy: Strategy,
    pub context_len: usize,
    pub k: usize,
    pub p: usize,
    pub scope: PoolScope,
    /// Seed of the random strategy.
    pub seed: u64,
}

impl Default for RagSettings {
    fn default() -> Self {
        Self {
            strategy: Strategy::CaClap,
            context_len: 5,
            k: 10,
            p: 1,
            scope: PoolScope::SameBook,
            seed: 0,
        }
    }
}

/// One line of a pipeline run's output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemRecord {
    pub key: String,
    pub strategy: Strategy,
    pub chosen: Vec<String>,
    pub ranked: Vec<Ranked>,
    #[serde(flatten)]
    pub scores: TtsScores,
}

/// A pool and test split wired to a model: audio indexes for retrieval and,
/// for the text-only strategy, indexes of the pool's sentences.
pub struct Pipeline<'a> {
    corpus: &'a Corpus,
    model: &'a CaClap,
    split: &'a Split,
    audio: PoolIndexes,
    text: Option<PoolIndexes>,
}

impl<'a> Pipeline<'a> {
    pub fn new(corpus: &'a Corpus, model: &'a CaClap, split: &'a Split, scope: PoolScope) -> Result<Self> {
        let audio = PoolIndexes::build(corpus, &split.pool, model, scope)?;
        Self::with_indexes(corpus, model, split, audio)
    }

    /// Uses prebuilt audio indexes, which must not contain test items.
    pub fn with_indexes(corpus: &'a Corpus, model: &'a CaClap, split: &'a Split, audio: PoolIndexes) -> Result<Self> {
        let utts = corpus.utterances();
        for &t in &split.test {
            let key = utts
                .get(t)
                .ok_or_else(|| Error::NotFound(format!("test index {t}")))?
                .key();
            if audio.contains_key(&key) {
                return Err(Error::Leakage(key));
            }
        }
        Ok(Self {
            corpus,
            model,
            split,
            audio,
            text: None,
        })
    }

    pub fn audio_indexes(&self) -> &PoolIndexes {
        &self.audio
    }

    fn text_indexes(&mut self) -> Result<&PoolIndexes> {
        if self.text.is_none() {
            let model = self.model;
            let built = PoolIndexes::build_with(
                self.corpus,
                &self.split.pool,
                self.audio.scope(),
                model.config().proj_dim,
                |u| model.encode_text(&u.tokens, &u.tokens),
            )?;
            self.text = Some(built);
        }
        Ok(self.text.as_ref().expect("just built"))
    }

    /// Prompt selection for the test utterance at corpus index `test`.
    pub fn select(&mut self, test: usize, settings: &RagSettings) -> Result<PromptSelection> {
        let corpus = self.corpus;
        let u = corpus
            .utterances()
            .get(test)
            .ok_or_else(|| Error::NotFound(format!("utterance index {test}")))?;
        let key = u.key();
        let ranked = match settings.strategy {
            Strategy::SelfPrompt => RankedResult(vec![Ranked { key, score: 1.0 }]),
            Strategy::Random => {
                let index = self.audio.for_book(&u.book_id)?;
                let k = settings.k.min(index.len());
                let mut rng = ChaCha8Rng::seed_from_u64(mix(settings.seed, test as u64, 0, 0));
                RankedResult(
                    sample(&mut rng, index.len(), k)
                        .into_iter()
                        .map(|i| Ranked {
                            key: index.entries()[i].key.clone(),
                            score: 0.0,
                        })
                        .collect(),
                )
            }
            Strategy::TextOnly => {
                let query = self.model.encode_text(&u.tokens, &u.tokens)?;
                self.text_indexes()?.for_book(&u.book_id)?.query(&query, settings.k)?
            }
            Strategy::CaClap => {
                let context = corpus.context_tokens(test, settings.context_len, ContextMode::Neighbours)?;
                let query = self.model.encode_text(&u.tokens, &context)?;
                self.audio.for_book(&u.book_id)?.query(&query, settings.k)?
            }
        };
        let p = if settings.strategy == Strategy::SelfPrompt {
            1
        } else {
            settings.p
        };
        select_prompts(ranked, p)
    }

    pub fn run_item(&mut self, test: usize, settings: &RagSettings, synth: &dyn Synthesizer) -> Result<RagOutput> {
        let selection = self.select(test, settings)?;
        let u = &self.corpus.utterances()[test];
        let prompt = concat_prompts(&selection, self.corpus)?;
        let output = synth.synthesize(&prompt, &u.tokens)?;
        Ok(RagOutput {
            key: u.key(),
            selection,
            prompt,
            output,
        })
    }

    /// Runs every test utterance and scores the outputs against the ground
    /// truth, in test-split order.
    pub fn evaluate(
        &mut self,
        settings: &RagSettings,
        synth: &dyn Synthesizer,
    ) -> Result<(TtsReport, Vec<ItemRecord>)> {
        let mut records = Vec::with_capacity(self.split.test.len());
        for &t in &self.split.test {
            let out = self.run_item(t, settings, synth)?;
            let truth = &self.corpus.utterances()[t].audio;
            records.push(ItemRecord {
                key: out.key,
                strategy: settings.strategy,
                chosen: out.selection.chosen,
                ranked: out.selection.ranked.0,
                scores: tts_scores(&out.output, truth)?,
            });
        }
        let scores: Vec<TtsScores> = records.iter().map(|r| r.scores).collect();
        Ok((TtsReport::from_scores(&scores), records))
    }
}
