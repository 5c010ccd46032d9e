//! Synthetic audiobook corpus.
//!
//! Each book is a sequence of utterances. Tokens are drawn from a small
//! vocabulary in which a reserved block of ids is *style-bearing*: every such
//! token votes for one of `S` speaking styles. An utterance's style label is
//! the plurality vote over the style tokens of its ±2 neighbourhood (ties go
//! to the smallest style id, no votes means style 0), so the label can only be
//! recovered reliably by looking at neighbouring text. The audio features are
//! rendered from that label, the full vote distribution of the neighbourhood,
//! a per-book speaker offset and noise.
//!
//! Token layout for vocabulary size `V` and `S` styles:
//!
//! | ids                      | meaning                                 |
//! |--------------------------|-----------------------------------------|
//! | `0 .. V-1-2S`            | content tokens                          |
//! | `V-1-2S .. V-1`          | style tokens, style = `(id - base) % S` |
//! | `V-1`                    | utterance separator                     |

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;
/// Half-width of the neighbourhood that determines an utterance's style.
pub const STYLE_WINDOW: usize = 2;
pub const FRAMES_PER_TOKEN: usize = 4;
pub const MIN_FRAMES: usize = 4;

const MOOD_TOKEN_PROB: f64 = 0.6;
const DISTRACTOR_PROB: f64 = 0.25;
const SCENE_LEN: Range<usize> = 6..13;
/// Moods a single book draws its scenes from.
const PALETTE_SIZE: usize = 3;
/// Per-utterance delivery spread: large in prosody, small in timbre.
const F0_JITTER: f64 = 50.0;
const ENERGY_JITTER: f64 = 0.2;
const CEP_JITTER: f64 = 0.05;
const CONTENT_LEN: Range<usize> = 3..11;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub books: usize,
    pub utterances_per_book: usize,
    pub vocab_size: usize,
    pub styles: usize,
    pub channels: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            books: 32,
            utterances_per_book: 64,
            vocab_size: 64,
            styles: 8,
            channels: 16,
            max_tokens: 32,
            seed: 20240917,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.books == 0 {
            return fail("books must be at least 1".into());
        }
        if self.utterances_per_book < 3 {
            return fail("utterances_per_book must be at least 3".into());
        }
        if self.styles < 2 {
            return fail("styles must be at least 2".into());
        }
        if self.vocab_size < 2 * self.styles + 5 {
            return fail(format!(
                "vocab_size {} too small for {} styles (need at least {})",
                self.vocab_size,
                self.styles,
                2 * self.styles + 5
            ));
        }
        if self.vocab_size > u32::MAX as usize {
            return fail("vocab_size does not fit token ids".into());
        }
        if self.channels < 3 {
            return fail("channels must be at least 3 (F0, energy, cepstrum)".into());
        }
        if self.max_tokens < 4 {
            return fail("max_tokens must be at least 4".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            vocab_size: self.vocab_size,
            styles: self.styles,
        }
    }
}

/// Token id conventions of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub vocab_size: usize,
    pub styles: usize,
}

impl TokenLayout {
    pub fn separator(&self) -> u32 {
        (self.vocab_size - 1) as u32
    }

    pub fn style_base(&self) -> u32 {
        (self.vocab_size - 1 - 2 * self.styles) as u32
    }

    pub fn content_count(&self) -> usize {
        self.style_base() as usize
    }

    pub fn style_of(&self, token: u32) -> Option<usize> {
        let base = self.style_base();
        (token >= base && token < self.separator()).then(|| (token - base) as usize % self.styles)
    }

    /// One of the two token ids that vote for `style`.
    pub fn style_token(&self, style: usize, variant: usize) -> u32 {
        self.style_base() + (style + (variant % 2) * self.styles) as u32
    }
}

/// Per-style vote counts over a set of token sequences.
pub fn style_votes<'a>(layout: &TokenLayout, sequences: impl IntoIterator<Item = &'a [u32]>) -> Vec<usize> {
    let mut counts = vec![0; layout.styles];
    for seq in sequences {
        for &t in seq {
            if let Some(s) = layout.style_of(t) {
                counts[s] += 1;
            }
        }
    }
    counts
}

/// Plurality vote; ties go to the smallest style id, no votes to style 0.
pub fn style_from_votes(counts: &[usize]) -> usize {
    let mut best = 0;
    for (s, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = s;
        }
    }
    best
}

/// Time-major feature matrix standing in for an utterance's audio.
///
/// Channel 0 is an F0 contour in Hz, channel 1 frame energy (non-negative),
/// channels `2..C` cepstral style coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatures {
    frames: usize,
    channels: usize,
    data: Vec<f64>,
}

impl AudioFeatures {
    pub fn new(frames: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptyAudio);
        }
        if channels < 2 {
            return Err(Error::Shape(format!("audio needs at least 2 channels, got {channels}")));
        }
        if data.len() != frames * channels {
            return Err(Error::Shape(format!(
                "audio {frames}x{channels} needs {} values, got {}",
                frames * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("audio features".into()));
        }
        if (0..frames).any(|t| data[t * channels + 1] < 0.0) {
            return Err(Error::Data("negative frame energy".into()));
        }
        Ok(Self { frames, channels, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(c).step_by(self.channels).copied()
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        self.channel(c).sum::<f64>() / self.frames as f64
    }

    /// Frame-wise concatenation.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a AudioFeatures>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Argument("nothing to concatenate".into()))?;
        let mut data = first.data.clone();
        let mut frames = first.frames;
        for p in iter {
            if p.channels != first.channels {
                return Err(Error::Shape("channel count differs between prompts".into()));
            }
            data.extend_from_slice(&p.data);
            frames += p.frames;
        }
        Ok(Self {
            frames,
            channels: first.channels,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub book_id: String,
    pub position: usize,
    pub tokens: Vec<u32>,
    pub audio: AudioFeatures,
    /// Ground-truth style label. Never shown to the model.
    pub style_id: usize,
}

impl Utterance {
    pub fn key(&self) -> String {
        utterance_key(&self.book_id, self.position)
    }
}

pub fn utterance_key(book_id: &str, position: usize) -> String {
    format!("{book_id}/{position:04}")
}

pub fn book_name(index: usize) -> String {
    format!("book{index:03}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookEntry {
    pub book_id: String,
    pub utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub vocab_size: usize,
    pub styles: usize,
    pub channels: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub books: Vec<BookEntry>,
}

impl CorpusManifest {
    /// The generation config this manifest was produced from.
    pub fn config(&self) -> Result<CorpusConfig> {
        let per_book = self.books.first().map_or(0, |b| b.utterances);
        if self.books.iter().any(|b| b.utterances != per_book) {
            return Err(Error::Data("books have unequal lengths".into()));
        }
        Ok(CorpusConfig {
            books: self.books.len(),
            utterances_per_book: per_book,
            vocab_size: self.vocab_size,
            styles: self.styles,
            channels: self.channels,
            max_tokens: self.max_tokens,
            seed: self.seed,
        })
    }

    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            vocab_size: self.vocab_size,
            styles: self.styles,
        }
    }
}

/// Concatenated neighbour texts around a centre utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub center: String,
    pub context_len: usize,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    manifest: CorpusManifest,
    utterances: Vec<Utterance>,
    book_spans: Vec<Range<usize>>,
    by_key: HashMap<String, usize>,
    by_book: HashMap<String, usize>,
}

/// Where the context of an utterance comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    /// The true neighbours `i-l ..= i+l`.
    Neighbours,
    /// `2l` random utterances of the same book around the centre.
    Shuffled { seed: u64 },
}

/// Disjoint pool/test partition, as indices into [`Corpus::utterances`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub pool: Vec<usize>,
    pub test: Vec<usize>,
}

struct StyleBank {
    f0_mean: Vec<f64>,
    energy_amp: Vec<f64>,
    energy_slope: Vec<f64>,
    f0_cycles: Vec<f64>,
    centroid: Vec<Vec<f64>>,
}

struct Speaker {
    f0_offset: f64,
    energy_scale: f64,
    cep_offset: Vec<f64>,
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("positive standard deviation")
}

/// Generates a corpus; a pure function of `config`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let layout = config.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_cep = config.channels - 2;
    let unit = normal(1.0);

    let bank = StyleBank {
        f0_mean: (0..config.styles)
            .map(|s| 110.0 + 140.0 * s as f64 / (config.styles - 1) as f64)
            .collect(),
        energy_amp: (0..config.styles).map(|_| rng.random_range(0.6..1.6)).collect(),
        energy_slope: (0..config.styles).map(|_| rng.random_range(-0.8..0.8)).collect(),
        f0_cycles: (0..config.styles).map(|_| rng.random_range(0.5..2.5)).collect(),
        centroid: (0..config.styles)
            .map(|_| (0..n_cep).map(|_| unit.sample(&mut rng)).collect())
            .collect(),
    };

    let mut utterances = Vec::with_capacity(config.books * config.utterances_per_book);
    let mut books = Vec::with_capacity(config.books);
    for b in 0..config.books {
        let book_id = book_name(b);
        let speaker = Speaker {
            f0_offset: rng.random_range(-15.0..15.0),
            energy_scale: rng.random_range(0.85..1.15),
            cep_offset: (0..n_cep).map(|_| normal(0.3).sample(&mut rng)).collect(),
        };
        let texts = book_texts(config, &layout, &mut rng);
        let n = texts.len();
        for (i, tokens) in texts.iter().enumerate() {
            let window = i.saturating_sub(STYLE_WINDOW)..(i + STYLE_WINDOW + 1).min(n);
            let votes = style_votes(&layout, texts[window].iter().map(Vec::as_slice));
            let style_id = style_from_votes(&votes);
            let audio = render_audio(config, &bank, &speaker, style_id, &votes, tokens.len(), &mut rng)?;
            utterances.push(Utterance {
                book_id: book_id.clone(),
                position: i,
                tokens: tokens.clone(),
                audio,
                style_id,
            });
        }
        books.push(BookEntry { book_id, utterances: n });
    }

    let manifest = CorpusManifest {
        version: CORPUS_FORMAT_VERSION,
        vocab_size: config.vocab_size,
        styles: config.styles,
        channels: config.channels,
        max_tokens: config.max_tokens,
        seed: config.seed,
        books,
    };
    Corpus::from_parts(manifest, utterances)
}

fn book_texts(config: &CorpusConfig, layout: &TokenLayout, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    let content = layout.content_count() as u32;
    let max_content = config.max_tokens - 2;
    let mut texts = Vec::with_capacity(config.utterances_per_book);
    let palette = sample(rng, config.styles, PALETTE_SIZE.min(config.styles)).into_vec();
    let mut scene_left = 0;
    let mut mood = 0;
    while texts.len() < config.utterances_per_book {
        if scene_left == 0 {
            scene_left = rng.random_range(SCENE_LEN);
            mood = palette[rng.random_range(0..palette.len())];
        }
        scene_left -= 1;
        let len = rng.random_range(CONTENT_LEN).min(max_content);
        let mut tokens: Vec<u32> = (0..len).map(|_| rng.random_range(0..content)).collect();
        if rng.random_bool(MOOD_TOKEN_PROB) {
            let t = layout.style_token(mood, rng.random_range(0..2));
            let at = rng.random_range(0..=tokens.len());
            tokens.insert(at, t);
        }
        if rng.random_bool(DISTRACTOR_PROB) {
            let t = layout.style_token(rng.random_range(0..config.styles), rng.random_range(0..2));
            let at = rng.random_range(0..=tokens.len());
            tokens.insert(at, t);
        }
        texts.push(tokens);
    }
    texts
}

fn render_audio(
    config: &CorpusConfig,
    bank: &StyleBank,
    speaker: &Speaker,
    style: usize,
    votes: &[usize],
    n_tokens: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AudioFeatures> {
    let c = config.channels;
    let n_cep = c - 2;
    let frames = (FRAMES_PER_TOKEN * n_tokens).max(MIN_FRAMES);
    let total: usize = votes.iter().sum();
    let blend: Vec<f64> = if total == 0 {
        let mut w = vec![0.0; votes.len()];
        w[0] = 1.0;
        w
    } else {
        votes.iter().map(|&v| v as f64 / total as f64).collect()
    };
    let cep_mean: Vec<f64> = (0..n_cep)
        .map(|k| {
            let mixed: f64 = blend.iter().zip(&bank.centroid).map(|(w, cen)| w * cen[k]).sum();
            0.5 * bank.centroid[style][k] + 0.5 * mixed + speaker.cep_offset[k]
        })
        .collect();

    let f0_jitter = normal(F0_JITTER).sample(rng);
    let energy_jitter = normal(ENERGY_JITTER).sample(rng);
    let cep_jitter: Vec<f64> = (0..n_cep).map(|_| normal(CEP_JITTER).sample(rng)).collect();
    let (f0_noise, energy_noise, cep_noise) = (normal(2.0), normal(0.05), normal(0.15));

    let mut data = Vec::with_capacity(frames * c);
    for t in 0..frames {
        let phase = t as f64 / (frames - 1) as f64;
        let f0 = bank.f0_mean[style]
            + speaker.f0_offset
            + f0_jitter
            + 12.0 * (std::f64::consts::TAU * bank.f0_cycles[style] * phase).sin()
            + f0_noise.sample(rng);
        let shape = 1.0 + bank.energy_slope[style] * (phase - 0.5);
        let energy =
            (speaker.energy_scale * bank.energy_amp[style] * shape + energy_jitter + energy_noise.sample(rng)).max(0.0);
        data.push(f0);
        data.push(energy);
        for k in 0..n_cep {
            data.push(cep_mean[k] + cep_jitter[k] + cep_noise.sample(rng));
        }
    }
    AudioFeatures::new(frames, c, data)
}

impl Corpus {
    fn from_parts(manifest: CorpusManifest, utterances: Vec<Utterance>) -> Result<Self> {
        let layout = manifest.layout();
        let mut book_spans = Vec::with_capacity(manifest.books.len());
        let mut by_book = HashMap::new();
        let mut start = 0;
        for (b, entry) in manifest.books.iter().enumerate() {
            let span = start..start + entry.utterances;
            if span.end > utterances.len() {
                return Err(Error::Data(format!("book {} is truncated", entry.book_id)));
            }
            for (offset, u) in utterances[span.clone()].iter().enumerate() {
                if u.book_id != entry.book_id || u.position != offset {
                    return Err(Error::Data(format!(
                        "expected {} but found {}",
                        utterance_key(&entry.book_id, offset),
                        u.key()
                    )));
                }
            }
            if by_book.insert(entry.book_id.clone(), b).is_some() {
                return Err(Error::DuplicateKey(entry.book_id.clone()));
            }
            book_spans.push(span.clone());
            start = span.end;
        }
        if start != utterances.len() {
            return Err(Error::Data("utterances beyond the manifest's books".into()));
        }
        let mut by_key = HashMap::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            if u.tokens.is_empty() || u.tokens.len() > manifest.max_tokens {
                return Err(Error::Data(format!("{} has {} tokens", u.key(), u.tokens.len())));
            }
            if let Some(&t) = u.tokens.iter().find(|&&t| t >= layout.separator()) {
                return Err(Error::Vocabulary {
                    token: t,
                    vocab: manifest.vocab_size,
                });
            }
            if u.style_id >= manifest.styles {
                return Err(Error::Data(format!("{} has style {}", u.key(), u.style_id)));
            }
            if u.audio.channels() != manifest.channels || u.audio.frames() < MIN_FRAMES {
                return Err(Error::Data(format!("{} has malformed audio", u.key())));
            }
            by_key.insert(u.key(), i);
        }
        Ok(Self {
            manifest,
            utterances,
            book_spans,
            by_key,
            by_book,
        })
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn layout(&self) -> TokenLayout {
        self.manifest.layout()
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.by_key.get(key).copied()
    }

    pub fn get(&self, key: &str) -> Result<&Utterance> {
        self.index_of(key)
            .map(|i| &self.utterances[i])
            .ok_or_else(|| Error::NotFound(format!("utterance {key}")))
    }

    pub fn book_ids(&self) -> impl Iterator<Item = &str> {
        self.manifest.books.iter().map(|b| b.book_id.as_str())
    }

    /// Corpus indices of a book's utterances, in position order.
    pub fn book_span(&self, book_id: &str) -> Result<Range<usize>> {
        self.by_book
            .get(book_id)
            .map(|&b| self.book_spans[b].clone())
            .ok_or_else(|| Error::NotFound(format!("book {book_id}")))
    }

    pub fn book(&self, book_id: &str) -> Result<&[Utterance]> {
        Ok(&self.utterances[self.book_span(book_id)?])
    }

    fn book_ordinal(&self, book_id: &str) -> Result<usize> {
        self.by_book
            .get(book_id)
            .copied()
            .ok_or_else(|| Error::NotFound(format!("book {book_id}")))
    }

    fn join(&self, book: &[Utterance], positions: impl IntoIterator<Item = usize>) -> Vec<u32> {
        let sep = self.layout().separator();
        let mut tokens = Vec::new();
        for (n, p) in positions.into_iter().enumerate() {
            if n > 0 {
                tokens.push(sep);
            }
            tokens.extend_from_slice(&book[p].tokens);
        }
        tokens
    }

    /// Tokens of utterances `i-l ..= i+l` of a book, clamped to the book and
    /// joined by the separator token.
    pub fn context_window(&self, book_id: &str, i: usize, l: usize) -> Result<ContextWindow> {
        let book = self.book(book_id)?;
        if i >= book.len() {
            return Err(Error::NotFound(format!("utterance {}", utterance_key(book_id, i))));
        }
        let range = i.saturating_sub(l)..(i.saturating_add(l).saturating_add(1)).min(book.len());
        Ok(ContextWindow {
            center: utterance_key(book_id, i),
            context_len: l,
            tokens: self.join(book, range),
        })
    }

    /// Like [`Corpus::context_window`] but with the `2l` neighbours replaced by
    /// utterances sampled uniformly without replacement from the rest of the
    /// same book. The first half goes before the centre, the rest after. The
    /// sample depends only on `(seed, book, i, l)`.
    pub fn shuffled_context_window(&self, book_id: &str, i: usize, l: usize, seed: u64) -> Result<ContextWindow> {
        let book = self.book(book_id)?;
        if i >= book.len() {
            return Err(Error::NotFound(format!("utterance {}", utterance_key(book_id, i))));
        }
        let ordinal = self.book_ordinal(book_id)? as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, ordinal, i as u64, l as u64));
        let want = (2 * l).min(book.len() - 1);
        let picks: Vec<usize> = sample(&mut rng, book.len() - 1, want)
            .into_iter()
            .map(|p| if p >= i { p + 1 } else { p })
            .collect();
        let half = want / 2;
        let order = picks[..half]
            .iter()
            .copied()
            .chain(std::iter::once(i))
            .chain(picks[half..].iter().copied());
        Ok(ContextWindow {
            center: utterance_key(book_id, i),
            context_len: l,
            tokens: self.join(book, order),
        })
    }

    /// Context tokens for the utterance at corpus index `index`.
    pub fn context_tokens(&self, index: usize, l: usize, mode: ContextMode) -> Result<Vec<u32>> {
        let u = self
            .utterances
            .get(index)
            .ok_or_else(|| Error::NotFound(format!("utterance index {index}")))?;
        let window = match mode {
            ContextMode::Neighbours => self.context_window(&u.book_id, u.position, l)?,
            ContextMode::Shuffled { seed } => self.shuffled_context_window(&u.book_id, u.position, l, seed)?,
        };
        Ok(window.tokens)
    }

    /// Per book, the last `n_test_per_book` utterances form the test set and
    /// the rest the retrieval pool.
    pub fn split(&self, n_test_per_book: usize) -> Result<Split> {
        let mut pool = Vec::new();
        let mut test = Vec::new();
        for (entry, span) in self.manifest.books.iter().zip(&self.book_spans) {
            if n_test_per_book >= entry.utterances {
                return Err(Error::Config(format!(
                    "n_test_per_book {n_test_per_book} leaves no pool in {} ({} utterances)",
                    entry.book_id, entry.utterances
                )));
            }
            let cut = span.end - n_test_per_book;
            pool.extend(span.start..cut);
            test.extend(cut..span.end);
        }
        Ok(Split { pool, test })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(
            &mut out,
            &Header {
                manifest: &self.manifest,
            },
        )?;
        out.write_all(b"\n")?;
        for u in &self.utterances {
            let rec = RecordRef {
                book_id: &u.book_id,
                position: u.position,
                tokens: &u.tokens,
                style_id: u.style_id,
                frames: u.audio.frames(),
                channels: u.audio.channels(),
                audio: u.audio.data(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("corpus file is empty".into()))??;
        let OwnedHeader { manifest } =
            serde_json::from_str(&header).map_err(|e| Error::Format(format!("corpus header: {e}")))?;
        if manifest.version != CORPUS_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "corpus version {} (expected {CORPUS_FORMAT_VERSION})",
                manifest.version
            )));
        }
        let mut utterances = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("corpus record {}: {e}", n + 1)))?;
            utterances.push(Utterance {
                audio: AudioFeatures::new(rec.frames, rec.channels, rec.audio)?,
                book_id: rec.book_id,
                position: rec.position,
                tokens: rec.tokens,
                style_id: rec.style_id,
            });
        }
        Self::from_parts(manifest, utterances)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(File::open(path)?)
    }
}

/// Splitmix-style mixing of several words into one seed.
pub(crate) fn mix(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for w in [a, b, c] {
        h ^= w
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

#[derive(Serialize)]
struct Header<'a> {
    manifest: &'a CorpusManifest,
}

#[derive(Deserialize)]
struct OwnedHeader {
    manifest: CorpusManifest,
}

#[derive(Serialize)]
struct RecordRef<'a> {
    book_id: &'a str,
    position: usize,
    tokens: &'a [u32],
    style_id: usize,
    frames: usize,
    channels: usize,
    audio: &'a [f64],
}

#[derive(Deserialize)]
struct Record {
    book_id: String,
    position: usize,
    tokens: Vec<u32>,
    style_id: usize,
    frames: usize,
    channels: usize,
    audio: Vec<f64>,
}
