use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{batch_objective, Example};
use super::model::{AudioNorm, CaClap, CaClapConfig};
use crate::corpus::{ContextMode, Corpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Model with freshly initialized weights and the audio normalization fitted
/// on `train`. This is the "untrained" reference point of a training run with
/// the same config.
pub fn untrained(corpus: &Corpus, train: &[usize], config: &CaClapConfig) -> Result<CaClap> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let utts = corpus.utterances();
    let norm = AudioNorm::fit(train.iter().map(|&i| &utts[i].audio))?;
    CaClap::init(config.clone(), norm)
}

fn batches(
    corpus: &Corpus,
    train: &[usize],
    batch_size: usize,
    same_book: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let keep = |chunk: &[usize]| chunk.len() >= 2;
    if same_book {
        let utts = corpus.utterances();
        let mut by_book: Vec<Vec<usize>> = Vec::new();
        for &i in train {
            match by_book.last_mut() {
                Some(group) if utts[group[0]].book_id == utts[i].book_id => group.push(i),
                _ => by_book.push(vec![i]),
            }
        }
        let mut out = Vec::new();
        for mut group in by_book {
            group.shuffle(rng);
            out.extend(group.chunks(batch_size).filter(|c| keep(c)).map(<[usize]>::to_vec));
        }
        out.shuffle(rng);
        out
    } else {
        let mut order = train.to_vec();
        order.shuffle(rng);
        order
            .chunks(batch_size)
            .filter(|c| keep(c))
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Mini-batch gradient descent on the symmetric contrastive loss.
///
/// Plain SGD with a fixed learning rate; batches are reshuffled every epoch
/// from a generator seeded by `config.seed`, so the run is deterministic.
pub fn train(
    corpus: &Corpus,
    train: &[usize],
    config: &CaClapConfig,
    mode: ContextMode,
) -> Result<(CaClap, TrainReport)> {
    config.validate_training()?;
    if config.batch_size > train.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds training split of {}",
            config.batch_size,
            train.len()
        )));
    }
    let mut model = untrained(corpus, train, config)?;
    let utts = corpus.utterances();
    let contexts = train
        .iter()
        .map(|&i| corpus.context_tokens(i, config.context_len, mode))
        .collect::<Result<Vec<_>>>()?;
    let position: std::collections::HashMap<usize, usize> = train.iter().enumerate().map(|(k, &i)| (i, k)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5E_ED0F_BA7C);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut sum = 0.0;
        let plan = batches(corpus, train, config.batch_size, config.same_book_batches, &mut rng);
        for batch in &plan {
            let examples: Vec<Example<'_>> = batch
                .iter()
                .map(|&i| Example {
                    current: &utts[i].tokens,
                    context: contexts[position[&i]].clone(),
                    audio: &utts[i].audio,
                })
                .collect();
            let step = model.step + 1;
            let diverged = |loss: f64| Error::TrainingFailure { step, loss };
            let loss = match batch_objective(&mut model.params, &model.audio_norm, config.vocab_size, &examples) {
                Ok(l) if l.is_finite() => l,
                Ok(l) => return Err(diverged(l)),
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            model
                .params
                .sgd_step(config.learning_rate)
                .map_err(|_| diverged(loss))?;
            model.params.zero_grad();
            model.step = step;
            sum += loss;
        }
        epoch_losses.push(if plan.is_empty() { 0.0 } else { sum / plan.len() as f64 });
    }
    let steps = model.step;
    Ok((model, TrainReport { epoch_losses, steps }))
}
