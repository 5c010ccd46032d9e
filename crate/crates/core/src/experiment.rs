//! The two sweeps: retrieval quality against context length, and speech
//! quality against the number of concatenated prompts.

use serde::Serialize;

use crate::caclap::{train, CaClap, CaClapConfig};
use crate::corpus::{ContextMode, Corpus, Split};
use crate::error::{Error, Result};
use crate::index::PoolScope;
use crate::metrics::{retrieval_eval, RetrievalReport};
use crate::pipeline::{Pipeline, RagSettings, Strategy, Synthesizer};

/// One row of the context-length sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextRow {
    pub label: String,
    pub context_len: usize,
    pub shuffled: bool,
    pub final_loss: f64,
    #[serde(flatten)]
    pub report: RetrievalReport,
}

/// Trains and evaluates one model for every `l` in `lengths` with the true
/// neighbours, then one more at `shuffled_control` (if given) whose
/// neighbours are replaced by random same-book utterances, both in training
/// and at query time.
pub fn ablate_context(
    corpus: &Corpus,
    split: &Split,
    base: &CaClapConfig,
    lengths: &[usize],
    shuffled_control: Option<usize>,
    shuffle_seed: u64,
    scope: PoolScope,
) -> Result<Vec<ContextRow>> {
    if lengths.is_empty() && shuffled_control.is_none() {
        return Err(Error::Argument("no context lengths to sweep".into()));
    }
    let runs = lengths
        .iter()
        .map(|&l| (l, ContextMode::Neighbours))
        .chain(shuffled_control.map(|l| (l, ContextMode::Shuffled { seed: shuffle_seed })));
    let mut rows = Vec::new();
    for (l, mode) in runs {
        let config = CaClapConfig {
            context_len: l,
            ..base.clone()
        };
        let (model, report) = train(corpus, &split.pool, &config, mode)?;
        let (retrieval, _) = retrieval_eval(&model, corpus, split, l, mode, scope)?;
        let shuffled = matches!(mode, ContextMode::Shuffled { .. });
        rows.push(ContextRow {
            label: if shuffled { format!("random {l}") } else { l.to_string() },
            context_len: l,
            shuffled,
            final_loss: report.epoch_losses.last().copied().unwrap_or(f64::NAN),
            report: retrieval,
        });
    }
    Ok(rows)
}

/// One row of the prompt-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptCountRow {
    pub p: usize,
    pub strategy: Strategy,
    pub energy_rmse: f64,
    pub f0_rmse: f64,
    pub mcd: f64,
    pub secs: f64,
}

/// End-to-end evaluation for each `P` and each strategy, all sharing one
/// model and one set of pool indexes.
pub fn ablate_prompt_count(
    corpus: &Corpus,
    split: &Split,
    model: &CaClap,
    base: &RagSettings,
    p_values: &[usize],
    strategies: &[Strategy],
    synth: &dyn Synthesizer,
) -> Result<Vec<PromptCountRow>> {
    if p_values.is_empty() || strategies.is_empty() {
        return Err(Error::Argument("empty prompt-count sweep".into()));
    }
    if let Some(&p) = p_values.iter().find(|&&p| p == 0 || p > base.k) {
        return Err(Error::Argument(format!("P = {p} outside 1..={}", base.k)));
    }
    let mut pipeline = Pipeline::new(corpus, model, split, base.scope)?;
    let mut rows = Vec::new();
    for &p in p_values {
        for &strategy in strategies {
            let settings = RagSettings { strategy, p, ..*base };
            let (report, _) = pipeline.evaluate(&settings, synth)?;
            rows.push(PromptCountRow {
                p,
                strategy,
                energy_rmse: report.energy_rmse.mean,
                f0_rmse: report.f0_rmse.mean,
                mcd: report.mcd.mean,
                secs: report.secs.mean,
            });
        }
    }
    Ok(rows)
}
