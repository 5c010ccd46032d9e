use std::collections::HashSet;

use proptest::prelude::*;
use ragtts::caclap::{untrained, CaClap, CaClapConfig};
use ragtts::corpus::{generate_corpus, AudioFeatures, Corpus, CorpusConfig, Split};
use ragtts::index::{build_index, PoolIndexes, PoolScope, Ranked, RankedResult};
use ragtts::pipeline::{
    concat_prompts, run_rag_tts, select_prompts, synthesize_stub, IdentitySynthesizer, Pipeline, RagSettings, Strategy,
    StubSynthesizer,
};
use ragtts::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(seed: u64) -> Corpus {
    generate_corpus(&CorpusConfig {
        books: 3,
        utterances_per_book: 30,
        vocab_size: 32,
        styles: 4,
        channels: 6,
        max_tokens: 16,
        seed,
    })
    .unwrap()
}

fn model(corpus: &Corpus, split: &Split) -> CaClap {
    let m = corpus.manifest();
    let config = CaClapConfig {
        vocab_size: m.vocab_size,
        channels: m.channels,
        dim: 8,
        audio_hidden: 8,
        proj_dim: 4,
        context_len: 2,
        ..CaClapConfig::default()
    };
    untrained(corpus, &split.pool, &config).unwrap()
}

fn random_audio(frames: usize, channels: usize, rng: &mut ChaCha8Rng) -> AudioFeatures {
    let data = (0..frames * channels)
        .map(|k| match k % channels {
            0 => rng.random_range(100.0..260.0),
            1 => rng.random_range(0.1..2.0),
            _ => rng.random_range(-2.0..2.0),
        })
        .collect();
    AudioFeatures::new(frames, channels, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stub_keeps_prompt_levels(seed in any::<u64>(), frames in 1usize..20, c in 2usize..8,
                                tokens in prop::collection::vec(0u32..64, 1..12)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prompt = random_audio(frames, c, &mut rng);
        let out = synthesize_stub(&prompt, &tokens).unwrap();
        prop_assert_eq!(out.frames(), 4 * tokens.len());
        prop_assert_eq!(out.channels(), c);
        for ch in 0..c {
            prop_assert!((out.channel_mean(ch) - prompt.channel_mean(ch)).abs() < 1e-9);
        }
        prop_assert!(out.channel(1).all(|e| e >= 0.0));
        prop_assert_eq!(synthesize_stub(&prompt, &tokens).unwrap(), out);
    }

    #[test]
    fn concatenation_stacks_prompts_in_order(seed in any::<u64>(), n in 1usize..6, p_frac in 0.0f64..1.0) {
        let corpus = corpus(seed);
        let utts = corpus.utterances();
        let p = 1 + ((n as f64 * p_frac) as usize).min(n - 1);
        let ranked = RankedResult((0..n).map(|i| Ranked { key: utts[i * 7].key(), score: 0.0 }).collect());
        let sel = select_prompts(ranked, p).unwrap();
        let joined = concat_prompts(&sel, &corpus).unwrap();
        let parts: Vec<&AudioFeatures> = (0..p).map(|i| &utts[i * 7].audio).collect();
        prop_assert_eq!(joined.frames(), parts.iter().map(|a| a.frames()).sum::<usize>());
        let mut t = 0;
        for a in &parts {
            for f in 0..a.frames() {
                prop_assert_eq!(joined.frame(t), a.frame(f));
                t += 1;
            }
        }
        if p >= 2 {
            let mut rev = sel.clone();
            rev.chosen.reverse();
            prop_assert_ne!(concat_prompts(&rev, &corpus).unwrap(), joined);
        }
    }
}

#[test]
fn selections_stay_in_the_pool_of_the_same_book() {
    let corpus = corpus(5);
    let split = corpus.split(4).unwrap();
    let model = model(&corpus, &split);
    let pool: HashSet<String> = split.pool.iter().map(|&i| corpus.utterances()[i].key()).collect();
    let mut pipeline = Pipeline::new(&corpus, &model, &split, PoolScope::SameBook).unwrap();
    for strategy in [Strategy::Random, Strategy::TextOnly, Strategy::CaClap] {
        for p in 1..=4 {
            let settings = RagSettings {
                strategy,
                p,
                k: 10,
                context_len: 2,
                ..RagSettings::default()
            };
            for &t in &split.test {
                let u = &corpus.utterances()[t];
                let sel = pipeline.select(t, &settings).unwrap();
                assert_eq!(sel.chosen.len(), p);
                assert_eq!(sel.ranked.len(), 10);
                let distinct: HashSet<&String> = sel.chosen.iter().collect();
                assert_eq!(distinct.len(), p);
                for key in &sel.chosen {
                    assert!(pool.contains(key), "{key} not in pool");
                    assert!(key.starts_with(&u.book_id));
                }
            }
        }
    }
    let own = RagSettings {
        strategy: Strategy::SelfPrompt,
        p: 3,
        ..RagSettings::default()
    };
    let t = split.test[0];
    assert_eq!(pipeline.select(t, &own).unwrap().chosen, [corpus.utterances()[t].key()]);
}

#[test]
fn random_strategy_depends_only_on_its_seed() {
    let corpus = corpus(6);
    let split = corpus.split(4).unwrap();
    let model = model(&corpus, &split);
    let mut pipeline = Pipeline::new(&corpus, &model, &split, PoolScope::SameBook).unwrap();
    let settings = RagSettings {
        strategy: Strategy::Random,
        p: 2,
        seed: 9,
        ..RagSettings::default()
    };
    let t = split.test[1];
    let a = pipeline.select(t, &settings).unwrap();
    assert_eq!(pipeline.select(t, &settings).unwrap(), a);
    let differ = (10..20).any(|seed| pipeline.select(t, &RagSettings { seed, ..settings }).unwrap() != a);
    assert!(differ);
}

#[test]
fn indexes_holding_a_test_item_are_rejected() {
    let corpus = corpus(7);
    let split = corpus.split(4).unwrap();
    let model = model(&corpus, &split);
    let everything: Vec<usize> = (0..corpus.utterances().len()).collect();
    let leaked = PoolIndexes::build(&corpus, &everything, &model, PoolScope::SameBook).unwrap();
    assert!(matches!(
        Pipeline::with_indexes(&corpus, &model, &split, leaked),
        Err(Error::Leakage(_))
    ));

    let t = split.test[0];
    let book = &corpus.utterances()[t].book_id;
    let index = build_index(corpus.utterances().iter().filter(|u| &u.book_id == book), &model).unwrap();
    assert!(matches!(
        run_rag_tts(&corpus, &model, &index, t, 2, 10, 1, &StubSynthesizer),
        Err(Error::Leakage(_))
    ));
}

#[test]
fn own_audio_scores_perfectly_through_identity() {
    let corpus = corpus(8);
    let split = corpus.split(4).unwrap();
    let model = model(&corpus, &split);
    let mut pipeline = Pipeline::new(&corpus, &model, &split, PoolScope::SameBook).unwrap();
    let settings = RagSettings {
        strategy: Strategy::SelfPrompt,
        ..RagSettings::default()
    };
    let (report, records) = pipeline.evaluate(&settings, &IdentitySynthesizer).unwrap();
    assert_eq!(records.len(), split.test.len());
    assert_eq!(report.mcd.mean, 0.0);
    assert!((report.secs.mean - 1.0).abs() < 1e-12);
}
