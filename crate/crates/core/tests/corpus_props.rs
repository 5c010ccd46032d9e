use std::collections::HashMap;

use proptest::prelude::*;
use ragtts::corpus::{generate_corpus, ContextMode, Corpus, CorpusConfig, STYLE_WINDOW};

fn config(seed: u64, books: usize, utterances: usize) -> CorpusConfig {
    CorpusConfig {
        books,
        utterances_per_book: utterances,
        seed,
        ..CorpusConfig::default()
    }
}

/// Style read off a token list: plurality over the style-token range
/// `[V-1-2S, V-1)`, ties to the smaller id.
fn style_of_tokens(tokens: &[u32], vocab: usize, styles: usize) -> usize {
    let base = (vocab - 1 - 2 * styles) as u32;
    let mut counts = vec![0usize; styles];
    for &t in tokens {
        if t >= base && t < (vocab - 1) as u32 {
            counts[(t - base) as usize % styles] += 1;
        }
    }
    let max = *counts.iter().max().unwrap();
    counts.iter().position(|&c| c == max).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generation_is_a_pure_function_of_config(seed in any::<u64>(), books in 1usize..4, n in 3usize..40) {
        let c = config(seed, books, n);
        let (a, b) = (generate_corpus(&c).unwrap(), generate_corpus(&c).unwrap());
        prop_assert_eq!(&a, &b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_jsonl(&mut x).unwrap();
        b.write_jsonl(&mut y).unwrap();
        prop_assert_eq!(&x, &y);
        prop_assert_eq!(Corpus::read_jsonl(x.as_slice()).unwrap(), a);
    }

    #[test]
    fn windows_grow_except_at_book_edges(seed in any::<u64>(), n in 3usize..30, i_frac in 0.0f64..1.0, l in 0usize..12) {
        let corpus = generate_corpus(&config(seed, 1, n)).unwrap();
        let book = corpus.book_ids().next().unwrap().to_string();
        let i = ((n as f64 * i_frac) as usize).min(n - 1);
        let short = corpus.context_window(&book, i, l).unwrap().tokens.len();
        let long = corpus.context_window(&book, i, l + 1).unwrap().tokens.len();
        prop_assert!(long >= short);
        let clamped_both = i < l + 1 && i + l + 1 >= n;
        prop_assert_eq!(long == short, clamped_both);
    }

    #[test]
    fn style_is_determined_by_the_neighbourhood(seed in any::<u64>()) {
        let c = config(seed, 2, 64);
        let corpus = generate_corpus(&c).unwrap();
        for (k, u) in corpus.utterances().iter().enumerate() {
            let window = corpus.context_tokens(k, STYLE_WINDOW, ContextMode::Neighbours).unwrap();
            prop_assert_eq!(style_of_tokens(&window, c.vocab_size, c.styles), u.style_id);
        }
    }
}

#[test]
fn own_tokens_leave_style_uncertain() {
    let c = CorpusConfig::default();
    let corpus = generate_corpus(&c).unwrap();
    let utts = corpus.utterances();
    let base = (c.vocab_size - 1 - 2 * c.styles) as u32;
    let is_style = |t: u32| t >= base && t < (c.vocab_size - 1) as u32;

    // Share of utterances whose window carries a style token outside the
    // centre utterance.
    let mut outside = 0;
    for (k, u) in utts.iter().enumerate() {
        let window = corpus.context_tokens(k, STYLE_WINDOW, ContextMode::Neighbours).unwrap();
        let in_window = window.iter().filter(|&&t| is_style(t)).count();
        let in_self = u.tokens.iter().filter(|&&t| is_style(t)).count();
        if in_window > in_self {
            outside += 1;
        }
    }
    assert!(outside as f64 / utts.len() as f64 >= 0.5);

    // Conditional entropy of the style given the utterance's own tokens,
    // grouping utterances by their style-token content.
    let mut groups: HashMap<Vec<u32>, HashMap<usize, usize>> = HashMap::new();
    for u in utts {
        let mut sig: Vec<u32> = u.tokens.iter().copied().filter(|&t| is_style(t)).collect();
        sig.sort_unstable();
        *groups.entry(sig).or_default().entry(u.style_id).or_default() += 1;
    }
    let n = utts.len() as f64;
    let entropy: f64 = groups
        .values()
        .map(|styles| {
            let m: usize = styles.values().sum();
            let h: f64 = styles
                .values()
                .map(|&c| {
                    let p = c as f64 / m as f64;
                    -p * p.ln()
                })
                .sum();
            m as f64 / n * h
        })
        .sum();
    assert!(entropy > 0.1, "H(style | own tokens) = {entropy}");
}
