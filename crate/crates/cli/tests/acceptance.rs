//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ragtts::caclap::{
    batch_objective, contrastive_loss, from_bytes, load_checkpoint, save_checkpoint, to_bytes, train, untrained,
    CaClap, CaClapConfig, Example, SimilarityMatrix,
};
use ragtts::corpus::{generate_corpus, ContextMode, Corpus, CorpusConfig, Split};
use ragtts::index::{EmbeddingIndex, PoolIndexes, PoolScope};
use ragtts::metrics::{dtw_by, map_at, recall_at, retrieval_eval, RetrievalReport};
use ragtts::micrograd::Tensor;
use ragtts::pipeline::{Pipeline, RagSettings, Strategy, StubSynthesizer};
use ragtts::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1. Micro-model gradients against central differences.

fn micro_corpus(seed: u64, utterances: usize) -> Corpus {
    generate_corpus(&CorpusConfig {
        books: 1,
        utterances_per_book: utterances,
        vocab_size: 32,
        styles: 4,
        channels: 6,
        max_tokens: 16,
        seed,
    })
    .unwrap()
}

fn micro_config(corpus: &Corpus, d: usize, p: usize, l: usize, seed: u64) -> CaClapConfig {
    let m = corpus.manifest();
    CaClapConfig {
        vocab_size: m.vocab_size,
        channels: m.channels,
        dim: d,
        audio_hidden: d,
        proj_dim: p,
        context_len: l,
        seed,
        ..CaClapConfig::default()
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let (eps, l, seed) = (1e-4, 1, CaClapConfig::default().seed);
    let corpus = micro_corpus(seed, 10);
    let pool: Vec<usize> = (0..10).collect();
    let mut model = untrained(&corpus, &pool, &micro_config(&corpus, 8, 4, l, seed)).unwrap();
    let utts = corpus.utterances();
    let batch: Vec<Example> = (4..7)
        .map(|i| Example {
            current: &utts[i].tokens,
            context: corpus.context_tokens(i, l, ContextMode::Neighbours).unwrap(),
            audio: &utts[i].audio,
        })
        .collect();
    let norm = model.audio_norm().clone();
    let vocab = model.config().vocab_size;
    let params = model.params_mut();
    batch_objective(params, &norm, vocab, &batch).unwrap();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let analytic: Vec<Vec<f64>> = names.iter().map(|n| params.grad(n).unwrap().data().to_vec()).collect();
    let (mut worst, mut entries) = (0.0f64, 0);
    for (name, grads) in names.iter().zip(&analytic) {
        for (j, &a) in grads.iter().enumerate() {
            let mut at = |delta: f64| {
                let orig = params.get(name).unwrap().data()[j];
                params.get_mut(name).unwrap().data_mut()[j] = orig + delta;
                let loss = batch_objective(params, &norm, vocab, &batch).unwrap();
                params.get_mut(name).unwrap().data_mut()[j] = orig;
                loss
            };
            let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
            entries += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 60.0 && names.iter().any(|n| n.contains("tau")),
        format!("{entries} entries, max rel err {worst:.2e} in {secs:.1}s"),
    )
}

// 2. Loss of a uniform similarity matrix.

fn uniform_loss() -> Outcome {
    let uniform = |n: usize| SimilarityMatrix::new(Tensor::new(&[n, n], vec![0.3; n * n]).unwrap()).unwrap();
    let l4 = contrastive_loss(&uniform(4), 0.07f64.ln()).unwrap().loss;
    let l1 = contrastive_loss(&uniform(1), 0.07f64.ln()).unwrap().loss;
    check(
        (l4 - 4f64.ln()).abs() < 1e-9 && l1 == 0.0,
        format!("N=4 {l4:.12} (ln 4 = {:.12}), N=1 {l1}", 4f64.ln()),
    )
}

// 3. DTW against exhaustive path enumeration.

type Path2 = Vec<(usize, usize)>;

fn all_paths(ta: usize, tb: usize) -> Vec<Path2> {
    fn walk(i: usize, j: usize, ta: usize, tb: usize, cur: &mut Path2, out: &mut Vec<Path2>) {
        cur.push((i, j));
        if (i, j) == (ta - 1, tb - 1) {
            out.push(cur.clone());
        } else {
            for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
                if i + di < ta && j + dj < tb {
                    walk(i + di, j + dj, ta, tb, cur, out);
                }
            }
        }
        cur.pop();
    }
    let mut out = Vec::new();
    walk(0, 0, ta, tb, &mut Vec::new(), &mut out);
    out
}

fn step_codes(path: &Path2) -> Vec<u8> {
    path.windows(2)
        .rev()
        .map(|w| match (w[1].0 - w[0].0, w[1].1 - w[0].1) {
            (1, 1) => 0,
            (1, 0) => 1,
            _ => 2,
        })
        .collect()
}

fn dtw_enumeration() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (ta, tb) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let table: Vec<f64> = (0..ta * tb).map(|_| f64::from(rng.random_range(0u8..4))).collect();
        let d = |i: usize, j: usize| table[i * tb + j];
        let mut best: Option<(Path2, f64)> = None;
        for p in all_paths(ta, tb) {
            let cost = p.iter().fold(0.0, |acc, &(i, j)| acc + d(i, j));
            let better = match &best {
                None => true,
                Some((bp, bc)) => cost < *bc || (cost == *bc && step_codes(&p) < step_codes(bp)),
            };
            if better {
                best = Some((p, cost));
            }
        }
        let (path, cost) = best.unwrap();
        let got = dtw_by(ta, tb, d).unwrap();
        if got.cost != cost || got.pairs != path {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches == 0 && secs < 10.0,
        format!("{mismatches}/100 mismatches in {secs:.2}s"),
    )
}

// 4. Retrieval metrics against a naive full sort.

fn cosine(q: &[f64], stored: &[f32]) -> f64 {
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sn = stored.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let dot: f64 = q.iter().zip(stored).map(|(a, &b)| a * f64::from(b)).sum();
    (dot / (qn * sn)).clamp(-1.0, 1.0)
}

/// Copies the audio of utterance `from` over utterance `to`, so the two
/// score identically against every query.
fn duplicate_audio(corpus: &Corpus, pairs: &[(usize, usize)]) -> Corpus {
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf).unwrap();
    let mut lines: Vec<String> = String::from_utf8(buf).unwrap().lines().map(str::to_string).collect();
    for &(from, to) in pairs {
        let src: serde_json::Value = serde_json::from_str(&lines[from + 1]).unwrap();
        let mut dst: serde_json::Value = serde_json::from_str(&lines[to + 1]).unwrap();
        for field in ["frames", "channels", "audio"] {
            dst[field] = src[field].clone();
        }
        lines[to + 1] = dst.to_string();
    }
    Corpus::read_jsonl(lines.join("\n").as_bytes()).unwrap()
}

fn retrieval_oracle() -> Outcome {
    let mut mismatches = 0;
    for seed in 0..50u64 {
        let pool_len = 3 + (seed as usize * 7) % 18;
        // Ties between pool items, and between a pool item and a query's own audio.
        let corpus = duplicate_audio(&micro_corpus(seed, pool_len + 3), &[(pool_len, 0), (1, 2)]);
        let split = corpus.split(3).unwrap();
        let model = untrained(&corpus, &split.pool, &micro_config(&corpus, 8, 4, 1, seed)).unwrap();
        let (report, items) =
            retrieval_eval(&model, &corpus, &split, 1, ContextMode::Neighbours, PoolScope::SameBook).unwrap();
        let utts = corpus.utterances();
        let ranks: Vec<usize> = split
            .test
            .iter()
            .map(|&t| {
                let ctx = corpus.context_tokens(t, 1, ContextMode::Neighbours).unwrap();
                let q = model.encode_text(&utts[t].tokens, &ctx).unwrap().into_vec();
                let mut scored: Vec<(String, f64)> = split
                    .pool
                    .iter()
                    .chain([&t])
                    .map(|&i| {
                        let a: Vec<f32> = model
                            .encode_audio(&utts[i].audio)
                            .unwrap()
                            .as_slice()
                            .iter()
                            .map(|&x| x as f32)
                            .collect();
                        (utts[i].key(), cosine(&q, &a))
                    })
                    .collect();
                scored.sort_by(|a, b| match b.1.partial_cmp(&a.1).unwrap() {
                    Ordering::Equal => a.0.cmp(&b.0),
                    o => o,
                });
                1 + scored.iter().position(|(k, _)| *k == utts[t].key()).unwrap()
            })
            .collect();
        let got: Vec<usize> = items.iter().map(|i| i.rank).collect();
        let q = ranks.len() as f64;
        let r1 = ranks.iter().filter(|&&r| r <= 1).count() as f64 / q;
        let r5 = ranks.iter().filter(|&&r| r <= 5).count() as f64 / q;
        let ap = ranks
            .iter()
            .map(|&r| if r <= 10 { 1.0 / r as f64 } else { 0.0 })
            .sum::<f64>()
            / q;
        if got != ranks || report.r_at_1 != r1 || report.r_at_5 != r5 || (report.map_at_10 - ap).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    let hand = [2, 1, 11, 3];
    let map = map_at(&hand, 10);
    let want = (0.5 + 1.0 + 0.0 + 1.0 / 3.0) / 4.0;
    check(
        mismatches == 0 && (map - want).abs() < 1e-9 && recall_at(&hand, 5) == 0.75,
        format!("{mismatches}/50 pool mismatches, hand MAP@10 {map:.9}"),
    )
}

// 5-8. Trained models on the default corpus.

struct Trained {
    corpus: Corpus,
    split: Split,
    untrained: RetrievalReport,
    context2: (CaClap, RetrievalReport),
    context0: RetrievalReport,
    shuffled2: RetrievalReport,
    elapsed: Duration,
}

fn train_models() -> Trained {
    let start = Instant::now();
    let corpus = generate_corpus(&CorpusConfig::default()).unwrap();
    let split = corpus.split(8).unwrap();
    let m = corpus.manifest();
    let config = |l: usize| CaClapConfig {
        vocab_size: m.vocab_size,
        channels: m.channels,
        context_len: l,
        ..CaClapConfig::default()
    };
    let eval = |model: &CaClap, l: usize, mode: ContextMode| {
        retrieval_eval(model, &corpus, &split, l, mode, PoolScope::SameBook)
            .unwrap()
            .0
    };
    let shuffled = ContextMode::Shuffled { seed: config(2).seed };
    let (context2, context0, shuffled2) = std::thread::scope(|s| {
        let run = |l: usize, mode: ContextMode| {
            let (corpus, split, config) = (&corpus, &split, config(l));
            let eval = &eval;
            s.spawn(move || {
                let model = train(corpus, &split.pool, &config, mode).unwrap().0;
                let report = eval(&model, l, mode);
                (model, report)
            })
        };
        let (a, b, c) = (
            run(2, ContextMode::Neighbours),
            run(0, ContextMode::Neighbours),
            run(2, shuffled),
        );
        (a.join().unwrap(), b.join().unwrap().1, c.join().unwrap().1)
    });
    let base = untrained(&corpus, &split.pool, &config(2)).unwrap();
    let untrained = eval(&base, 2, ContextMode::Neighbours);
    let elapsed = start.elapsed();
    Trained {
        corpus,
        split,
        untrained,
        context2,
        context0,
        shuffled2,
        elapsed,
    }
}

fn retrieval_quality(t: &Trained) -> Outcome {
    let (r5, base5) = (t.context2.1.r_at_5, t.untrained.r_at_5);
    let (r1, r1_0) = (t.context2.1.r_at_1, t.context0.r_at_1);
    check(
        r5 >= 0.6 && r5 >= 4.0 * base5 && r1 > r1_0 && t.elapsed < Duration::from_secs(600),
        format!(
            "R@5 {r5:.4} (untrained {base5:.4}), R@1 l=2 {r1:.4} vs l=0 {r1_0:.4}, {:.0}s",
            t.elapsed.as_secs_f64()
        ),
    )
}

fn shuffled_context(t: &Trained) -> Outcome {
    let (true_r1, shuf_r1) = (t.context2.1.r_at_1, t.shuffled2.r_at_1);
    check(
        shuf_r1 <= 0.9 * true_r1,
        format!("shuffled R@1 {shuf_r1:.4} vs true {true_r1:.4}"),
    )
}

fn mean_secs(t: &Trained, strategy: Strategy, p: usize) -> f64 {
    let model = &t.context2.0;
    let mut pipeline = Pipeline::new(&t.corpus, model, &t.split, PoolScope::SameBook).unwrap();
    let settings = RagSettings {
        strategy,
        p,
        context_len: 2,
        ..RagSettings::default()
    };
    pipeline.evaluate(&settings, &StubSynthesizer).unwrap().0.secs.mean
}

fn prompt_count(t: &Trained) -> Outcome {
    let secs: Vec<f64> = (1..=4).map(|p| mean_secs(t, Strategy::CaClap, p)).collect();
    check(secs.windows(2).all(|w| w[1] >= w[0]), format!("SECS by P {:.4?}", secs))
}

fn strategy_order(t: &Trained) -> Outcome {
    let own = mean_secs(t, Strategy::SelfPrompt, 1);
    let ca = mean_secs(t, Strategy::CaClap, 1);
    let random = mean_secs(t, Strategy::Random, 1);
    check(
        own - ca >= 0.01 && ca - random >= 0.01,
        format!("self {own:.4}, caclap {ca:.4}, random {random:.4}"),
    )
}

// 9. Persistence.

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn persistence(t: &Trained) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let model = &t.context2.0;
    let (a, b) = (dir.path().join("a.cack"), dir.path().join("b.cack"));
    save_checkpoint(model, &a).unwrap();
    save_checkpoint(model, &b).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    let model_ok = to_bytes(&loaded).unwrap() == to_bytes(model).unwrap() && sha(&a) == sha(&b);

    let indexes = PoolIndexes::build(&t.corpus, &t.split.pool, model, PoolScope::SameBook).unwrap();
    let mut index_ok = true;
    for (name, index) in indexes.iter() {
        let (x, y) = (
            dir.path().join(format!("{name}-x.caei")),
            dir.path().join(format!("{name}-y.caei")),
        );
        index.persist(&x).unwrap();
        index.persist(&y).unwrap();
        let back = EmbeddingIndex::load(&x).unwrap();
        index_ok &= back.entries() == index.entries() && sha(&x) == sha(&y);
    }

    let mut bad = to_bytes(model).unwrap();
    bad[0] ^= 0xff;
    let magic_ok = matches!(from_bytes(&bad), Err(Error::Format(_)));
    let mut bad_index = indexes.iter().next().unwrap().1.to_bytes();
    bad_index[0] ^= 0xff;
    let index_magic_ok = matches!(EmbeddingIndex::from_bytes(&bad_index), Err(Error::Format(_)));
    check(
        model_ok && index_ok && magic_ok && index_magic_ok,
        format!(
            "checkpoint {model_ok}, indexes {index_ok}, bad magic {}",
            magic_ok && index_magic_ok
        ),
    )
}

// 10. The CLI recipe is reproducible byte for byte.

/// One step per line; `--test-per-book 4` keeps the pools of the small corpus non-trivial.
const RECIPE: &[&str] = &[
    "corpus-gen --books 4 --utterances 24 --out run/corpus",
    "train --corpus run/corpus/corpus.jsonl --test-per-book 4 --epochs 3 --context-len 2 --out run/train",
    "index-build --corpus run/corpus/corpus.jsonl --test-per-book 4 --model run/train/model.cack --out run/index",
    "eval-retrieval --corpus run/corpus/corpus.jsonl --test-per-book 4 --model run/train/model.cack --out run/retrieval",
    "eval-tts --corpus run/corpus/corpus.jsonl --test-per-book 4 --model run/train/model.cack --index run/index/index \
     --p 2 --out run/tts",
    "ablate-context --corpus run/corpus/corpus.jsonl --test-per-book 4 --epochs 2 --l-values 0,2 --control-len 2 \
     --out run/context",
    "ablate-prompt-count --corpus run/corpus/corpus.jsonl --test-per-book 4 --model run/train/model.cack \
     --p-values 1,2 --out run/prompt-count",
];

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn cli_reproducibility() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_ragtts");
    let run = || -> Result<BTreeMap<String, Vec<u8>>, String> {
        let dir = tempfile::tempdir().unwrap();
        for step in RECIPE {
            let args: Vec<&str> = step.split_whitespace().collect();
            let out = Command::new(bin)
                .args(&args)
                .current_dir(dir.path())
                .output()
                .map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(format!(
                    "{} failed: {}",
                    args[0],
                    String::from_utf8_lossy(&out.stderr).trim()
                ));
            }
        }
        Ok(files_under(&dir.path().join("run")))
    };
    let (a, b) = (run()?, run()?);
    let hashes = a.keys().filter(|k| k.ends_with("hashes.txt")).count();
    check(
        a == b && hashes == RECIPE.len(),
        format!("{} files, {hashes} hash manifests, identical {}", a.len(), a == b),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        eprintln!("criterion {n:>2} {name:<28} {status}  {detail}");
    };
    report(1, "gradient check", gradient_check());
    report(2, "uniform-similarity loss", uniform_loss());
    report(3, "dtw enumeration", dtw_enumeration());
    report(4, "retrieval oracle", retrieval_oracle());
    let trained = train_models();
    report(5, "retrieval quality", retrieval_quality(&trained));
    report(6, "shuffled-context control", shuffled_context(&trained));
    report(7, "secs by prompt count", prompt_count(&trained));
    report(8, "secs by strategy", strategy_order(&trained));
    report(9, "persistence", persistence(&trained));
    report(10, "cli reproducibility", cli_reproducibility());
    if failed == 0 {
        eprintln!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        eprintln!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
