use std::cmp::Ordering;

use proptest::prelude::*;
use ragtts::caclap::StyleEmbedding;
use ragtts::index::EmbeddingIndex;

/// Small integer components make exact score ties common.
fn vector(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2i8..=2, p)
        .prop_filter("non-zero", |v| v.iter().any(|&x| x != 0))
        .prop_map(|v| v.into_iter().map(f64::from).collect())
}

fn case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, Vec<f64>, usize)> {
    (1usize..=8, 1usize..=20).prop_flat_map(|(p, n)| {
        (
            prop::collection::vec(vector(p), n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            vector(p),
            1usize..=n + 3,
        )
    })
}

/// Full sort of every entry: score descending, key ascending.
fn oracle(index: &EmbeddingIndex, q: &[f64], k: usize) -> Vec<(String, f64)> {
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut all: Vec<(String, f64)> = index
        .entries()
        .iter()
        .map(|e| {
            let sn = e
                .vector
                .iter()
                .map(|&x| f64::from(x) * f64::from(x))
                .sum::<f64>()
                .sqrt();
            let dot: f64 = q.iter().zip(&e.vector).map(|(a, &b)| a * f64::from(b)).sum();
            (e.key.clone(), (dot / (qn * sn)).clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| match b.1.partial_cmp(&a.1).unwrap() {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    all.truncate(k);
    all
}

fn build(vectors: &[Vec<f64>], names: &[usize]) -> EmbeddingIndex {
    let mut index = EmbeddingIndex::new(vectors[0].len());
    for (v, &name) in vectors.iter().zip(names) {
        let e = StyleEmbedding::normalize(v.clone()).unwrap();
        index.insert(format!("u{name:02}"), &e).unwrap();
    }
    index
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn query_equals_full_sort((vectors, names, q, k) in case()) {
        let index = build(&vectors, &names);
        let query = StyleEmbedding::normalize(q).unwrap();
        let got = index.query(&query, k).unwrap();
        let want = oracle(&index, query.as_slice(), k);
        prop_assert_eq!(got.len(), k.min(vectors.len()));
        let got: Vec<(String, f64)> = got.iter().map(|r| (r.key.clone(), r.score)).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn scores_bounded_and_results_nest((vectors, names, q, k) in case()) {
        let index = build(&vectors, &names);
        let query = StyleEmbedding::normalize(q).unwrap();
        let short = index.query(&query, k).unwrap();
        let long = index.query(&query, k + 1).unwrap();
        prop_assert!(short.iter().all(|r| (-1.0..=1.0).contains(&r.score)));
        prop_assert!(short.iter().zip(short.iter().skip(1)).all(|(a, b)| a.score >= b.score));
        prop_assert_eq!(&long.0[..short.len()], &short.0[..]);
    }

    #[test]
    fn bytes_round_trip((vectors, names, _q, _k) in case()) {
        let index = build(&vectors, &names);
        let bytes = index.to_bytes();
        let back = EmbeddingIndex::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.entries(), index.entries());
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn seeded_index_file_hash_is_stable() {
    use rand::{Rng, SeedableRng};
    use sha2::{Digest, Sha256};

    let make = || {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100);
        let mut index = EmbeddingIndex::new(16);
        for i in 0..100 {
            let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            index
                .insert(format!("book000/{i:04}"), &StyleEmbedding::normalize(v).unwrap())
                .unwrap();
        }
        index
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.caei"), dir.path().join("b.caei"));
    make().persist(&a).unwrap();
    make().persist(&b).unwrap();
    let hash = |p| hex::encode(Sha256::digest(std::fs::read(p).unwrap()));
    assert_eq!(hash(&a), hash(&b));
    assert_eq!(EmbeddingIndex::load(&a).unwrap().len(), 100);
}
