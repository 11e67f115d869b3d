//! Synthetic workloads shared by the benchmarks.

use pensieve_core::{
    rng, DecodeConfig, Index, LogitsVector, ReferenceRecord, Split, ToyScorer, Visual, Visuals,
    Vocabulary,
};
use rand::Rng;

fn uniform(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// `n` random records with `dim`-wide semantic and appearance halves.
pub fn random_index(n: usize, dim: usize, seed: u64) -> Index {
    let mut r = rng::seeded(seed);
    let records = (0..n)
        .map(|i| ReferenceRecord {
            id: format!("ref{i:06}"),
            semantic_embedding: uniform(&mut r, dim),
            appearance_embedding: Some(uniform(&mut r, dim)),
            captions: vec![format!("a photo of item {i}")],
            split: Split::Restval,
            image_ref: None,
        })
        .collect();
    Index::build(records).expect("random records are valid")
}

pub fn random_vector(dim: usize, seed: u64) -> Vec<f64> {
    uniform(&mut rng::seeded(seed), dim)
}

/// Base, diffused and `k` reference logit vectors over `vocab` entries.
pub fn random_step(
    vocab: usize,
    k: usize,
    seed: u64,
) -> (LogitsVector, LogitsVector, Vec<LogitsVector>) {
    let mut r = rng::seeded(seed);
    let mut draw =
        || LogitsVector::new((0..vocab).map(|_| r.random_range(-10.0..10.0)).collect()).unwrap();
    let base = draw();
    let diffused = draw();
    let knn = (0..k).map(|_| draw()).collect();
    (base, diffused, knn)
}

/// Toy scorer, visuals and captioning config for a full decode.
pub fn toy_session(
    vocab: usize,
    dim: usize,
    max_tokens: usize,
) -> (ToyScorer, Visuals, DecodeConfig) {
    let mut tokens: Vec<String> = (0..vocab - 1).map(|i| format!("_t{i}")).collect();
    tokens.push("</s>".into());
    let scorer = ToyScorer::new(Vocabulary::new(tokens).unwrap(), dim, 1);
    let cfg = DecodeConfig {
        max_tokens,
        eos_token: None,
        ..DecodeConfig::captioning()
    };
    let visuals = Visuals {
        test: Visual::Embedding(random_vector(dim, 2)),
        diffused: Visual::Embedding(random_vector(dim, 3)),
        references: (0..cfg.k as u64)
            .map(|j| Visual::Embedding(random_vector(dim, 10 + j)))
            .collect(),
    };
    (scorer, visuals, cfg)
}
