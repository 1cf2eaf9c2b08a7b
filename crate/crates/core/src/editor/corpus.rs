use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{Fact, Vocab};

/// Random single-token facts `s<i> r<i mod R> -> o<random>`.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub vocab: Vocab,
    pub facts: Vec<Fact>,
    /// Token ids of the object entities.
    pub objects: Vec<usize>,
}

pub fn synthetic_corpus(n_facts: usize, n_relations: usize, n_objects: usize, seed: u64) -> SyntheticCorpus {
    let mut vocab = Vocab::new();
    let objects: Vec<usize> = (0..n_objects.max(2)).map(|i| vocab.intern(&format!("o{i}"))).collect();
    let relations: Vec<usize> = (0..n_relations.max(1))
        .map(|i| vocab.intern(&format!("r{i}")))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let facts = (0..n_facts)
        .map(|i| Fact {
            subject: vec![vocab.intern(&format!("s{i}"))],
            relation: vec![relations[i % relations.len()]],
            object: objects[rng.random_range(0..objects.len())],
        })
        .collect();
    SyntheticCorpus { vocab, facts, objects }
}
