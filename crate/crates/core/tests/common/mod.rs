//! Shared fixtures for the integration tests: a small schema, a seeded
//! vocabulary, and random sequence-set generators.
#![allow(dead_code)] // each test binary uses its own subset

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use seqset_core::data::{
    build_vocab, Label, ModalityEntry, ModalitySchema, SequenceSet, TaskKind, Vocabulary,
};
use seqset_core::mra::{ModelConfig, Similarity};

pub fn schema_with(mods: &[(&str, usize)], task: TaskKind, num_classes: usize) -> ModalitySchema {
    ModalitySchema::new(
        mods.iter()
            .map(|(name, max_len)| ModalityEntry {
                name: name.to_string(),
                max_len: *max_len,
            })
            .collect(),
        task,
        num_classes,
    )
    .unwrap()
}

pub fn toy_schema(task: TaskKind, num_classes: usize) -> ModalitySchema {
    schema_with(&[("text", 5), ("ocr", 5), ("tags", 5)], task, num_classes)
}

pub fn toy_config(schema: &ModalitySchema, similarity: Similarity, residual: bool) -> ModelConfig {
    ModelConfig {
        similarity,
        use_intra: true,
        use_inter: true,
        use_residual: residual,
        use_mixer: false,
        d: 8,
        h_mlp: 8,
        output_dim: schema.output_dim(),
        task: schema.task,
    }
}

pub fn token_pool(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("tok{i:02}")).collect()
}

pub fn sample_from(
    id: &str,
    pairs: &[(&str, &[&str])],
    label: Label,
    schema: &ModalitySchema,
) -> SequenceSet {
    let map: BTreeMap<String, Vec<String>> = pairs
        .iter()
        .map(|(k, ts)| (k.to_string(), ts.iter().map(|t| t.to_string()).collect()))
        .collect();
    SequenceSet::new(id, map, label, schema).unwrap()
}

/// Random sample over the token pool; each modality may come out empty,
/// but at least one token is guaranteed overall.
pub fn random_sample(
    rng: &mut ChaCha20Rng,
    id: &str,
    schema: &ModalitySchema,
    pool: &[String],
    label: Label,
) -> SequenceSet {
    loop {
        let mut map = BTreeMap::new();
        let mut total = 0;
        for entry in &schema.modalities {
            let len = rng.gen_range(0..=entry.max_len);
            total += len;
            let tokens: Vec<String> = (0..len)
                .map(|_| pool[rng.gen_range(0..pool.len())].clone())
                .collect();
            map.insert(entry.name.clone(), tokens);
        }
        if total == 0 {
            continue;
        }
        return SequenceSet::new(id, map, label.clone(), schema).unwrap();
    }
}

pub fn vocab_for(samples: &[SequenceSet]) -> Vocabulary {
    build_vocab(samples.iter(), 1).unwrap()
}

pub fn random_multihot(rng: &mut ChaCha20Rng, k: usize) -> Label {
    Label::MultiHot((0..k).map(|_| rng.gen_range(0..2) as u8).collect())
}
