//! Parameter assembly, seeded initialization, and checkpoint files.
//!
//! Every trainable tensor lives in one [`Parameters`] collection under a
//! canonical name. Initialization draws uniform values in `[-0.1, 0.1)`
//! from a generator keyed by `(seed, parameter name)`, so a given parameter
//! initializes identically no matter which other parameters the
//! configuration creates — ablation variants sharing a seed share their
//! encoder initialization for free.

use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::ModalitySchema;
use crate::encoder::{
    P_EMBEDDING, P_MIXER_B1, P_MIXER_B2, P_MIXER_FF1, P_MIXER_FF2, P_MIXER_WK, P_MIXER_WO,
    P_MIXER_WQ, P_MIXER_WV, P_POSITIONAL,
};
use crate::error::{Error, Result};
use crate::mra::{
    intra_q_name, intra_w_name, ModelConfig, P_HEAD_B1, P_HEAD_B2, P_HEAD_W1, P_HEAD_W2,
    P_INTER_Q, P_INTER_W,
};
use crate::tensor::{Parameters, Tensor};

const INIT_RANGE: f64 = 0.1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Generator for one parameter, a pure function of `(seed, name)`.
pub fn param_rng(seed: u64, name: &str) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed ^ fnv1a64(name.as_bytes()))
}

/// Canonical `(name, shape)` list for a configuration. Insertion order here
/// fixes checkpoint and optimizer-state ordering.
pub fn param_layout(
    config: &ModelConfig,
    schema: &ModalitySchema,
    vocab_size: usize,
) -> Vec<(String, Vec<usize>)> {
    let d = config.d;
    let mut layout = vec![
        (P_EMBEDDING.to_string(), vec![vocab_size, d]),
        (P_POSITIONAL.to_string(), vec![schema.max_positions(), d]),
    ];
    if config.use_mixer {
        layout.extend([
            (P_MIXER_WQ.to_string(), vec![d, d]),
            (P_MIXER_WK.to_string(), vec![d, d]),
            (P_MIXER_WV.to_string(), vec![d, d]),
            (P_MIXER_WO.to_string(), vec![d, d]),
            (P_MIXER_FF1.to_string(), vec![d, 2 * d]),
            (P_MIXER_B1.to_string(), vec![2 * d]),
            (P_MIXER_FF2.to_string(), vec![2 * d, d]),
            (P_MIXER_B2.to_string(), vec![d]),
        ]);
    }
    if config.use_intra {
        for name in schema.names() {
            layout.push((intra_w_name(name), vec![d, d]));
            layout.push((intra_q_name(name), vec![d]));
        }
    }
    if config.use_inter {
        layout.push((P_INTER_W.to_string(), vec![d, d]));
        layout.push((P_INTER_Q.to_string(), vec![d]));
    }
    layout.extend([
        (P_HEAD_W1.to_string(), vec![config.h_mlp, d]),
        (P_HEAD_B1.to_string(), vec![config.h_mlp]),
        (P_HEAD_W2.to_string(), vec![config.output_dim, config.h_mlp]),
        (P_HEAD_B2.to_string(), vec![config.output_dim]),
    ]);
    layout
}

/// Seeded uniform initialization of every parameter the configuration uses.
pub fn init_params(
    config: &ModelConfig,
    schema: &ModalitySchema,
    vocab_size: usize,
    seed: u64,
) -> Result<Parameters> {
    init_params_in_range(config, schema, vocab_size, seed, INIT_RANGE)
}

/// Initialization with an explicit range. Training uses the small default;
/// gradient checking draws wider values so that attention-parameter
/// gradients sit well above the finite-difference noise floor.
pub fn init_params_in_range(
    config: &ModelConfig,
    schema: &ModalitySchema,
    vocab_size: usize,
    seed: u64,
    range: f64,
) -> Result<Parameters> {
    config.validate()?;
    if vocab_size < 3 {
        return Err(Error::Config("vocabulary must include the specials".into()));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::Config(format!("init range {range} must be positive")));
    }
    let mut params = Parameters::new();
    for (name, shape) in param_layout(config, schema, vocab_size) {
        let mut rng = param_rng(seed, &name);
        params.insert(name, Tensor::uniform(shape, -range, range, &mut rng));
    }
    Ok(params)
}

/// Coarse reporting group for a parameter: `embedding`, `positional`,
/// `mixer`, `intra.W.<m>`, `intra.q.<m>`, `inter.W`, `inter.q`, or `head`.
pub fn param_group(name: &str) -> String {
    if let Some(rest) = name.strip_prefix("head.") {
        let _ = rest;
        "head".to_string()
    } else if name.starts_with("mixer.") {
        "mixer".to_string()
    } else {
        name.to_string()
    }
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    params: IndexMap<String, ParamEntry>,
}

/// Serialize config + parameters as a version-1 checkpoint document.
pub fn save_checkpoint(path: impl AsRef<Path>, config: &ModelConfig, params: &Parameters) -> Result<()> {
    let file = CheckpointFile {
        version: 1,
        config: config.clone(),
        params: params
            .iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    ParamEntry {
                        shape: t.shape().to_vec(),
                        values: t.values().to_vec(),
                    },
                )
            })
            .collect(),
    };
    let out = std::fs::File::create(path.as_ref())?;
    let mut w = std::io::BufWriter::new(out);
    serde_json::to_writer(&mut w, &file)?;
    use std::io::Write;
    writeln!(w)?;
    Ok(())
}

/// Load a checkpoint, validating version, shapes, and finiteness.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, Parameters)> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
        Error::Ingestion(format!("cannot read checkpoint {}: {e}", path.as_ref().display()))
    })?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != 1 {
        return Err(Error::Config(format!("unsupported checkpoint version {}", file.version)));
    }
    file.config.validate()?;
    let mut params = Parameters::new();
    for (name, entry) in file.params {
        params.insert(name, Tensor::new(entry.shape, entry.values)?);
    }
    Ok((file.config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ModalityEntry, TaskKind};
    use crate::mra::Similarity;

    fn schema() -> ModalitySchema {
        ModalitySchema::new(
            vec![
                ModalityEntry { name: "a".into(), max_len: 3 },
                ModalityEntry { name: "b".into(), max_len: 3 },
            ],
            TaskKind::Binary,
            1,
        )
        .unwrap()
    }

    fn config(use_intra: bool, use_inter: bool) -> ModelConfig {
        ModelConfig {
            similarity: Similarity::Additive,
            use_intra,
            use_inter,
            use_residual: true,
            use_mixer: false,
            d: 4,
            h_mlp: 6,
            output_dim: 1,
            task: TaskKind::Binary,
        }
    }

    #[test]
    fn init_is_deterministic_given_seed() {
        let a = init_params(&config(true, true), &schema(), 10, 7).unwrap();
        let b = init_params(&config(true, true), &schema(), 10, 7).unwrap();
        for ((_, ta), (_, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(ta.values(), tb.values());
        }
    }

    #[test]
    fn init_values_are_in_range() {
        let p = init_params(&config(true, true), &schema(), 10, 3).unwrap();
        for (_, t) in p.iter() {
            for v in t.values() {
                assert!((-0.1..0.1).contains(v));
            }
        }
    }

    #[test]
    fn encoder_init_is_shared_across_variants() {
        // the same seed yields identical encoder tables no matter which
        // attention parameters the config creates
        let full = init_params(&config(true, true), &schema(), 10, 42).unwrap();
        let enc_only = init_params(&config(false, false), &schema(), 10, 42).unwrap();
        assert_eq!(
            full.get(P_EMBEDDING).unwrap().values(),
            enc_only.get(P_EMBEDDING).unwrap().values()
        );
        assert_eq!(
            full.get(P_POSITIONAL).unwrap().values(),
            enc_only.get(P_POSITIONAL).unwrap().values()
        );
        assert!(!enc_only.contains(P_INTER_W));
    }

    #[test]
    fn layout_matches_config_flags() {
        let names: Vec<String> = param_layout(&config(true, false), &schema(), 10)
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert!(names.contains(&"intra.W.a".to_string()));
        assert!(names.contains(&"intra.q.b".to_string()));
        assert!(!names.contains(&P_INTER_W.to_string()));
        assert!(names.contains(&P_HEAD_W2.to_string()));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let cfg = config(true, true);
        let params = init_params(&cfg, &schema(), 10, 5).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        for ((na, ta), (nb, tb)) in params.iter().zip(params2.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.values(), tb.values());
            assert_eq!(ta.shape(), tb.shape());
        }
        // byte determinism of the file itself
        let path2 = dir.path().join("ckpt2.json");
        save_checkpoint(&path2, &cfg, &params).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn param_groups_collapse_head_and_mixer() {
        assert_eq!(param_group("head.w1"), "head");
        assert_eq!(param_group("mixer.wq"), "mixer");
        assert_eq!(param_group("intra.W.ocr"), "intra.W.ocr");
        assert_eq!(param_group("embedding"), "embedding");
    }
}
