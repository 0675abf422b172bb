//! Planted-signal benchmark generator.
//!
//! One designated key token in one designated modality determines the
//! label; every other position holds i.i.d. noise tokens drawn from the
//! rest of the vocabulary. The key token never appears as noise, so a rule
//! that reads it is Bayes-optimal with accuracy 1, and the noise modalities
//! carry no signal at all.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use seqset_core::data::TaskKind;
use seqset_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub modalities: usize,
    pub vocab_size: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub task: TaskKind,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            modalities: 3,
            vocab_size: 200,
            train: 2000,
            valid: 500,
            test: 500,
            len_min: 3,
            len_max: 8,
            task: TaskKind::Binary,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modalities == 0 {
            return Err(Error::Config("need at least one modality".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must leave room for noise beside the key token".into()));
        }
        if self.len_min == 0 || self.len_min > self.len_max {
            return Err(Error::Config(format!(
                "invalid length range [{}, {}]",
                self.len_min, self.len_max
            )));
        }
        if self.train == 0 {
            return Err(Error::Config("train split must be non-empty".into()));
        }
        if self.task != TaskKind::Binary {
            return Err(Error::Config(
                "the planted benchmark generates binary labels".into(),
            ));
        }
        Ok(())
    }
}

/// Record of the planted rule, written alongside the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub key_token: String,
    pub key_modality: String,
    pub modality_names: Vec<String>,
    pub positives: usize,
    pub total: usize,
    pub label_base_rate: f64,
}

pub fn modality_name(i: usize) -> String {
    format!("m{}", i + 1)
}

fn token(i: usize) -> String {
    format!("tok{i:03}")
}

struct SampleRow {
    id: String,
    modalities: Vec<(String, Vec<String>)>,
    label: u8,
}

fn generate_split(
    rng: &mut ChaCha20Rng,
    spec: &SynthSpec,
    split: &str,
    count: usize,
    key_token: &str,
    key_modality: usize,
) -> Vec<SampleRow> {
    let noise_pool: Vec<String> = (0..spec.vocab_size)
        .map(token)
        .filter(|t| t != key_token)
        .collect();
    (0..count)
        .map(|i| {
            let label = rng.gen_range(0..2) as u8;
            let mut modalities = Vec::with_capacity(spec.modalities);
            for m in 0..spec.modalities {
                let len = rng.gen_range(spec.len_min..=spec.len_max);
                let mut tokens: Vec<String> = (0..len)
                    .map(|_| noise_pool[rng.gen_range(0..noise_pool.len())].clone())
                    .collect();
                if m == key_modality && label == 1 {
                    let pos = rng.gen_range(0..tokens.len());
                    tokens[pos] = key_token.to_string();
                }
                modalities.push((modality_name(m), tokens));
            }
            SampleRow {
                id: format!("{split}-{i:05}"),
                modalities,
                label,
            }
        })
        .collect()
}

fn write_split(path: &Path, rows: &[SampleRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        let mods: serde_json::Map<String, serde_json::Value> = row
            .modalities
            .iter()
            .map(|(name, tokens)| (name.clone(), json!(tokens)))
            .collect();
        let line = json!({
            "id": row.id,
            "modalities": mods,
            "label": row.label,
        });
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Files written by one generator run.
pub struct SynthOutput {
    pub schema: PathBuf,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub config: PathBuf,
}

/// Generate the benchmark into `out_dir`: schema, three JSONL splits, the
/// manifest, and a ready-to-run config pointing at them.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let key_token = token(rng.gen_range(0..spec.vocab_size));
    let key_modality = 0;

    let schema = json!({
        "modalities": (0..spec.modalities)
            .map(|m| json!({"name": modality_name(m), "max_len": spec.len_max}))
            .collect::<Vec<_>>(),
        "task": spec.task,
        "num_classes": 1,
    });
    let schema_path = out_dir.join("schema.json");
    std::fs::write(&schema_path, format!("{schema}\n"))?;

    let mut positives = 0;
    let mut total = 0;
    let mut paths = Vec::new();
    for (split, count) in [("train", spec.train), ("valid", spec.valid), ("test", spec.test)] {
        let rows = generate_split(&mut rng, spec, split, count, &key_token, key_modality);
        if split == "train" {
            positives = rows.iter().filter(|r| r.label == 1).count();
            total = rows.len();
        }
        let path = out_dir.join(format!("{split}.jsonl"));
        write_split(&path, &rows)?;
        paths.push(path);
    }

    let manifest = Manifest {
        spec: spec.clone(),
        key_token,
        key_modality: modality_name(key_modality),
        modality_names: (0..spec.modalities).map(modality_name).collect(),
        positives,
        total,
        label_base_rate: positives as f64 / total.max(1) as f64,
    };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, format!("{}\n", serde_json::to_string(&manifest)?))?;

    let config = json!({
        "schema": "schema.json",
        "train": "train.jsonl",
        "valid": "valid.jsonl",
        "test": "test.jsonl",
        "model": {"similarity": "additive", "use_intra": true, "use_inter": true,
                  "use_residual": true, "d": 32, "h_mlp": 64},
        "optimizer": {"peak_lr": 0.005, "warmup_epochs": 2, "total_epochs": 12,
                      "batch_size": 8, "weight_decay": 0.01},
        "loss": {"wsce_mode": "full_bce", "use_class_weights": false},
        "seed": spec.seed,
        "out_dir": "run",
    });
    let config_path = out_dir.join("config.json");
    std::fs::write(&config_path, format!("{config}\n"))?;

    Ok(SynthOutput {
        schema: schema_path,
        train: paths[0].clone(),
        valid: paths[1].clone(),
        test: paths[2].clone(),
        manifest,
        manifest_path,
        config: config_path,
    })
}
