//! Run configuration: one JSON document that names the schema, the dataset
//! splits, the model and optimizer settings, and the output directory.
//! Relative paths are resolved against the config file's directory, so a
//! generated benchmark directory is runnable from anywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seqset_core::data::{ModalitySchema, Vocabulary};
use seqset_core::mra::{ModelConfig, Similarity};
use seqset_core::train::WsceMode;
use seqset_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_similarity")]
    pub similarity: Similarity,
    #[serde(default = "default_true")]
    pub use_intra: bool,
    #[serde(default = "default_true")]
    pub use_inter: bool,
    #[serde(default = "default_true")]
    pub use_residual: bool,
    #[serde(default)]
    pub use_mixer: bool,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_h_mlp")]
    pub h_mlp: usize,
}

fn default_similarity() -> Similarity {
    Similarity::Additive
}

fn default_true() -> bool {
    true
}

fn default_d() -> usize {
    32
}

fn default_h_mlp() -> usize {
    64
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            similarity: Similarity::Additive,
            use_intra: true,
            use_inter: true,
            use_residual: true,
            use_mixer: false,
            d: default_d(),
            h_mlp: default_h_mlp(),
        }
    }
}

impl ModelSection {
    /// Complete the model config with the task-derived output width.
    pub fn to_model_config(&self, schema: &ModalitySchema) -> Result<ModelConfig> {
        let config = ModelConfig {
            similarity: self.similarity,
            use_intra: self.use_intra,
            use_inter: self.use_inter,
            use_residual: self.use_residual,
            use_mixer: self.use_mixer,
            d: self.d,
            h_mlp: self.h_mlp,
            output_dim: schema.output_dim(),
            task: schema.task,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerSection {
    #[serde(default = "default_peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_total")]
    pub total_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
}

fn default_peak_lr() -> f64 {
    0.001
}

fn default_warmup() -> usize {
    5
}

fn default_total() -> usize {
    25
}

fn default_batch() -> usize {
    8
}

fn default_decay() -> f64 {
    0.01
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            peak_lr: default_peak_lr(),
            warmup_epochs: default_warmup(),
            total_epochs: default_total(),
            batch_size: default_batch(),
            weight_decay: default_decay(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct LossSection {
    #[serde(default = "default_wsce_mode")]
    pub wsce_mode: WsceMode,
    /// Weight the positive term by inverse class frequency from the
    /// training split.
    #[serde(default)]
    pub use_class_weights: bool,
}

fn default_wsce_mode() -> WsceMode {
    WsceMode::FullBce
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema: PathBuf,
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub valid: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default = "default_min_count")]
    pub vocab_min_count: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn default_min_count() -> usize {
    1
}

fn default_threshold() -> f64 {
    0.5
}

impl RunConfig {
    /// Parse a config file and resolve its relative paths against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.schema = resolve(base, &config.schema);
        config.train = config.train.map(|p| resolve(base, &p));
        config.valid = config.valid.as_ref().map(|p| resolve(base, p));
        config.test = config.test.as_ref().map(|p| resolve(base, p));
        config.out_dir = resolve(base, &config.out_dir);
        Ok(config)
    }

    pub fn split_path(&self, split: &str) -> Result<&Path> {
        let path = match split {
            "train" => self.train.as_deref(),
            "valid" => self.valid.as_deref(),
            "test" => self.test.as_deref(),
            other => {
                return Err(Error::Config(format!(
                    "unknown split `{other}` (expected train, valid, or test)"
                )))
            }
        };
        path.ok_or_else(|| Error::Config(format!("config does not declare a `{split}` dataset")))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

/// Persist the vocabulary next to a checkpoint so that evaluation maps
/// tokens to the same ids training used.
pub fn save_vocab(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
    let file = VocabFile {
        tokens: vocab.tokens().to_vec(),
    };
    let out = std::fs::File::create(path.as_ref())?;
    let mut w = std::io::BufWriter::new(out);
    serde_json::to_writer(&mut w, &file)?;
    use std::io::Write;
    writeln!(w)?;
    Ok(())
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
        Error::Ingestion(format!("cannot read vocabulary {}: {e}", path.as_ref().display()))
    })?;
    let file: VocabFile = serde_json::from_str(&text)?;
    Vocabulary::from_tokens(file.tokens)
}
