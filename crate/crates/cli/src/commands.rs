//! Command implementations behind the CLI surface.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use seqset_core::data::{
    build_vocab, erase_modality, load_jsonl_all, ModalityEntry, ModalitySchema, SequenceSet,
    TaskKind, Vocabulary,
};
use seqset_core::gradcheck::grad_check_by_param;
use seqset_core::metrics::{evaluate, MetricsReport};
use seqset_core::model::{
    init_params, init_params_in_range, load_checkpoint, param_group, save_checkpoint,
};
use seqset_core::mra::{forward, forward_on_tape, BoundModel, ModelConfig, Similarity};
use seqset_core::tape::Tape;
use seqset_core::tensor::Parameters;
use seqset_core::train::{
    class_weights, rmse_loss, train_epochs, wsce_loss, LossConfig, OptimizerConfig, TrainConfig,
    WsceMode,
};
use seqset_core::{Error, Result};

use crate::config::{load_vocab, save_vocab, RunConfig};
use crate::explain::{explain_sample, render_html, ExplainReport};
use crate::synth::{generate, SynthOutput, SynthSpec};

// ── train ───────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct EpochMetrics {
    epoch: usize,
    metrics: MetricsReport,
}

/// Train per the run config and write the run directory: resolved config,
/// schema copy, vocabulary, checkpoint, loss curve, and per-epoch
/// validation metrics when a validation split is declared.
pub fn cmd_train(run: &RunConfig) -> Result<PathBuf> {
    let schema = ModalitySchema::from_path(&run.schema)?;
    let train_path = run
        .train
        .as_deref()
        .ok_or_else(|| Error::Config("config declares no train dataset".into()))?;
    let train_samples = load_jsonl_all(train_path, &schema)?;
    let valid_samples = match &run.valid {
        Some(path) => Some(load_jsonl_all(path, &schema)?),
        None => None,
    };

    let vocab = build_vocab(train_samples.iter(), run.vocab_min_count)?;
    let model_cfg = run.model.to_model_config(&schema)?;
    let mut params = init_params(&model_cfg, &schema, vocab.len(), run.seed)?;

    let weights = if run.loss.use_class_weights && schema.task != TaskKind::Regression {
        let labels: Vec<Vec<u8>> = train_samples
            .iter()
            .map(|s| s.label.as_multi_hot())
            .collect::<Result<_>>()?;
        Some(class_weights(&labels)?)
    } else {
        None
    };
    let loss_cfg = LossConfig {
        task: schema.task,
        class_weights: weights,
        wsce_mode: run.loss.wsce_mode,
    };
    let train_cfg = TrainConfig {
        optimizer: OptimizerConfig {
            peak_lr: run.optimizer.peak_lr,
            warmup_epochs: run.optimizer.warmup_epochs,
            total_epochs: run.optimizer.total_epochs,
            weight_decay: run.optimizer.weight_decay,
        },
        batch_size: run.optimizer.batch_size,
        seed: run.seed,
        patience: 5,
    };

    std::fs::create_dir_all(&run.out_dir)?;
    let mut epoch_metrics: Vec<EpochMetrics> = Vec::new();
    let stats = train_epochs(
        &train_samples,
        &vocab,
        &schema,
        &model_cfg,
        &loss_cfg,
        &train_cfg,
        &mut params,
        |stat, current| {
            if let Some(valid) = &valid_samples {
                let report = evaluate(valid, &vocab, &schema, current, &model_cfg, run.threshold)?;
                epoch_metrics.push(EpochMetrics {
                    epoch: stat.epoch,
                    metrics: report,
                });
            }
            Ok(())
        },
    )?;

    std::fs::write(
        run.out_dir.join("config.json"),
        format!("{}\n", serde_json::to_string(run)?),
    )?;
    std::fs::copy(&run.schema, run.out_dir.join("schema.json"))?;
    save_vocab(run.out_dir.join("vocab.json"), &vocab)?;
    save_checkpoint(run.out_dir.join("checkpoint.json"), &model_cfg, &params)?;

    let mut curve = String::from("epoch,mean_loss,lr\n");
    for stat in &stats {
        writeln!(curve, "{},{},{}", stat.epoch, stat.mean_loss, stat.lr)
            .expect("string write cannot fail");
    }
    std::fs::write(run.out_dir.join("loss_curve.csv"), curve)?;

    if valid_samples.is_some() {
        std::fs::write(
            run.out_dir.join("valid_metrics.json"),
            format!("{}\n", serde_json::to_string(&epoch_metrics)?),
        )?;
    }
    Ok(run.out_dir.clone())
}

// ── shared evaluation context ───────────────────────────────────────

pub struct EvalContext {
    pub schema: ModalitySchema,
    pub vocab: Vocabulary,
    pub model_cfg: ModelConfig,
    pub params: Parameters,
}

/// Load schema + vocabulary + checkpoint for the read-only commands. The
/// checkpoint defaults to `<out_dir>/checkpoint.json`; the vocabulary is
/// its sibling `vocab.json`.
pub fn load_eval_context(run: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalContext> {
    let schema = ModalitySchema::from_path(&run.schema)?;
    let checkpoint_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run.out_dir.join("checkpoint.json"));
    let (model_cfg, params) = load_checkpoint(&checkpoint_path)?;
    if model_cfg.task != schema.task {
        return Err(Error::TaskMismatch(format!(
            "checkpoint was trained for a {} task, schema declares {}",
            model_cfg.task.name(),
            schema.task.name()
        )));
    }
    if model_cfg.output_dim != schema.output_dim() {
        return Err(Error::Dimension(format!(
            "checkpoint output width {} does not match the schema's {}",
            model_cfg.output_dim,
            schema.output_dim()
        )));
    }
    let vocab_path = checkpoint_path
        .parent()
        .unwrap_or(Path::new("."))
        .join("vocab.json");
    let vocab = load_vocab(&vocab_path)?;
    Ok(EvalContext {
        schema,
        vocab,
        model_cfg,
        params,
    })
}

fn load_split(run: &RunConfig, schema: &ModalitySchema, split: &str) -> Result<Vec<SequenceSet>> {
    load_jsonl_all(run.split_path(split)?, schema)
}

// ── eval / predict ──────────────────────────────────────────────────

pub fn cmd_eval(
    run: &RunConfig,
    checkpoint: Option<&Path>,
    split: &str,
    threshold: f64,
) -> Result<MetricsReport> {
    let ctx = load_eval_context(run, checkpoint)?;
    let samples = load_split(run, &ctx.schema, split)?;
    evaluate(&samples, &ctx.vocab, &ctx.schema, &ctx.params, &ctx.model_cfg, threshold)
}

#[derive(Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    /// Probabilities for classification tasks, the raw value for regression.
    pub prediction: Vec<f64>,
}

pub fn cmd_predict(
    run: &RunConfig,
    checkpoint: Option<&Path>,
    split: &str,
) -> Result<Vec<Prediction>> {
    let ctx = load_eval_context(run, checkpoint)?;
    let samples = load_split(run, &ctx.schema, split)?;
    samples
        .iter()
        .map(|s| {
            let out = forward(s, &ctx.vocab, &ctx.schema, &ctx.params, &ctx.model_cfg)?;
            let prediction = match ctx.model_cfg.task {
                TaskKind::Multilabel | TaskKind::Binary => out
                    .prediction
                    .iter()
                    .map(|z| 1.0 / (1.0 + (-z).exp()))
                    .collect(),
                TaskKind::Regression => out.prediction,
            };
            Ok(Prediction {
                id: s.id.clone(),
                prediction,
            })
        })
        .collect()
}

// ── explain ─────────────────────────────────────────────────────────

pub fn cmd_explain(
    run: &RunConfig,
    checkpoint: Option<&Path>,
    split: &str,
    ids: &[String],
    html_out: Option<&Path>,
) -> Result<Vec<ExplainReport>> {
    let ctx = load_eval_context(run, checkpoint)?;
    let samples = load_split(run, &ctx.schema, split)?;
    let mut reports = Vec::with_capacity(ids.len());
    for id in ids {
        let sample = samples
            .iter()
            .find(|s| s.id == *id)
            .ok_or_else(|| Error::Lookup(format!("no sample with id `{id}` in the {split} split")))?;
        reports.push(explain_sample(sample, &ctx.vocab, &ctx.schema, &ctx.params, &ctx.model_cfg)?);
    }
    if let Some(path) = html_out {
        std::fs::write(path, render_html(&reports))?;
    }
    Ok(reports)
}

// ── erase-eval ──────────────────────────────────────────────────────

/// Metric columns reported per task, in CSV order.
pub fn metric_columns(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Multilabel => &["f1_micro", "f1_macro", "f1_samples"],
        TaskKind::Binary => &["accuracy", "roc_auc"],
        TaskKind::Regression => &["rmse", "mape"],
    }
}

pub fn metric_value(report: &MetricsReport, name: &str) -> Option<f64> {
    match name {
        "f1_micro" => report.f1_micro,
        "f1_macro" => report.f1_macro,
        "f1_samples" => report.f1_samples,
        "accuracy" => report.accuracy,
        "roc_auc" => report.roc_auc,
        "rmse" => report.rmse,
        "mape" => report.mape,
        _ => None,
    }
}

#[derive(Debug)]
pub struct EraseRow {
    /// `none` for the unmodified baseline.
    pub erased: String,
    pub metrics: Vec<Option<f64>>,
    pub deltas: Vec<Option<f64>>,
}

#[derive(Debug)]
pub struct EraseTable {
    pub columns: Vec<String>,
    pub rows: Vec<EraseRow>,
}

impl EraseTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("erased");
        for c in &self.columns {
            write!(out, ",{c}").unwrap();
        }
        for c in &self.columns {
            write!(out, ",delta_{c}").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.erased);
            for v in row.metrics.iter().chain(&row.deltas) {
                match v {
                    Some(x) => write!(out, ",{x}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluate unmodified, then once per modality with that modality erased
/// from every sample. The baseline row equals `cmd_eval` on the same data.
pub fn cmd_erase_eval(
    run: &RunConfig,
    checkpoint: Option<&Path>,
    split: &str,
    threshold: f64,
) -> Result<EraseTable> {
    let ctx = load_eval_context(run, checkpoint)?;
    if ctx.schema.modality_count() < 2 {
        return Err(Error::Config(
            "erase-eval needs at least two modalities in the schema".into(),
        ));
    }
    let samples = load_split(run, &ctx.schema, split)?;
    let columns: Vec<String> = metric_columns(ctx.schema.task)
        .iter()
        .map(|c| c.to_string())
        .collect();

    let baseline = evaluate(&samples, &ctx.vocab, &ctx.schema, &ctx.params, &ctx.model_cfg, threshold)?;
    let base_values: Vec<Option<f64>> = columns.iter().map(|c| metric_value(&baseline, c)).collect();
    let mut rows = vec![EraseRow {
        erased: "none".into(),
        metrics: base_values.clone(),
        deltas: base_values.iter().map(|v| v.map(|_| 0.0)).collect(),
    }];

    for name in ctx.schema.names() {
        let erased: Vec<SequenceSet> = samples
            .iter()
            .map(|s| erase_modality(s, name))
            .collect::<Result<_>>()?;
        let report = evaluate(&erased, &ctx.vocab, &ctx.schema, &ctx.params, &ctx.model_cfg, threshold)?;
        let values: Vec<Option<f64>> = columns.iter().map(|c| metric_value(&report, c)).collect();
        let deltas = values
            .iter()
            .zip(&base_values)
            .map(|(v, b)| match (v, b) {
                (Some(v), Some(b)) => Some(v - b),
                _ => None,
            })
            .collect();
        rows.push(EraseRow {
            erased: name.to_string(),
            metrics: values,
            deltas,
        });
    }
    Ok(EraseTable { columns, rows })
}

// ── ablate ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MraVariant {
    EncoderOnly,
    Intra,
    Inter,
    IntraInter,
}

impl MraVariant {
    pub const ALL: [MraVariant; 4] = [
        MraVariant::EncoderOnly,
        MraVariant::Intra,
        MraVariant::Inter,
        MraVariant::IntraInter,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MraVariant::EncoderOnly => "encoder_only",
            MraVariant::Intra => "intra",
            MraVariant::Inter => "inter",
            MraVariant::IntraInter => "intra_inter",
        }
    }

    pub fn flags(&self) -> (bool, bool) {
        match self {
            MraVariant::EncoderOnly => (false, false),
            MraVariant::Intra => (true, false),
            MraVariant::Inter => (false, true),
            MraVariant::IntraInter => (true, true),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AblationCell {
    pub variant: MraVariant,
    /// `None` marks axes that are inert for this variant.
    pub similarity: Option<Similarity>,
    pub residual: Option<bool>,
}

/// Expand the grid and deduplicate: similarity and residual flags are inert
/// without any MRA stage, so every encoder-only cell collapses into one
/// run. Returns the raw cell count alongside the runs actually executed.
pub fn ablation_cells(similarities: &[Similarity], residuals: &[bool]) -> (usize, Vec<AblationCell>) {
    let raw = MraVariant::ALL.len() * similarities.len() * residuals.len();
    let mut cells = Vec::new();
    for variant in MraVariant::ALL {
        if variant == MraVariant::EncoderOnly {
            cells.push(AblationCell {
                variant,
                similarity: None,
                residual: None,
            });
            continue;
        }
        for sim in similarities {
            for res in residuals {
                cells.push(AblationCell {
                    variant,
                    similarity: Some(*sim),
                    residual: Some(*res),
                });
            }
        }
    }
    (raw, cells)
}

#[derive(Debug)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub metrics: Vec<Option<f64>>,
}

#[derive(Debug)]
pub struct AblationTable {
    pub columns: Vec<String>,
    pub rows: Vec<AblationRow>,
    pub raw_cells: usize,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,similarity,residual");
        for c in &self.columns {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            let sim = match row.cell.similarity {
                Some(Similarity::Additive) => "additive",
                Some(Similarity::ScaledDot) => "scaled_dot",
                None => "-",
            };
            let res = match row.cell.residual {
                Some(true) => "on",
                Some(false) => "off",
                None => "-",
            };
            write!(out, "{},{},{}", row.cell.variant.name(), sim, res).unwrap();
            for v in &row.metrics {
                match v {
                    Some(x) => write!(out, ",{x}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Train and evaluate every grid cell from the same seed, so the encoder
/// initialization is shared across variants.
pub fn cmd_ablate(
    run: &RunConfig,
    similarities: &[Similarity],
    residuals: &[bool],
) -> Result<AblationTable> {
    let schema = ModalitySchema::from_path(&run.schema)?;
    let train_path = run
        .train
        .as_deref()
        .ok_or_else(|| Error::Config("ablation needs a train dataset".into()))?;
    let train_samples = load_jsonl_all(train_path, &schema)?;
    let eval_split = if run.test.is_some() {
        "test"
    } else if run.valid.is_some() {
        "valid"
    } else {
        return Err(Error::Config("ablation needs a test or valid dataset".into()));
    };
    let eval_samples = load_split(run, &schema, eval_split)?;
    let vocab = build_vocab(train_samples.iter(), run.vocab_min_count)?;
    let columns: Vec<String> = metric_columns(schema.task).iter().map(|c| c.to_string()).collect();

    let (raw_cells, cells) = ablation_cells(similarities, residuals);
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let (use_intra, use_inter) = cell.variant.flags();
        let model_cfg = ModelConfig {
            similarity: cell.similarity.unwrap_or(Similarity::Additive),
            use_intra,
            use_inter,
            use_residual: cell.residual.unwrap_or(true),
            use_mixer: run.model.use_mixer,
            d: run.model.d,
            h_mlp: run.model.h_mlp,
            output_dim: schema.output_dim(),
            task: schema.task,
        };
        let mut params = init_params(&model_cfg, &schema, vocab.len(), run.seed)?;
        let loss_cfg = LossConfig {
            task: schema.task,
            class_weights: None,
            wsce_mode: run.loss.wsce_mode,
        };
        let train_cfg = TrainConfig {
            optimizer: OptimizerConfig {
                peak_lr: run.optimizer.peak_lr,
                warmup_epochs: run.optimizer.warmup_epochs,
                total_epochs: run.optimizer.total_epochs,
                weight_decay: run.optimizer.weight_decay,
            },
            batch_size: run.optimizer.batch_size,
            seed: run.seed,
            patience: 5,
        };
        train_epochs(
            &train_samples,
            &vocab,
            &schema,
            &model_cfg,
            &loss_cfg,
            &train_cfg,
            &mut params,
            |_, _| Ok(()),
        )?;
        let report = evaluate(&eval_samples, &vocab, &schema, &params, &model_cfg, run.threshold)?;
        rows.push(AblationRow {
            cell,
            metrics: columns.iter().map(|c| metric_value(&report, c)).collect(),
        });
    }
    Ok(AblationTable {
        columns,
        rows,
        raw_cells,
    })
}

// ── gradcheck ───────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub d: usize,
    pub modalities: usize,
    pub max_len: usize,
    pub classes: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub threshold: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            d: 8,
            modalities: 3,
            max_len: 5,
            classes: 2,
            seed: 7,
            epsilon: 1e-4,
            threshold: 1e-4,
        }
    }
}

#[derive(Debug)]
pub struct GradCheckCombo {
    pub similarity: Similarity,
    pub residual: bool,
    pub loss: &'static str,
    /// Max relative error per parameter group.
    pub groups: IndexMap<String, f64>,
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub combos: Vec<GradCheckCombo>,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.combos
            .iter()
            .flat_map(|c| c.groups.values())
            .fold(0.0, |acc, e| acc.max(*e))
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.threshold
    }
}

/// Process exit code for a gradient-check outcome: a failed check is a
/// numerical failure.
pub fn gradcheck_exit_code(report: &GradCheckReport) -> u8 {
    if report.passed() {
        0
    } else {
        3
    }
}

/// Deterministic toy sample for the checker: seeded lengths with one
/// modality left empty when there are at least two.
fn gradcheck_fixture(
    opts: &GradCheckOptions,
    task: TaskKind,
) -> Result<(ModalitySchema, Vocabulary, SequenceSet)> {
    use rand::Rng;
    use rand::SeedableRng;
    let num_classes = if task == TaskKind::Multilabel { opts.classes.max(1) } else { 1 };
    let schema = ModalitySchema::new(
        (0..opts.modalities)
            .map(|m| ModalityEntry {
                name: format!("m{}", m + 1),
                max_len: opts.max_len,
            })
            .collect(),
        task,
        num_classes,
    )?;
    let mut vocab = Vocabulary::new();
    let pool: Vec<String> = (0..16).map(|i| format!("tok{i:02}")).collect();
    for t in &pool {
        vocab.add_token(t);
    }
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(opts.seed);
    let empty_at = if opts.modalities >= 2 {
        Some(rng.gen_range(0..opts.modalities))
    } else {
        None
    };
    let mut map = std::collections::BTreeMap::new();
    for (m, name) in schema.names().enumerate() {
        let len = if Some(m) == empty_at {
            0
        } else {
            rng.gen_range(1..=opts.max_len)
        };
        let tokens: Vec<String> = (0..len)
            .map(|_| pool[rng.gen_range(0..pool.len())].clone())
            .collect();
        map.insert(name.to_string(), tokens);
    }
    let label = match task {
        TaskKind::Multilabel => {
            let mut bits = vec![0u8; num_classes];
            bits[0] = 1;
            seqset_core::data::Label::MultiHot(bits)
        }
        TaskKind::Binary => seqset_core::data::Label::Binary(1),
        TaskKind::Regression => seqset_core::data::Label::Real(0.75),
    };
    let sample = SequenceSet::new("gradcheck", map, label, &schema)?;
    Ok((schema, vocab, sample))
}

/// Run the finite-difference check of the full model for both similarity
/// kinds, both residual settings, and both losses; report the max relative
/// error per parameter group.
pub fn cmd_gradcheck(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut combos = Vec::new();
    for (task, loss_name) in [(TaskKind::Multilabel, "wsce"), (TaskKind::Regression, "rmse")] {
        let (schema, vocab, sample) = gradcheck_fixture(opts, task)?;
        for similarity in [Similarity::Additive, Similarity::ScaledDot] {
            for residual in [true, false] {
                let config = ModelConfig {
                    similarity,
                    use_intra: true,
                    use_inter: true,
                    use_residual: residual,
                    use_mixer: false,
                    d: opts.d,
                    h_mlp: opts.d,
                    output_dim: schema.output_dim(),
                    task,
                };
                let mut params =
                    init_params_in_range(&config, &schema, vocab.len(), opts.seed, 0.8)?;
                let label_bits = match task {
                    TaskKind::Multilabel => sample.label.as_multi_hot()?,
                    _ => vec![],
                };
                let f = |p: &Parameters, tape: &mut Tape| {
                    let bound = BoundModel::bind(tape, p, &schema, &config)?;
                    let vars = forward_on_tape(tape, &sample, &vocab, &schema, &bound, &config)?;
                    let stacked = tape.concat_rows(&[vars.prediction])?;
                    match task {
                        TaskKind::Regression => rmse_loss(tape, stacked, &[0.75]),
                        _ => {
                            let w = vec![1.0; label_bits.len()];
                            wsce_loss(tape, stacked, std::slice::from_ref(&label_bits), &w, WsceMode::FullBce)
                        }
                    }
                };
                let by_param = grad_check_by_param(&f, &mut params, opts.epsilon)?;
                let mut groups: IndexMap<String, f64> = IndexMap::new();
                for (name, err) in by_param {
                    let entry = groups.entry(param_group(&name)).or_insert(0.0);
                    *entry = entry.max(err);
                }
                combos.push(GradCheckCombo {
                    similarity,
                    residual,
                    loss: loss_name,
                    groups,
                });
            }
        }
    }
    Ok(GradCheckReport {
        combos,
        threshold: opts.threshold,
    })
}

// ── synth ───────────────────────────────────────────────────────────

pub fn cmd_synth(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput> {
    generate(spec, out_dir)
}

// ── helpers for the binary ──────────────────────────────────────────

pub fn metrics_to_json(report: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn predictions_to_jsonl(predictions: &[Prediction]) -> Result<String> {
    let mut out = String::new();
    for p in predictions {
        writeln!(out, "{}", serde_json::to_string(p)?).expect("string write cannot fail");
    }
    Ok(out)
}

pub fn reports_to_json(reports: &[ExplainReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

pub fn gradcheck_to_text(report: &GradCheckReport) -> String {
    let mut out = String::new();
    for combo in &report.combos {
        let sim = match combo.similarity {
            Similarity::Additive => "additive",
            Similarity::ScaledDot => "scaled_dot",
        };
        let res = if combo.residual { "on" } else { "off" };
        for (group, err) in &combo.groups {
            let verdict = if *err < report.threshold { "ok" } else { "FAIL" };
            writeln!(
                out,
                "loss={} similarity={} residual={} group={} max_rel_error={:.3e} {}",
                combo.loss, sim, res, group, err, verdict
            )
            .expect("string write cannot fail");
        }
    }
    writeln!(
        out,
        "worst={:.3e} threshold={:.1e} => {}",
        report.worst(),
        report.threshold,
        if report.passed() { "PASS" } else { "FAIL" }
    )
    .expect("string write cannot fail");
    out
}

pub fn synth_summary(out: &SynthOutput) -> String {
    format!(
        "generated {} train / {} valid / {} test samples; key token `{}` in modality `{}` (base rate {:.3})\nmanifest: {}\nconfig: {}\n",
        out.manifest.spec.train,
        out.manifest.spec.valid,
        out.manifest.spec.test,
        out.manifest.key_token,
        out.manifest.key_modality,
        out.manifest.label_base_rate,
        out.manifest_path.display(),
        out.config.display(),
    )
}
