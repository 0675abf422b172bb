//! Hierarchical modality residual attention and the prediction head.
//!
//! The stack is a set function over the per-modality hidden sequences:
//! token-level attention inside each modality (IntraMRA, per-modality
//! parameters), modality-level attention over the row-sums of the intra
//! outputs (InterMRA, shared parameters), mean pooling over all real tokens,
//! and a two-layer tanh perceptron. Residual connections add the attended
//! representation back onto its source. Empty modalities carry exactly zero
//! inter weight: they are excluded from the softmax support rather than
//! attended as zero summaries.

use serde::{Deserialize, Serialize};

use crate::data::{encode, ModalitySchema, SequenceSet, TaskKind, Vocabulary};
use crate::encoder::{encode_hidden_on, EncodedModality, EncoderVars, HiddenSequence};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Parameters;

pub const P_INTER_W: &str = "inter.W";
pub const P_INTER_Q: &str = "inter.q";
pub const P_HEAD_W1: &str = "head.w1";
pub const P_HEAD_B1: &str = "head.b1";
pub const P_HEAD_W2: &str = "head.w2";
pub const P_HEAD_B2: &str = "head.b2";

pub fn intra_w_name(modality: &str) -> String {
    format!("intra.W.{modality}")
}

pub fn intra_q_name(modality: &str) -> String {
    format!("intra.q.{modality}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Additive,
    ScaledDot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub similarity: Similarity,
    pub use_intra: bool,
    pub use_inter: bool,
    pub use_residual: bool,
    #[serde(default)]
    pub use_mixer: bool,
    pub d: usize,
    pub h_mlp: usize,
    pub output_dim: usize,
    pub task: TaskKind,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h_mlp == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive: d={}, h_mlp={}, output_dim={}",
                self.d, self.h_mlp, self.output_dim
            )));
        }
        match self.task {
            TaskKind::Binary | TaskKind::Regression if self.output_dim != 1 => Err(Error::Config(
                format!("{} task requires output_dim 1", self.task.name()),
            )),
            _ => Ok(()),
        }
    }
}

/// Attention weights captured during one forward pass. Each stored
/// distribution is non-negative and sums to one over its support; empty
/// modalities hold an empty intra list and an inter weight of exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    /// Per-modality token-level weights, canonical order.
    pub intra: Vec<(String, Vec<f64>)>,
    /// Modality-level weights, canonical order, zero at empty modalities.
    pub inter: Vec<f64>,
    /// Which modalities were empty for this sample.
    pub empty: Vec<bool>,
}

/// One modality flowing through the stack: its real-token count and its
/// current states (`None` when empty).
pub type StagedModality = (usize, Option<Var>);

/// Attention parameters bound on a tape.
#[derive(Debug, Clone)]
pub struct MraVars {
    /// `(W, q)` per modality, canonical order; present iff intra is enabled.
    pub intra: Option<Vec<(Var, Var)>>,
    /// Shared `(W, q)`; present iff inter is enabled.
    pub inter: Option<(Var, Var)>,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MraVars {
    pub fn bind(
        tape: &mut Tape,
        params: &Parameters,
        schema: &ModalitySchema,
        config: &ModelConfig,
    ) -> Result<Self> {
        let intra = if config.use_intra {
            let mut pairs = Vec::with_capacity(schema.modality_count());
            for name in schema.names() {
                let w = tape.param(params, &intra_w_name(name))?;
                let q = tape.param(params, &intra_q_name(name))?;
                pairs.push((w, q));
            }
            Some(pairs)
        } else {
            None
        };
        let inter = if config.use_inter {
            Some((tape.param(params, P_INTER_W)?, tape.param(params, P_INTER_Q)?))
        } else {
            None
        };
        Ok(MraVars { intra, inter })
    }
}

impl HeadVars {
    pub fn bind(tape: &mut Tape, params: &Parameters) -> Result<Self> {
        Ok(HeadVars {
            w1: tape.param(params, P_HEAD_W1)?,
            b1: tape.param(params, P_HEAD_B1)?,
            w2: tape.param(params, P_HEAD_W2)?,
            b2: tape.param(params, P_HEAD_B2)?,
        })
    }
}

/// Unnormalized attention scores for the rows of `h`.
///
/// Additive: `score_t = q^T tanh(W H_t)`. Scaled dot-product:
/// `score_t = (q^T W H_t) / sqrt(d)`, with the same parameter shapes.
pub fn similarity(tape: &mut Tape, h: Var, w: Var, q: Var, kind: Similarity) -> Result<Var> {
    let wt = tape.transpose(w)?;
    match kind {
        Similarity::Additive => {
            // rows of h @ W^T are (W H_t)^T
            let pre = tape.matmul(h, wt)?;
            let act = tape.tanh(pre);
            tape.matvec(act, q)
        }
        Similarity::ScaledDot => {
            let d = tape.shape(h)[1];
            let u = tape.matvec(wt, q)?;
            let scores = tape.matvec(h, u)?;
            Ok(tape.scale_const(scores, 1.0 / (d as f64).sqrt()))
        }
    }
}

/// Softmax-normalized attention over all rows of `h`.
pub fn attention_weights(tape: &mut Tape, h: Var, w: Var, q: Var, kind: Similarity) -> Result<Var> {
    let scores = similarity(tape, h, w, q, kind)?;
    let mask = vec![true; tape.shape(scores)[0]];
    tape.masked_softmax(scores, &mask)
}

/// Token-level attention within one modality: each row is scaled by its
/// weight, plus the source row when the residual connection is on. An empty
/// modality passes through with empty weights.
pub fn intra_mra(
    tape: &mut Tape,
    states: Option<Var>,
    w: Var,
    q: Var,
    config: &ModelConfig,
) -> Result<(Option<Var>, Vec<f64>)> {
    let Some(h) = states else {
        return Ok((None, Vec::new()));
    };
    let a = attention_weights(tape, h, w, q, config.similarity)?;
    let weights = tape.values(a).to_vec();
    let scaled = tape.scale_rows(h, a)?;
    let out = if config.use_residual { tape.add(scaled, h)? } else { scaled };
    Ok((Some(out), weights))
}

/// Row-sum summaries `H'` of the intra outputs, one row per modality; an
/// empty modality contributes a zero row and a false mask entry.
pub fn modality_summaries(
    tape: &mut Tape,
    intra_outputs: &[StagedModality],
    d: usize,
) -> Result<(Var, Vec<bool>)> {
    let mut rows = Vec::with_capacity(intra_outputs.len());
    let mut mask = Vec::with_capacity(intra_outputs.len());
    for (_, states) in intra_outputs {
        match states {
            Some(h) => {
                rows.push(tape.sum_rows(*h)?);
                mask.push(true);
            }
            None => {
                rows.push(tape.constant(vec![d], vec![0.0; d])?);
                mask.push(false);
            }
        }
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::DegenerateSample("every modality is empty".into()));
    }
    let h_prime = tape.concat_rows(&rows)?;
    Ok((h_prime, mask))
}

/// Modality-level attention: softmax over the non-empty summaries, then
/// every row of modality `m` scaled by its weight (plus residual). The
/// returned weight vector has exact zeros at empty modalities.
pub fn inter_mra(
    tape: &mut Tape,
    intra_outputs: &[StagedModality],
    h_prime: Var,
    mask: &[bool],
    w: Var,
    q: Var,
    config: &ModelConfig,
) -> Result<(Vec<StagedModality>, Vec<f64>)> {
    let scores = similarity(tape, h_prime, w, q, config.similarity)?;
    let a = tape.masked_softmax(scores, mask)?;
    let weights = tape.values(a).to_vec();
    let mut outputs = Vec::with_capacity(intra_outputs.len());
    for (m, (len, states)) in intra_outputs.iter().enumerate() {
        let out = match states {
            Some(h) => {
                let s = tape.slice_elem(a, m)?;
                let scaled = tape.scale_by_scalar(s, *h)?;
                Some(if config.use_residual { tape.add(scaled, *h)? } else { scaled })
            }
            None => None,
        };
        outputs.push((*len, out));
    }
    Ok((outputs, weights))
}

/// Mean-pool every real token row across modalities and apply the two-layer
/// tanh head. Returns `(pooled h, prediction)`.
pub fn pool_and_predict(
    tape: &mut Tape,
    outputs: &[StagedModality],
    head: &HeadVars,
) -> Result<(Var, Var)> {
    let parts: Vec<Var> = outputs.iter().filter_map(|(_, s)| *s).collect();
    if parts.is_empty() {
        return Err(Error::DegenerateSample("no token rows to pool".into()));
    }
    let all = tape.concat_rows(&parts)?;
    let pooled = tape.mean_rows(all)?;
    let z1 = tape.matvec(head.w1, pooled)?;
    let z1b = tape.add(z1, head.b1)?;
    let hidden = tape.tanh(z1b);
    let z2 = tape.matvec(head.w2, hidden)?;
    let pred = tape.add(z2, head.b2)?;
    Ok((pooled, pred))
}

/// Everything the model binds onto one tape. Binding once per tape lets a
/// whole batch share the parameter leaves.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: EncoderVars,
    pub mra: MraVars,
    pub head: HeadVars,
}

impl BoundModel {
    pub fn bind(
        tape: &mut Tape,
        params: &Parameters,
        schema: &ModalitySchema,
        config: &ModelConfig,
    ) -> Result<Self> {
        Ok(BoundModel {
            encoder: EncoderVars::bind(tape, params)?,
            mra: MraVars::bind(tape, params, schema, config)?,
            head: HeadVars::bind(tape, params)?,
        })
    }
}

/// Output of one forward pass with values extracted from the tape.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub prediction: Vec<f64>,
    pub pooled: Vec<f64>,
    pub record: AttentionRecord,
}

/// Tape-level handles from one forward pass, for building losses on top.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub prediction: Var,
    pub pooled: Var,
    pub record: AttentionRecord,
}

/// Run the attention stack over encoded modalities. Disabled stages pass
/// the states through unchanged but still record uniform weights so that
/// explanations exist for every configuration.
pub fn mra_stack(
    tape: &mut Tape,
    encoded: &[EncodedModality],
    mra: &MraVars,
    head: &HeadVars,
    config: &ModelConfig,
) -> Result<ForwardVars> {
    let mut intra_record = Vec::with_capacity(encoded.len());
    let mut stage: Vec<StagedModality> = Vec::with_capacity(encoded.len());

    for (m, enc) in encoded.iter().enumerate() {
        let (out, weights) = match (&mra.intra, enc.states) {
            (Some(pairs), Some(_)) => {
                let (w, q) = pairs[m];
                intra_mra(tape, enc.states, w, q, config)?
            }
            (None, Some(states)) => {
                // bypass: identity, uniform weights
                (Some(states), vec![1.0 / enc.len as f64; enc.len])
            }
            (_, None) => (None, Vec::new()),
        };
        intra_record.push((enc.modality.clone(), weights));
        stage.push((enc.len, out));
    }

    let empty: Vec<bool> = stage.iter().map(|(_, s)| s.is_none()).collect();
    let nonempty_count = empty.iter().filter(|e| !**e).count();
    if nonempty_count == 0 {
        return Err(Error::DegenerateSample("every modality is empty".into()));
    }

    let inter_weights;
    if let Some((w, q)) = mra.inter {
        let (h_prime, mask) = modality_summaries(tape, &stage, config.d)?;
        let (outputs, weights) = inter_mra(tape, &stage, h_prime, &mask, w, q, config)?;
        stage = outputs;
        inter_weights = weights;
    } else {
        // bypass: identity, uniform weights over non-empty modalities
        inter_weights = empty
            .iter()
            .map(|e| if *e { 0.0 } else { 1.0 / nonempty_count as f64 })
            .collect();
    }

    let (pooled, prediction) = pool_and_predict(tape, &stage, head)?;
    Ok(ForwardVars {
        prediction,
        pooled,
        record: AttentionRecord {
            intra: intra_record,
            inter: inter_weights,
            empty,
        },
    })
}

/// Forward pass for one sample on a shared tape, through the toy encoder.
pub fn forward_on_tape(
    tape: &mut Tape,
    sample: &SequenceSet,
    vocab: &Vocabulary,
    schema: &ModalitySchema,
    bound: &BoundModel,
    config: &ModelConfig,
) -> Result<ForwardVars> {
    let unified = encode(sample, vocab, schema)?;
    let encoded = encode_hidden_on(tape, &unified, &bound.encoder)?;
    mra_stack(tape, &encoded, &bound.mra, &bound.head, config)
}

/// Standalone forward pass: prediction, pooled vector, and the attention
/// record. Pure given parameters and deterministic for a given sample.
pub fn forward(
    sample: &SequenceSet,
    vocab: &Vocabulary,
    schema: &ModalitySchema,
    params: &Parameters,
    config: &ModelConfig,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, params, schema, config)?;
    let vars = forward_on_tape(&mut tape, sample, vocab, schema, &bound, config)?;
    Ok(ForwardOutput {
        prediction: tape.values(vars.prediction).to_vec(),
        pooled: tape.values(vars.pooled).to_vec(),
        record: vars.record,
    })
}

/// Forward pass over hidden states from a frozen encoder. Gradients stop at
/// the states; only the attention stack and head train.
pub fn forward_precomputed(
    hidden: &[HiddenSequence],
    schema: &ModalitySchema,
    params: &Parameters,
    config: &ModelConfig,
) -> Result<ForwardOutput> {
    for h in hidden {
        let (_, cols) = h.states.dims2()?;
        if cols != config.d {
            return Err(Error::Dimension(format!(
                "hidden states for `{}` have width {cols}, model d = {}",
                h.modality, config.d
            )));
        }
    }
    let mut tape = Tape::new();
    let mra = MraVars::bind(&mut tape, params, schema, config)?;
    let head = HeadVars::bind(&mut tape, params)?;
    let mut encoded = Vec::with_capacity(schema.modality_count());
    for name in schema.names() {
        let states = hidden.iter().find(|h| h.modality == name);
        let (len, var) = match states {
            Some(h) => {
                let l = h.states.dims2()?.0;
                if l == 0 {
                    (0, None)
                } else {
                    (l, Some(tape.leaf(&h.states)))
                }
            }
            None => (0, None),
        };
        encoded.push(EncodedModality {
            modality: name.to_string(),
            len,
            states: var,
        });
    }
    let vars = mra_stack(&mut tape, &encoded, &mra, &head, config)?;
    Ok(ForwardOutput {
        prediction: tape.values(vars.prediction).to_vec(),
        pooled: tape.values(vars.pooled).to_vec(),
        record: vars.record,
    })
}
