//! Toy trainable encoder and precomputed-hidden-state loader.
//!
//! Both sources produce per-modality hidden sequences `H^(m)` of shape
//! `l_m x d`. The toy encoder is embedding + learned positional lookup with
//! an optional single self-attention + feed-forward mixer block over the
//! whole unified sequence; it stands in for a frozen pre-trained encoder.
//! Hidden states for the special `[C]`/`[S]` positions are computed but the
//! per-modality slices cover real tokens only, so specials never reach the
//! attention stack or the pooler.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::UnifiedSequence;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Parameters, Tensor};

pub const P_EMBEDDING: &str = "embedding";
pub const P_POSITIONAL: &str = "positional";
pub const P_MIXER_WQ: &str = "mixer.wq";
pub const P_MIXER_WK: &str = "mixer.wk";
pub const P_MIXER_WV: &str = "mixer.wv";
pub const P_MIXER_WO: &str = "mixer.wo";
pub const P_MIXER_FF1: &str = "mixer.ff1";
pub const P_MIXER_B1: &str = "mixer.b1";
pub const P_MIXER_FF2: &str = "mixer.ff2";
pub const P_MIXER_B2: &str = "mixer.b2";

/// Hidden states of one modality as plain values; `states` has shape
/// `[l_m, d]` and `l_m` may be zero for an empty modality.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSequence {
    pub modality: String,
    pub states: Tensor,
}

/// Per-modality hidden states on a tape. `states` is `None` when the
/// modality is empty for this sample.
#[derive(Debug, Clone)]
pub struct EncodedModality {
    pub modality: String,
    pub len: usize,
    pub states: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct MixerVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ff1: Var,
    pub b1: Var,
    pub ff2: Var,
    pub b2: Var,
}

/// Toy-encoder parameters bound onto a tape: the embedding table, the
/// learned positional table, and the optional mixer block.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub embedding: Var,
    pub positional: Var,
    pub mixer: Option<MixerVars>,
}

impl EncoderVars {
    /// Bind the encoder parameters from a collection. The mixer is bound iff
    /// its parameters are present.
    pub fn bind(tape: &mut Tape, params: &Parameters) -> Result<Self> {
        let embedding = tape.param(params, P_EMBEDDING)?;
        let positional = tape.param(params, P_POSITIONAL)?;
        let mixer = if params.contains(P_MIXER_WQ) {
            Some(MixerVars {
                wq: tape.param(params, P_MIXER_WQ)?,
                wk: tape.param(params, P_MIXER_WK)?,
                wv: tape.param(params, P_MIXER_WV)?,
                wo: tape.param(params, P_MIXER_WO)?,
                ff1: tape.param(params, P_MIXER_FF1)?,
                b1: tape.param(params, P_MIXER_B1)?,
                ff2: tape.param(params, P_MIXER_FF2)?,
                b2: tape.param(params, P_MIXER_B2)?,
            })
        } else {
            None
        };
        Ok(EncoderVars {
            embedding,
            positional,
            mixer,
        })
    }
}

/// Single-head self-attention over the whole sequence plus a tanh
/// feed-forward, both with residual connections.
fn mixer_block(tape: &mut Tape, x: Var, m: &MixerVars) -> Result<Var> {
    let d = tape.shape(x)[1];
    let q = tape.matmul(x, m.wq)?;
    let k = tape.matmul(x, m.wk)?;
    let v = tape.matmul(x, m.wv)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale_const(scores, 1.0 / (d as f64).sqrt());
    let attn = tape.row_softmax(scaled)?;
    let ctx = tape.matmul(attn, v)?;
    let proj = tape.matmul(ctx, m.wo)?;
    let x1 = tape.add(x, proj)?;
    let z1 = tape.matmul(x1, m.ff1)?;
    let z1b = tape.add_row_broadcast(z1, m.b1)?;
    let h = tape.tanh(z1b);
    let z2 = tape.matmul(h, m.ff2)?;
    let z2b = tape.add_row_broadcast(z2, m.b2)?;
    tape.add(x1, z2b)
}

/// Encode a unified sequence on the tape: per position `embedding[id] +
/// positional[pos]`, one mixer pass when enabled, then per-modality slices
/// at the segment spans (special-token states are dropped).
pub fn encode_hidden_on(
    tape: &mut Tape,
    unified: &UnifiedSequence,
    vars: &EncoderVars,
) -> Result<Vec<EncodedModality>> {
    let n = unified.ids.len();
    let positions: Vec<usize> = (0..n).collect();
    let emb = tape.gather_rows(vars.embedding, &unified.ids)?;
    let pos = tape
        .gather_rows(vars.positional, &positions)
        .map_err(|e| match e {
            Error::Capacity(_) => Error::Capacity(format!(
                "sequence of {n} positions exceeds the positional table"
            )),
            other => other,
        })?;
    let mut x = tape.add(emb, pos)?;
    if let Some(mixer) = &vars.mixer {
        x = mixer_block(tape, x, mixer)?;
    }
    let mut out = Vec::with_capacity(unified.segment_spans.len());
    for (name, span) in &unified.segment_spans {
        let states = if span.is_empty() {
            None
        } else {
            Some(tape.slice_rows(x, span.start, span.end)?)
        };
        out.push(EncodedModality {
            modality: name.clone(),
            len: span.len(),
            states,
        });
    }
    Ok(out)
}

/// Value-level encoding: run the toy encoder on a scratch tape and extract
/// the per-modality matrices. An empty modality yields a `0 x d` matrix.
pub fn encode_hidden(unified: &UnifiedSequence, params: &Parameters) -> Result<Vec<HiddenSequence>> {
    let mut tape = Tape::new();
    let vars = EncoderVars::bind(&mut tape, params)?;
    let d = params.get(P_EMBEDDING)?.dims2()?.1;
    let encoded = encode_hidden_on(&mut tape, unified, &vars)?;
    encoded
        .into_iter()
        .map(|m| {
            let states = match m.states {
                Some(v) => Tensor::matrix(m.len, d, tape.values(v).to_vec())?,
                None => Tensor::zeros(vec![0, d]),
            };
            Ok(HiddenSequence {
                modality: m.modality,
                states,
            })
        })
        .collect()
}

// ── precomputed hidden states ───────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct HiddenHeader {
    d: usize,
}

#[derive(Serialize, Deserialize)]
struct HiddenRecord {
    id: String,
    modalities: indexmap::IndexMap<String, Vec<Vec<f64>>>,
}

/// In-memory view of a hidden-state file, keyed by sample id. States loaded
/// from disk never require gradients, mirroring a frozen encoder.
#[derive(Debug)]
pub struct PrecomputedStore {
    d: usize,
    samples: HashMap<String, Vec<HiddenSequence>>,
}

impl PrecomputedStore {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Parse a hidden-state file: a `{"d": int}` header line followed by one
    /// record per sample.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| Error::Ingestion(format!("cannot open hidden states {}: {e}", path.display())))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Ingestion("hidden-state file is empty".into()))??;
        let header: HiddenHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::Ingestion(format!("bad hidden-state header: {e}")))?;
        if header.d == 0 {
            return Err(Error::Ingestion("hidden-state header declares d = 0".into()));
        }
        let mut samples = HashMap::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: HiddenRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Ingestion(format!("hidden-state line {}: {e}", i + 2)))?;
            let mut mods = Vec::with_capacity(record.modalities.len());
            for (name, rows) in record.modalities {
                let l = rows.len();
                let mut flat = Vec::with_capacity(l * header.d);
                for row in rows {
                    if row.len() != header.d {
                        return Err(Error::Dimension(format!(
                            "sample `{}` modality `{}` has a row of width {}, header declares d = {}",
                            record.id,
                            name,
                            row.len(),
                            header.d
                        )));
                    }
                    flat.extend(row);
                }
                mods.push(HiddenSequence {
                    modality: name,
                    states: Tensor::matrix(l, header.d, flat)?,
                });
            }
            samples.insert(record.id, mods);
        }
        Ok(PrecomputedStore { d: header.d, samples })
    }

    /// Stored matrices for one sample, verbatim.
    pub fn load_precomputed(&self, sample_id: &str) -> Result<&[HiddenSequence]> {
        self.samples
            .get(sample_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("no hidden states stored for sample `{sample_id}`")))
    }
}

/// One-shot load of a single sample's hidden states. Callers touching many
/// samples should keep a [`PrecomputedStore`] open instead.
pub fn load_precomputed(path: impl AsRef<Path>, sample_id: &str) -> Result<Vec<HiddenSequence>> {
    let store = PrecomputedStore::open(path)?;
    Ok(store.load_precomputed(sample_id)?.to_vec())
}

/// Write a hidden-state file in the format [`PrecomputedStore::open`] reads.
pub fn save_hidden_states<'a, I>(path: impl AsRef<Path>, d: usize, samples: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [HiddenSequence])>,
{
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &HiddenHeader { d })?;
    writeln!(w)?;
    for (id, mods) in samples {
        let mut modalities = indexmap::IndexMap::new();
        for m in mods {
            let (l, cols) = m.states.dims2()?;
            if cols != d {
                return Err(Error::Dimension(format!(
                    "modality `{}` has width {cols}, file declares d = {d}",
                    m.modality
                )));
            }
            let rows: Vec<Vec<f64>> = (0..l)
                .map(|r| m.states.values()[r * d..(r + 1) * d].to_vec())
                .collect();
            modalities.insert(m.modality.clone(), rows);
        }
        serde_json::to_writer(
            &mut w,
            &HiddenRecord {
                id: id.to_string(),
                modalities,
            },
        )?;
        writeln!(w)?;
    }
    Ok(())
}
