//! Vocabulary, modality schema, sequence sets, and unified-sequence
//! construction.
//!
//! A sample is a set of token sequences keyed by modality name. The schema
//! fixes a canonical modality order; every code path iterates that order, so
//! the pipeline is invariant to the order in which modalities arrive.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLS_TOKEN: &str = "[C]";
pub const SEP_TOKEN: &str = "[S]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_ID: usize = 0;
pub const SEP_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Bijective token registry with three fixed special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for special in [CLS_TOKEN, SEP_TOKEN, UNK_TOKEN] {
            v.add_token(special);
        }
        v
    }

    /// Register a token, returning its id. Re-registering returns the
    /// existing id.
    pub fn add_token(&mut self, token: &str) -> usize {
        if let Some(id) = self.token_to_id.get(token) {
            return *id;
        }
        let id = self.id_to_token.len();
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id_of(token).unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the specials are always present
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Rebuild from an id-ordered token list (checkpoint side file).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3
            || tokens[CLS_ID] != CLS_TOKEN
            || tokens[SEP_ID] != SEP_TOKEN
            || tokens[UNK_ID] != UNK_TOKEN
        {
            return Err(Error::Schema(
                "vocabulary file must start with the [C], [S], [UNK] specials".into(),
            ));
        }
        let mut v = Vocabulary::new();
        for t in &tokens[3..] {
            if v.token_to_id.contains_key(t) {
                return Err(Error::Schema(format!("duplicate token `{t}` in vocabulary file")));
            }
            v.add_token(t);
        }
        Ok(v)
    }
}

/// Build a vocabulary from a corpus. Tokens with frequency at least
/// `min_count` are registered after the specials, ordered by descending
/// frequency, then lexicographically, which makes id assignment
/// deterministic.
pub fn build_vocab<'a, I>(corpus: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a SequenceSet>,
{
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut saw_sample = false;
    for sample in corpus {
        saw_sample = true;
        for tokens in sample.sequences.values() {
            for t in tokens {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
        }
    }
    if !saw_sample {
        return Err(Error::Ingestion("empty corpus".into()));
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    let mut vocab = Vocabulary::new();
    for (t, _) in ranked {
        vocab.add_token(t);
    }
    Ok(vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Multilabel,
    Binary,
    Regression,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Multilabel => "multilabel",
            TaskKind::Binary => "binary",
            TaskKind::Regression => "regression",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ModalityEntry {
    pub name: String,
    pub max_len: usize,
}

/// Ordered modality registry plus the task declaration. The entry order is
/// the canonical modality order used everywhere downstream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ModalitySchema {
    pub modalities: Vec<ModalityEntry>,
    pub task: TaskKind,
    pub num_classes: usize,
}

impl ModalitySchema {
    pub fn new(modalities: Vec<ModalityEntry>, task: TaskKind, num_classes: usize) -> Result<Self> {
        let schema = ModalitySchema {
            modalities,
            task,
            num_classes,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Schema("schema declares no modalities".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for entry in &self.modalities {
            if entry.name.is_empty() {
                return Err(Error::Schema("modality name must be non-empty".into()));
            }
            if !seen.insert(entry.name.as_str()) {
                return Err(Error::Schema(format!("duplicate modality `{}`", entry.name)));
            }
            if entry.max_len == 0 {
                return Err(Error::Schema(format!(
                    "modality `{}` has max_len 0",
                    entry.name
                )));
            }
        }
        match self.task {
            TaskKind::Multilabel => {
                if self.num_classes == 0 {
                    return Err(Error::Schema("multilabel task needs num_classes >= 1".into()));
                }
            }
            TaskKind::Binary | TaskKind::Regression => {
                if self.num_classes != 1 {
                    return Err(Error::Schema(format!(
                        "{} task requires num_classes = 1, got {}",
                        self.task.name(),
                        self.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let schema: ModalitySchema = serde_json::from_str(json)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Ingestion(format!("cannot read schema {}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&text)
    }

    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.modalities.iter().map(|m| m.name.as_str())
    }

    pub fn entry(&self, name: &str) -> Option<&ModalityEntry> {
        self.modalities.iter().find(|m| m.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.name == name)
    }

    /// Output width of the prediction head for this task.
    pub fn output_dim(&self) -> usize {
        match self.task {
            TaskKind::Multilabel => self.num_classes,
            TaskKind::Binary | TaskKind::Regression => 1,
        }
    }

    /// Capacity of the positional table: every real token plus one `[C]`
    /// and M `[S]` markers.
    pub fn max_positions(&self) -> usize {
        self.modalities.iter().map(|m| m.max_len).sum::<usize>() + self.modality_count() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    MultiHot(Vec<u8>),
    Binary(u8),
    Real(f64),
}

impl Label {
    fn from_value(value: &serde_json::Value, task: TaskKind, num_classes: usize) -> Result<Self> {
        match task {
            TaskKind::Multilabel => {
                let arr = value.as_array().ok_or_else(|| {
                    Error::Label(format!("multilabel task expects an array label, got {value}"))
                })?;
                if arr.len() != num_classes {
                    return Err(Error::Label(format!(
                        "label has {} entries, schema declares {} classes",
                        arr.len(),
                        num_classes
                    )));
                }
                let mut bits = Vec::with_capacity(arr.len());
                for v in arr {
                    match v.as_f64() {
                        Some(x) if x == 0.0 || x == 1.0 => bits.push(x as u8),
                        _ => return Err(Error::Label(format!("multi-hot entries must be 0/1, got {v}"))),
                    }
                }
                Ok(Label::MultiHot(bits))
            }
            TaskKind::Binary => match value.as_f64() {
                Some(x) if x == 0.0 || x == 1.0 => Ok(Label::Binary(x as u8)),
                _ => Err(Error::Label(format!("binary task expects 0 or 1, got {value}"))),
            },
            TaskKind::Regression => {
                let x = value
                    .as_f64()
                    .ok_or_else(|| Error::Label(format!("regression task expects a number, got {value}")))?;
                if !x.is_finite() {
                    return Err(Error::Label(format!("regression target {x} is not finite")));
                }
                Ok(Label::Real(x))
            }
        }
    }

    /// Multi-hot view used by the classification loss (binary becomes K=1).
    pub fn as_multi_hot(&self) -> Result<Vec<u8>> {
        match self {
            Label::MultiHot(v) => Ok(v.clone()),
            Label::Binary(b) => Ok(vec![*b]),
            Label::Real(_) => Err(Error::TaskMismatch(
                "regression label used where a classification label is required".into(),
            )),
        }
    }

    pub fn as_real(&self) -> Result<f64> {
        match self {
            Label::Real(x) => Ok(*x),
            _ => Err(Error::TaskMismatch(
                "classification label used where a regression target is required".into(),
            )),
        }
    }
}

/// One sample: a token sequence per registered modality (possibly empty)
/// plus its label. Construction materializes absent modalities as empty
/// lists and rejects samples that would have no real tokens after
/// truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSet {
    pub id: String,
    sequences: BTreeMap<String, Vec<String>>,
    pub label: Label,
}

impl SequenceSet {
    pub fn new(
        id: impl Into<String>,
        sequences: BTreeMap<String, Vec<String>>,
        label: Label,
        schema: &ModalitySchema,
    ) -> Result<Self> {
        let id = id.into();
        for key in sequences.keys() {
            if schema.entry(key).is_none() {
                return Err(Error::Schema(format!(
                    "sample `{id}` uses modality `{key}` not present in the schema"
                )));
            }
        }
        let mut full = BTreeMap::new();
        let mut real_tokens = 0;
        for entry in &schema.modalities {
            let tokens = sequences.get(&entry.name).cloned().unwrap_or_default();
            real_tokens += tokens.len().min(entry.max_len);
            full.insert(entry.name.clone(), tokens);
        }
        if real_tokens == 0 {
            return Err(Error::DegenerateSample(format!(
                "sample `{id}` has no tokens in any modality after truncation"
            )));
        }
        Ok(SequenceSet {
            id,
            sequences: full,
            label,
        })
    }

    pub fn tokens(&self, modality: &str) -> Result<&[String]> {
        self.sequences
            .get(modality)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Schema(format!("modality `{modality}` not present in sample")))
    }
}

/// Copy of a sample with one modality replaced by the empty sequence.
pub fn erase_modality(sample: &SequenceSet, modality: &str) -> Result<SequenceSet> {
    if !sample.sequences.contains_key(modality) {
        return Err(Error::Schema(format!(
            "cannot erase unregistered modality `{modality}`"
        )));
    }
    let mut out = sample.clone();
    out.sequences.insert(modality.to_string(), Vec::new());
    Ok(out)
}

/// Token-id sequence `[C] m1-tokens [S] m2-tokens [S] ... [S]` plus the
/// per-modality spans of real tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnifiedSequence {
    pub ids: Vec<usize>,
    /// Canonical-order half-open ranges covering only real tokens.
    pub segment_spans: Vec<(String, Range<usize>)>,
    pub total_real_tokens: usize,
}

/// Assemble the unified sequence for one sample: truncate each modality to
/// its cap, map tokens to ids (UNK for unregistered), and interleave the
/// specials. Empty modalities contribute an empty span but still emit their
/// separator.
pub fn encode(sample: &SequenceSet, vocab: &Vocabulary, schema: &ModalitySchema) -> Result<UnifiedSequence> {
    let mut ids = vec![CLS_ID];
    let mut spans = Vec::with_capacity(schema.modality_count());
    for entry in &schema.modalities {
        let tokens = sample.tokens(&entry.name)?;
        let kept = &tokens[..tokens.len().min(entry.max_len)];
        let start = ids.len();
        ids.extend(kept.iter().map(|t| vocab.id_or_unk(t)));
        spans.push((entry.name.clone(), start..ids.len()));
        ids.push(SEP_ID);
    }
    let total_real_tokens = ids.len() - schema.modality_count() - 1;
    if total_real_tokens == 0 {
        return Err(Error::DegenerateSample(format!(
            "sample `{}` encodes to zero real tokens",
            sample.id
        )));
    }
    Ok(UnifiedSequence {
        ids,
        segment_spans: spans,
        total_real_tokens,
    })
}

#[derive(Deserialize)]
struct RawSample {
    id: String,
    modalities: BTreeMap<String, Vec<String>>,
    label: serde_json::Value,
}

/// Streaming JSONL reader; each line is one sample. Errors carry the
/// offending line number.
pub struct JsonlReader<'a> {
    lines: Lines<BufReader<File>>,
    schema: &'a ModalitySchema,
    line_no: usize,
    path: String,
}

impl<'a> JsonlReader<'a> {
    fn parse_line(&self, line: &str) -> Result<SequenceSet> {
        let raw: RawSample = serde_json::from_str(line).map_err(|e| {
            Error::Ingestion(format!("{}:{}: malformed line: {e}", self.path, self.line_no))
        })?;
        let label = Label::from_value(&raw.label, self.schema.task, self.schema.num_classes)
            .map_err(|e| Error::Label(format!("{}:{}: {e}", self.path, self.line_no)))?;
        SequenceSet::new(raw.id, raw.modalities, label, self.schema)
            .map_err(|e| match e {
                Error::Schema(m) => Error::Schema(format!("{}:{}: {m}", self.path, self.line_no)),
                Error::DegenerateSample(m) => {
                    Error::DegenerateSample(format!("{}:{}: {m}", self.path, self.line_no))
                }
                other => other,
            })
    }
}

impl<'a> Iterator for JsonlReader<'a> {
    type Item = Result<SequenceSet>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&line));
        }
    }
}

pub fn load_jsonl<'a>(path: impl AsRef<Path>, schema: &'a ModalitySchema) -> Result<JsonlReader<'a>> {
    let path_ref = path.as_ref();
    let file = File::open(path_ref).map_err(|e| {
        Error::Ingestion(format!("cannot open dataset {}: {e}", path_ref.display()))
    })?;
    Ok(JsonlReader {
        lines: BufReader::new(file).lines(),
        schema,
        line_no: 0,
        path: path_ref.display().to_string(),
    })
}

/// Load an entire JSONL dataset into memory.
pub fn load_jsonl_all(path: impl AsRef<Path>, schema: &ModalitySchema) -> Result<Vec<SequenceSet>> {
    load_jsonl(path, schema)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema_ab() -> ModalitySchema {
        ModalitySchema::new(
            vec![
                ModalityEntry { name: "alpha".into(), max_len: 4 },
                ModalityEntry { name: "beta".into(), max_len: 4 },
            ],
            TaskKind::Binary,
            1,
        )
        .unwrap()
    }

    fn sample(
        id: &str,
        pairs: &[(&str, &[&str])],
        schema: &ModalitySchema,
    ) -> SequenceSet {
        let map: BTreeMap<String, Vec<String>> = pairs
            .iter()
            .map(|(k, ts)| (k.to_string(), ts.iter().map(|t| t.to_string()).collect()))
            .collect();
        SequenceSet::new(id, map, Label::Binary(0), schema).unwrap()
    }

    #[test]
    fn vocab_specials_have_fixed_ids() {
        let v = Vocabulary::new();
        assert_eq!(v.id_of(CLS_TOKEN), Some(CLS_ID));
        assert_eq!(v.id_of(SEP_TOKEN), Some(SEP_ID));
        assert_eq!(v.id_of(UNK_TOKEN), Some(UNK_ID));
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn build_vocab_filters_by_count() {
        let schema = schema_ab();
        let s1 = sample("1", &[("alpha", &["a", "a"]), ("beta", &["b"])], &schema);
        let vocab = build_vocab([&s1], 2).unwrap();
        assert_eq!(vocab.len(), 4);
        assert_eq!(vocab.id_of("a"), Some(3));
        assert_eq!(vocab.id_of("b"), None);
    }

    #[test]
    fn build_vocab_min_count_one_keeps_all() {
        let schema = schema_ab();
        let s1 = sample("1", &[("alpha", &["x", "y"]), ("beta", &["z"])], &schema);
        let vocab = build_vocab([&s1], 1).unwrap();
        for t in ["x", "y", "z"] {
            assert!(vocab.id_of(t).is_some());
        }
    }

    #[test]
    fn build_vocab_is_deterministic() {
        let schema = schema_ab();
        let s1 = sample("1", &[("alpha", &["n", "m", "m"]), ("beta", &["k"])], &schema);
        let a = build_vocab([&s1], 1).unwrap();
        let b = build_vocab([&s1], 1).unwrap();
        assert_eq!(a.tokens(), b.tokens());
        // m has the highest count; n/k tie and order lexicographically
        assert_eq!(a.id_of("m"), Some(3));
        assert_eq!(a.id_of("k"), Some(4));
        assert_eq!(a.id_of("n"), Some(5));
    }

    #[test]
    fn build_vocab_rejects_empty_corpus() {
        let err = build_vocab(std::iter::empty(), 1).unwrap_err();
        assert!(matches!(err, Error::Ingestion(_)));
    }

    #[test]
    fn encode_matches_paper_layout() {
        let schema = schema_ab();
        let s = sample("1", &[("alpha", &["a1", "a2"]), ("beta", &["b1"])], &schema);
        let vocab = build_vocab([&s], 1).unwrap();
        let u = encode(&s, &vocab, &schema).unwrap();
        assert_eq!(u.ids.len(), 6); // [C] a1 a2 [S] b1 [S]
        assert_eq!(u.ids[0], CLS_ID);
        assert_eq!(u.ids[3], SEP_ID);
        assert_eq!(u.ids[5], SEP_ID);
        assert_eq!(u.total_real_tokens, 3);
        assert_eq!(u.segment_spans[0], ("alpha".to_string(), 1..3));
        assert_eq!(u.segment_spans[1], ("beta".to_string(), 4..5));
    }

    #[test]
    fn encode_missing_modality_has_empty_span() {
        let schema = schema_ab();
        let s = sample("1", &[("alpha", &["a1", "a2"])], &schema);
        let vocab = build_vocab([&s], 1).unwrap();
        let u = encode(&s, &vocab, &schema).unwrap();
        assert_eq!(u.ids.len(), 5); // [C] a1 a2 [S] [S]
        assert_eq!(u.segment_spans[1], ("beta".to_string(), 4..4));
    }

    #[test]
    fn encode_is_invariant_to_input_order() {
        let schema = schema_ab();
        let fwd = sample("1", &[("alpha", &["a"]), ("beta", &["b"])], &schema);
        let rev = sample("1", &[("beta", &["b"]), ("alpha", &["a"])], &schema);
        let vocab = build_vocab([&fwd], 1).unwrap();
        assert_eq!(encode(&fwd, &vocab, &schema).unwrap(), encode(&rev, &vocab, &schema).unwrap());
    }

    #[test]
    fn encode_truncates_to_max_len() {
        let schema = schema_ab();
        let s = sample(
            "1",
            &[("alpha", &["t1", "t2", "t3", "t4", "t5", "t6"])],
            &schema,
        );
        let vocab = build_vocab([&s], 1).unwrap();
        let u = encode(&s, &vocab, &schema).unwrap();
        assert_eq!(u.total_real_tokens, 4);
        assert_eq!(u.ids.len(), 4 + 2 + 1);
        // prefix kept
        assert_eq!(vocab.token_of(u.ids[1]), Some("t1"));
        assert_eq!(vocab.token_of(u.ids[4]), Some("t4"));
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let schema = schema_ab();
        let train = sample("1", &[("alpha", &["known"])], &schema);
        let vocab = build_vocab([&train], 1).unwrap();
        let test = sample("2", &[("alpha", &["unseen"])], &schema);
        let u = encode(&test, &vocab, &schema).unwrap();
        assert_eq!(u.ids[1], UNK_ID);
    }

    #[test]
    fn all_empty_sample_is_rejected() {
        let schema = schema_ab();
        let err = SequenceSet::new("1", BTreeMap::new(), Label::Binary(0), &schema).unwrap_err();
        assert!(matches!(err, Error::DegenerateSample(_)));
    }

    #[test]
    fn unknown_modality_is_a_schema_error() {
        let schema = schema_ab();
        let mut map = BTreeMap::new();
        map.insert("gamma".to_string(), vec!["x".to_string()]);
        let err = SequenceSet::new("1", map, Label::Binary(0), &schema).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn erase_modality_replaces_with_empty() {
        let schema = schema_ab();
        let s = sample("1", &[("alpha", &["a"]), ("beta", &["b"])], &schema);
        let erased = erase_modality(&s, "beta").unwrap();
        assert_eq!(erased.tokens("beta").unwrap().len(), 0);
        assert_eq!(erased.tokens("alpha").unwrap(), s.tokens("alpha").unwrap());
    }

    #[test]
    fn erase_modality_is_idempotent_and_commutes() {
        let schema = ModalitySchema::new(
            vec![
                ModalityEntry { name: "a".into(), max_len: 4 },
                ModalityEntry { name: "b".into(), max_len: 4 },
                ModalityEntry { name: "c".into(), max_len: 4 },
            ],
            TaskKind::Binary,
            1,
        )
        .unwrap();
        let s = sample("1", &[("a", &["x"]), ("b", &["y"]), ("c", &["z"])], &schema);
        let once = erase_modality(&s, "b").unwrap();
        let twice = erase_modality(&once, "b").unwrap();
        assert_eq!(once, twice);
        let ab = erase_modality(&erase_modality(&s, "a").unwrap(), "b").unwrap();
        let ba = erase_modality(&erase_modality(&s, "b").unwrap(), "a").unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn erase_unregistered_modality_errors() {
        let schema = schema_ab();
        let s = sample("1", &[("alpha", &["a"])], &schema);
        assert!(matches!(erase_modality(&s, "nope"), Err(Error::Schema(_))));
    }

    #[test]
    fn erase_then_encode_equals_never_had_it() {
        let schema = schema_ab();
        let with = sample("1", &[("alpha", &["a"]), ("beta", &["b"])], &schema);
        let without = sample("1", &[("alpha", &["a"])], &schema);
        let vocab = build_vocab([&with], 1).unwrap();
        let erased = erase_modality(&with, "beta").unwrap();
        assert_eq!(
            encode(&erased, &vocab, &schema).unwrap(),
            encode(&without, &vocab, &schema).unwrap()
        );
    }

    #[test]
    fn jsonl_loader_round_trip() {
        let schema = schema_ab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"s1","modalities":{{"alpha":["a","b"],"beta":["c"]}},"label":1}}"#).unwrap();
        writeln!(f, r#"{{"id":"s2","modalities":{{"alpha":["a"]}},"label":0}}"#).unwrap();
        writeln!(f, r#"{{"id":"s3","modalities":{{"beta":["c"]}},"label":1}}"#).unwrap();
        let samples = load_jsonl_all(&path, &schema).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[1].tokens("beta").unwrap().len(), 0);
        assert_eq!(samples[0].label, Label::Binary(1));
    }

    #[test]
    fn jsonl_loader_reports_line_numbers() {
        let schema = schema_ab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"s1","modalities":{{"alpha":["a"]}},"label":1}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        let results: Vec<_> = load_jsonl(&path, &schema).unwrap().collect();
        assert!(results[0].is_ok());
        let msg = results[1].as_ref().unwrap_err().to_string();
        assert!(msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn jsonl_loader_validates_labels_and_modalities() {
        let schema = ModalitySchema::new(
            vec![ModalityEntry { name: "alpha".into(), max_len: 4 }],
            TaskKind::Multilabel,
            3,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"ok","modalities":{{"alpha":["a"]}},"label":[0,1,1]}}"#).unwrap();
        writeln!(f, r#"{{"id":"short","modalities":{{"alpha":["a"]}},"label":[1]}}"#).unwrap();
        writeln!(f, r#"{{"id":"bad","modalities":{{"gamma":["a"]}},"label":[0,0,1]}}"#).unwrap();
        let results: Vec<_> = load_jsonl(&path, &schema).unwrap().collect();
        assert_eq!(results[0].as_ref().unwrap().label, Label::MultiHot(vec![0, 1, 1]));
        assert!(matches!(results[1], Err(Error::Label(_))));
        assert!(matches!(results[2], Err(Error::Schema(_))));
    }

    #[test]
    fn ids_length_identity_holds() {
        let schema = schema_ab();
        let s = sample("1", &[("alpha", &["a", "b", "c"]), ("beta", &["d"])], &schema);
        let vocab = build_vocab([&s], 1).unwrap();
        let u = encode(&s, &vocab, &schema).unwrap();
        assert_eq!(u.ids.len(), u.total_real_tokens + schema.modality_count() + 1);
    }
}
