//! Attention explanation reports and their static HTML rendering.
//!
//! The JSON report stores the raw learned weights. The HTML view colors
//! each token by its intra weight and each modality header by its inter
//! weight; shading is normalized per distribution for visibility, while the
//! stored numbers appear verbatim in tooltips.

use serde::{Deserialize, Serialize};

use seqset_core::data::{ModalitySchema, SequenceSet, TaskKind, Vocabulary};
use seqset_core::mra::{forward, ModelConfig};
use seqset_core::tensor::Parameters;
use seqset_core::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalityExplanation {
    pub name: String,
    pub empty: bool,
    pub inter_weight: f64,
    pub tokens: Vec<String>,
    pub intra_weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainReport {
    pub id: String,
    /// Task-space outputs: probabilities for classification, the raw value
    /// for regression.
    pub prediction: Vec<f64>,
    pub modalities: Vec<ModalityExplanation>,
}

/// Forward one sample and assemble its explanation.
pub fn explain_sample(
    sample: &SequenceSet,
    vocab: &Vocabulary,
    schema: &ModalitySchema,
    params: &Parameters,
    config: &ModelConfig,
) -> Result<ExplainReport> {
    let out = forward(sample, vocab, schema, params, config)?;
    let prediction: Vec<f64> = match config.task {
        TaskKind::Multilabel | TaskKind::Binary => out
            .prediction
            .iter()
            .map(|z| 1.0 / (1.0 + (-z).exp()))
            .collect(),
        TaskKind::Regression => out.prediction.clone(),
    };
    let mut modalities = Vec::with_capacity(schema.modality_count());
    for (m, entry) in schema.modalities.iter().enumerate() {
        let tokens = sample.tokens(&entry.name)?;
        let kept: Vec<String> = tokens.iter().take(entry.max_len).cloned().collect();
        modalities.push(ModalityExplanation {
            name: entry.name.clone(),
            empty: out.record.empty[m],
            inter_weight: out.record.inter[m],
            tokens: kept,
            intra_weights: out.record.intra[m].1.clone(),
        });
    }
    Ok(ExplainReport {
        id: sample.id.clone(),
        prediction,
        modalities,
    })
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn shade(weight: f64, max: f64) -> f64 {
    if max <= 0.0 {
        0.0
    } else {
        0.85 * weight / max
    }
}

/// Static single-file HTML view of one or more reports.
pub fn render_html(reports: &[ExplainReport]) -> String {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n\
         <title>Attention explanation</title>\n<style>\n\
         body { font-family: sans-serif; margin: 2em; }\n\
         .sample { border: 1px solid #ccc; padding: 1em; margin-bottom: 1.5em; }\n\
         .modality { margin: 0.6em 0; }\n\
         .modality h3 { display: inline-block; padding: 0.1em 0.4em; margin: 0.2em 0; }\n\
         .tok { padding: 0.1em 0.25em; margin: 0 0.15em; border-radius: 3px; }\n\
         .empty { color: #888; font-style: italic; }\n\
         </style>\n</head>\n<body>\n",
    );
    for report in reports {
        html.push_str("<div class=\"sample\">\n");
        let pred = report
            .prediction
            .iter()
            .map(|p| format!("{p:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        html.push_str(&format!(
            "<h2>{}</h2>\n<p>prediction: [{}]</p>\n",
            escape(&report.id),
            pred
        ));
        let max_inter = report
            .modalities
            .iter()
            .map(|m| m.inter_weight)
            .fold(0.0, f64::max);
        for modality in &report.modalities {
            html.push_str("<div class=\"modality\">\n");
            let alpha = shade(modality.inter_weight, max_inter);
            html.push_str(&format!(
                "<h3 style=\"background: rgba(220,20,20,{alpha:.3})\" title=\"inter weight {}\">{} ({:.4})</h3>\n",
                modality.inter_weight,
                escape(&modality.name),
                modality.inter_weight
            ));
            if modality.empty {
                html.push_str("<span class=\"empty\">empty</span>\n");
            } else {
                let max_intra = modality.intra_weights.iter().copied().fold(0.0, f64::max);
                html.push_str("<p>");
                for (token, weight) in modality.tokens.iter().zip(&modality.intra_weights) {
                    let alpha = shade(*weight, max_intra);
                    html.push_str(&format!(
                        "<span class=\"tok\" style=\"background: rgba(220,20,20,{alpha:.3})\" title=\"{weight}\">{}</span>",
                        escape(token)
                    ));
                }
                html.push_str("</p>\n");
            }
            html.push_str("</div>\n");
        }
        html.push_str("</div>\n");
    }
    html.push_str("</body>\n</html>\n");
    html
}
