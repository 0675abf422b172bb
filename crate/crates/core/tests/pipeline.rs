//! Whole-pipeline behavior: closed-form cases, modality-order invariance,
//! erase equivalence, attention normalization, and full-model gradient
//! checks through both losses.

mod common;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::*;
use seqset_core::data::{encode, erase_modality, Label, SequenceSet, TaskKind};
use seqset_core::encoder::encode_hidden;
use seqset_core::gradcheck::grad_check_by_param;
use seqset_core::model::init_params_in_range;
use seqset_core::model::init_params;
use seqset_core::mra::{forward, forward_on_tape, BoundModel, Similarity};
use seqset_core::tape::Tape;
use seqset_core::tensor::Parameters;
use seqset_core::train::{rmse_loss, wsce_loss, WsceMode};
use seqset_core::Error;

#[test]
fn single_token_single_modality_pools_to_four_times_encoder_state() {
    // a = 1 from both softmaxes, residuals double twice: (H+H) then (2H+2H)
    let schema = schema_with(&[("only", 3)], TaskKind::Binary, 1);
    let config = toy_config(&schema, Similarity::Additive, true);
    let sample = sample_from("s", &[("only", &["tok00"])], Label::Binary(1), &schema);
    let vocab = vocab_for(std::slice::from_ref(&sample));
    let params = init_params(&config, &schema, vocab.len(), 7).unwrap();

    let unified = encode(&sample, &vocab, &schema).unwrap();
    let hidden = encode_hidden(&unified, &params).unwrap();
    let state = hidden[0].states.values();

    let out = forward(&sample, &vocab, &schema, &params, &config).unwrap();
    assert_eq!(out.record.intra[0].1, vec![1.0]);
    assert_eq!(out.record.inter, vec![1.0]);
    for (h, s) in out.pooled.iter().zip(state) {
        assert!((h - 4.0 * s).abs() < 1e-12, "pooled {h} vs 4x state {}", 4.0 * s);
    }
}

#[test]
fn forward_is_bit_identical_under_modality_map_permutation() {
    let schema = toy_schema(TaskKind::Multilabel, 4);
    let config = toy_config(&schema, Similarity::Additive, true);
    let pool = token_pool(12);
    let mut rng = ChaCha20Rng::seed_from_u64(11);

    for i in 0..100 {
        let label = random_multihot(&mut rng, 4);
        let sample = random_sample(&mut rng, &format!("s{i}"), &schema, &pool, label.clone());
        let vocab = vocab_for(std::slice::from_ref(&sample));
        let params = init_params(&config, &schema, vocab.len(), 5).unwrap();

        // rebuild the same sample inserting modalities in a random order
        let mut names: Vec<String> = schema.names().map(str::to_string).collect();
        for k in (1..names.len()).rev() {
            names.swap(k, rng.gen_range(0..=k));
        }
        let mut permuted = BTreeMap::new();
        for name in &names {
            permuted.insert(name.clone(), sample.tokens(name).unwrap().to_vec());
        }
        let shuffled = SequenceSet::new(sample.id.clone(), permuted, label, &schema).unwrap();

        let a = forward(&sample, &vocab, &schema, &params, &config).unwrap();
        let b = forward(&shuffled, &vocab, &schema, &params, &config).unwrap();
        assert_eq!(a.prediction, b.prediction);
        assert_eq!(a.pooled, b.pooled);
        assert_eq!(a.record, b.record);
    }
}

#[test]
fn erasing_equals_forwarding_with_empty_modality() {
    let schema = toy_schema(TaskKind::Binary, 1);
    let config = toy_config(&schema, Similarity::Additive, true);
    let full = sample_from(
        "s",
        &[("text", &["tok00", "tok01"]), ("ocr", &["tok02"]), ("tags", &["tok03"])],
        Label::Binary(0),
        &schema,
    );
    let vocab = vocab_for(std::slice::from_ref(&full));
    let params = init_params(&config, &schema, vocab.len(), 3).unwrap();

    let erased = erase_modality(&full, "ocr").unwrap();
    let never_had = sample_from(
        "s",
        &[("text", &["tok00", "tok01"]), ("tags", &["tok03"])],
        Label::Binary(0),
        &schema,
    );
    let a = forward(&erased, &vocab, &schema, &params, &config).unwrap();
    let b = forward(&never_had, &vocab, &schema, &params, &config).unwrap();
    assert_eq!(a.prediction, b.prediction);
    assert_eq!(a.record, b.record);
    assert!(a.record.empty[1]);
    assert_eq!(a.record.inter[1], 0.0);
}

#[test]
fn attention_distributions_normalize_over_random_samples() {
    let schema = toy_schema(TaskKind::Multilabel, 3);
    let pool = token_pool(15);
    let mut rng = ChaCha20Rng::seed_from_u64(23);

    for residual in [true, false] {
        for similarity in [Similarity::Additive, Similarity::ScaledDot] {
            let config = toy_config(&schema, similarity, residual);
            for i in 0..150 {
                let label = random_multihot(&mut rng, 3);
                let sample = random_sample(&mut rng, &format!("s{i}"), &schema, &pool, label);
                let vocab = vocab_for(std::slice::from_ref(&sample));
                let params = init_params(&config, &schema, vocab.len(), i).unwrap();
                let out = forward(&sample, &vocab, &schema, &params, &config).unwrap();

                for (m, (name, weights)) in out.record.intra.iter().enumerate() {
                    if out.record.empty[m] {
                        assert!(weights.is_empty());
                        assert_eq!(out.record.inter[m], 0.0, "empty `{name}` must have zero inter weight");
                    } else {
                        assert!(weights.iter().all(|w| *w >= 0.0));
                        let sum: f64 = weights.iter().sum();
                        assert!((sum - 1.0).abs() < 1e-9, "intra sum {sum}");
                    }
                }
                let inter_sum: f64 = out.record.inter.iter().sum();
                assert!((inter_sum - 1.0).abs() < 1e-9, "inter sum {inter_sum}");
                assert!(out.record.inter.iter().all(|w| *w >= 0.0));
            }
        }
    }
}

#[test]
fn disabled_stages_still_record_uniform_weights() {
    let schema = toy_schema(TaskKind::Binary, 1);
    let mut config = toy_config(&schema, Similarity::Additive, true);
    config.use_intra = false;
    config.use_inter = false;
    let sample = sample_from(
        "s",
        &[("text", &["tok00", "tok01"]), ("tags", &["tok02"])],
        Label::Binary(1),
        &schema,
    );
    let vocab = vocab_for(std::slice::from_ref(&sample));
    let params = init_params(&config, &schema, vocab.len(), 9).unwrap();
    let out = forward(&sample, &vocab, &schema, &params, &config).unwrap();
    assert_eq!(out.record.intra[0].1, vec![0.5, 0.5]);
    assert_eq!(out.record.intra[1].1, Vec::<f64>::new()); // ocr empty
    assert_eq!(out.record.intra[2].1, vec![1.0]);
    assert_eq!(out.record.inter, vec![0.5, 0.0, 0.5]);
}

#[test]
fn encoder_only_variant_is_mean_pooled_encoder_plus_head() {
    let schema = toy_schema(TaskKind::Binary, 1);
    let mut config = toy_config(&schema, Similarity::Additive, true);
    config.use_intra = false;
    config.use_inter = false;
    let sample = sample_from(
        "s",
        &[("text", &["tok00", "tok01"]), ("ocr", &["tok02"])],
        Label::Binary(1),
        &schema,
    );
    let vocab = vocab_for(std::slice::from_ref(&sample));
    let params = init_params(&config, &schema, vocab.len(), 9).unwrap();

    let unified = encode(&sample, &vocab, &schema).unwrap();
    let hidden = encode_hidden(&unified, &params).unwrap();
    let d = config.d;
    let mut mean = vec![0.0; d];
    let mut rows = 0;
    for h in &hidden {
        let (l, _) = h.states.dims2().unwrap();
        for r in 0..l {
            let row = &h.states.values()[r * d..(r + 1) * d];
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        rows += l;
    }
    for v in mean.iter_mut() {
        *v /= rows as f64;
    }
    let out = forward(&sample, &vocab, &schema, &params, &config).unwrap();
    for (a, b) in out.pooled.iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn additive_similarity_ignores_kernel_directions() {
    // with a rank-deficient W, shifting H_t along ker(W) leaves scores alone
    let mut tape = Tape::new();
    let w = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let q = tape.constant(vec![2], vec![0.7, -0.4]).unwrap();
    let h = tape.constant(vec![2, 2], vec![0.3, 5.0, -0.2, -9.0]).unwrap();
    let shifted = tape.constant(vec![2, 2], vec![0.3, -123.0, -0.2, 44.0]).unwrap();
    let s1 = seqset_core::mra::similarity(&mut tape, h, w, q, Similarity::Additive).unwrap();
    let s2 = seqset_core::mra::similarity(&mut tape, shifted, w, q, Similarity::Additive).unwrap();
    assert_eq!(tape.values(s1), tape.values(s2));
}

#[test]
fn forward_rejects_fully_empty_sample_after_erasure() {
    let schema = schema_with(&[("a", 3), ("b", 3)], TaskKind::Binary, 1);
    let config = toy_config(&schema, Similarity::Additive, true);
    let sample = sample_from("s", &[("a", &["tok00"])], Label::Binary(0), &schema);
    let vocab = vocab_for(std::slice::from_ref(&sample));
    let params = init_params(&config, &schema, vocab.len(), 1).unwrap();
    let gone = erase_modality(&sample, "a").unwrap();
    let err = forward(&gone, &vocab, &schema, &params, &config).unwrap_err();
    assert!(matches!(err, Error::DegenerateSample(_)));
}

/// Gradient check of the full model through a loss, for one configuration.
/// Parameters are drawn wide so attention gradients clear the relative
/// error's 1e-8 denominator floor.
fn check_full_model(similarity: Similarity, residual: bool, task: TaskKind, epsilon: f64) -> f64 {
    let num_classes = if task == TaskKind::Multilabel { 2 } else { 1 };
    let schema = toy_schema(task, num_classes);
    let config = toy_config(&schema, similarity, residual);
    // lengths [3, 0, 4]: includes an empty modality so masking is exercised
    let sample = sample_from(
        "s",
        &[
            ("text", &["tok00", "tok01", "tok02"]),
            ("tags", &["tok03", "tok04", "tok00", "tok05"]),
        ],
        match task {
            TaskKind::Multilabel => Label::MultiHot(vec![1, 0]),
            TaskKind::Binary => Label::Binary(1),
            TaskKind::Regression => Label::Real(0.75),
        },
        &schema,
    );
    let vocab = vocab_for(std::slice::from_ref(&sample));
    let mut params = init_params_in_range(&config, &schema, vocab.len(), 7, 0.8).unwrap();

    let f = |p: &Parameters, tape: &mut Tape| {
        let bound = BoundModel::bind(tape, p, &schema, &config)?;
        let vars = forward_on_tape(tape, &sample, &vocab, &schema, &bound, &config)?;
        let stacked = tape.concat_rows(&[vars.prediction])?;
        match task {
            TaskKind::Multilabel => {
                wsce_loss(tape, stacked, &[vec![1, 0]], &[0.7, 1.3], WsceMode::FullBce)
            }
            TaskKind::Binary => wsce_loss(tape, stacked, &[vec![1]], &[1.0], WsceMode::FullBce),
            TaskKind::Regression => rmse_loss(tape, stacked, &[0.75]),
        }
    };
    let by_param = grad_check_by_param(&f, &mut params, epsilon).unwrap();
    by_param.values().fold(0.0, |acc, e| acc.max(*e))
}

#[test]
fn full_model_gradients_check_for_wsce() {
    for similarity in [Similarity::Additive, Similarity::ScaledDot] {
        for residual in [true, false] {
            let err = check_full_model(similarity, residual, TaskKind::Multilabel, 1e-4);
            assert!(err < 1e-4, "{similarity:?} residual={residual}: {err}");
        }
    }
}

#[test]
fn full_model_gradients_check_for_rmse() {
    for similarity in [Similarity::Additive, Similarity::ScaledDot] {
        for residual in [true, false] {
            let err = check_full_model(similarity, residual, TaskKind::Regression, 1e-4);
            assert!(err < 1e-4, "{similarity:?} residual={residual}: {err}");
        }
    }
}

#[test]
fn two_modality_wsce_checks_at_eps_1e5() {
    let schema = schema_with(&[("text", 5), ("ocr", 5)], TaskKind::Multilabel, 2);
    let config = toy_config(&schema, Similarity::Additive, true);
    let sample = sample_from(
        "s",
        &[("text", &["tok00", "tok01", "tok02"]), ("ocr", &["tok03", "tok04"])],
        Label::MultiHot(vec![1, 0]),
        &schema,
    );
    let vocab = vocab_for(std::slice::from_ref(&sample));
    let mut params = init_params_in_range(&config, &schema, vocab.len(), 2, 0.8).unwrap();
    let f = |p: &Parameters, tape: &mut Tape| {
        let bound = BoundModel::bind(tape, p, &schema, &config)?;
        let vars = forward_on_tape(tape, &sample, &vocab, &schema, &bound, &config)?;
        let stacked = tape.concat_rows(&[vars.prediction])?;
        wsce_loss(tape, stacked, &[vec![1, 0]], &[1.0, 1.0], WsceMode::FullBce)
    };
    let by_param = grad_check_by_param(&f, &mut params, 1e-5).unwrap();
    let worst = by_param.values().fold(0.0f64, |acc, e| acc.max(*e));
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn full_model_with_mixer_gradients_check() {
    let schema = schema_with(&[("a", 3), ("b", 3)], TaskKind::Binary, 1);
    let mut config = toy_config(&schema, Similarity::Additive, true);
    config.d = 4;
    config.use_mixer = true;
    let sample = sample_from(
        "s",
        &[("a", &["tok00", "tok01"]), ("b", &["tok02"])],
        Label::Binary(1),
        &schema,
    );
    let vocab = vocab_for(std::slice::from_ref(&sample));
    let mut params = init_params_in_range(&config, &schema, vocab.len(), 17, 0.8).unwrap();
    let f = |p: &Parameters, tape: &mut Tape| {
        let bound = BoundModel::bind(tape, p, &schema, &config)?;
        let vars = forward_on_tape(tape, &sample, &vocab, &schema, &bound, &config)?;
        let stacked = tape.concat_rows(&[vars.prediction])?;
        wsce_loss(tape, stacked, &[vec![1]], &[1.0], WsceMode::FullBce)
    };
    let by_param = grad_check_by_param(&f, &mut params, 1e-4).unwrap();
    for (name, err) in &by_param {
        assert!(*err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn precomputed_states_match_toy_encoder_forward() {
    // exporting the toy encoder's states and re-running through the frozen
    // path reproduces the prediction exactly
    let schema = toy_schema(TaskKind::Binary, 1);
    let config = toy_config(&schema, Similarity::Additive, true);
    let sample = sample_from(
        "s",
        &[("text", &["tok00", "tok01"]), ("ocr", &["tok02"])],
        Label::Binary(1),
        &schema,
    );
    let vocab = vocab_for(std::slice::from_ref(&sample));
    let params = init_params(&config, &schema, vocab.len(), 21).unwrap();

    let unified = encode(&sample, &vocab, &schema).unwrap();
    let hidden = encode_hidden(&unified, &params).unwrap();
    let direct = forward(&sample, &vocab, &schema, &params, &config).unwrap();
    let frozen =
        seqset_core::mra::forward_precomputed(&hidden, &schema, &params, &config).unwrap();
    assert_eq!(direct.prediction, frozen.prediction);
    assert_eq!(direct.record, frozen.record);
}
