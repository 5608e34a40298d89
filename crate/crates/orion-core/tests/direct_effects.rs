//! Direct-effect machinery checked against independent routes: the additive
//! decomposition must reassemble the final residual, the total effect through
//! the logits node must match plain forward passes, and patching all direct
//! paths must equal patching the logits node.

use orion_core::intervene::{corrupted_pool, direct_effect_report, metric_from_logits};
use orion_core::model::{forward, forward_components, AttnVariant, Model, ModelConfig, RotaryConfig};
use orion_core::task::{bank_single_token_words, distinct_requests, generate_task, Request, TaskKind};
use orion_core::tokenizer::Vocabulary;

fn vocab() -> Vocabulary {
    let words = bank_single_token_words().unwrap();
    let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
    Vocabulary::synthetic(&refs).unwrap()
}

fn tiny(variant: AttnVariant, vocab: &Vocabulary, seed: u64) -> Model {
    let cfg = ModelConfig {
        model_id: "de-tiny".into(),
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_mlp: 16,
        vocab_size: vocab.vocab_size(),
        max_seq_len: 2048,
        attn_variant: variant,
        ln_eps: 1e-5,
        rotary: match variant {
            AttnVariant::Serial => None,
            AttnVariant::Parallel => Some(RotaryConfig { rot_dims: 4, base: 10000.0 }),
        },
    };
    Model::random(cfg, seed).unwrap()
}

#[test]
fn component_decomposition_reassembles_final_residual() {
    let vocab = vocab();
    for variant in [AttnVariant::Serial, AttnVariant::Parallel] {
        let model = tiny(variant, &vocab, 3);
        let ids = vocab.encode_prompt("The city of Valencia.").unwrap();
        let ct = forward_components(&model, &ids).unwrap();
        for i in 0..model.cfg.d_model {
            let parts: f32 = ct.z0_last[i]
                + ct.bo_sum[i]
                + ct.heads_last.iter().flatten().map(|h| h[i]).sum::<f32>()
                + ct.mlp_last.iter().map(|m| m[i]).sum::<f32>();
            assert!(
                (parts - ct.final_last[i]).abs() <= 1e-4,
                "{variant:?} dim {i}: parts {parts} vs final {}",
                ct.final_last[i]
            );
        }
    }
}

#[test]
fn total_effect_matches_plain_forward_scoring() {
    let vocab = vocab();
    let ds = generate_task(TaskKind::QaBase, 11, 8, &vocab).unwrap();
    let model = tiny(AttnVariant::Serial, &vocab, 5);
    let requests: Vec<Request> = distinct_requests(&ds).into_iter().map(|(r, _)| r).collect();

    let x = &ds.examples[0];
    let picks = corrupted_pool(&ds, 0, 3, 11).unwrap();
    let corrupted: Vec<_> = picks.iter().map(|&j| &ds.examples[j]).collect();
    let report =
        direct_effect_report(&model, &vocab, &requests, x, &corrupted, &x.label_token).unwrap();

    // The same quantity through the public forward path: clean metric minus
    // the mean corrupted metric, full logits, no component machinery.
    let score = |ex: &orion_core::task::OrionExample| -> f64 {
        let ids = vocab.encode_prompt(&ex.prompt_text).unwrap();
        let out = forward(&model, &ids, &[], &[]).unwrap();
        let last = out.logits.row(ids.len() - 1);
        metric_from_logits(&vocab, &requests, x, last, &x.label_token).unwrap()
    };
    let clean = score(x);
    let mean_cor: f64 = corrupted.iter().map(|c| clean - score(c)).sum::<f64>() / 3.0;
    assert!(
        (report.total_effect - mean_cor).abs() <= 1e-4,
        "TE {} vs plain-forward {}",
        report.total_effect,
        mean_cor
    );
}

#[test]
fn patching_all_direct_paths_equals_patching_logits() {
    let vocab = vocab();
    let ds = generate_task(TaskKind::QaBase, 11, 8, &vocab).unwrap();
    let requests: Vec<Request> = distinct_requests(&ds).into_iter().map(|(r, _)| r).collect();

    for (variant, seed) in [(AttnVariant::Serial, 5), (AttnVariant::Parallel, 6)] {
        let model = tiny(variant, &vocab, seed);
        for x_index in [0usize, 1] {
            let x = &ds.examples[x_index];
            let picks = corrupted_pool(&ds, x_index, 3, 11).unwrap();
            let corrupted: Vec<_> = picks.iter().map(|&j| &ds.examples[j]).collect();
            let report =
                direct_effect_report(&model, &vocab, &requests, x, &corrupted, &x.label_token)
                    .unwrap();
            assert!(
                (report.total_effect - report.te_all_paths).abs() <= 1e-4,
                "{variant:?} x{x_index}: TE {} vs all-paths {}",
                report.total_effect,
                report.te_all_paths
            );
        }
    }
}

#[test]
fn swapping_identical_contributions_has_zero_effect() {
    let vocab = vocab();
    let ds = generate_task(TaskKind::QaBase, 11, 8, &vocab).unwrap();
    let requests: Vec<Request> = distinct_requests(&ds).into_iter().map(|(r, _)| r).collect();
    let model = tiny(AttnVariant::Serial, &vocab, 5);

    // Corrupted input identical to x: every direct effect and the total
    // effect must vanish.
    let x = &ds.examples[0];
    let corrupted = [x];
    let report =
        direct_effect_report(&model, &vocab, &requests, x, &corrupted, &x.label_token).unwrap();
    assert!(report.total_effect.abs() <= 1e-6, "TE {}", report.total_effect);
    assert!(report.te_all_paths.abs() <= 1e-6);
    for e in &report.entries {
        assert!(e.de.abs() <= 1e-6, "{}: de {}", e.component, e.de);
    }
}
