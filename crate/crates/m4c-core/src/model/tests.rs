use super::*;
use crate::features::{DetectedObject, OcrToken, Question, ScenePack};
use crate::gradcheck::check_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        max_question_words: 3,
        max_objects: 2,
        max_ocr_tokens: 3,
        max_decode_steps: 3,
        vocab_size: 6,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn tiny_dims() -> FeatureDims {
    FeatureDims {
        question: QuestionFeatures::Learned { vocab_size: 5 },
        object_appearance: 4,
        ocr_appearance: 4,
        ocr_word: 6,
    }
}

fn tiny_params(seed: u64) -> ModelParams {
    ModelParams::init(&tiny_config(), tiny_dims(), 6, seed).unwrap()
}

fn unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    v.into_iter().map(|x| x / norm).collect()
}

fn tiny_scene(seed: u64) -> ScenePack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texts = ["bud", "light", "exit"];
    let ocr = (0..3)
        .map(|i| OcrToken {
            text: texts[i].to_string(),
            bbox: [10.0 * i as f64, 5.0, 10.0 * i as f64 + 8.0, 12.0],
            feat_appearance: unit_vec(&mut rng, 4),
            feat_word: unit_vec(&mut rng, 6),
        })
        .collect();
    let objects = (0..2)
        .map(|_| DetectedObject {
            bbox: [0.0, 0.0, 40.0, 30.0],
            feat_appearance: unit_vec(&mut rng, 4),
        })
        .collect();
    ScenePack {
        id: "scene".into(),
        image_size: (64.0, 48.0),
        question: Question::TokenIds(vec![0, 3, 1]),
        objects,
        ocr,
        answers: vec!["bud light".into()],
    }
}

fn teacher_steps() -> Vec<StepInput> {
    vec![StepInput::Vocab(BEGIN_INDEX), StepInput::Ocr(0), StepInput::Ocr(1)]
}

/// Weighted scalar readout over both score heads so every logit matters.
fn scores_scalar(graph: &mut Graph<'_>, pass: &ForwardPass, seed: u64) -> crate::tensor::TensorId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xface);
    let vshape = graph.tape.shape(pass.vocab_logits).to_vec();
    let pshape = graph.tape.shape(pass.pointer_logits).to_vec();
    let wv: Vec<f64> = (0..vshape.iter().product::<usize>())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let wp: Vec<f64> = (0..pshape.iter().product::<usize>())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let wv = graph.tape.leaf(wv, vshape, false).unwrap();
    let wp = graph.tape.leaf(wp, pshape, false).unwrap();
    let pv = graph.tape.mul(pass.vocab_logits, wv).unwrap();
    let pp = graph.tape.mul(pass.pointer_logits, wp).unwrap();
    // Mean-scale readouts keep |f| small so the finite-difference
    // cancellation noise stays well below the tolerance.
    let sv = graph.tape.mean_all(pv);
    let sp = graph.tape.mean_all(pp);
    graph.tape.add(sv, sp).unwrap()
}

fn param_grad_check(name: &str, seed: u64) -> f64 {
    let base = tiny_params(seed);
    let config = tiny_config();
    let scene = tiny_scene(seed);
    let steps = teacher_steps();
    let x0 = base.store.get(name).data.clone();
    let f = |x: &[f64]| {
        let mut params = base.clone();
        params.store.get_mut(name).data = x.to_vec();
        let mut graph = Graph::new(&params);
        let pass = forward_scene(&mut graph, &config, &scene, &steps, None).unwrap();
        let loss = scores_scalar(&mut graph, &pass, seed);
        graph.backward(loss).unwrap();
        let g = graph
            .grad_of(name)
            .expect("parameter participates in the forward pass")
            .to_vec();
        (graph.tape.data(loss)[0], g)
    };
    check_gradients(f, &x0, 1e-5)
}

// ── embed_question ──────────────────────────────────────────────────────

#[test]
fn empty_question_gives_zero_block() {
    let params = tiny_params(1);
    let mut graph = Graph::new(&params);
    let (x, valid) = embed_question(&mut graph, &tiny_config(), &Question::TokenIds(vec![])).unwrap();
    assert_eq!(valid, 0);
    assert_eq!(graph.tape.shape(x), &[3, 8]);
    assert!(graph.tape.data(x).iter().all(|&v| v == 0.0));
}

#[test]
fn over_long_question_keeps_first_k_tokens() {
    let params = tiny_params(1);
    let config = tiny_config();
    let mut graph = Graph::new(&params);
    let (full, valid) =
        embed_question(&mut graph, &config, &Question::TokenIds(vec![0, 1, 2, 3, 4])).unwrap();
    assert_eq!(valid, 3);
    let mut graph2 = Graph::new(&params);
    let (first_k, _) =
        embed_question(&mut graph2, &config, &Question::TokenIds(vec![0, 1, 2])).unwrap();
    assert_eq!(graph.tape.data(full), graph2.tape.data(first_k));
}

#[test]
fn token_order_matters_through_positions() {
    let params = tiny_params(2);
    let config = tiny_config();
    let mut g1 = Graph::new(&params);
    let (a, _) = embed_question(&mut g1, &config, &Question::TokenIds(vec![1, 2, 3])).unwrap();
    let mut g2 = Graph::new(&params);
    let (b, _) = embed_question(&mut g2, &config, &Question::TokenIds(vec![2, 1, 3])).unwrap();
    let d = config.embed_dim;
    let da = g1.tape.data(a);
    let db = g2.tape.data(b);
    assert_ne!(da[..d], db[..d], "swapped token must change slot 0");
    assert_ne!(da[d..2 * d], db[d..2 * d], "swapped token must change slot 1");
    assert_eq!(da[2 * d..], db[2 * d..], "untouched slot must not change");
}

#[test]
fn unknown_token_id_is_a_validation_error() {
    let params = tiny_params(1);
    let mut graph = Graph::new(&params);
    let err = embed_question(&mut graph, &tiny_config(), &Question::TokenIds(vec![99])).unwrap_err();
    assert!(matches!(err, crate::Error::Validation(_)));
}

// ── embed_objects / embed_ocr ───────────────────────────────────────────

#[test]
fn zero_objects_give_zero_block() {
    let params = tiny_params(3);
    let mut scene = tiny_scene(3);
    scene.objects.clear();
    let mut graph = Graph::new(&params);
    let (x, valid) = embed_objects(&mut graph, &tiny_config(), &scene).unwrap();
    assert_eq!(valid, 0);
    assert!(graph.tape.data(x).iter().all(|&v| v == 0.0));
}

#[test]
fn zero_bbox_projection_makes_objects_location_blind() {
    let mut params = tiny_params(4);
    let n = params.store.get("object.bbox_proj").numel();
    params.store.get_mut("object.bbox_proj").data = vec![0.0; n];
    let config = tiny_config();

    let scene_a = tiny_scene(4);
    let mut scene_b = tiny_scene(4);
    for obj in &mut scene_b.objects {
        obj.bbox = [5.0, 5.0, 20.0, 20.0];
    }
    let mut ga = Graph::new(&params);
    let (xa, _) = embed_objects(&mut ga, &config, &scene_a).unwrap();
    let mut gb = Graph::new(&params);
    let (xb, _) = embed_objects(&mut gb, &config, &scene_b).unwrap();
    assert_eq!(ga.tape.data(xa), gb.tape.data(xb));
}

#[test]
fn object_projection_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        for name in ["object.appearance_proj", "object.bbox_proj"] {
            let err = param_grad_check(name, seed);
            assert!(err <= 1e-5, "{name} seed {seed}: rel err {err}");
        }
    }
}

#[test]
fn ocr_embedding_is_permutation_equivariant_bitwise() {
    let params = tiny_params(5);
    let config = tiny_config();
    let scene = tiny_scene(5);
    let mut permuted = scene.clone();
    permuted.ocr = vec![scene.ocr[2].clone(), scene.ocr[0].clone(), scene.ocr[1].clone()];

    let mut ga = Graph::new(&params);
    let (xa, _) = embed_ocr(&mut ga, &config, &scene).unwrap();
    let mut gb = Graph::new(&params);
    let (xb, _) = embed_ocr(&mut gb, &config, &permuted).unwrap();

    let d = config.embed_dim;
    let a = ga.tape.data(xa);
    let b = gb.tape.data(xb);
    // permутation [2,0,1]: b row 0 == a row 2, b row 1 == a row 0, b row 2 == a row 1
    assert_eq!(b[..d], a[2 * d..3 * d]);
    assert_eq!(b[d..2 * d], a[..d]);
    assert_eq!(b[2 * d..3 * d], a[d..2 * d]);
}

#[test]
fn all_zero_ocr_features_embed_to_zero() {
    let params = tiny_params(6);
    let mut scene = tiny_scene(6);
    scene.ocr = vec![OcrToken {
        text: "##".into(), // no alphabet chars: zero PHOC
        bbox: [0.0, 0.0, 0.0, 0.0],
        feat_appearance: vec![0.0; 4],
        feat_word: vec![0.0; 6],
    }];
    let mut graph = Graph::new(&params);
    let (x, valid) = embed_ocr(&mut graph, &tiny_config(), &scene).unwrap();
    assert_eq!(valid, 1);
    assert!(graph.tape.data(x).iter().all(|&v| v == 0.0));
}

#[test]
fn each_ocr_feature_family_contributes() {
    let params = tiny_params(7);
    let config = tiny_config();
    let base = tiny_scene(7);
    let mut graph = Graph::new(&params);
    let (xb, _) = embed_ocr(&mut graph, &config, &base).unwrap();
    let baseline = graph.tape.data(xb).to_vec();

    let ablations: Vec<ScenePack> = vec![
        {
            let mut s = base.clone();
            s.ocr[0].feat_word = vec![0.0; 6];
            s
        },
        {
            let mut s = base.clone();
            s.ocr[0].feat_appearance = vec![0.0; 4];
            s
        },
        {
            let mut s = base.clone();
            s.ocr[0].text = "##".into(); // kills PHOC only
            s
        },
        {
            let mut s = base.clone();
            s.ocr[0].bbox = [0.0, 0.0, 0.0, 0.0];
            s
        },
    ];
    for (i, scene) in ablations.iter().enumerate() {
        let mut g = Graph::new(&params);
        let (x, _) = embed_ocr(&mut g, &config, scene).unwrap();
        assert_ne!(
            g.tape.data(x),
            &baseline[..],
            "ablating feature family {i} must change the embedding"
        );
    }
}

// ── build_joint_mask ────────────────────────────────────────────────────

#[test]
fn joint_mask_follows_prefix_lm_rule() {
    let config = ModelConfig {
        max_question_words: 1,
        max_objects: 1,
        max_ocr_tokens: 1,
        max_decode_steps: 2,
        ..tiny_config()
    };
    let mask = build_joint_mask(1, 1, 1, &config);
    let s = 5;
    let allowed = |row: usize| -> Vec<usize> {
        (0..s).filter(|&c| mask[row * s + c] == 1.0).collect()
    };
    // entity rows: the 3 entities, no decode slots
    assert_eq!(allowed(0), vec![0, 1, 2]);
    assert_eq!(allowed(1), vec![0, 1, 2]);
    assert_eq!(allowed(2), vec![0, 1, 2]);
    // decode step 1: entities + itself; step 2: entities + both steps
    assert_eq!(allowed(3), vec![0, 1, 2, 3]);
    assert_eq!(allowed(4), vec![0, 1, 2, 3, 4]);
}

#[test]
fn joint_mask_with_no_decode_steps_is_bidirectional() {
    let config = ModelConfig {
        max_question_words: 2,
        max_objects: 1,
        max_ocr_tokens: 1,
        max_decode_steps: 0,
        ..tiny_config()
    };
    let mask = build_joint_mask(2, 1, 1, &config);
    assert!(mask.iter().all(|&v| v == 1.0));
}

#[test]
fn joint_mask_padding_neither_attends_nor_is_attended() {
    let config = tiny_config(); // K=3 M=2 N=3 T=3
    let mask = build_joint_mask(2, 1, 2, &config);
    let s = config.seq_len();
    // question slot 2, object slot 1, ocr slot 2 are padding
    for &pad in &[2usize, 3 + 1, 3 + 2 + 2] {
        for i in 0..s {
            assert_eq!(mask[pad * s + i], 0.0, "padding row {pad} must not attend");
            assert_eq!(mask[i * s + pad], 0.0, "padding col {pad} must not be attended");
        }
    }
}

#[test]
fn joint_mask_is_invariant_under_ocr_slot_permutation() {
    let config = tiny_config();
    let mask = build_joint_mask(3, 2, 3, &config);
    let s = config.seq_len();
    let k_m = config.max_question_words + config.max_objects;
    // permute the three valid ocr slots by [2,0,1] in rows and columns
    let perm = |i: usize| -> usize {
        if (k_m..k_m + 3).contains(&i) {
            k_m + [2, 0, 1][i - k_m]
        } else {
            i
        }
    };
    for r in 0..s {
        for c in 0..s {
            assert_eq!(mask[r * s + c], mask[perm(r) * s + perm(c)]);
        }
    }
}

// ── transformer_forward ─────────────────────────────────────────────────

fn zero_attention_and_ffn(params: &mut ModelParams, layers: usize) {
    for layer in 0..layers {
        for name in [
            format!("layer{layer}.attn.output.weight"),
            format!("layer{layer}.ffn.contract.weight"),
        ] {
            let n = params.store.get(&name).numel();
            params.store.get_mut(&name).data = vec![0.0; n];
        }
    }
}

#[test]
fn zeroed_sublayers_reduce_to_double_layer_norm() {
    let mut params = tiny_params(8);
    zero_attention_and_ffn(&mut params, 1);
    let config = tiny_config();
    let s = config.seq_len();
    let d = config.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let x0: Vec<f64> = (0..s * d).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut graph = Graph::new(&params);
    let x = graph.tape.leaf(x0.clone(), vec![s, d], false).unwrap();
    let mask = vec![1.0; s * s];
    let out = transformer_forward(&mut graph, &config, x, &mask, &mut None).unwrap();

    // gamma=1, beta=0: expected = LN(LN(row)) computed directly
    let ln = |row: &[f64]| -> Vec<f64> {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-12).sqrt();
        row.iter().map(|v| (v - mean) * inv).collect()
    };
    for (row, orow) in x0.chunks_exact(d).zip(graph.tape.data(out).chunks_exact(d)) {
        let expected = ln(&ln(row));
        for (e, o) in expected.iter().zip(orow) {
            assert!((e - o).abs() < 1e-12, "expected {e}, got {o}");
        }
    }
}

#[test]
fn masked_slot_perturbation_does_not_leak() {
    let params = tiny_params(9);
    let config = tiny_config();
    let mut scene = tiny_scene(9);
    scene.ocr.truncate(2); // ocr slot 2 becomes padding
    let steps = vec![StepInput::Vocab(BEGIN_INDEX)];

    let mut g1 = Graph::new(&params);
    let p1 = forward_scene(&mut g1, &config, &scene, &steps, None).unwrap();

    // Perturbing a padding slot is impossible through the public API (padding
    // carries no input), so perturb a *decode* slot beyond the provided steps
    // and verify entity outputs plus earlier decode outputs are bit-identical.
    let steps_perturbed = vec![StepInput::Vocab(BEGIN_INDEX), StepInput::Ocr(1)];
    let mut g2 = Graph::new(&params);
    let p2 = forward_scene(&mut g2, &config, &scene, &steps_perturbed, None).unwrap();

    assert_eq!(g1.tape.data(p1.z_question), g2.tape.data(p2.z_question));
    assert_eq!(g1.tape.data(p1.z_objects), g2.tape.data(p2.z_objects));
    assert_eq!(g1.tape.data(p1.z_ocr), g2.tape.data(p2.z_ocr));
    let d = config.embed_dim;
    assert_eq!(
        g1.tape.data(p1.z_decode)[..d],
        g2.tape.data(p2.z_decode)[..d],
        "decode step 1 must be unaffected by step 2's input"
    );
}

#[test]
fn transformer_parameter_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        for name in [
            "layer0.attn.query.weight",
            "layer0.attn.output.bias",
            "layer0.ffn.expand.weight",
            "layer0.attn_norm.gamma",
        ] {
            let err = param_grad_check(name, seed);
            assert!(err <= 1e-4, "{name} seed {seed}: rel err {err}");
        }
    }
}

#[test]
fn head_parameter_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        for name in [
            "vocab_head.weight",
            "vocab_head.bias",
            "pointer.ocr_proj",
            "pointer.dec_proj",
            "pointer.ocr_bias",
            "decoder.step_embedding",
            "decoder.kind_embedding",
            "ocr.phoc_proj",
            "question.token_embedding",
        ] {
            let err = param_grad_check(name, seed);
            assert!(err <= 1e-4, "{name} seed {seed}: rel err {err}");
        }
    }
}

// ── scoring heads ───────────────────────────────────────────────────────

#[test]
fn vocab_scores_with_zero_weights_equal_biases() {
    let mut params = tiny_params(10);
    let n = params.store.get("vocab_head.weight").numel();
    params.store.get_mut("vocab_head.weight").data = vec![0.0; n];
    params.store.get_mut("vocab_head.bias").data = vec![0.5, -1.0, 2.0, 0.0, 3.5, -0.25];

    let config = tiny_config();
    let scene = tiny_scene(10);
    let mut graph = Graph::new(&params);
    let pass = forward_scene(&mut graph, &config, &scene, &teacher_steps(), None).unwrap();
    for t in 0..config.max_decode_steps {
        let row = &graph.tape.data(pass.vocab_logits)[t * 6..(t + 1) * 6];
        assert_eq!(row, &[0.5, -1.0, 2.0, 0.0, 3.5, -0.25]);
    }
}

#[test]
fn vocab_scores_pick_coordinates_under_identity_rows() {
    // Weight rows e_i with zero bias read out z's coordinates: y_i = z_i.
    let mut params = tiny_params(25);
    let d = 8;
    let v = 6;
    let mut rows = vec![0.0; v * d];
    for i in 0..v {
        rows[i * d + i] = 1.0;
    }
    params.store.get_mut("vocab_head.weight").data = rows;
    params.store.get_mut("vocab_head.bias").data = vec![0.0; v];

    let z: Vec<f64> = (0..d).map(|i| i as f64 * 0.5 - 1.0).collect();
    let mut graph = Graph::new(&params);
    let z_dec = graph.tape.leaf(z.clone(), vec![1, d], false).unwrap();
    let scores = vocab_scores(&mut graph, z_dec).unwrap();
    assert_eq!(graph.tape.data(scores), &z[..v]);
}

#[test]
fn pointer_score_of_identical_vectors_is_squared_norm() {
    // With identity projections and zero biases, score = z_ocr . z_dec = |u|^2.
    let params = tiny_params(11);
    let mut p = params.clone();
    let d = 8;
    let mut eye = vec![0.0; d * d];
    for i in 0..d {
        eye[i * d + i] = 1.0;
    }
    p.store.get_mut("pointer.ocr_proj").data = eye.clone();
    p.store.get_mut("pointer.dec_proj").data = eye;
    p.store.get_mut("pointer.ocr_bias").data = vec![0.0; d];
    p.store.get_mut("pointer.dec_bias").data = vec![0.0; d];

    let u: Vec<f64> = (0..d).map(|i| 0.25 * (i as f64 + 1.0)).collect();
    let norm_sq: f64 = u.iter().map(|v| v * v).sum();
    let mut graph = Graph::new(&p);
    let z_dec = graph.tape.leaf(u.clone(), vec![1, d], false).unwrap();
    let z_ocr = graph.tape.leaf(u.clone(), vec![1, d], false).unwrap();
    let scores = pointer_scores(&mut graph, z_dec, z_ocr).unwrap();
    assert!((graph.tape.data(scores)[0] - norm_sq).abs() < 1e-12);
}

#[test]
fn no_ocr_tokens_fall_back_to_vocabulary_only() {
    let params = tiny_params(12);
    let config = tiny_config();
    let mut scene = tiny_scene(12);
    scene.ocr.clear();
    let mut graph = Graph::new(&params);
    let pass = forward_scene(
        &mut graph,
        &config,
        &scene,
        &[StepInput::Vocab(BEGIN_INDEX)],
        None,
    )
    .unwrap();
    assert_eq!(pass.ocr_valid, 0);
    let scores = step_scores(&graph, &pass, &config, 0);
    assert_eq!(scores.len(), 6 + 3);
    assert!(scores[..6].iter().all(|v| v.is_finite()));
    assert!(scores[6..].iter().all(|&v| v == SCORE_MASKED));
}

#[test]
fn step_scores_apply_ablation_masks() {
    let params = tiny_params(13);
    let scene = tiny_scene(13);
    let steps = [StepInput::Vocab(BEGIN_INDEX)];

    let no_vocab = ModelConfig {
        enable_fixed_vocab: false,
        ..tiny_config()
    };
    let mut graph = Graph::new(&params);
    let pass = forward_scene(&mut graph, &no_vocab, &scene, &steps, None).unwrap();
    let scores = step_scores(&graph, &pass, &no_vocab, 0);
    assert!(scores[0].is_finite() && scores[1].is_finite(), "specials stay scored");
    assert!(scores[2..6].iter().all(|&v| v == SCORE_MASKED));
    assert!(scores[6..9].iter().all(|v| v.is_finite()));

    let no_copy = ModelConfig {
        enable_ocr_copy: false,
        ..tiny_config()
    };
    let mut graph = Graph::new(&params);
    let pass = forward_scene(&mut graph, &no_copy, &scene, &steps, None).unwrap();
    let scores = step_scores(&graph, &pass, &no_copy, 0);
    assert!(scores[..6].iter().all(|v| v.is_finite()));
    assert!(scores[6..].iter().all(|&v| v == SCORE_MASKED));
}

// ── decoder step inputs ─────────────────────────────────────────────────

#[test]
fn first_step_input_is_begin_plus_position_plus_kind() {
    let params = tiny_params(14);
    let config = tiny_config();
    let mut graph = Graph::new(&params);
    let x_ocr = graph.tape.zeros(3, 8);
    let rows = decoder_input_rows(&mut graph, &config, x_ocr, 3, &[StepInput::Vocab(BEGIN_INDEX)])
        .unwrap();
    let got = &graph.tape.data(rows)[..8];
    let w = &params.store.get("vocab_head.weight").data[..8];
    let pos = &params.store.get("decoder.step_embedding").data[..8];
    let kind = &params.store.get("decoder.kind_embedding").data[..8];
    for i in 0..8 {
        assert!((got[i] - (w[i] + pos[i] + kind[i])).abs() < 1e-15);
    }
}

#[test]
fn ocr_step_input_uses_that_tokens_embedding() {
    let params = tiny_params(15);
    let config = tiny_config();
    let scene = tiny_scene(15);
    let mut graph = Graph::new(&params);
    let (x_ocr, valid) = embed_ocr(&mut graph, &config, &scene).unwrap();
    let rows = decoder_input_rows(
        &mut graph,
        &config,
        x_ocr,
        valid,
        &[StepInput::Vocab(BEGIN_INDEX), StepInput::Ocr(2)],
    )
    .unwrap();
    let d = 8;
    let got = &graph.tape.data(rows)[d..2 * d];
    let base = &graph.tape.data(x_ocr)[2 * d..3 * d];
    let pos = &params.store.get("decoder.step_embedding").data[d..2 * d];
    let kind = &params.store.get("decoder.kind_embedding").data[d..2 * d]; // kind 1 = ocr
    for i in 0..d {
        assert!((got[i] - (base[i] + pos[i] + kind[i])).abs() < 1e-15);
    }
}

#[test]
fn vocab_and_ocr_routes_to_same_word_differ_by_kind_embedding() {
    // If a word exists in both the vocabulary and OCR, feeding it back as a
    // vocab pick vs an OCR pick must produce different step inputs.
    let params = tiny_params(16);
    let config = tiny_config();
    let scene = tiny_scene(16);
    let mut graph = Graph::new(&params);
    let (x_ocr, valid) = embed_ocr(&mut graph, &config, &scene).unwrap();
    let via_vocab = decoder_input_rows(
        &mut graph,
        &config,
        x_ocr,
        valid,
        &[StepInput::Vocab(BEGIN_INDEX), StepInput::Vocab(2)],
    )
    .unwrap();
    let via_ocr = decoder_input_rows(
        &mut graph,
        &config,
        x_ocr,
        valid,
        &[StepInput::Vocab(BEGIN_INDEX), StepInput::Ocr(0)],
    )
    .unwrap();
    let d = 8;
    assert_ne!(
        graph.tape.data(via_vocab)[d..2 * d],
        graph.tape.data(via_ocr)[d..2 * d]
    );
}

#[test]
fn out_of_range_ocr_step_input_is_internal_error() {
    let params = tiny_params(17);
    let config = tiny_config();
    let mut graph = Graph::new(&params);
    let x_ocr = graph.tape.zeros(3, 8);
    let err = decoder_input_rows(
        &mut graph,
        &config,
        x_ocr,
        1,
        &[StepInput::Vocab(BEGIN_INDEX), StepInput::Ocr(1)],
    )
    .unwrap_err();
    assert!(matches!(err, crate::Error::Internal(_)));
}

// ── full-pass invariants ────────────────────────────────────────────────

#[test]
fn ocr_permutation_equivariance_of_full_pass() {
    let params = tiny_params(18);
    let config = tiny_config();
    let scene = tiny_scene(18);
    let perm = [2usize, 0, 1];
    let mut permuted = scene.clone();
    permuted.ocr = perm.iter().map(|&i| scene.ocr[i].clone()).collect();

    // Step inputs that reference OCR tokens must be relabeled through the
    // permutation: old index i lives at new position perm^-1(i).
    let inv = |i: usize| perm.iter().position(|&p| p == i).unwrap();
    let steps_a = teacher_steps();
    let steps_b: Vec<StepInput> = steps_a
        .iter()
        .map(|s| match *s {
            StepInput::Ocr(i) => StepInput::Ocr(inv(i)),
            v => v,
        })
        .collect();

    let mut ga = Graph::new(&params);
    let pa = forward_scene(&mut ga, &config, &scene, &steps_a, None).unwrap();
    let mut gb = Graph::new(&params);
    let pb = forward_scene(&mut gb, &config, &permuted, &steps_b, None).unwrap();

    let d = config.embed_dim;
    let za = ga.tape.data(pa.z_ocr);
    let zb = gb.tape.data(pb.z_ocr);
    for new_slot in 0..3 {
        let old_slot = perm[new_slot];
        for j in 0..d {
            let diff = (zb[new_slot * d + j] - za[old_slot * d + j]).abs();
            assert!(diff <= 1e-12, "z_ocr slot {new_slot} dim {j}: diff {diff}");
        }
    }
    let ya = ga.tape.data(pa.pointer_logits);
    let yb = gb.tape.data(pb.pointer_logits);
    for t in 0..config.max_decode_steps {
        for new_slot in 0..3 {
            let old_slot = perm[new_slot];
            let diff = (yb[t * 3 + new_slot] - ya[t * 3 + old_slot]).abs();
            assert!(diff <= 1e-12, "pointer step {t} slot {new_slot}: diff {diff}");
        }
    }
    let va = ga.tape.data(pa.vocab_logits);
    let vb = gb.tape.data(pb.vocab_logits);
    for (a, b) in va.iter().zip(vb) {
        assert!((a - b).abs() <= 1e-12);
    }
    let dza = ga.tape.data(pa.z_decode);
    let dzb = gb.tape.data(pb.z_decode);
    for (a, b) in dza.iter().zip(dzb) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn entity_outputs_ignore_decoder_inputs_bitwise() {
    let params = tiny_params(19);
    let config = tiny_config();
    let scene = tiny_scene(19);
    let mut ga = Graph::new(&params);
    let pa = forward_scene(&mut ga, &config, &scene, &[StepInput::Vocab(BEGIN_INDEX)], None)
        .unwrap();
    let mut gb = Graph::new(&params);
    let pb = forward_scene(&mut gb, &config, &scene, &teacher_steps(), None).unwrap();
    assert_eq!(ga.tape.data(pa.z_question), gb.tape.data(pb.z_question));
    assert_eq!(ga.tape.data(pa.z_objects), gb.tape.data(pb.z_objects));
    assert_eq!(ga.tape.data(pa.z_ocr), gb.tape.data(pb.z_ocr));
}

#[test]
fn decode_outputs_are_causal_bitwise() {
    let params = tiny_params(20);
    let config = tiny_config();
    let scene = tiny_scene(20);
    let mut ga = Graph::new(&params);
    let pa = forward_scene(
        &mut ga,
        &config,
        &scene,
        &[StepInput::Vocab(BEGIN_INDEX), StepInput::Ocr(0)],
        None,
    )
    .unwrap();
    let mut gb = Graph::new(&params);
    let pb = forward_scene(
        &mut gb,
        &config,
        &scene,
        &[StepInput::Vocab(BEGIN_INDEX), StepInput::Ocr(0), StepInput::Vocab(3)],
        None,
    )
    .unwrap();
    let d = config.embed_dim;
    assert_eq!(
        ga.tape.data(pa.z_decode)[..2 * d],
        gb.tape.data(pb.z_decode)[..2 * d]
    );
    let v = params.vocab_len;
    assert_eq!(
        ga.tape.data(pa.vocab_logits)[..2 * v],
        gb.tape.data(pb.vocab_logits)[..2 * v]
    );
    let n = config.max_ocr_tokens;
    assert_eq!(
        ga.tape.data(pa.pointer_logits)[..2 * n],
        gb.tape.data(pb.pointer_logits)[..2 * n]
    );
}

#[test]
fn dropout_is_seeded_and_train_eval_differ() {
    let mut params = tiny_params(21);
    let _ = &mut params;
    let config = ModelConfig {
        dropout: 0.5,
        ..tiny_config()
    };
    let scene = tiny_scene(21);
    let steps = teacher_steps();

    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut graph = Graph::new(&params);
        let pass = forward_scene(&mut graph, &config, &scene, &steps, Some(&mut rng)).unwrap();
        graph.tape.data(pass.vocab_logits).to_vec()
    };
    assert_eq!(run(5), run(5), "same dropout seed, same output");
    assert_ne!(run(5), run(6), "different dropout seeds, different output");

    let mut graph = Graph::new(&params);
    let eval = forward_scene(&mut graph, &config, &scene, &steps, None).unwrap();
    assert_ne!(
        run(5),
        graph.tape.data(eval.vocab_logits).to_vec(),
        "train and eval modes must differ at dropout 0.5"
    );
}
