//! The network forward pass: domain-specific embeddings into the joint
//! space, the multimodal transformer with prefix-LM masking, and the two
//! decoder scoring heads (fixed vocabulary + dynamic pointer).

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{bbox_feature, phoc, Question, ScenePack};
use crate::tensor::{Tape, TensorId};

use super::config::ModelConfig;
use super::params::{ModelParams, QuestionFeatures};

/// A tape plus the parameter set it reads, with memoized parameter bindings
/// so each parameter appears as exactly one leaf (shared uses accumulate
/// their gradients in one place; the vocabulary head weight, for example, is
/// read both by the scoring head and by the decoder step inputs).
pub struct Graph<'a> {
    pub tape: Tape<'a>,
    params: &'a ModelParams,
    bindings: HashMap<String, TensorId>,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Graph {
            tape: Tape::new(),
            params,
            bindings: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'a ModelParams {
        self.params
    }

    /// Leaf handle of a named parameter, binding it on first use.
    pub fn param(&mut self, name: &str) -> TensorId {
        if let Some(&id) = self.bindings.get(name) {
            return id;
        }
        let id = self.tape.param(self.params.store.get(name));
        self.bindings.insert(name.to_string(), id);
        id
    }

    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradient of a named parameter, if it was used and backward has run.
    pub fn grad_of(&self, name: &str) -> Option<&[f64]> {
        self.bindings.get(name).and_then(|&id| self.tape.grad(id))
    }

    /// Gradients for every parameter in store order; zeros for parameters the
    /// graph never touched.
    pub fn param_grads(&self) -> Vec<Vec<f64>> {
        self.params
            .store
            .iter()
            .map(|(name, tensor)| match self.grad_of(name) {
                Some(g) => g.to_vec(),
                None => vec![0.0; tensor.numel()],
            })
            .collect()
    }
}

/// Additive pre-softmax value for disallowed attention edges. Large enough
/// that the post-softmax weight underflows to exactly 0.0 at f64.
pub const ATTENTION_MASK_OFF: f64 = -1e9;

/// Score assigned to selection candidates that are not eligible.
pub const SCORE_MASKED: f64 = f64::NEG_INFINITY;

const LAYER_NORM_EPS: f64 = 1e-12;

/// Previous-step decoder input: a fixed-vocabulary word (fed as its scoring
/// weight vector) or an OCR token (fed as its joint-space embedding).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepInput {
    Vocab(usize),
    Ocr(usize),
}

/// Tape handles produced by one forward pass over a scene.
pub struct ForwardPass {
    pub z_question: TensorId,
    pub z_objects: TensorId,
    pub z_ocr: TensorId,
    pub z_decode: TensorId,
    /// [T, vocab_len] raw vocabulary-head scores.
    pub vocab_logits: TensorId,
    /// [T, N] raw pointer-head scores (padding slots not yet masked).
    pub pointer_logits: TensorId,
    pub question_valid: usize,
    pub objects_valid: usize,
    pub ocr_valid: usize,
}

fn pad_rows(
    graph: &mut Graph<'_>,
    x: Option<TensorId>,
    valid: usize,
    total: usize,
    cols: usize,
) -> Result<TensorId> {
    match x {
        None => Ok(graph.tape.zeros(total, cols)),
        Some(x) if valid == total => Ok(x),
        Some(x) => {
            let pad = graph.tape.zeros(total - valid, cols);
            graph.tape.concat_rows(&[x, pad])
        }
    }
}

fn norm(graph: &mut Graph<'_>, prefix: &str, x: TensorId) -> Result<TensorId> {
    let gamma = graph.param(&format!("{prefix}.gamma"));
    let beta = graph.param(&format!("{prefix}.beta"));
    graph.tape.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
}

/// Embed the question into at most K d-vectors; returns the padded [K, d]
/// block and the number of valid slots.
pub fn embed_question(
    graph: &mut Graph<'_>,
    config: &ModelConfig,
    question: &Question,
) -> Result<(TensorId, usize)> {
    let k_cap = config.max_question_words;
    let d = config.embed_dim;
    match question {
        Question::TokenIds(ids) => {
            let QuestionFeatures::Learned { vocab_size } = graph.params().dims.question else {
                return Err(Error::Validation(
                    "scene has question tokens but the model ingests vectors".into(),
                ));
            };
            let ids: Vec<usize> = ids.iter().take(k_cap).copied().collect();
            for &id in &ids {
                if id >= vocab_size {
                    return Err(Error::Validation(format!(
                        "question token id {id} outside vocabulary of {vocab_size}"
                    )));
                }
            }
            if ids.is_empty() {
                return Ok((graph.tape.zeros(k_cap, d), 0));
            }
            let table = graph.param("question.token_embedding");
            let tokens = graph.tape.gather_rows(table, &ids)?;
            let pos_table = graph.param("question.position_embedding");
            let pos = graph.tape.slice_rows(pos_table, 0, ids.len())?;
            let summed = graph.tape.add(tokens, pos)?;
            let normed = norm(graph, "question.norm", summed)?;
            let padded = pad_rows(graph, Some(normed), ids.len(), k_cap, d)?;
            Ok((padded, ids.len()))
        }
        Question::Vectors(vectors) => {
            let QuestionFeatures::Ingested { dim } = graph.params().dims.question else {
                return Err(Error::Validation(
                    "scene has question vectors but the model embeds tokens".into(),
                ));
            };
            let vectors: Vec<&Vec<f64>> = vectors.iter().take(k_cap).collect();
            if vectors.is_empty() {
                return Ok((graph.tape.zeros(k_cap, d), 0));
            }
            let mut flat = Vec::with_capacity(vectors.len() * dim);
            for v in &vectors {
                if v.len() != dim {
                    return Err(Error::Validation(format!(
                        "question vector has {} dims, model ingests {dim}",
                        v.len()
                    )));
                }
                flat.extend_from_slice(v);
            }
            let x = graph.tape.leaf(flat, vec![vectors.len(), dim], false)?;
            let proj = graph.param("question.proj");
            let projected = graph.tape.matmul(x, proj)?;
            let normed = norm(graph, "question.norm", projected)?;
            let padded = pad_rows(graph, Some(normed), vectors.len(), k_cap, d)?;
            Ok((padded, vectors.len()))
        }
    }
}

/// Embed detected objects: layer-normed appearance projection plus
/// layer-normed relative-bbox projection, padded to [M, d].
pub fn embed_objects(
    graph: &mut Graph<'_>,
    config: &ModelConfig,
    scene: &ScenePack,
) -> Result<(TensorId, usize)> {
    let m_cap = config.max_objects;
    let d = config.embed_dim;
    let objects = &scene.objects[..scene.objects.len().min(m_cap)];
    if objects.is_empty() {
        return Ok((graph.tape.zeros(m_cap, d), 0));
    }
    let fdim = graph.params().dims.object_appearance;
    let mut feats = Vec::with_capacity(objects.len() * fdim);
    let mut boxes = Vec::with_capacity(objects.len() * 4);
    for (i, obj) in objects.iter().enumerate() {
        if obj.feat_appearance.len() != fdim {
            return Err(Error::Validation(format!(
                "object {i} appearance has {} dims, model expects {fdim}",
                obj.feat_appearance.len()
            )));
        }
        feats.extend_from_slice(&obj.feat_appearance);
        boxes.extend_from_slice(&bbox_feature(obj.bbox, scene.image_size.0, scene.image_size.1)?);
    }
    let feats = graph.tape.leaf(feats, vec![objects.len(), fdim], false)?;
    let boxes = graph.tape.leaf(boxes, vec![objects.len(), 4], false)?;
    let w_app = graph.param("object.appearance_proj");
    let w_box = graph.param("object.bbox_proj");
    let app = graph.tape.matmul(feats, w_app)?;
    let app = norm(graph, "object.appearance_norm", app)?;
    let loc = graph.tape.matmul(boxes, w_box)?;
    let loc = norm(graph, "object.bbox_norm", loc)?;
    let summed = graph.tape.add(app, loc)?;
    let padded = pad_rows(graph, Some(summed), objects.len(), m_cap, d)?;
    Ok((padded, objects.len()))
}

/// Embed OCR tokens from their four feature families, padded to [N, d]:
/// LN(word + appearance + PHOC projections) + LN(bbox projection).
pub fn embed_ocr(
    graph: &mut Graph<'_>,
    config: &ModelConfig,
    scene: &ScenePack,
) -> Result<(TensorId, usize)> {
    let n_cap = config.max_ocr_tokens;
    let d = config.embed_dim;
    let tokens = &scene.ocr[..scene.ocr.len().min(n_cap)];
    if tokens.is_empty() {
        return Ok((graph.tape.zeros(n_cap, d), 0));
    }
    let ft_dim = graph.params().dims.ocr_word;
    let fr_dim = graph.params().dims.ocr_appearance;
    let mut ft = Vec::with_capacity(tokens.len() * ft_dim);
    let mut fr = Vec::with_capacity(tokens.len() * fr_dim);
    let mut ph = Vec::with_capacity(tokens.len() * crate::features::PHOC_DIM);
    let mut boxes = Vec::with_capacity(tokens.len() * 4);
    for (i, tok) in tokens.iter().enumerate() {
        if tok.feat_word.len() != ft_dim {
            return Err(Error::Validation(format!(
                "ocr {i} word vector has {} dims, model expects {ft_dim}",
                tok.feat_word.len()
            )));
        }
        if tok.feat_appearance.len() != fr_dim {
            return Err(Error::Validation(format!(
                "ocr {i} appearance has {} dims, model expects {fr_dim}",
                tok.feat_appearance.len()
            )));
        }
        ft.extend_from_slice(&tok.feat_word);
        fr.extend_from_slice(&tok.feat_appearance);
        ph.extend_from_slice(&phoc(&tok.text));
        boxes.extend_from_slice(&bbox_feature(tok.bbox, scene.image_size.0, scene.image_size.1)?);
    }
    let n = tokens.len();
    let ft = graph.tape.leaf(ft, vec![n, ft_dim], false)?;
    let fr = graph.tape.leaf(fr, vec![n, fr_dim], false)?;
    let ph = graph.tape.leaf(ph, vec![n, crate::features::PHOC_DIM], false)?;
    let boxes = graph.tape.leaf(boxes, vec![n, 4], false)?;

    let w_word = graph.param("ocr.word_proj");
    let w_app = graph.param("ocr.appearance_proj");
    let w_phoc = graph.param("ocr.phoc_proj");
    let w_box = graph.param("ocr.bbox_proj");

    let word = graph.tape.matmul(ft, w_word)?;
    let app = graph.tape.matmul(fr, w_app)?;
    let phc = graph.tape.matmul(ph, w_phoc)?;
    let content = graph.tape.add(word, app)?;
    let content = graph.tape.add(content, phc)?;
    let content = norm(graph, "ocr.content_norm", content)?;
    let loc = graph.tape.matmul(boxes, w_box)?;
    let loc = norm(graph, "ocr.bbox_norm", loc)?;
    let summed = graph.tape.add(content, loc)?;
    let padded = pad_rows(graph, Some(summed), n, n_cap, d)?;
    Ok((padded, n))
}

/// 0/1 attention mask over the joint layout [question | objects | ocr |
/// decode]. Entity slots attend to all valid entity slots and to no decoding
/// step; decoding step t attends to all valid entity slots and steps 1..=t.
/// Padding slots neither attend nor are attended.
pub fn build_joint_mask(
    question_valid: usize,
    objects_valid: usize,
    ocr_valid: usize,
    config: &ModelConfig,
) -> Vec<f64> {
    let k = config.max_question_words;
    let m = config.max_objects;
    let n = config.max_ocr_tokens;
    let t = config.max_decode_steps;
    let entities = k + m + n;
    let s = entities + t;

    let mut entity_valid = vec![false; entities];
    entity_valid[..question_valid.min(k)].fill(true);
    entity_valid[k..k + objects_valid.min(m)].fill(true);
    entity_valid[k + m..k + m + ocr_valid.min(n)].fill(true);

    let mut mask = vec![0.0; s * s];
    for row in 0..s {
        let row_is_entity = row < entities;
        if row_is_entity && !entity_valid[row] {
            continue;
        }
        for col in 0..s {
            let allowed = if col < entities {
                entity_valid[col]
            } else if row_is_entity {
                false
            } else {
                // decode row attends to decode cols up to itself
                col - entities <= row - entities
            };
            if allowed {
                mask[row * s + col] = 1.0;
            }
        }
    }
    mask
}

fn dropout(
    graph: &mut Graph<'_>,
    x: TensorId,
    p: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<TensorId> {
    let Some(r) = rng.as_deref_mut() else {
        return Ok(x);
    };
    if p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - p;
    let n = graph.tape.data(x).len();
    let mask: Vec<f64> = (0..n)
        .map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let shape = graph.tape.shape(x).to_vec();
    let m = graph.tape.leaf(mask, shape, false)?;
    graph.tape.mul(x, m)
}

/// L layers of masked multi-head self-attention and GELU feed-forward,
/// post-norm residuals.
pub fn transformer_forward(
    graph: &mut Graph<'_>,
    config: &ModelConfig,
    joint: TensorId,
    mask01: &[f64],
    dropout_rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<TensorId> {
    let s = config.seq_len();
    let d = config.embed_dim;
    let head_dim = config.head_dim();
    if graph.tape.shape(joint) != [s, d] {
        return Err(Error::Dimension {
            op: "transformer_forward",
            lhs: graph.tape.shape(joint).to_vec(),
            rhs: vec![s, d],
        });
    }
    if mask01.len() != s * s {
        return Err(Error::Dimension {
            op: "transformer_forward",
            lhs: vec![mask01.len()],
            rhs: vec![s, s],
        });
    }

    let additive: Vec<f64> = mask01
        .iter()
        .map(|&m| if m == 1.0 { 0.0 } else { ATTENTION_MASK_OFF })
        .collect();
    let additive = graph.tape.leaf(additive, vec![s, s], false)?;

    let mut x = joint;
    for layer in 0..config.layers {
        let name = |part: &str| format!("layer{layer}.{part}");
        let wq = graph.param(&name("attn.query.weight"));
        let bq = graph.param(&name("attn.query.bias"));
        let wk = graph.param(&name("attn.key.weight"));
        let bk = graph.param(&name("attn.key.bias"));
        let wv = graph.param(&name("attn.value.weight"));
        let bv = graph.param(&name("attn.value.bias"));
        let wo = graph.param(&name("attn.output.weight"));
        let bo = graph.param(&name("attn.output.bias"));

        let q = graph.tape.matmul(x, wq)?;
        let q = graph.tape.add_bias(q, bq)?;
        let k = graph.tape.matmul(x, wk)?;
        let k = graph.tape.add_bias(k, bk)?;
        let v = graph.tape.matmul(x, wv)?;
        let v = graph.tape.add_bias(v, bv)?;

        let mut head_outputs = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let qh = graph.tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = graph.tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = graph.tape.slice_cols(v, h * head_dim, head_dim)?;
            let kt = graph.tape.transpose(kh)?;
            let scores = graph.tape.matmul(qh, kt)?;
            let scores = graph.tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
            let scores = graph.tape.add(scores, additive)?;
            let probs = graph.tape.softmax(scores, 1)?;
            let probs = dropout(graph, probs, config.dropout, dropout_rng)?;
            head_outputs.push(graph.tape.matmul(probs, vh)?);
        }
        let ctx = graph.tape.concat_cols(&head_outputs)?;
        let attn = graph.tape.matmul(ctx, wo)?;
        let attn = graph.tape.add_bias(attn, bo)?;
        let attn = dropout(graph, attn, config.dropout, dropout_rng)?;
        let res = graph.tape.add(x, attn)?;
        x = norm(graph, &name("attn_norm"), res)?;

        let w1 = graph.param(&name("ffn.expand.weight"));
        let b1 = graph.param(&name("ffn.expand.bias"));
        let w2 = graph.param(&name("ffn.contract.weight"));
        let b2 = graph.param(&name("ffn.contract.bias"));
        let hidden = graph.tape.matmul(x, w1)?;
        let hidden = graph.tape.add_bias(hidden, b1)?;
        let hidden = graph.tape.gelu(hidden);
        let ffn = graph.tape.matmul(hidden, w2)?;
        let ffn = graph.tape.add_bias(ffn, b2)?;
        let ffn = dropout(graph, ffn, config.dropout, dropout_rng)?;
        let res = graph.tape.add(x, ffn)?;
        x = norm(graph, &name("ffn_norm"), res)?;
    }
    Ok(x)
}

/// Decoder step-input rows [T, d]: for each provided step, the previous
/// prediction's base vector (vocabulary weight row or OCR embedding) plus the
/// step positional embedding and the previous-kind type embedding. Remaining
/// slots are zero.
pub fn decoder_input_rows(
    graph: &mut Graph<'_>,
    config: &ModelConfig,
    x_ocr: TensorId,
    ocr_valid: usize,
    step_inputs: &[StepInput],
) -> Result<TensorId> {
    let t_cap = config.max_decode_steps;
    let d = config.embed_dim;
    if step_inputs.len() > t_cap {
        return Err(Error::Validation(format!(
            "{} step inputs exceed max decoding steps {t_cap}",
            step_inputs.len()
        )));
    }
    let vocab_w = graph.param("vocab_head.weight");
    let step_emb = graph.param("decoder.step_embedding");
    let kind_emb = graph.param("decoder.kind_embedding");

    let mut rows = Vec::with_capacity(t_cap);
    for (t, input) in step_inputs.iter().enumerate() {
        let (base, kind) = match *input {
            StepInput::Vocab(i) => {
                if i >= graph.params().vocab_len {
                    return Err(Error::Internal(format!(
                        "step {t} vocabulary index {i} out of range {}",
                        graph.params().vocab_len
                    )));
                }
                (graph.tape.gather_rows(vocab_w, &[i])?, 0)
            }
            StepInput::Ocr(n) => {
                if n >= ocr_valid {
                    return Err(Error::Internal(format!(
                        "step {t} ocr index {n} out of range {ocr_valid}"
                    )));
                }
                (graph.tape.gather_rows(x_ocr, &[n])?, 1)
            }
        };
        let pos = graph.tape.slice_rows(step_emb, t, 1)?;
        let knd = graph.tape.gather_rows(kind_emb, &[kind])?;
        let sum = graph.tape.add(base, pos)?;
        rows.push(graph.tape.add(sum, knd)?);
    }
    if rows.len() < t_cap {
        rows.push(graph.tape.zeros(t_cap - rows.len(), d));
    }
    graph.tape.concat_rows(&rows)
}

/// Vocabulary-head scores for all decode slots: z W^T + b, shape [T, V].
pub fn vocab_scores(graph: &mut Graph<'_>, z_decode: TensorId) -> Result<TensorId> {
    let w = graph.param("vocab_head.weight");
    let b = graph.param("vocab_head.bias");
    let wt = graph.tape.transpose(w)?;
    let scores = graph.tape.matmul(z_decode, wt)?;
    graph.tape.add_bias(scores, b)
}

/// Pointer-head scores for all decode slots against all OCR slots:
/// (z_ocr W_ocr + b_ocr)(z_dec W_dec + b_dec)^T arranged as [T, N].
pub fn pointer_scores(
    graph: &mut Graph<'_>,
    z_decode: TensorId,
    z_ocr: TensorId,
) -> Result<TensorId> {
    let w_ocr = graph.param("pointer.ocr_proj");
    let b_ocr = graph.param("pointer.ocr_bias");
    let w_dec = graph.param("pointer.dec_proj");
    let b_dec = graph.param("pointer.dec_bias");
    let ocr_side = graph.tape.matmul(z_ocr, w_ocr)?;
    let ocr_side = graph.tape.add_bias(ocr_side, b_ocr)?;
    let dec_side = graph.tape.matmul(z_decode, w_dec)?;
    let dec_side = graph.tape.add_bias(dec_side, b_dec)?;
    let ocr_t = graph.tape.transpose(ocr_side)?;
    graph.tape.matmul(dec_side, ocr_t)
}

/// Run the full model over one scene with the given decoder step inputs
/// (teacher-forced or incrementally realized).
pub fn forward_scene(
    graph: &mut Graph<'_>,
    config: &ModelConfig,
    scene: &ScenePack,
    step_inputs: &[StepInput],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardPass> {
    config.validate()?;
    let k = config.max_question_words;
    let m = config.max_objects;
    let n = config.max_ocr_tokens;
    let t = config.max_decode_steps;
    let d = config.embed_dim;

    let (x_question, question_valid) = embed_question(graph, config, &scene.question)?;
    let (x_objects, objects_valid) = embed_objects(graph, config, scene)?;
    let (x_ocr, ocr_valid) = embed_ocr(graph, config, scene)?;
    let x_decode = decoder_input_rows(graph, config, x_ocr, ocr_valid, step_inputs)?;

    let joint = graph
        .tape
        .concat_rows(&[x_question, x_objects, x_ocr, x_decode])?;
    let mask01 = build_joint_mask(question_valid, objects_valid, ocr_valid, config);
    let z = transformer_forward(graph, config, joint, &mask01, &mut dropout_rng)?;

    // Zero padding rows so downstream consumers see exactly masked content.
    let mut row_valid = vec![0.0; config.seq_len() * d];
    let entities = k + m + n;
    for row in 0..config.seq_len() {
        let valid = if row < k {
            row < question_valid
        } else if row < k + m {
            row - k < objects_valid
        } else if row < entities {
            row - k - m < ocr_valid
        } else {
            true
        };
        if valid {
            row_valid[row * d..(row + 1) * d].fill(1.0);
        }
    }
    let row_mask = graph.tape.leaf(row_valid, vec![config.seq_len(), d], false)?;
    let z = graph.tape.mul(z, row_mask)?;

    let z_question = graph.tape.slice_rows(z, 0, k)?;
    let z_objects = graph.tape.slice_rows(z, k, m)?;
    let z_ocr = graph.tape.slice_rows(z, k + m, n)?;
    let z_decode = graph.tape.slice_rows(z, entities, t)?;

    let vocab_logits = vocab_scores(graph, z_decode)?;
    let pointer_logits = pointer_scores(graph, z_decode, z_ocr)?;

    Ok(ForwardPass {
        z_question,
        z_objects,
        z_ocr,
        z_decode,
        vocab_logits,
        pointer_logits,
        question_valid,
        objects_valid,
        ocr_valid,
    })
}

/// Concatenated [vocabulary | ocr] candidate scores for decode step `t`, with
/// ineligible candidates at -inf: non-special vocabulary entries when the
/// fixed vocabulary is disabled, every OCR slot when copying is disabled, and
/// OCR padding slots always. `<begin>` handling is the decoder's policy and
/// is not applied here.
pub fn step_scores(graph: &Graph<'_>, pass: &ForwardPass, config: &ModelConfig, t: usize) -> Vec<f64> {
    let vocab_len = graph.params().vocab_len;
    let n_cap = config.max_ocr_tokens;
    let vocab_row = &graph.tape.data(pass.vocab_logits)[t * vocab_len..(t + 1) * vocab_len];
    let ptr_row = &graph.tape.data(pass.pointer_logits)[t * n_cap..(t + 1) * n_cap];
    let mut out = Vec::with_capacity(vocab_len + n_cap);
    for (i, &score) in vocab_row.iter().enumerate() {
        let eligible = config.enable_fixed_vocab || i < 2;
        out.push(if eligible { score } else { SCORE_MASKED });
    }
    for (i, &score) in ptr_row.iter().enumerate() {
        let eligible = config.enable_ocr_copy && i < pass.ocr_valid;
        out.push(if eligible { score } else { SCORE_MASKED });
    }
    out
}
