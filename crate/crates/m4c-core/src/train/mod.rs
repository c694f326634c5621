//! Teacher-forced training: vocabulary construction, the multi-label
//! sequence loss, and the deterministic training loop.

mod schedule;
mod targets;

pub use schedule::LrSchedule;
pub use targets::{build_step_targets, tokenize_answer, StepTargets, TargetsOutcome};

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rayon::prelude::*;

use crate::decode::decode_answer;
use crate::error::{Error, Result};
use crate::features::ScenePack;
use crate::metrics::MetricKind;
use crate::model::{forward_scene, AnswerVocab, FeatureDims, ForwardPass, Graph, ModelConfig, ModelParams};
use crate::optim::{clip_global_grad_norm, AdamState};
use crate::tensor::TensorId;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Collect the top-V frequent answer words. `min_count` filters out words
/// too rare to justify a head slot (ties break lexicographically).
pub fn build_answer_vocab<'a, I>(answers: I, cap: usize, min_count: usize) -> AnswerVocab
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for answer in answers {
        for word in tokenize_answer(answer) {
            *counts.entry(word).or_default() += 1;
        }
    }
    AnswerVocab::from_word_counts(&counts, cap, min_count)
}

/// Multi-label sigmoid loss over the concatenated [vocab | ocr] score grid,
/// masked to supervised steps and eligible candidate columns; mean over
/// unmasked cells.
pub fn sequence_loss(
    graph: &mut Graph<'_>,
    pass: &ForwardPass,
    step_targets: &StepTargets,
    config: &ModelConfig,
) -> Result<TensorId> {
    let v = step_targets.vocab_len;
    let n = step_targets.ocr_slots;
    let t_cap = config.max_decode_steps;
    let width = v + n;
    if step_targets.supervised_steps() > t_cap {
        return Err(Error::Validation(format!(
            "{} supervised steps exceed max decoding steps {t_cap}",
            step_targets.supervised_steps()
        )));
    }

    let mut target_grid = vec![0.0; t_cap * width];
    let mut mask_grid = vec![0.0; t_cap * width];
    for (t, row) in step_targets.rows.iter().enumerate() {
        target_grid[t * width..(t + 1) * width].copy_from_slice(row);
        for i in 0..v {
            let eligible = config.enable_fixed_vocab || i < 2;
            if eligible {
                mask_grid[t * width + i] = 1.0;
            }
        }
        for slot in 0..n {
            let eligible = config.enable_ocr_copy && slot < pass.ocr_valid;
            if eligible {
                mask_grid[t * width + v + slot] = 1.0;
            }
        }
    }

    let scores = graph
        .tape
        .concat_cols(&[pass.vocab_logits, pass.pointer_logits])?;
    let targets = graph.tape.leaf(target_grid, vec![t_cap, width], false)?;
    let mask = graph.tape.leaf(mask_grid, vec![t_cap, width], false)?;
    graph.tape.sigmoid_bce_with_logits(scores, targets, mask)
}

/// Options beyond the model config and schedule.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Validate (and consider snapshotting) every this many iterations.
    pub eval_interval: usize,
    pub seed: u64,
    /// Minimum word frequency for answer-vocabulary membership.
    pub vocab_min_count: usize,
    pub val_metric: MetricKind,
    /// Append eval-point lines here when set.
    pub log_path: Option<PathBuf>,
    /// Resume from these parameters instead of a fresh initialization; their
    /// vocabulary length must match the vocabulary built from the data.
    pub initial_params: Option<ModelParams>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 128,
            clip_norm: 0.25,
            eval_interval: 500,
            seed: 0,
            vocab_min_count: 1,
            val_metric: MetricKind::Exact,
            log_path: None,
            initial_params: None,
        }
    }
}

/// One evaluation point of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPoint {
    pub iter: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
}

/// Per-example batch result: skipped (unreachable), or loss plus per-parameter
/// gradients in store order.
type ExampleResult = Result<Option<(f64, Vec<Vec<f64>>)>>;

#[derive(Debug)]
pub struct TrainOutcome {
    /// Best validation snapshot (the initial parameters if never improved).
    pub params: ModelParams,
    pub vocab: AnswerVocab,
    pub log: Vec<LogPoint>,
    pub best_iter: usize,
    pub best_val: f64,
    /// Training examples skipped because a ground-truth word was unreachable,
    /// counted per consumption.
    pub skipped_unreachable: usize,
}

fn example_dropout_seed(seed: u64, iter: usize, index: usize) -> u64 {
    // splitmix64 over the triple keeps per-example streams independent of
    // thread scheduling.
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(iter as u64 + 1))
        .wrapping_add((index as u64) << 32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mean validation score by decoding every scene.
pub fn evaluate_decoded(
    params: &ModelParams,
    vocab: &AnswerVocab,
    scenes: &[ScenePack],
    config: &ModelConfig,
    metric: MetricKind,
) -> Result<f64> {
    if scenes.is_empty() {
        return Ok(0.0);
    }
    let scores: Vec<Result<f64>> = scenes
        .par_iter()
        .map(|scene| {
            let result = decode_answer(params, vocab, scene, config)?;
            metric.score(&result.answer, &scene.answers)
        })
        .collect();
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / scenes.len() as f64)
}

/// Teacher-forced training over the scene set, with periodic validation and
/// best-snapshot selection. Deterministic given (seed, dataset, config).
pub fn train_loop(
    train_scenes: &[ScenePack],
    val_scenes: &[ScenePack],
    config: &ModelConfig,
    schedule: &LrSchedule,
    dims: FeatureDims,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    schedule.validate()?;
    if train_scenes.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    for scene in train_scenes {
        if scene.answers.is_empty() {
            return Err(Error::Validation(format!(
                "training scene {} has no answers",
                scene.id
            )));
        }
    }
    if opts.batch_size == 0 {
        return Err(Error::Validation("batch_size must be positive".into()));
    }

    let vocab = build_answer_vocab(
        train_scenes
            .iter()
            .flat_map(|s| s.answers.iter().map(String::as_str)),
        config.vocab_size,
        opts.vocab_min_count,
    );

    let mut params = match &opts.initial_params {
        Some(p) => {
            if p.vocab_len != vocab.len() {
                return Err(Error::Validation(format!(
                    "initial parameters carry a vocabulary of {}, data builds one of {}",
                    p.vocab_len,
                    vocab.len()
                )));
            }
            p.clone()
        }
        None => ModelParams::init(config, dims, vocab.len(), opts.seed)?,
    };

    // Targets depend only on (vocab, scene): build once. Unreachable scenes
    // stay in the rotation and are counted each time a batch draws them.
    let prepared: Vec<Option<StepTargets>> = train_scenes
        .iter()
        .map(|scene| {
            let words = tokenize_answer(&scene.answers[0]);
            let ocr_texts: Vec<String> = scene.ocr.iter().map(|t| t.text.clone()).collect();
            match build_step_targets(&words, &vocab, &ocr_texts, config) {
                TargetsOutcome::Ready(t) => Some(t),
                TargetsOutcome::Unreachable { word } => {
                    log::debug!("scene {}: unreachable word {word:?}", scene.id);
                    None
                }
            }
        })
        .collect();
    let reachable = prepared.iter().filter(|t| t.is_some()).count();
    log::info!(
        "training on {} scenes ({} reachable), vocabulary of {}",
        train_scenes.len(),
        reachable,
        vocab.len()
    );

    let mut adam = AdamState::new(&params.store.sizes());
    let mut log_writer = match &opts.log_path {
        Some(path) => Some(BufWriter::new(File::create(path)?)),
        None => None,
    };

    let mut best_params = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_iter = 0;
    let mut log = Vec::new();
    let mut skipped_unreachable = 0usize;

    let n = train_scenes.len();
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0usize;
    let mut cursor = 0usize;
    let mut last_loss = f64::NAN;

    for iter in 0..schedule.max_iters {
        // Seeded shuffle, cycling epochs.
        let mut batch = Vec::with_capacity(opts.batch_size);
        while batch.len() < opts.batch_size {
            if cursor >= order.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (epoch as u64).wrapping_mul(0x9e37));
                order = (0..n).collect();
                order.shuffle(&mut rng);
                epoch += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let dropout = config.dropout > 0.0;
        let results: Vec<ExampleResult> = batch
            .par_iter()
            .map(|&idx| {
                let Some(targets) = prepared[idx].as_ref() else {
                    return Ok(None);
                };
                let scene = &train_scenes[idx];
                let mut rng;
                let dropout_rng = if dropout {
                    rng = ChaCha8Rng::seed_from_u64(example_dropout_seed(opts.seed, iter, idx));
                    Some(&mut rng)
                } else {
                    None
                };
                let mut graph = Graph::new(&params);
                let pass =
                    forward_scene(&mut graph, config, scene, &targets.teacher_inputs, dropout_rng)?;
                let loss = sequence_loss(&mut graph, &pass, targets, config)?;
                graph.backward(loss)?;
                Ok(Some((graph.tape.data(loss)[0], graph.param_grads())))
            })
            .collect();

        let mut grads = params.store.zero_grads();
        let mut loss_sum = 0.0;
        let mut used = 0usize;
        for r in results {
            match r? {
                None => skipped_unreachable += 1,
                Some((loss, example_grads)) => {
                    loss_sum += loss;
                    used += 1;
                    for (acc, g) in grads.iter_mut().zip(example_grads) {
                        for (a, v) in acc.iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                }
            }
        }

        if used > 0 {
            let mean_loss = loss_sum / used as f64;
            if !mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iter,
                    batch_ids: batch
                        .iter()
                        .map(|&i| train_scenes[i].id.clone())
                        .collect(),
                });
            }
            last_loss = mean_loss;
            let scale = 1.0 / used as f64;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            clip_global_grad_norm(&mut grads, opts.clip_norm);
            let lr = schedule.lr_at_iter(iter);
            let mut slices: Vec<&mut [f64]> = params
                .store
                .iter_mut()
                .map(|(_, t)| t.data.as_mut_slice())
                .collect();
            let grad_slices: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut slices, &grad_slices, lr)?;
        }

        let is_eval = opts.eval_interval > 0 && (iter + 1) % opts.eval_interval == 0;
        let is_last = iter + 1 == schedule.max_iters;
        if is_eval || is_last {
            let val = evaluate_decoded(&params, &vocab, val_scenes, config, opts.val_metric)?;
            if val > best_val {
                best_val = val;
                best_iter = iter + 1;
                best_params = params.clone();
            }
            let point = LogPoint {
                iter: iter + 1,
                lr: schedule.lr_at_iter(iter),
                train_loss: last_loss,
                val_metric: val,
            };
            if let Some(w) = log_writer.as_mut() {
                writeln!(
                    w,
                    "iter={} lr={:.6e} train_loss={:.6e} val_metric={:.6}",
                    point.iter, point.lr, point.train_loss, point.val_metric
                )?;
                w.flush()?;
            }
            log.push(point);
        }
    }

    if schedule.max_iters == 0 || best_val == f64::NEG_INFINITY {
        best_params = params;
    }
    if skipped_unreachable > 0 {
        log::warn!("skipped {skipped_unreachable} unreachable example draws during training");
    }

    Ok(TrainOutcome {
        params: best_params,
        vocab,
        log,
        best_iter,
        best_val: if best_val == f64::NEG_INFINITY { 0.0 } else { best_val },
        skipped_unreachable,
    })
}
