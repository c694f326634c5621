//! Iterative auto-regressive answer decoding.
//!
//! Each step scores all V fixed-vocabulary words and all N OCR tokens, takes
//! the argmax over the concatenation, feeds the selection back as the next
//! step's input, and stops at `<end>` or after T steps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ScenePack;
use crate::model::{
    forward_scene, step_scores, AnswerVocab, Graph, ModelConfig, ModelParams, StepInput,
    BEGIN_INDEX, END_INDEX,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Vocab,
    Ocr,
}

/// One decoded answer piece: where it came from and its surface string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerComponent {
    pub kind: ComponentKind,
    pub index: usize,
    pub surface: String,
}

/// Output of decoding one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Components in order; never includes `<begin>`, ends before `<end>`.
    pub components: Vec<AnswerComponent>,
    /// Components joined by single spaces.
    pub answer: String,
    /// Concatenated [vocab | ocr] candidate scores per executed step.
    pub step_scores: Vec<Vec<f64>>,
    pub steps_used: usize,
}

/// Argmax over the concatenated [vocab | ocr] scores. Ties break toward the
/// lowest concatenated position, so vocabulary entries win over OCR slots and
/// lower indices win within each block.
pub fn select_argmax(scores: &[f64], vocab_len: usize) -> Result<(ComponentKind, usize)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s == f64::NEG_INFINITY {
            continue;
        }
        match best {
            Some((_, bs)) if s <= bs => {}
            _ => best = Some((i, s)),
        }
    }
    let (idx, _) = best.ok_or_else(|| {
        Error::Internal("select_argmax: every candidate score is -inf".into())
    })?;
    if idx < vocab_len {
        Ok((ComponentKind::Vocab, idx))
    } else {
        Ok((ComponentKind::Ocr, idx - vocab_len))
    }
}

/// Decode one scene by running the forward pass incrementally, feeding each
/// argmax selection into the next step.
pub fn decode_answer(
    params: &ModelParams,
    vocab: &AnswerVocab,
    scene: &ScenePack,
    config: &ModelConfig,
) -> Result<DecodeResult> {
    if vocab.len() != params.vocab_len {
        return Err(Error::Validation(format!(
            "vocabulary has {} entries, model heads are sized for {}",
            vocab.len(),
            params.vocab_len
        )));
    }
    let mut inputs = vec![StepInput::Vocab(BEGIN_INDEX)];
    let mut components = Vec::new();
    let mut per_step_scores = Vec::new();
    let mut steps_used = 0;

    for t in 1..=config.max_decode_steps {
        let mut graph = Graph::new(params);
        let pass = forward_scene(&mut graph, config, scene, &inputs, None)?;
        let scores = step_scores(&graph, &pass, config, t - 1);
        let mut selectable = scores.clone();
        selectable[BEGIN_INDEX] = f64::NEG_INFINITY;
        let (kind, index) = select_argmax(&selectable, params.vocab_len)?;
        per_step_scores.push(scores);
        steps_used = t;

        if kind == ComponentKind::Vocab && index == END_INDEX {
            break;
        }
        match kind {
            ComponentKind::Vocab => {
                components.push(AnswerComponent {
                    kind,
                    index,
                    surface: vocab.word(index).to_string(),
                });
                inputs.push(StepInput::Vocab(index));
            }
            ComponentKind::Ocr => {
                let token = scene.ocr.get(index).ok_or_else(|| {
                    Error::Internal(format!("selected ocr slot {index} has no token"))
                })?;
                components.push(AnswerComponent {
                    kind,
                    index,
                    surface: token.text.clone(),
                });
                inputs.push(StepInput::Ocr(index));
            }
        }
    }

    let answer = components
        .iter()
        .map(|c| c.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    Ok(DecodeResult {
        components,
        answer,
        step_scores: per_step_scores,
        steps_used,
    })
}

/// One line of the prediction output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer: String,
    pub components: Vec<AnswerComponent>,
    pub steps_used: usize,
}

impl Prediction {
    pub fn from_result(id: &str, result: &DecodeResult) -> Self {
        Prediction {
            id: id.to_string(),
            answer: result.answer.clone(),
            components: result.components.clone(),
            steps_used: result.steps_used,
        }
    }
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in predictions {
        let line = serde_json::to_string(p)
            .map_err(|e| Error::Validation(format!("prediction serialization: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}
