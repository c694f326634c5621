//! Deterministic generator of synthetic text-in-scene QA examples.
//!
//! Scenes carry random consonant-only OCR strings placed on a grid; the four
//! task families exercise different answer mechanisms:
//!   copy-one:     answer is the token at a queried grid cell
//!   copy-multi:   answer is the 2-4 tokens in a queried half, reading order
//!   vocab-lookup: answer is the vocabulary word mapped from a question key
//!   mixed:        vocabulary word + copied token
//! Vocabulary words all contain vowels while token strings never do, so which
//! head produced an answer word is always unambiguous.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    scene_to_json_line, DetectedObject, OcrToken, Question, QuestionMode, SceneManifest, ScenePack,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    CopyOne,
    CopyMulti,
    VocabLookup,
    Mixed,
}

impl std::str::FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy-one" => Ok(TaskFamily::CopyOne),
            "copy-multi" => Ok(TaskFamily::CopyMulti),
            "vocab-lookup" => Ok(TaskFamily::VocabLookup),
            "mixed" => Ok(TaskFamily::Mixed),
            other => Err(Error::Validation(format!(
                "unknown task family {other:?} (expected copy-one | copy-multi | vocab-lookup | mixed)"
            ))),
        }
    }
}

/// Generation parameters; fully determine every example together with the
/// example index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub family: TaskFamily,
    /// Inclusive range of OCR tokens per scene.
    pub tokens_per_scene: (usize, usize),
    /// Candidate answer-vocabulary words (all contain vowels).
    pub vocab_words: Vec<String>,
    /// Token alphabet; vowel-free so tokens never collide with vocab words.
    pub alphabet: Vec<char>,
    /// Inclusive range of token string lengths.
    pub token_len: (usize, usize),
    pub appearance_dim: usize,
    pub word_feat_dim: usize,
    /// Placement grid is grid x grid cells.
    pub grid: usize,
    pub objects_per_scene: usize,
}

pub const DEFAULT_VOCAB_WORDS: [&str; 30] = [
    "apple", "blue", "cake", "door", "echo", "fire", "gold", "hero", "idea", "jade", "kiwi",
    "lime", "moon", "note", "opal", "pear", "quiet", "rose", "sage", "tide", "umber", "vine",
    "wave", "axle", "yarn", "zero", "amber", "coral", "dune", "ember",
];

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            family: TaskFamily::CopyOne,
            tokens_per_scene: (2, 6),
            vocab_words: DEFAULT_VOCAB_WORDS.iter().map(|s| s.to_string()).collect(),
            alphabet: "bcdfghjklmnpqrstvwxz".chars().collect(),
            token_len: (4, 6),
            appearance_dim: 16,
            word_feat_dim: 16,
            grid: 4,
            objects_per_scene: 2,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::Validation("grid must be at least 2".into()));
        }
        if self.tokens_per_scene.0 < 1 || self.tokens_per_scene.0 > self.tokens_per_scene.1 {
            return Err(Error::Validation(format!(
                "bad tokens_per_scene range {:?}",
                self.tokens_per_scene
            )));
        }
        if self.tokens_per_scene.1 > self.grid * self.grid {
            return Err(Error::Generation(format!(
                "cannot place up to {} tokens on a {}x{} grid",
                self.tokens_per_scene.1, self.grid, self.grid
            )));
        }
        if self.vocab_words.is_empty() {
            return Err(Error::Validation("vocab_words must be nonempty".into()));
        }
        let vowels = ['a', 'e', 'i', 'o', 'u'];
        if self.alphabet.iter().any(|c| vowels.contains(c)) {
            return Err(Error::Validation(
                "token alphabet must be vowel-free to stay disjoint from vocab words".into(),
            ));
        }
        if let Some(w) = self.vocab_words.iter().find(|w| !w.chars().any(|c| vowels.contains(&c))) {
            return Err(Error::Validation(format!(
                "vocab word {w:?} has no vowel; it could collide with token strings"
            )));
        }
        Ok(())
    }

    /// Question-token vocabulary, deterministic from the spec alone.
    pub fn question_vocab(&self) -> Vec<String> {
        let mut v: Vec<String> = ["copy", "read", "lookup", "mix", "left", "right"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for r in 0..self.grid {
            v.push(format!("r{r}"));
        }
        for c in 0..self.grid {
            v.push(format!("c{c}"));
        }
        for k in 0..self.vocab_words.len() {
            v.push(format!("key{k}"));
        }
        v
    }

    pub fn manifest(&self) -> SceneManifest {
        SceneManifest {
            mode: QuestionMode::Learned,
            question_vocab: Some(self.question_vocab()),
            question_dim: None,
            object_feat_dim: self.appearance_dim,
            ocr_appearance_dim: self.appearance_dim,
            ocr_word_dim: self.word_feat_dim,
        }
    }
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn random_token(rng: &mut ChaCha8Rng, spec: &SynthSpec, taken: &[String]) -> Result<String> {
    for _ in 0..100 {
        let len = rng.gen_range(spec.token_len.0..=spec.token_len.1);
        let s: String = (0..len)
            .map(|_| spec.alphabet[rng.gen_range(0..spec.alphabet.len())])
            .collect();
        if !taken.contains(&s) {
            return Ok(s);
        }
    }
    Err(Error::Generation(
        "could not draw a fresh token string in 100 tries".into(),
    ))
}

struct Placement {
    cell: (usize, usize), // (row, col)
    bbox: [f64; 4],
}

/// One generated scene plus the question as strings (for file output).
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: ScenePack,
    pub question_tokens: Vec<String>,
}

/// Generate example `index` under the spec; identical inputs give identical
/// scenes, independently of generation order.
pub fn generate_example(spec: &SynthSpec, index: u64) -> Result<GeneratedScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index));
    let g = spec.grid;
    let image_w = 40.0 * g as f64;
    let image_h = 30.0 * g as f64;
    let cell_w = image_w / g as f64;
    let cell_h = image_h / g as f64;

    // How many tokens, and (for copy-multi) how many inside the queried half.
    let n_tokens = rng.gen_range(spec.tokens_per_scene.0..=spec.tokens_per_scene.1);
    let half_cells = (g / 2) * g;
    let (family_side, n_inside) = if spec.family == TaskFamily::CopyMulti {
        let side = rng.gen_bool(0.5);
        let hi = n_tokens.min(4).min(half_cells);
        let lo = 2.min(hi);
        (side, rng.gen_range(lo..=hi))
    } else {
        (false, 0)
    };

    // Pick distinct cells. For copy-multi, split between halves.
    let mut cells: Vec<(usize, usize)> = Vec::with_capacity(n_tokens);
    if spec.family == TaskFamily::CopyMulti {
        let left_cols: Vec<usize> = (0..g / 2).collect();
        let right_cols: Vec<usize> = (g / 2..g).collect();
        let (inside_cols, outside_cols) = if family_side {
            (&right_cols, &left_cols)
        } else {
            (&left_cols, &right_cols)
        };
        let mut inside: Vec<(usize, usize)> = inside_cols
            .iter()
            .flat_map(|&c| (0..g).map(move |r| (r, c)))
            .collect();
        let mut outside: Vec<(usize, usize)> = outside_cols
            .iter()
            .flat_map(|&c| (0..g).map(move |r| (r, c)))
            .collect();
        inside.shuffle(&mut rng);
        outside.shuffle(&mut rng);
        let n_outside = n_tokens - n_inside;
        if n_inside > inside.len() || n_outside > outside.len() {
            return Err(Error::Generation(format!(
                "cannot place {n_inside}+{n_outside} tokens on the two {g}x{} halves",
                g / 2
            )));
        }
        cells.extend(inside.into_iter().take(n_inside));
        cells.extend(outside.into_iter().take(n_outside));
        cells.shuffle(&mut rng); // file order carries no information
    } else {
        let mut all: Vec<(usize, usize)> = (0..g)
            .flat_map(|r| (0..g).map(move |c| (r, c)))
            .collect();
        all.shuffle(&mut rng);
        cells.extend(all.into_iter().take(n_tokens));
    }

    let placements: Vec<Placement> = cells
        .iter()
        .map(|&(r, c)| {
            let jitter_x = rng.gen_range(0.05..0.15) * cell_w;
            let jitter_y = rng.gen_range(0.05..0.15) * cell_h;
            let x0 = c as f64 * cell_w + jitter_x;
            let y0 = r as f64 * cell_h + jitter_y;
            Placement {
                cell: (r, c),
                bbox: [x0, y0, x0 + 0.7 * cell_w, y0 + 0.7 * cell_h],
            }
        })
        .collect();

    let mut texts: Vec<String> = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        let t = random_token(&mut rng, spec, &texts)?;
        texts.push(t);
    }

    let ocr: Vec<OcrToken> = placements
        .iter()
        .zip(&texts)
        .map(|(p, text)| OcrToken {
            text: text.clone(),
            bbox: p.bbox,
            feat_appearance: unit_vec(&mut rng, spec.appearance_dim),
            feat_word: unit_vec(&mut rng, spec.word_feat_dim),
        })
        .collect();

    let objects: Vec<DetectedObject> = (0..spec.objects_per_scene)
        .map(|_| {
            let x0 = rng.gen_range(0.0..image_w * 0.5);
            let y0 = rng.gen_range(0.0..image_h * 0.5);
            DetectedObject {
                bbox: [x0, y0, x0 + image_w * 0.3, y0 + image_h * 0.3],
                feat_appearance: unit_vec(&mut rng, spec.appearance_dim),
            }
        })
        .collect();

    // Reading order: ascending y-center, then x-center.
    let reading_order = |slots: &mut Vec<usize>| {
        slots.sort_by(|&a, &b| {
            let ca = (
                (ocr[a].bbox[1] + ocr[a].bbox[3]) / 2.0,
                (ocr[a].bbox[0] + ocr[a].bbox[2]) / 2.0,
            );
            let cb = (
                (ocr[b].bbox[1] + ocr[b].bbox[3]) / 2.0,
                (ocr[b].bbox[0] + ocr[b].bbox[2]) / 2.0,
            );
            ca.partial_cmp(&cb).expect("finite centers")
        });
    };

    let (question_tokens, answer) = match spec.family {
        TaskFamily::CopyOne => {
            let pick = rng.gen_range(0..n_tokens);
            let (r, c) = placements[pick].cell;
            (
                vec!["copy".to_string(), format!("r{r}"), format!("c{c}")],
                texts[pick].clone(),
            )
        }
        TaskFamily::CopyMulti => {
            let side_word = if family_side { "right" } else { "left" };
            let mut inside_slots: Vec<usize> = placements
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    let on_right = p.cell.1 >= g / 2;
                    on_right == family_side
                })
                .map(|(i, _)| i)
                .collect();
            reading_order(&mut inside_slots);
            let answer = inside_slots
                .iter()
                .map(|&i| texts[i].as_str())
                .collect::<Vec<_>>()
                .join(" ");
            (
                vec!["read".to_string(), side_word.to_string()],
                answer,
            )
        }
        TaskFamily::VocabLookup => {
            let key = rng.gen_range(0..spec.vocab_words.len());
            (
                vec!["lookup".to_string(), format!("key{key}")],
                spec.vocab_words[key].clone(),
            )
        }
        TaskFamily::Mixed => {
            let key = rng.gen_range(0..spec.vocab_words.len());
            let pick = rng.gen_range(0..n_tokens);
            let (r, c) = placements[pick].cell;
            (
                vec![
                    "mix".to_string(),
                    format!("key{key}"),
                    format!("r{r}"),
                    format!("c{c}"),
                ],
                format!("{} {}", spec.vocab_words[key], texts[pick]),
            )
        }
    };

    let vocab = spec.question_vocab();
    let ids: Vec<usize> = question_tokens
        .iter()
        .map(|t| {
            vocab
                .iter()
                .position(|v| v == t)
                .expect("question tokens come from question_vocab")
        })
        .collect();

    Ok(GeneratedScene {
        scene: ScenePack {
            id: format!("synth-{index}"),
            image_size: (image_w, image_h),
            question: Question::TokenIds(ids),
            objects,
            ocr,
            answers: vec![answer],
        },
        question_tokens,
    })
}

/// Paths written by [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub manifest: PathBuf,
}

/// Write train/val scene-pack files (disjoint index ranges) plus the sidecar
/// manifest into `out_dir`.
pub fn generate_dataset(
    spec: &SynthSpec,
    n_train: usize,
    n_val: usize,
    out_dir: &Path,
) -> Result<DatasetPaths> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let paths = DatasetPaths {
        train: out_dir.join("train.jsonl"),
        val: out_dir.join("val.jsonl"),
        manifest: out_dir.join("manifest.json"),
    };
    spec.manifest().save(&paths.manifest)?;

    let write_split = |path: &Path, start: usize, count: usize| -> Result<()> {
        let mut out = String::new();
        for index in start..start + count {
            let generated = generate_example(spec, index as u64)?;
            let s = &generated.scene;
            out.push_str(&scene_to_json_line(
                &s.id,
                s.image_size,
                Some(&generated.question_tokens),
                None,
                &s.objects,
                &s.ocr,
                &s.answers,
            ));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    };
    write_split(&paths.train, 0, n_train)?;
    write_split(&paths.val, n_train, n_val)?;
    Ok(paths)
}
