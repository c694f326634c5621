//! Scene featurization: PHOC, relative-bbox features, and ingestion of
//! precomputed per-scene features (stand-ins for external question encoders,
//! object detectors, OCR systems, and word-vector models).

pub mod phoc;

pub use phoc::{phoc, phoc_set_indices, PHOC_DIM};

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative bounding-box feature: [x_min/W, y_min/H, x_max/W, y_max/H].
pub fn bbox_feature(bbox: [f64; 4], image_w: f64, image_h: f64) -> Result<[f64; 4]> {
    if image_w <= 0.0 || image_h <= 0.0 {
        return Err(Error::Validation(format!(
            "degenerate image size {image_w}x{image_h}"
        )));
    }
    Ok([
        bbox[0] / image_w,
        bbox[1] / image_h,
        bbox[2] / image_w,
        bbox[3] / image_h,
    ])
}

fn validate_bbox(bbox: [f64; 4], image_w: f64, image_h: f64, what: &str) -> Result<()> {
    let [x0, y0, x1, y1] = bbox;
    let ok = 0.0 <= x0 && x0 <= x1 && x1 <= image_w && 0.0 <= y0 && y0 <= y1 && y1 <= image_h;
    if !ok {
        return Err(Error::Validation(format!(
            "{what} bbox {bbox:?} outside {image_w}x{image_h} image"
        )));
    }
    Ok(())
}

/// One OCR token: normalized text plus its detector, word-vector and box data.
#[derive(Debug, Clone, PartialEq)]
pub struct OcrToken {
    pub text: String,
    pub bbox: [f64; 4],
    pub feat_appearance: Vec<f64>,
    pub feat_word: Vec<f64>,
}

/// Lowercase and trim; punctuation is preserved so answers like "1:45"
/// survive matching.
pub fn normalize_token(text: &str) -> String {
    text.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedObject {
    pub bbox: [f64; 4],
    pub feat_appearance: Vec<f64>,
}

/// Question content, depending on the manifest's mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Question {
    /// Token ids into the manifest's question vocabulary.
    TokenIds(Vec<usize>),
    /// Precomputed per-word vectors (frozen external encoder output).
    Vectors(Vec<Vec<f64>>),
}

impl Question {
    pub fn len(&self) -> usize {
        match self {
            Question::TokenIds(ids) => ids.len(),
            Question::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One example's ingested features.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePack {
    pub id: String,
    pub image_size: (f64, f64),
    pub question: Question,
    pub objects: Vec<DetectedObject>,
    pub ocr: Vec<OcrToken>,
    pub answers: Vec<String>,
}

/// Question featurization mode declared by the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionMode {
    Learned,
    Ingested,
}

/// Sidecar manifest declaring feature dimensionalities and question mode.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneManifest {
    pub mode: QuestionMode,
    /// Token list for learned mode; index in this list is the token id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_vocab: Option<Vec<String>>,
    /// Per-word vector width for ingested mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_dim: Option<usize>,
    pub object_feat_dim: usize,
    pub ocr_appearance_dim: usize,
    /// Word-vector width; 300 for real FastText features.
    pub ocr_word_dim: usize,
}

impl SceneManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: SceneManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("manifest {}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            QuestionMode::Learned if self.question_vocab.is_none() => Err(Error::Validation(
                "learned question mode requires question_vocab".into(),
            )),
            QuestionMode::Ingested if self.question_dim.is_none() => Err(Error::Validation(
                "ingested question mode requires question_dim".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.question_vocab
            .as_ref()
            .and_then(|v| v.iter().position(|t| t == token))
    }
}

/// Truncation caps applied at load time.
#[derive(Debug, Clone, Copy)]
pub struct ListCaps {
    pub max_question_words: usize,
    pub max_objects: usize,
    pub max_ocr_tokens: usize,
}

#[derive(Debug, Deserialize)]
struct RawObject {
    bbox: [f64; 4],
    feat: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct RawOcr {
    text: String,
    bbox: [f64; 4],
    feat_frcn: Vec<f64>,
    feat_ft: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct RawScene {
    id: String,
    image_size: [f64; 2],
    #[serde(default)]
    question_tokens: Option<Vec<String>>,
    #[serde(default)]
    question_vectors: Option<Vec<Vec<f64>>>,
    objects: Vec<RawObject>,
    ocr: Vec<RawOcr>,
    answers: Vec<String>,
}

/// Serializable record mirror used when writing scene packs.
#[derive(Debug, Serialize)]
pub struct SceneRecord<'a> {
    pub id: &'a str,
    pub image_size: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question_tokens: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question_vectors: Option<Vec<Vec<f64>>>,
    pub objects: Vec<serde_json::Value>,
    pub ocr: Vec<serde_json::Value>,
    pub answers: &'a [String],
}

/// Load and validate a scene-pack file (one JSON record per line).
///
/// Lists longer than the caps are truncated in file order with a logged
/// warning. Malformed lines are parse errors carrying the 1-based line
/// number; manifest mismatches are validation errors.
pub fn load_scene_pack(
    path: &Path,
    manifest: &SceneManifest,
    caps: ListCaps,
) -> Result<Vec<ScenePack>> {
    manifest.validate()?;
    let reader = BufReader::new(File::open(path)?);
    let mut scenes = Vec::new();
    for (line_idx, line) in reader.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawScene = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let scene = validate_scene(raw, manifest, caps)
            .map_err(|e| match e {
                Error::Validation(msg) => Error::Validation(format!("line {line_no}: {msg}")),
                other => other,
            })?;
        scenes.push(scene);
    }
    Ok(scenes)
}

fn validate_scene(raw: RawScene, manifest: &SceneManifest, caps: ListCaps) -> Result<ScenePack> {
    let (w, h) = (raw.image_size[0], raw.image_size[1]);
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::Validation(format!(
            "scene {}: degenerate image size {w}x{h}",
            raw.id
        )));
    }

    let question = match manifest.mode {
        QuestionMode::Learned => {
            let tokens = raw.question_tokens.ok_or_else(|| {
                Error::Validation(format!(
                    "scene {}: learned mode requires question_tokens",
                    raw.id
                ))
            })?;
            let vocab = manifest.question_vocab.as_ref().expect("validated");
            let mut ids = Vec::with_capacity(tokens.len());
            for t in &tokens {
                let id = vocab.iter().position(|v| v == t).ok_or_else(|| {
                    Error::Validation(format!(
                        "scene {}: question token {t:?} not in manifest vocabulary",
                        raw.id
                    ))
                })?;
                ids.push(id);
            }
            if ids.len() > caps.max_question_words {
                log::warn!(
                    "scene {}: truncating question from {} to {} words",
                    raw.id,
                    ids.len(),
                    caps.max_question_words
                );
                ids.truncate(caps.max_question_words);
            }
            Question::TokenIds(ids)
        }
        QuestionMode::Ingested => {
            let mut vectors = raw.question_vectors.ok_or_else(|| {
                Error::Validation(format!(
                    "scene {}: ingested mode requires question_vectors",
                    raw.id
                ))
            })?;
            let dim = manifest.question_dim.expect("validated");
            for (i, v) in vectors.iter().enumerate() {
                if v.len() != dim {
                    return Err(Error::Validation(format!(
                        "scene {}: question vector {i} has {} dims, manifest says {dim}",
                        raw.id,
                        v.len()
                    )));
                }
            }
            if vectors.len() > caps.max_question_words {
                log::warn!(
                    "scene {}: truncating question from {} to {} vectors",
                    raw.id,
                    vectors.len(),
                    caps.max_question_words
                );
                vectors.truncate(caps.max_question_words);
            }
            Question::Vectors(vectors)
        }
    };

    let mut objects = Vec::new();
    for (i, obj) in raw.objects.into_iter().enumerate() {
        if obj.feat.len() != manifest.object_feat_dim {
            return Err(Error::Validation(format!(
                "scene {}: object {i} has {} feature dims, manifest says {}",
                raw.id,
                obj.feat.len(),
                manifest.object_feat_dim
            )));
        }
        validate_bbox(obj.bbox, w, h, &format!("scene {} object {i}", raw.id))?;
        objects.push(DetectedObject {
            bbox: obj.bbox,
            feat_appearance: obj.feat,
        });
    }
    if objects.len() > caps.max_objects {
        log::warn!(
            "scene {}: truncating objects from {} to {}",
            raw.id,
            objects.len(),
            caps.max_objects
        );
        objects.truncate(caps.max_objects);
    }

    let mut ocr = Vec::new();
    for (i, tok) in raw.ocr.into_iter().enumerate() {
        if tok.feat_frcn.len() != manifest.ocr_appearance_dim {
            return Err(Error::Validation(format!(
                "scene {}: ocr {i} has {} appearance dims, manifest says {}",
                raw.id,
                tok.feat_frcn.len(),
                manifest.ocr_appearance_dim
            )));
        }
        if tok.feat_ft.len() != manifest.ocr_word_dim {
            return Err(Error::Validation(format!(
                "scene {}: ocr {i} has {} word-vector dims, manifest says {}",
                raw.id,
                tok.feat_ft.len(),
                manifest.ocr_word_dim
            )));
        }
        validate_bbox(tok.bbox, w, h, &format!("scene {} ocr {i}", raw.id))?;
        let text = normalize_token(&tok.text);
        if text.is_empty() {
            return Err(Error::Validation(format!(
                "scene {}: ocr {i} text is empty after normalization",
                raw.id
            )));
        }
        ocr.push(OcrToken {
            text,
            bbox: tok.bbox,
            feat_appearance: tok.feat_frcn,
            feat_word: tok.feat_ft,
        });
    }
    if ocr.len() > caps.max_ocr_tokens {
        log::warn!(
            "scene {}: truncating ocr from {} to {}",
            raw.id,
            ocr.len(),
            caps.max_ocr_tokens
        );
        ocr.truncate(caps.max_ocr_tokens);
    }

    Ok(ScenePack {
        id: raw.id,
        image_size: (w, h),
        question,
        objects,
        ocr,
        answers: raw.answers,
    })
}

/// Serialize one scene as a JSON line in the scene-pack format. `tokens`
/// carries the question in learned mode; `vectors` in ingested mode.
pub fn scene_to_json_line(
    id: &str,
    image_size: (f64, f64),
    question_tokens: Option<&[String]>,
    question_vectors: Option<&[Vec<f64>]>,
    objects: &[DetectedObject],
    ocr: &[OcrToken],
    answers: &[String],
) -> String {
    let record = SceneRecord {
        id,
        image_size: [image_size.0, image_size.1],
        question_tokens: question_tokens.map(|t| t.to_vec()),
        question_vectors: question_vectors.map(|v| v.to_vec()),
        objects: objects
            .iter()
            .map(|o| {
                serde_json::json!({
                    "bbox": o.bbox,
                    "feat": o.feat_appearance,
                })
            })
            .collect(),
        ocr: ocr
            .iter()
            .map(|t| {
                serde_json::json!({
                    "text": t.text,
                    "bbox": t.bbox,
                    "feat_frcn": t.feat_appearance,
                    "feat_ft": t.feat_word,
                })
            })
            .collect(),
        answers,
    };
    serde_json::to_string(&record).expect("scene record serialization cannot fail")
}
