//! CLI wiring for dataset generation, training, prediction, evaluation, and
//! PHOC inspection. Exit codes: 0 success, 1 usage error, 2 validation or
//! parse error, 3 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use m4c_core::artifacts::{SavedModel, CHECKPOINT_FILE, METRICS_LOG_FILE, MODEL_FILE};
use m4c_core::config::RunConfig;
use m4c_core::decode::{decode_answer, read_predictions, write_predictions, Prediction};
use m4c_core::error::Error;
use m4c_core::features::{load_scene_pack, phoc_set_indices, ListCaps, SceneManifest, ScenePack};
use m4c_core::metrics::{evaluate_set, MetricKind};
use m4c_core::model::{FeatureDims, ModelConfig};
use m4c_core::synth::{generate_dataset, SynthSpec, TaskFamily};
use m4c_core::train::{train_loop, TrainOptions};

#[derive(Parser)]
#[command(
    name = "m4c",
    about = "Pointer-augmented multimodal transformer for text-reading VQA, desk scale",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Ablation {
    None,
    NoVocab,
    NoCopy,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene-pack dataset (train.jsonl, val.jsonl, manifest.json)
    Gen {
        /// Task family: copy-one | copy-multi | vocab-lookup | mixed
        #[arg(long)]
        family: String,
        /// Number of training examples
        #[arg(long, default_value_t = 1000)]
        train: usize,
        /// Number of validation examples
        #[arg(long, default_value_t = 200)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Minimum OCR tokens per scene
        #[arg(long, default_value_t = 2)]
        ocr_min: usize,
        /// Maximum OCR tokens per scene
        #[arg(long, default_value_t = 6)]
        ocr_max: usize,
        /// Appearance/word feature width for synthetic vectors
        #[arg(long, default_value_t = 16)]
        feat_dim: usize,
        /// Placement grid side length
        #[arg(long, default_value_t = 4)]
        grid: usize,
    },
    /// Train on a generated dataset directory; writes checkpoint, model
    /// description, and metrics log into --out
    Train {
        /// Dataset directory from `gen`
        #[arg(long)]
        data: PathBuf,
        /// Flat key = value config file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory to create
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Ablation::None)]
        ablation: Ablation,
        /// Validation metric: anls | vqa | exact
        #[arg(long, default_value = "exact")]
        metric: String,
        /// Extra key=value config overrides (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Decode answers for a scene file using a trained run directory
    Predict {
        /// Run directory from `train`
        #[arg(long)]
        model: PathBuf,
        /// Scene-pack file (.jsonl)
        #[arg(long)]
        data: PathBuf,
        /// Manifest path (defaults to manifest.json next to the data file)
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Prediction output file (.jsonl)
        #[arg(long)]
        out: PathBuf,
        /// Decode with fewer steps than the model was trained for
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Score a prediction file against scene ground truths
    Eval {
        /// Prediction file from `predict`
        #[arg(long)]
        pred: PathBuf,
        /// Scene-pack file (.jsonl)
        #[arg(long)]
        data: PathBuf,
        /// Manifest path (defaults to manifest.json next to the data file)
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// anls | vqa | exact
        #[arg(long, default_value = "exact")]
        metric: String,
        /// Report output file (JSON); stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the indices of the set bits of a word's PHOC vector
    Phoc { word: String },
}

/// Run the CLI and return the process exit code.
pub fn run<I>(argv: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version are successful outcomes.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation(_) | Error::Parse { .. } | Error::Dimension { .. } => 2,
                Error::Io(_)
                | Error::NonFiniteLoss { .. }
                | Error::Internal(_)
                | Error::Generation(_) => 3,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Gen {
            family,
            train,
            val,
            seed,
            out,
            ocr_min,
            ocr_max,
            feat_dim,
            grid,
        } => {
            let family: TaskFamily = family.parse()?;
            let spec = SynthSpec {
                seed,
                family,
                tokens_per_scene: (ocr_min, ocr_max),
                appearance_dim: feat_dim,
                word_feat_dim: feat_dim,
                grid,
                ..SynthSpec::default()
            };
            let paths = generate_dataset(&spec, train, val, &out)?;
            println!(
                "wrote {} train and {} val scenes under {}",
                train,
                val,
                out.display()
            );
            println!("manifest: {}", paths.manifest.display());
            Ok(())
        }
        Command::Train {
            data,
            config,
            seed,
            out,
            ablation,
            metric,
            overrides,
        } => {
            let metric: MetricKind = metric.parse()?;
            let mut run_config = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            for kv in &overrides {
                let Some((key, value)) = kv.split_once('=') else {
                    return Err(Error::Validation(format!(
                        "--set expects KEY=VALUE, got {kv:?}"
                    )));
                };
                run_config.apply(key.trim(), value.trim())?;
            }
            if let Some(seed) = seed {
                run_config.seed = seed;
            }
            match ablation {
                Ablation::None => {}
                Ablation::NoVocab => run_config.model.enable_fixed_vocab = false,
                Ablation::NoCopy => run_config.model.enable_ocr_copy = false,
            }
            run_config.validate()?;

            let manifest = SceneManifest::load(&data.join("manifest.json"))?;
            let caps = caps_of(&run_config.model);
            let train_scenes = load_scene_pack(&data.join("train.jsonl"), &manifest, caps)?;
            let val_scenes = load_scene_pack(&data.join("val.jsonl"), &manifest, caps)?;
            let dims = FeatureDims::from_manifest(&manifest)?;

            std::fs::create_dir_all(&out)?;
            let mut opts: TrainOptions = run_config.train_options(metric);
            opts.log_path = Some(out.join(METRICS_LOG_FILE));

            let outcome = train_loop(
                &train_scenes,
                &val_scenes,
                &run_config.model,
                &run_config.schedule,
                dims,
                &opts,
            )?;
            SavedModel::save(&out, &outcome.params, &run_config.model, &outcome.vocab)?;
            println!(
                "trained {} iterations; best val {:.4} at iteration {}",
                run_config.schedule.max_iters, outcome.best_val, outcome.best_iter
            );
            if outcome.skipped_unreachable > 0 {
                println!(
                    "skipped {} unreachable example draws",
                    outcome.skipped_unreachable
                );
            }
            println!(
                "wrote {} and {}",
                out.join(CHECKPOINT_FILE).display(),
                out.join(MODEL_FILE).display()
            );
            Ok(())
        }
        Command::Predict {
            model,
            data,
            manifest,
            out,
            max_steps,
        } => {
            let (params, described) = SavedModel::load(&model)?;
            let manifest_path = manifest.unwrap_or_else(|| sibling_manifest(&data));
            let manifest = SceneManifest::load(&manifest_path)?;
            let dims = FeatureDims::from_manifest(&manifest)?;
            if dims != described.dims {
                return Err(Error::Validation(format!(
                    "data manifest dims {dims:?} do not match the model's {:?}",
                    described.dims
                )));
            }
            let mut config = described.config.clone();
            if let Some(t) = max_steps {
                if t < 1 || t > described.config.max_decode_steps {
                    return Err(Error::Validation(format!(
                        "max_steps {t} outside [1, {}]",
                        described.config.max_decode_steps
                    )));
                }
                config.max_decode_steps = t;
            }
            let scenes = load_scene_pack(&data, &manifest, caps_of(&config))?;
            let predictions = decode_scenes(&params, &described, &scenes, &config)?;
            write_predictions(&out, &predictions)?;
            println!("wrote {} predictions to {}", predictions.len(), out.display());
            Ok(())
        }
        Command::Eval {
            pred,
            data,
            manifest,
            metric,
            out,
        } => {
            let metric: MetricKind = metric.parse()?;
            let manifest_path = manifest.unwrap_or_else(|| sibling_manifest(&data));
            let manifest = SceneManifest::load(&manifest_path)?;
            // Evaluation only needs ids and answers; use generous caps.
            let caps = ListCaps {
                max_question_words: usize::MAX,
                max_objects: usize::MAX,
                max_ocr_tokens: usize::MAX,
            };
            let scenes = load_scene_pack(&data, &manifest, caps)?;
            let predictions = read_predictions(&pred)?;
            let report = evaluate_set(&predictions, &scenes, metric)?;
            let text = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Validation(format!("report serialization: {e}")))?;
            match out {
                Some(path) => {
                    std::fs::write(&path, text)?;
                    println!(
                        "{}: mean {:.6} over {} scenes -> {}",
                        report.metric,
                        report.mean,
                        report.count,
                        path.display()
                    );
                }
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Phoc { word } => {
            let indices = phoc_set_indices(&word);
            let rendered: Vec<String> = indices.iter().map(|i| i.to_string()).collect();
            println!("{}", rendered.join(" "));
            Ok(())
        }
    }
}

fn caps_of(config: &ModelConfig) -> ListCaps {
    ListCaps {
        max_question_words: config.max_question_words,
        max_objects: config.max_objects,
        max_ocr_tokens: config.max_ocr_tokens,
    }
}

fn sibling_manifest(data: &Path) -> PathBuf {
    data.parent()
        .unwrap_or_else(|| Path::new("."))
        .join("manifest.json")
}

fn decode_scenes(
    params: &m4c_core::model::ModelParams,
    described: &SavedModel,
    scenes: &[ScenePack],
    config: &ModelConfig,
) -> Result<Vec<Prediction>, Error> {
    scenes
        .par_iter()
        .map(|scene| {
            let result = decode_answer(params, &described.vocab, scene, config)?;
            Ok(Prediction::from_result(&scene.id, &result))
        })
        .collect()
}
