//! One cross-validation replicate end to end: labelled levels in, trained
//! model and per-level predictions out.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{extract_sequence, level_id, FeatureError, FeatureSequence};
use crate::heads::Method;
use crate::metrics::{metric_set, EvalRecord, MetricSet, MetricsError};
use crate::model::{pattern_features, train, EncoderConfig, Input, Model, ModelError, TrainConfig, TrainExample, PATTERN_DIM};
use crate::pipeline::{song_id, PipelineError, PoolingMap, SplitPlan};
use crate::rng::derive_seed;
use crate::sm::Song;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("split leaves no {0} levels")]
    EmptySide(&'static str),
}

/// A level ready for training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelData {
    pub song_id: String,
    pub level_index: usize,
    pub raw_meter: u32,
    pub label: u32,
    pub sequence: FeatureSequence,
    pub pattern: Vec<f64>,
}

impl LevelData {
    pub fn level_id(&self) -> String {
        level_id(&self.song_id, self.level_index)
    }

    pub fn input(&self, method: Method) -> Input<'_> {
        if method == Method::Pattern {
            Input::Static(&self.pattern)
        } else {
            Input::Window(&self.sequence.rows)
        }
    }
}

/// Extracts features of every level of `songs` and attaches pooled labels.
/// Levels without steps, with fewer than `min_len` step rows, or whose
/// meter the pooling does not cover are skipped with a warning.
pub fn prepare_levels(root: &Path, songs: &[Song], pooling: &PoolingMap, min_len: usize) -> Vec<LevelData> {
    let mut out = Vec::new();
    for song in songs {
        let id = song_id(root, Path::new(&song.source_path));
        for (index, level) in song.levels.iter().enumerate() {
            let label = match pooling.pooled(level.meter) {
                Ok(l) => l,
                Err(e) => {
                    log::warn!("skipping {}: {e}", level_id(&id, index));
                    continue;
                }
            };
            let sequence = match extract_sequence(level, &song.header, &id, index) {
                Ok(s) if s.len() >= min_len => s,
                Ok(s) => {
                    log::warn!("skipping {}: only {} step rows", level_id(&id, index), s.len());
                    continue;
                }
                Err(FeatureError::EmptyChart) => {
                    log::warn!("skipping {}: no steps", level_id(&id, index));
                    continue;
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", level_id(&id, index));
                    continue;
                }
            };
            let pattern: [f64; PATTERN_DIM] = pattern_features(level, &song.header);
            out.push(LevelData {
                song_id: id.clone(),
                level_index: index,
                raw_meter: level.meter,
                label,
                sequence,
                pattern: pattern.to_vec(),
            });
        }
    }
    out
}

pub fn train_levels(
    levels: &[&LevelData],
    method: Method,
    k: u32,
    config: &TrainConfig,
    encoder: &EncoderConfig,
) -> Result<Model, ModelError> {
    let examples: Vec<TrainExample<'_>> = levels
        .iter()
        .map(|l| TrainExample {
            input: l.input(method),
            label: l.label,
        })
        .collect();
    train(&examples, method, k, config, encoder)
}

/// One level's prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub level_id: String,
    pub song_id: String,
    pub truth: u32,
    pub predicted: u32,
    /// Head output before decoding (ensemble mean for sequence models).
    pub output: Vec<f64>,
}

/// Predicts one level; ensemble windows are keyed by `seed` and the level id.
pub fn predict_level(model: &Model, level: &LevelData, seed: u64) -> Result<Prediction, ModelError> {
    let output = if model.method == Method::Pattern {
        model.head_output(Input::Static(&level.pattern))?
    } else {
        model.predict_output(&level.sequence, derive_seed(seed, "ensemble", &level.level_id()))?
    };
    Ok(Prediction {
        level_id: level.level_id(),
        song_id: level.song_id.clone(),
        truth: level.label,
        predicted: model.decode_output(&output)?,
        output,
    })
}

pub fn predict_levels(model: &Model, levels: &[&LevelData], seed: u64) -> Result<Vec<Prediction>, ModelError> {
    levels.iter().map(|l| predict_level(model, l, seed)).collect()
}

/// Predictions of one model on one replicate's test songs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub dataset: String,
    pub method: Method,
    #[serde(rename = "K")]
    pub k: u32,
    pub replicate: u64,
    pub predictions: Vec<Prediction>,
}

impl PredictionFile {
    pub fn records(&self) -> Result<EvalRecord, MetricsError> {
        EvalRecord::new(self.predictions.iter().map(|p| (p.truth, p.predicted)).collect(), self.k)
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub model: Model,
    pub train_metrics: MetricSet,
    pub test: PredictionFile,
    pub test_metrics: MetricSet,
}

/// Trains `method` on the training songs of `plan` and evaluates it on
/// both sides.
#[allow(clippy::too_many_arguments)]
pub fn run_replicate(
    dataset: &str,
    levels: &[LevelData],
    plan: &SplitPlan,
    method: Method,
    k: u32,
    config: &TrainConfig,
    encoder: &EncoderConfig,
) -> Result<ReplicateOutcome, ExperimentError> {
    let (test, train_side): (Vec<&LevelData>, Vec<&LevelData>) = levels.iter().partition(|l| plan.is_test(&l.song_id));
    if train_side.is_empty() {
        return Err(ExperimentError::EmptySide("training"));
    }
    if test.is_empty() {
        return Err(ExperimentError::EmptySide("test"));
    }
    let model = train_levels(&train_side, method, k, config, encoder)?;
    let seed = config.seed;
    let train_predictions = predict_levels(&model, &train_side, seed)?;
    let train_records = EvalRecord::new(train_predictions.iter().map(|p| (p.truth, p.predicted)).collect(), k)?;
    let test_file = PredictionFile {
        dataset: dataset.to_string(),
        method,
        k,
        replicate: plan.replicate_index,
        predictions: predict_levels(&model, &test, seed)?,
    };
    let test_metrics = metric_set(&test_file.records()?)?;
    Ok(ReplicateOutcome {
        model,
        train_metrics: metric_set(&train_records)?,
        test: test_file,
        test_metrics,
    })
}
