use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use stepdiff::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, CheckpointError};
use stepdiff::experiment::{predict_levels, run_replicate, ExperimentError, LevelData, Prediction, PredictionFile};
use stepdiff::features::{extract_sequence, level_id, read_feature_dump, write_feature_dump, FeatureError, FeatureSequence};
use stepdiff::heads::Method;
use stepdiff::metrics::{
    aggregate_report, confusion, metric_set, AggregateReport, ConfusionMatrix, EvalRecord, MetricSet, MetricsError,
    Normalization, METRIC_NAMES,
};
use stepdiff::model::{pattern_features, EncoderConfig, LrRule, ModelError, TrainConfig};
use stepdiff::pipeline::{
    make_ranking_pairs, manifest_songs, mc_split, pool_categories, remap_cross_dataset, DatasetManifest, ManifestSong,
    PipelineError, PoolingMap,
};
use stepdiff::rng::derive_seed;
use stepdiff::sm::{parse_pack, parse_sm_file, PackError, Song};
use stepdiff_annotation::{sources_from_predictions, AppState, Catalog, ServiceError};
use thiserror::Error;

/// Environment variable overriding the cache directory.
pub const CACHE_DIR_ENV: &str = "STEPDIFF_CACHE_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    InfeasibleSplit(PipelineError),
    #[error("training diverged: {0}")]
    Divergence(ModelError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Parse(_) => 3,
            CliError::InfeasibleSplit(_) => 4,
            CliError::Divergence(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Failed(_) => "failed",
            CliError::Usage(_) => "usage",
            CliError::Parse(_) => "parse",
            CliError::InfeasibleSplit(_) => "infeasible_split",
            CliError::Divergence(_) => "divergence",
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::RejectionExhausted { .. } => CliError::InfeasibleSplit(e),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DivergedLoss { .. } => CliError::Divergence(e),
            ModelError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Model(m) => m.into(),
            ExperimentError::Pipeline(p) => p.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Usage(e.to_string()),
            CheckpointError::Json { .. } | CheckpointError::TruncatedBlob { .. } => CliError::Parse(e.to_string()),
            CheckpointError::Model(m) => m.into(),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        CliError::Failed(e.to_string())
    }
}

/// `$STEPDIFF_CACHE_DIR`, else `$XDG_CACHE_HOME/stepdiff`, else
/// `$HOME/.cache/stepdiff`, else `.stepdiff-cache`.
pub fn cache_dir() -> PathBuf {
    let var = |name| std::env::var_os(name).filter(|v| !v.is_empty()).map(PathBuf::from);
    var(CACHE_DIR_ENV)
        .or_else(|| var("XDG_CACHE_HOME").map(|p| p.join("stepdiff")))
        .or_else(|| var("HOME").map(|p| p.join(".cache/stepdiff")))
        .unwrap_or_else(|| PathBuf::from(".stepdiff-cache"))
}

fn io_failure(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types always serialize");
    bytes.push(b'\n');
    bytes
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, &to_json(value)).map_err(|e| io_failure(path, e))
}

/// Writes `bytes` to `out`, or to standard output when `out` is absent.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => write_atomic(path, bytes).map_err(|e| io_failure(path, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| CliError::Failed(format!("stdout: {e}")))
        }
    }
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    read_json(path)
}

fn load_songs(manifest: &DatasetManifest) -> Result<Vec<(&ManifestSong, Song)>, CliError> {
    manifest
        .songs
        .iter()
        .map(|entry| {
            parse_sm_file(Path::new(&entry.path))
                .map(|song| (entry, song))
                .map_err(|e| CliError::Parse(format!("{}: {e}", entry.path)))
        })
        .collect()
}

fn load_feature_dump(path: &Path) -> Result<BTreeMap<String, FeatureSequence>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let sequences = read_feature_dump(std::io::BufReader::new(file))
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    Ok(sequences.into_iter().map(|s| (s.level_id(), s)).collect())
}

/// Labelled levels of a manifest. Sequences come from `dump` when given
/// and are extracted from the charts otherwise; levels without a usable
/// sequence of at least `min_len` rows are skipped with a warning.
fn build_levels(
    manifest: &DatasetManifest,
    mut dump: Option<BTreeMap<String, FeatureSequence>>,
    label_of: impl Fn(u32) -> Result<u32, PipelineError>,
    min_len: usize,
) -> Result<Vec<LevelData>, CliError> {
    let mut levels = Vec::new();
    for (entry, song) in load_songs(manifest)? {
        for (index, level) in song.levels.iter().enumerate() {
            let id = level_id(&entry.song_id, index);
            let sequence = match dump.as_mut() {
                Some(d) => d.remove(&id),
                None => match extract_sequence(level, &song.header, &entry.song_id, index) {
                    Ok(s) => Some(s),
                    Err(FeatureError::EmptyChart) => None,
                    Err(e) => return Err(CliError::Failed(format!("{id}: {e}"))),
                },
            };
            let Some(sequence) = sequence.filter(|s| s.len() >= min_len) else {
                log::warn!("skipping {id}: no feature sequence of at least {min_len} rows");
                continue;
            };
            levels.push(LevelData {
                song_id: entry.song_id.clone(),
                level_index: index,
                raw_meter: level.meter,
                label: label_of(level.meter)?,
                sequence,
                pattern: pattern_features(level, &song.header).to_vec(),
            });
        }
    }
    Ok(levels)
}

fn identity_pooling(counts: &BTreeMap<u32, usize>) -> PoolingMap {
    PoolingMap {
        raw_to_pooled: counts.keys().enumerate().map(|(i, &raw)| (raw, i as u32 + 1)).collect(),
        k: counts.len() as u32,
    }
}

pub fn parse(pack_dir: &Path, out: &Path, name: Option<String>) -> Result<(), CliError> {
    let root = pack_dir
        .canonicalize()
        .map_err(|e| CliError::Usage(format!("{}: {e}", pack_dir.display())))?;
    let pack = parse_pack(&root).map_err(|e| match e {
        PackError::NoSongsFound { .. } => CliError::Parse(e.to_string()),
        other => CliError::Failed(other.to_string()),
    })?;
    let songs = manifest_songs(&root, &pack.songs);
    let counts = DatasetManifest::meter_counts(&songs);
    let dataset_name = name.unwrap_or_else(|| {
        root.file_name()
            .map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned())
    });
    let manifest = DatasetManifest {
        dataset_name,
        pooling: identity_pooling(&counts),
        songs,
        splits: Vec::new(),
    };
    write_json(out, &manifest)?;
    let levels: usize = manifest.songs.iter().map(|s| s.levels.len()).sum();
    println!(
        "{}: {} songs, {levels} levels, {} raw meters, {} files skipped",
        manifest.dataset_name,
        manifest.songs.len(),
        counts.len(),
        pack.failures.len()
    );
    Ok(())
}

pub fn features(manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let mut sequences = Vec::new();
    for (entry, song) in load_songs(&manifest)? {
        for (index, level) in song.levels.iter().enumerate() {
            match extract_sequence(level, &song.header, &entry.song_id, index) {
                Ok(s) => sequences.push(s),
                Err(e) => log::warn!("skipping {}: {e}", level_id(&entry.song_id, index)),
            }
        }
    }
    let mut bytes = Vec::new();
    write_feature_dump(&mut bytes, &sequences).map_err(|e| io_failure(out, e))?;
    write_atomic(out, &bytes).map_err(|e| io_failure(out, e))?;
    println!("{} feature sequences", sequences.len());
    Ok(())
}

pub fn pool(manifest_path: &Path, threshold: f64) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("threshold {threshold} must lie in [0, 1)")));
    }
    let mut manifest = load_manifest(manifest_path)?;
    let pooling = pool_categories(&DatasetManifest::meter_counts(&manifest.songs), threshold)?;
    if pooling != manifest.pooling && !manifest.splits.is_empty() {
        log::warn!("pooling changed; discarding {} splits", manifest.splits.len());
        manifest.splits.clear();
    }
    manifest.pooling = pooling;
    write_json(manifest_path, &manifest)?;
    let groups: Vec<String> = manifest
        .pooling
        .groups()
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let raw: Vec<String> = g.iter().map(u32::to_string).collect();
            format!("{}={{{}}}", i + 1, raw.join(","))
        })
        .collect();
    println!("K={} {}", manifest.pooling.k, groups.join(" "));
    Ok(())
}

pub fn split(
    manifest_path: &Path,
    replicates: u64,
    seed: u64,
    test_fraction: f64,
    max_attempts: usize,
) -> Result<(), CliError> {
    let mut manifest = load_manifest(manifest_path)?;
    let songs = manifest.song_labels()?;
    manifest.splits = (0..replicates)
        .map(|r| mc_split(&songs, test_fraction, seed, r, max_attempts))
        .collect::<Result<_, _>>()?;
    write_json(manifest_path, &manifest)?;
    println!("{replicates} splits drawn with seed {seed}");
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainRequest {
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub method: Method,
    pub replicates: Range<u64>,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub embed_dim: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub window: Option<usize>,
    pub ensemble: Option<usize>,
    pub positional_encoding: bool,
}

impl TrainRequest {
    fn encoder(&self) -> Result<EncoderConfig, CliError> {
        let d = EncoderConfig::default();
        let encoder = EncoderConfig {
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            layers: self.layers.unwrap_or(d.layers),
            heads: self.heads.unwrap_or(d.heads),
            window: self.window.unwrap_or(d.window),
            ensemble: self.ensemble.unwrap_or(d.ensemble),
            positional_encoding: self.positional_encoding,
            ..d
        };
        encoder.validate().map_err(CliError::Usage)?;
        Ok(encoder)
    }

    fn train_config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let config = TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            lr: self.lr.map_or(d.lr, LrRule::Fixed),
            seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// File stem of a method's checkpoint for one replicate.
pub fn run_stem(out: &Path, method: Method, replicate: u64) -> PathBuf {
    out.join(format!("{}-r{replicate:03}", method.name()))
}

fn predictions_path(stem: &Path) -> PathBuf {
    stem.with_extension("predictions.json")
}

#[derive(Debug, Serialize)]
struct ReplicateMetrics<'a> {
    dataset: &'a str,
    method: Method,
    replicate: u64,
    train: &'a MetricSet,
    test: &'a MetricSet,
    final_training_loss: Option<f64>,
}

pub fn train(req: &TrainRequest) -> Result<(), CliError> {
    let manifest = load_manifest(&req.manifest)?;
    let encoder = req.encoder()?;
    let plans: Vec<_> = req
        .replicates
        .clone()
        .map(|r| {
            manifest
                .splits
                .iter()
                .find(|p| p.replicate_index == r)
                .ok_or_else(|| CliError::Usage(format!("manifest has no split for replicate {r}; run `split` first")))
        })
        .collect::<Result<_, _>>()?;
    let configs: Vec<TrainConfig> = plans
        .iter()
        .map(|plan| {
            let root = req.seed.unwrap_or(plan.seed);
            let key = format!("{}/{}", req.method.name(), plan.replicate_index);
            req.train_config(derive_seed(root, "train", &key))
        })
        .collect::<Result<_, _>>()?;
    let dump = load_feature_dump(&req.features)?;
    let levels = build_levels(&manifest, Some(dump), |m| manifest.pooling.pooled(m), encoder.min_len())?;
    let out = req
        .out
        .clone()
        .unwrap_or_else(|| cache_dir().join("runs").join(&manifest.dataset_name));
    let k = manifest.pooling.k;

    let jobs = req.jobs.min(plans.len()).max(1);
    let outcomes = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let (plans, configs, levels, encoder) = (&plans, &configs, &levels, &encoder);
                let dataset = manifest.dataset_name.as_str();
                scope.spawn(move || {
                    (j..plans.len())
                        .step_by(jobs)
                        .map(|i| {
                            let outcome = run_replicate(dataset, levels, plans[i], req.method, k, &configs[i], encoder);
                            (i, outcome)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<_> = handles
            .into_iter()
            .flat_map(|h| h.join().expect("training thread panicked"))
            .collect();
        all.sort_by_key(|(i, _)| *i);
        all
    });

    for (i, outcome) in outcomes {
        let outcome = outcome?;
        let replicate = plans[i].replicate_index;
        let stem = run_stem(&out, req.method, replicate);
        save_checkpoint(&stem, &outcome.model, &configs[i], &manifest.pooling)?;
        write_json(&predictions_path(&stem), &outcome.test)?;
        write_json(
            &stem.with_extension("metrics.json"),
            &ReplicateMetrics {
                dataset: &manifest.dataset_name,
                method: req.method,
                replicate,
                train: &outcome.train_metrics,
                test: &outcome.test_metrics,
                final_training_loss: outcome.model.final_loss(),
            },
        )?;
        println!(
            "{} replicate {replicate}: test wae {:.4} mae {:.4} accuracy {:.4} -> {}",
            req.method.name(),
            outcome.test_metrics.wae,
            outcome.test_metrics.mae,
            outcome.test_metrics.accuracy,
            stem.display()
        );
    }
    Ok(())
}

/// Reads a prediction file, or the predictions saved next to a checkpoint
/// (given by stem, blob or sidecar path).
fn load_predictions(path: &Path) -> Result<PredictionFile, CliError> {
    if path.is_file() && path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        if let Ok(file) = serde_json::from_str::<PredictionFile>(&text) {
            return Ok(file);
        }
    }
    let stem = path.with_extension("");
    let (_, meta) = load_checkpoint(&stem)?;
    let file: PredictionFile = read_json(&predictions_path(&stem))?;
    if file.method != meta.method || file.k != meta.k {
        return Err(CliError::Failed(format!(
            "{}: predictions do not belong to this checkpoint",
            stem.display()
        )));
    }
    Ok(file)
}

fn resolve_metrics(requested: &[String]) -> Result<Vec<&'static str>, CliError> {
    let mut names = Vec::new();
    for r in requested {
        let r = r.trim().to_ascii_lowercase();
        let expanded: Vec<&'static str> = match r.as_str() {
            "agreement" => vec!["agreement_strict", "agreement_full"],
            _ => match METRIC_NAMES.iter().find(|n| **n == r) {
                Some(n) => vec![*n],
                None => return Err(CliError::Usage(format!("unknown metric {r:?}"))),
            },
        };
        for n in expanded {
            if !names.contains(&n) {
                names.push(n);
            }
        }
    }
    Ok(names)
}

type Evaluated = Result<(PredictionFile, MetricSet), CliError>;

#[derive(Debug, Serialize)]
struct EvaluatedFile {
    path: String,
    dataset: String,
    method: Method,
    replicate: u64,
    levels: usize,
    metrics: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    metrics: Vec<&'static str>,
    files: Vec<EvaluatedFile>,
    report: AggregateReport,
}

pub fn eval(inputs: &[PathBuf], metrics: &[String], alpha: f64, jobs: usize, out: Option<&Path>) -> Result<(), CliError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Usage(format!("alpha {alpha} must lie in (0, 1)")));
    }
    let names = resolve_metrics(metrics)?;
    let jobs = jobs.clamp(1, inputs.len().max(1));
    let mut evaluated: Vec<(usize, Evaluated)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                scope.spawn(move || {
                    (j..inputs.len())
                        .step_by(jobs)
                        .map(|i| {
                            let result = load_predictions(&inputs[i]).and_then(|file| {
                                let set = metric_set(&file.records()?)?;
                                Ok((file, set))
                            });
                            (i, result)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    });
    evaluated.sort_by_key(|(i, _)| *i);

    let mut per_method: BTreeMap<String, Vec<MetricSet>> = BTreeMap::new();
    let mut files = Vec::new();
    for (i, result) in evaluated {
        let (file, set) = result?;
        per_method.entry(file.method.name().to_string()).or_default().push(set.clone());
        files.push(EvaluatedFile {
            path: inputs[i].display().to_string(),
            dataset: file.dataset,
            method: file.method,
            replicate: file.replicate,
            levels: file.predictions.len(),
            metrics: names.iter().map(|n| (n.to_string(), set.get(n))).collect(),
        });
    }
    let mut report = aggregate_report(&per_method, alpha);
    report.columns.retain(|name, _| names.contains(&name.as_str()));
    emit(
        out,
        &to_json(&EvalReport {
            metrics: names,
            files,
            report,
        }),
    )
}

#[derive(Debug, Serialize)]
struct CrossEvalReport {
    checkpoint: String,
    dataset: String,
    method: Method,
    #[serde(rename = "K")]
    k: u32,
    levels: usize,
    metrics: MetricSet,
    confusion: ConfusionMatrix,
    confusion_normalized: ConfusionMatrix,
    predictions: Vec<Prediction>,
}

pub fn cross_eval(checkpoint: &Path, manifest_path: &Path, features: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let stem = checkpoint.with_extension("");
    let (model, meta) = load_checkpoint(&stem)?;
    let manifest = load_manifest(manifest_path)?;
    let dump = features.map(load_feature_dump).transpose()?;
    let remap = |raw: u32| Ok(remap_cross_dataset(&[raw], &meta.pooling)[0]);
    let levels = build_levels(&manifest, dump, remap, meta.encoder.min_len())?;
    if levels.is_empty() {
        return Err(CliError::Failed(format!("{}: no usable levels", manifest_path.display())));
    }
    let refs: Vec<&LevelData> = levels.iter().collect();
    let predictions = predict_levels(&model, &refs, meta.train.seed)?;
    let records = EvalRecord::new(predictions.iter().map(|p| (p.truth, p.predicted)).collect(), meta.k)?;
    let report = CrossEvalReport {
        checkpoint: stem.display().to_string(),
        dataset: manifest.dataset_name.clone(),
        method: meta.method,
        k: meta.k,
        levels: levels.len(),
        metrics: metric_set(&records)?,
        confusion: confusion(&records, Normalization::Raw),
        confusion_normalized: confusion(&records, Normalization::CategoryNormalized),
        predictions,
    };
    emit(out, &to_json(&report))
}

pub fn rank_pairs(manifest_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let levels: Vec<(String, u32)> = manifest
        .songs
        .iter()
        .flat_map(|s| s.levels.iter().map(move |l| (s, l)))
        .map(|(s, l)| Ok((level_id(&s.song_id, l.index), manifest.pooling.pooled(l.raw_meter)?)))
        .collect::<Result<_, PipelineError>>()?;
    let mut bytes = Vec::new();
    for pair in make_ranking_pairs(&levels) {
        serde_json::to_writer(&mut bytes, &pair).expect("pairs always serialize");
        bytes.push(b'\n');
    }
    emit(out, &bytes)
}

pub fn serve(
    host: &str,
    port: u16,
    prediction_paths: &[PathBuf],
    manifest_path: &Path,
    budget: usize,
    log: Option<PathBuf>,
    static_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let ip: IpAddr = host
        .parse()
        .map_err(|e| CliError::Usage(format!("host {host:?}: {e}")))?;
    let manifest = load_manifest(manifest_path)?;
    let files: Vec<PredictionFile> = prediction_paths.iter().map(|p| load_predictions(p)).collect::<Result<_, _>>()?;
    let sources = sources_from_predictions(&files, &manifest);
    let songs: Vec<(String, Song)> = load_songs(&manifest)?
        .into_iter()
        .map(|(entry, song)| (entry.song_id.clone(), song))
        .collect();
    let catalog = Catalog::build(sources, &songs, budget)?;
    let log_path = log.unwrap_or_else(|| {
        cache_dir()
            .join("annotation")
            .join(format!("{}.jsonl", manifest.dataset_name))
    });
    if let Some(dir) = log_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    println!(
        "serving {} pairs on http://{}, judgments in {}",
        catalog.pairs.len(),
        SocketAddr::new(ip, port),
        log_path.display()
    );
    let state = AppState::open(catalog, &log_path)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Failed(format!("runtime: {e}")))?;
    runtime
        .block_on(stepdiff_annotation::serve(SocketAddr::new(ip, port), state, static_dir))
        .map_err(|e| CliError::Failed(format!("server: {e}")))
}
