//! Trains a binomial-target transformer on a synthetic pack, evaluates it on
//! held-out songs and round-trips it through a checkpoint.
//!
//! ```text
//! cargo run --release -p stepdiff --example train_and_predict [method]
//! ```

use std::path::Path;

use stepdiff::checkpoint::{load_checkpoint, save_checkpoint};
use stepdiff::experiment::{predict_level, prepare_levels, run_replicate};
use stepdiff::heads::Method;
use stepdiff::model::{EncoderConfig, LrRule, TrainConfig};
use stepdiff::pipeline::{manifest_songs, mc_split, pool_categories, DatasetManifest, DEFAULT_MAX_ATTEMPTS, DEFAULT_POOL_THRESHOLD, DEFAULT_TEST_FRACTION};
use stepdiff::synth::{synth_songs, SynthConfig};

fn main() {
    let method = std::env::args()
        .nth(1)
        .and_then(|name| Method::ALL.into_iter().find(|m| m.name() == name))
        .unwrap_or(Method::Binomial);

    let songs: Vec<_> = synth_songs(&SynthConfig { seed: 3, ..Default::default() })
        .iter()
        .map(|s| s.parse())
        .collect();
    let root = Path::new("");
    let entries = manifest_songs(root, &songs);
    let pooling = pool_categories(&DatasetManifest::meter_counts(&entries), DEFAULT_POOL_THRESHOLD).unwrap();
    let manifest = DatasetManifest {
        dataset_name: "synthetic".into(),
        songs: entries,
        pooling: pooling.clone(),
        splits: Vec::new(),
    };
    let plan = mc_split(&manifest.song_labels().unwrap(), DEFAULT_TEST_FRACTION, 7, 0, DEFAULT_MAX_ATTEMPTS).unwrap();
    println!("test songs: {:?}", plan.test_song_ids);

    let encoder = EncoderConfig {
        embed_dim: 16,
        layers: 1,
        heads: 2,
        window: 24,
        ensemble: 8,
        ..Default::default()
    };
    let config = TrainConfig {
        epochs: 150,
        batch_size: 32,
        lr: LrRule::Fixed(3e-3),
        seed: 1,
        ..Default::default()
    };
    let levels = prepare_levels(root, &songs, &pooling, encoder.min_len());
    let outcome = run_replicate("synthetic", &levels, &plan, method, pooling.k, &config, &encoder).unwrap();
    println!(
        "{}: {} parameters, final loss {:.4}",
        method.name(),
        outcome.model.param_count(),
        outcome.model.final_loss().unwrap_or(f64::NAN)
    );
    println!("train: {:?}", outcome.train_metrics);
    println!("test:  {:?}", outcome.test_metrics);
    for p in &outcome.test.predictions {
        println!("  {:<12} truth {} predicted {}", p.level_id, p.truth, p.predicted);
    }

    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join(method.name());
    save_checkpoint(&stem, &outcome.model, &config, &pooling).unwrap();
    let (restored, meta) = load_checkpoint(&stem).unwrap();
    let level = levels.iter().find(|l| plan.is_test(&l.song_id)).unwrap();
    let before = predict_level(&outcome.model, level, config.seed).unwrap();
    let after = predict_level(&restored, level, config.seed).unwrap();
    assert_eq!(before, after);
    println!("checkpoint round trip ok (K={}, {} parameters)", meta.k, meta.param_count);
}
