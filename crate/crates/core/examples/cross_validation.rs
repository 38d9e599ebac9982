//! Monte Carlo cross-validation of several methods on a simfile pack,
//! reported as mean ± std with significance marks.
//!
//! ```text
//! cargo run --release -p stepdiff --example cross_validation [pack dir] [replicates]
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use stepdiff::experiment::{prepare_levels, run_replicate};
use stepdiff::heads::Method;
use stepdiff::metrics::{aggregate_report, METRIC_NAMES};
use stepdiff::model::{EncoderConfig, LrRule, TrainConfig};
use stepdiff::pipeline::{manifest_songs, mc_split, pool_categories, DatasetManifest, SongLabels};
use stepdiff::rng::derive_seed;
use stepdiff::sm::parse_pack;

fn main() {
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pack"));
    let replicates: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let songs = parse_pack(&root).expect("pack parses").songs;
    let root = root.as_path();
    let entries = manifest_songs(root, &songs);
    let pooling = pool_categories(&DatasetManifest::meter_counts(&entries), 0.1).unwrap();
    println!("{} songs, K={}, groups {:?}", songs.len(), pooling.k, pooling.groups());
    let labels: Vec<SongLabels> = entries
        .iter()
        .map(|s| SongLabels {
            song_id: s.song_id.clone(),
            labels: s.levels.iter().map(|l| pooling.pooled(l.raw_meter).unwrap()).collect(),
        })
        .collect();

    let encoder = EncoderConfig {
        embed_dim: 16,
        layers: 1,
        heads: 2,
        window: 24,
        ensemble: 4,
        ..Default::default()
    };
    let levels = prepare_levels(root, &songs, &pooling, encoder.min_len());
    let methods = [Method::Pattern, Method::Classification, Method::Regression, Method::Binomial];

    let mut per_method: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for r in 0..replicates {
        let plan = mc_split(&labels, 0.2, 42, r, 10_000).unwrap();
        for method in methods {
            let config = TrainConfig {
                epochs: 100,
                batch_size: 32,
                lr: LrRule::Fixed(3e-3),
                seed: derive_seed(42, "train", &format!("{}/{r}", method.name())),
                ..Default::default()
            };
            let outcome = run_replicate("pack", &levels, &plan, method, pooling.k, &config, &encoder).unwrap();
            per_method.entry(method.name().to_string()).or_default().push(outcome.test_metrics);
        }
        println!("replicate {r} done");
    }

    let report = aggregate_report(&per_method, 0.05);
    print!("{:<16}", "");
    for m in per_method.keys() {
        print!("{m:>18}");
    }
    println!();
    for name in METRIC_NAMES {
        print!("{name:<16}");
        for m in per_method.keys() {
            match report.columns[name].get(m) {
                Some(c) => {
                    let mark = if c.best { "*" } else if c.underlined { "_" } else { " " };
                    print!("{:>17}{mark}", format!("{:.3} ± {:.3}", c.mean, c.std));
                }
                None => print!("{:>18}", "-"),
            }
        }
        println!();
    }
    println!("* best, _ not significantly worse (two-sided t-test, 5%)");
}
