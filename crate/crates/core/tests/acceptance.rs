//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepdiff::experiment::{prepare_levels, run_replicate, LevelData};
use stepdiff::features::{encode_note_level, encode_time_delta, extract_sequence, FEATURE_DIM, TEMPO};
use stepdiff::heads::{binomial_params, binomial_target, decode, Method, OrdinalTarget, SoftTargets};
use stepdiff::metrics::{concordance_accuracy, mae, wae, EvalRecord};
use stepdiff::model::{EncoderConfig, Input, LrRule, Model, TrainConfig};
use stepdiff::pipeline::{
    mc_split, pool_categories, test_size, PairLabel, PipelineError, SongLabels, DEFAULT_MAX_ATTEMPTS,
    DEFAULT_POOL_THRESHOLD, DEFAULT_TEST_FRACTION,
};
use stepdiff::sm::{parse_pack, parse_sm, to_sm_string};
use stepdiff::synth::{synth_songs, write_synth_pack, SynthConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Outcome::new(false, format!("panicked: {msg}"))
    });
    println!(
        "{} {name} ({:.2}s): {}",
        if outcome.pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        outcome.detail
    );
    outcome.pass
}

fn binomial_construction() -> Outcome {
    let start = Instant::now();
    let (mut worst_mean, mut worst_var, mut worst_sum) = (0.0f64, 0.0f64, 0.0f64);
    for k in 2..=20u32 {
        for y in 1..=k {
            let t = binomial_target(&binomial_params(y, k));
            let sum: f64 = t.iter().sum();
            let mean: f64 = t.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
            let var: f64 = t.iter().enumerate().map(|(i, p)| (i as f64 - mean).powi(2) * p).sum();
            worst_mean = worst_mean.max((mean - (y as f64 + 1.0)).abs());
            worst_var = worst_var.max((var - 1.0).abs());
            worst_sum = worst_sum.max((sum - 1.0).abs());
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst_mean < 1e-9 && worst_var < 1e-9 && worst_sum < 1e-12 && elapsed < Duration::from_secs(1),
        format!("max |mean err| {worst_mean:.2e}, max |var err| {worst_var:.2e}, max |sum err| {worst_sum:.2e}, {elapsed:?}"),
    )
}

fn soft_target_self_consistency() -> Outcome {
    let mut failures = Vec::new();
    let mut checked = 0;
    for method in [Method::Laplace, Method::Binomial] {
        for k in 2..=12u32 {
            let soft = match method {
                Method::Laplace => SoftTargets::laplace(k),
                _ => SoftTargets::binomial(k),
            };
            for y in 1..=k {
                let target = OrdinalTarget::new(method, y, k).payload;
                let decoded = decode(method, &target, k, &[], Some(&soft)).unwrap();
                checked += 1;
                if decoded != y {
                    failures.push(format!("{method} K={k} y={y} -> {decoded}"));
                }
            }
        }
    }
    Outcome::new(failures.is_empty(), format!("{checked} targets decoded, failures {failures:?}"))
}

fn feature_examples() -> Outcome {
    let flags = encode_note_level(1, 24);
    let d1 = encode_time_delta(10.5, Some(10.0));
    let d2 = encode_time_delta(13.0, Some(10.0));
    let song = parse_sm(b"#OFFSET:0;\n#BPMS:0=120;\n#NOTES:\ndance-single:\n:\nEasy:\n1:\n0:\n1000\n0000\n0000\n0000\n;\n").unwrap();
    let seq = extract_sequence(&song.levels[0], &song.header, "s", 0).unwrap();
    let tempo = seq.rows[0][TEMPO];
    let pass = flags == [1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]
        && d1 == 2.0
        && d2 == 8.0
        && tempo == 0.5
        && seq.rows[0].len() == FEATURE_DIM;
    Outcome::new(pass, format!("1/24 flags {flags:?}; 0.5 s -> {d1}; 3.0 s -> {d2}; 120 BPM -> {tempo}"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let encoder = EncoderConfig {
        embed_dim: 8,
        layers: 1,
        heads: 1,
        window: 4,
        ensemble: 1,
        ..EncoderConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let k = 5;
    let mut worst = BTreeMap::new();
    for method in Method::ALL {
        let mut model = Model::new(method, k, &encoder, 3).unwrap();
        for p in model.params_mut() {
            *p += rng.gen_range(-0.3..0.3);
        }
        let rows: Vec<[f64; FEATURE_DIM]> = (0..4)
            .map(|_| {
                let mut v = [0.0; FEATURE_DIM];
                v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                v
            })
            .collect();
        let stat: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let input = if method == Method::Pattern {
            Input::Static(&stat)
        } else {
            Input::Window(&rows)
        };
        let mut method_worst: f64 = 0.0;
        for label in 1..=k {
            let (_, analytic) = model.sample_loss_grad(input, label).unwrap();
            let mut params = model.params().to_vec();
            let eps = 1e-5;
            for i in 0..params.len() {
                let saved = params[i];
                params[i] = saved + eps;
                let up = model.loss_at(&params, input, label).unwrap();
                params[i] = saved - eps;
                let down = model.loss_at(&params, input, label).unwrap();
                params[i] = saved;
                let numeric = (up - down) / (2.0 * eps);
                let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-6);
                method_worst = method_worst.max(err);
            }
        }
        worst.insert(method.name(), method_worst);
    }
    let elapsed = start.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    Outcome::new(
        max < 1e-4 && elapsed < Duration::from_secs(60),
        format!("max relative error {max:.2e} over {worst:?}, {elapsed:?}"),
    )
}

fn wae_mae_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=10u32);
        let per_class = rng.gen_range(1..=20);
        let pairs = (1..=k)
            .flat_map(|y| (0..per_class).map(move |_| y))
            .map(|y| (y, rng.gen_range(1..=k)))
            .collect();
        let r = EvalRecord::new(pairs, k).unwrap();
        worst = worst.max((wae(&r).unwrap() - mae(&r).unwrap()).abs());
    }
    Outcome::new(worst < 1e-12, format!("max |WAE - MAE| {worst:.2e} over 1000 fixtures"))
}

fn split_protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut accepted, mut infeasible, mut violations) = (0, 0, Vec::new());
    for fixture in 0..1000u64 {
        let n_songs = rng.gen_range(3..=30);
        let k = rng.gen_range(2..=6u32);
        let songs: Vec<SongLabels> = (0..n_songs)
            .map(|i| {
                let n = rng.gen_range(1..=k as usize);
                let mut labels: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=k)).collect();
                labels.sort();
                labels.dedup();
                SongLabels {
                    song_id: format!("f{fixture}s{i}"),
                    labels,
                }
            })
            .collect();
        let mut owners: BTreeMap<u32, usize> = BTreeMap::new();
        for s in &songs {
            for &l in &s.labels {
                *owners.entry(l).or_default() += 1;
            }
        }
        match mc_split(&songs, DEFAULT_TEST_FRACTION, fixture, fixture % 100, DEFAULT_MAX_ATTEMPTS) {
            Ok(plan) => {
                accepted += 1;
                let expected = test_size(n_songs, DEFAULT_TEST_FRACTION);
                let side_labels = |ids: &std::collections::BTreeSet<String>| {
                    songs
                        .iter()
                        .filter(|s| ids.contains(&s.song_id))
                        .flat_map(|s| s.labels.clone())
                        .collect::<std::collections::BTreeSet<u32>>()
                };
                let all: std::collections::BTreeSet<u32> = owners.keys().copied().collect();
                let ok = plan.test_song_ids.len() == expected
                    && plan.test_song_ids.len() + plan.train_song_ids.len() == n_songs
                    && plan.test_song_ids.is_disjoint(&plan.train_song_ids)
                    && side_labels(&plan.test_song_ids) == all
                    && side_labels(&plan.train_song_ids) == all;
                if !ok {
                    violations.push(fixture);
                }
            }
            Err(PipelineError::RejectionExhausted { .. }) => {
                infeasible += 1;
                let masks: Vec<u32> = songs.iter().map(|s| s.labels.iter().map(|l| 1 << l).sum()).collect();
                let all = masks.iter().fold(0, |a, m| a | m);
                let n_test = test_size(n_songs, DEFAULT_TEST_FRACTION);
                if n_test < n_songs && exists_valid_split(&masks, n_test, all) {
                    violations.push(fixture);
                }
            }
            Err(e) => violations.push(fixture + 1_000_000 * (e.to_string().len() as u64)),
        }
    }
    Outcome::new(
        violations.is_empty() && accepted > 0 && infeasible > 0,
        format!("{accepted} accepted, {infeasible} infeasible, violations {violations:?}"),
    )
}

/// Exhaustive search for a test set of `n_test` songs that leaves every
/// label on both sides.
fn exists_valid_split(masks: &[u32], n_test: usize, all: u32) -> bool {
    fn search(masks: &[u32], start: usize, left: usize, chosen: &mut Vec<usize>, all: u32) -> bool {
        if left == 0 {
            let test = chosen.iter().fold(0, |a, &i| a | masks[i]);
            let train = (0..masks.len()).filter(|i| !chosen.contains(i)).fold(0, |a, i| a | masks[i]);
            return test == all && train == all;
        }
        for i in start..=masks.len() - left {
            chosen.push(i);
            if search(masks, i + 1, left - 1, chosen, all) {
                return true;
            }
            chosen.pop();
        }
        false
    }
    search(masks, 0, n_test, &mut Vec::new(), all)
}

type ReplicateScores = (Vec<f64>, Vec<f64>, Vec<f64>);

struct OverfitSummary {
    per_method: BTreeMap<Method, ReplicateScores>,
    elapsed: Duration,
}

fn overfit_runs() -> OverfitSummary {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let songs = synth_songs(&SynthConfig {
        songs: 15,
        k: 4,
        seed: 2026,
        ..SynthConfig::default()
    });
    write_synth_pack(dir.path(), &songs).unwrap();
    let pack = parse_pack(dir.path()).unwrap();
    let mut counts = BTreeMap::new();
    for level in pack.songs.iter().flat_map(|s| &s.levels) {
        *counts.entry(level.meter).or_insert(0) += 1;
    }
    let pooling = pool_categories(&counts, DEFAULT_POOL_THRESHOLD).unwrap();
    let encoder = EncoderConfig {
        embed_dim: 16,
        layers: 1,
        heads: 2,
        window: 24,
        ensemble: 8,
        ..EncoderConfig::default()
    };
    let levels: Vec<LevelData> = prepare_levels(dir.path(), &pack.songs, &pooling, encoder.min_len());
    assert_eq!(levels.len(), 60);
    assert_eq!(pooling.k, 4);
    let song_labels: Vec<SongLabels> = {
        let mut by_song: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
        for l in &levels {
            by_song.entry(&l.song_id).or_default().push(l.label);
        }
        by_song
            .into_iter()
            .map(|(id, labels)| SongLabels {
                song_id: id.to_string(),
                labels,
            })
            .collect()
    };

    let mut per_method = BTreeMap::new();
    for replicate in 0..10u64 {
        let plan = mc_split(&song_labels, DEFAULT_TEST_FRACTION, 7, replicate, DEFAULT_MAX_ATTEMPTS).unwrap();
        for method in Method::ALL {
            let config = TrainConfig {
                epochs: 150,
                batch_size: 32,
                lr: LrRule::Fixed(3e-3),
                seed: 1000 + replicate,
                ..TrainConfig::default()
            };
            let outcome = run_replicate("synthetic", &levels, &plan, method, pooling.k, &config, &encoder).unwrap();
            let entry: &mut ReplicateScores = per_method.entry(method).or_default();
            entry.0.push(outcome.train_metrics.wae);
            entry.1.push(outcome.test_metrics.wae);
            entry.2.push(outcome.test_metrics.agreement_strict.unwrap_or(0.0));
        }
    }
    OverfitSummary {
        per_method,
        elapsed: start.elapsed(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn overfit_experiment(summary: &OverfitSummary) -> Outcome {
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for (method, (train, test, _)) in &summary.per_method {
        let worst_train = train.iter().copied().fold(0.0, f64::max);
        let worst_test = test.iter().copied().fold(0.0, f64::max);
        lines.push(format!(
            "{method}: train max {worst_train:.3}, held-out max {worst_test:.3} mean {:.3}",
            mean(test)
        ));
        if worst_train >= 0.1 || worst_test >= 0.5 {
            failures.push(method.name());
        }
    }
    let regression = mean(&summary.per_method[&Method::Regression].1);
    let ordinal = Method::ORDINAL
        .iter()
        .map(|m| mean(&summary.per_method[m].1))
        .sum::<f64>()
        / Method::ORDINAL.len() as f64;
    let ordering = ordinal <= regression + 0.05;
    let in_budget = summary.elapsed < Duration::from_secs(30 * 60);
    Outcome::new(
        failures.is_empty() && ordering && in_budget,
        format!(
            "OR mean held-out {ordinal:.3} vs regression {regression:.3}; {}; failing {failures:?}; {:?}",
            lines.join("; "),
            summary.elapsed
        ),
    )
}

fn ranking_ceiling(summary: &OverfitSummary) -> Outcome {
    let worst: BTreeMap<&str, f64> = summary
        .per_method
        .iter()
        .map(|(m, (_, _, agree))| (m.name(), agree.iter().copied().fold(1.0, f64::min)))
        .collect();
    let min = worst.values().copied().fold(1.0, f64::min);
    Outcome::new(min >= 0.95, format!("minimum held-out strict agreement {min:.3} ({worst:?})"))
}

fn concordance_arithmetic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..50);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let model: Vec<PairLabel> = (0..n)
            .map(|_| if rng.gen_bool(0.5) { PairLabel::ALess } else { PairLabel::BLess })
            .collect();
        let reversed: Vec<PairLabel> = model.iter().map(|p| p.swapped()).collect();
        let sum = concordance_accuracy(&model, &r).unwrap() + concordance_accuracy(&reversed, &r).unwrap();
        worst = worst.max((sum - 1.0).abs());
    }
    Outcome::new(worst < 1e-12, format!("max |score + reversed - 1| {worst:.2e} over 1000 judgment sets"))
}

fn parser_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let tokens: [&[u8]; 12] = [
        b"#NOTES:", b"#BPMS:", b"dance-single:", b":", b";", b",", b"\n", b"1000", b"0=120", b"//", b"2003", b"#OFFSET:",
    ];
    let mut crashes = 0;
    let previous_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    for i in 0..100_000 {
        let len = rng.gen_range(0..256);
        let bytes: Vec<u8> = if i % 2 == 0 {
            (0..len).map(|_| rng.gen()).collect()
        } else {
            (0..len / 4)
                .flat_map(|_| {
                    if rng.gen_bool(0.8) {
                        tokens[rng.gen_range(0..tokens.len())].to_vec()
                    } else {
                        vec![rng.gen()]
                    }
                })
                .collect()
        };
        if panic::catch_unwind(|| {
            let _ = parse_sm(&bytes);
        })
        .is_err()
        {
            crashes += 1;
        }
    }
    panic::set_hook(previous_hook);

    let pack_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pack");
    let pack = parse_pack(&pack_dir).unwrap();
    let mut mismatches = Vec::new();
    for song in &pack.songs {
        let text = to_sm_string(song);
        let again = parse_sm(text.as_bytes()).unwrap();
        if again.header != song.header || again.levels != song.levels {
            mismatches.push(song.source_path.clone());
        }
    }
    Outcome::new(
        crashes == 0 && mismatches.is_empty() && pack.songs.len() == 6 && pack.failures.is_empty(),
        format!(
            "{crashes} crashes in 100000 inputs; {} fixture songs, round-trip mismatches {mismatches:?}",
            pack.songs.len()
        ),
    )
}

fn main() {
    let mut all = true;
    all &= run("binomial-construction", binomial_construction);
    all &= run("soft-target-self-consistency", soft_target_self_consistency);
    all &= run("feature-encoding-examples", feature_examples);
    all &= run("gradient-check", gradient_check);
    all &= run("wae-mae-identity", wae_mae_identity);
    all &= run("split-protocol", split_protocol);
    let summary = panic::catch_unwind(overfit_runs);
    match &summary {
        Ok(s) => {
            all &= run("overfit-experiment", || overfit_experiment(s));
            all &= run("ranking-agreement-ceiling", || ranking_ceiling(s));
        }
        Err(_) => {
            all &= run("overfit-experiment", || Outcome::new(false, "training runs panicked"));
            all &= run("ranking-agreement-ceiling", || Outcome::new(false, "training runs panicked"));
        }
    }
    all &= run("concordance-arithmetic", concordance_arithmetic);
    all &= run("parser-robustness", parser_robustness);
    if !all {
        std::process::exit(1);
    }
}
