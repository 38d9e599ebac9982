//! A scripted annotation session on the bundled fixture pack: select
//! contested pairs, record blind judgments and score every source. Pass
//! `--serve` to keep the HTTP API running on port 8080 afterwards.
//!
//! ```text
//! cargo run -p stepdiff-annotation --example annotation_session [--serve]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use stepdiff::features::level_id;
use stepdiff::pipeline::song_id;
use stepdiff::sm::parse_pack;
use stepdiff_annotation::server::JudgmentRequest;
use stepdiff_annotation::{AppState, Catalog, Choice, Source, ORIGINAL};

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/pack");
    let songs: Vec<_> = parse_pack(&root)
        .expect("fixture pack parses")
        .songs
        .into_iter()
        .map(|s| (song_id(&root, Path::new(&s.source_path)), s))
        .collect();

    let mut original = BTreeMap::new();
    let mut density = BTreeMap::new();
    for (id, song) in &songs {
        for (i, level) in song.levels.iter().enumerate() {
            let rows = level.rows().filter(|(_, _, _, r)| !r.is_empty()).count();
            original.insert(level_id(id, i), level.meter as f64);
            density.insert(level_id(id, i), rows as f64);
        }
    }
    let sources = vec![
        Source { name: ORIGINAL.into(), scores: original },
        Source { name: "step_count".into(), scores: density.clone() },
    ];
    let catalog = Catalog::build(sources, &songs, 12).expect("sources disagree somewhere");
    println!("{} contested pairs", catalog.pairs.len());

    let dir = tempfile::tempdir().unwrap();
    let state = AppState::open(catalog, &dir.path().join("judgments.jsonl")).unwrap();
    for annotator in ["alice", "bob", "carol"] {
        let mut n = 0;
        while let Some(pair) = state.next_pair(annotator).cloned() {
            // Each scripted annotator trusts step counts, except carol on every third pair.
            let denser_a = density[&pair.a] > density[&pair.b];
            let agree = annotator != "carol" || n % 3 != 0;
            let choice = if denser_a == agree { Choice::AHarder } else { Choice::BHarder };
            let request = JudgmentRequest {
                pair_id: stepdiff_annotation::server::public_pair_id(&pair.pair_id),
                choice,
                annotator: annotator.into(),
                nonce: format!("{annotator}-{n}"),
            };
            state.submit(&request).unwrap();
            n += 1;
        }
        println!("{annotator} judged {n} pairs");
    }

    let report = state.scores().unwrap();
    println!("{} judged pairs, {} votes", report.judged_pairs, report.votes);
    for s in &report.sources {
        match s.concordance {
            Some(c) => println!("  {:<12} concordance {c:.3} over {} pairs", s.source, s.pairs),
            None => println!("  {:<12} no coverage", s.source),
        }
    }

    if std::env::args().any(|a| a == "--serve") {
        let runtime = tokio::runtime::Runtime::new().unwrap();
        runtime
            .block_on(stepdiff_annotation::serve("127.0.0.1:8080".parse().unwrap(), state, None))
            .unwrap();
    }
}
