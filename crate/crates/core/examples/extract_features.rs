//! Prints the per-step feature rows of one chart, plus the static
//! statistics the PATTERN baseline uses.
//!
//! ```text
//! cargo run -p stepdiff --example extract_features [path/to/song.sm] [level index]
//! ```

use std::path::PathBuf;

use stepdiff::features::{extract_sequence, NOTE_GRIDS, PROGRESS_STEPS, PROGRESS_TIME, TEMPO, TIME_SINCE_LAST};
use stepdiff::model::pattern_features;
use stepdiff::sm::parse_sm_file;

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pack/TripletEngine/TripletEngine.sm")
    });
    let index: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2);
    let song = parse_sm_file(&path).expect("simfile parses");
    let level = &song.levels[index];
    let seq = extract_sequence(level, &song.header, &song.header.title, index).expect("chart has steps");

    println!("{} #{index}: {} step rows", song.header.title, seq.len());
    let grids: Vec<String> = NOTE_GRIDS.iter().map(|g| format!("1/{g}")).collect();
    println!(" row  bpm/240  grids [{} other]  t%    n%    dt     taps  holds", grids.join(" "));
    for (i, v) in seq.rows.iter().enumerate().take(24) {
        let flags: String = v[1..8].iter().map(|&f| if f > 0.0 { '#' } else { '.' }).collect();
        let bits = |r: std::ops::Range<usize>| -> String { v[r].iter().map(|&x| if x > 0.0 { '1' } else { '0' }).collect() };
        println!(
            "{i:>4}  {:.4}   {flags:<28}  {:.2}  {:.2}  {:.3}  {}  {}",
            v[TEMPO],
            v[PROGRESS_TIME],
            v[PROGRESS_STEPS],
            v[TIME_SINCE_LAST],
            bits(11..15),
            bits(15..19),
        );
    }
    if seq.len() > 24 {
        println!("  ... {} more rows", seq.len() - 24);
    }
    let stats = pattern_features(level, &song.header);
    println!("static statistics: {stats:.3?}");
}
