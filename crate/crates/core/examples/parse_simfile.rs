//! Parses a simfile and prints its tempo map and charts.
//!
//! ```text
//! cargo run -p stepdiff --example parse_simfile [path/to/song.sm]
//! ```

use std::path::PathBuf;

use stepdiff::sm::{parse_sm_file, row_times, HoldKind};

fn main() {
    let path = std::env::args_os().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pack/GlassHarbor/GlassHarbor.sm")
    });
    let song = match parse_sm_file(&path) {
        Ok(song) => song,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            std::process::exit(1);
        }
    };
    let h = &song.header;
    println!("{} by {} (offset {:.3} s)", h.title, h.artist, h.offset_seconds);
    for change in &h.bpms {
        println!("  beat {:>6.2}: {} BPM", change.beat, change.bpm);
    }
    for warning in &song.warnings {
        println!("  warning: {warning}");
    }
    for (i, level) in song.levels.iter().enumerate() {
        let steps = level.rows().filter(|(_, _, _, row)| !row.is_empty()).count();
        let times = row_times(level, h);
        let length = times.last().map_or(0.0, |t| t.seconds);
        let rolls = level.holds.iter().filter(|s| s.kind == HoldKind::Roll).count();
        println!(
            "#{i} {} {:<10} meter {:>2}: {} measures, {steps} note rows, {} holds ({rolls} rolls), {length:.1} s",
            level.chart_type,
            level.difficulty_class,
            level.meter,
            level.measures.len(),
            level.holds.len(),
        );
    }
}
