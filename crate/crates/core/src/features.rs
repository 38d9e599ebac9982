//! Per-step feature sequences.
//!
//! Every event row of a chart becomes one 19-wide vector:
//!
//! | index   | feature                                              |
//! |---------|------------------------------------------------------|
//! | 0       | tempo, BPM / 240                                     |
//! | 1..=7   | note level: 1/4, 1/8, 1/12, 1/16, 1/24, 1/32, other  |
//! | 8       | progress through the chart in time                   |
//! | 9       | progress through the chart in events                 |
//! | 10      | time since the previous event, 4 x seconds, capped 8 |
//! | 11..=14 | columns stepped on (taps, hold and roll heads)       |
//! | 15..=18 | columns held down (hold and roll bodies)             |
//!
//! An event row is any row with a new step or with a column inside a hold
//! body. Mines and unknown symbols contribute nothing.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sm::{row_times, Level, SongHeader, TempoMap, PANELS};

pub const FEATURE_DIM: usize = 19;

pub const TEMPO: usize = 0;
pub const NOTE_LEVEL: usize = 1;
pub const PROGRESS_TIME: usize = 8;
pub const PROGRESS_STEPS: usize = 9;
pub const TIME_SINCE_LAST: usize = 10;
pub const TAP_DIRECTIONS: usize = 11;
pub const HOLD_DIRECTIONS: usize = 15;

/// Note-level grids, in quarter-note-relative denominators.
pub const NOTE_GRIDS: [u64; 6] = [4, 8, 12, 16, 24, 32];

pub const MAX_TIME_DELTA: f64 = 8.0;

pub type FeatureVector = [f64; FEATURE_DIM];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("chart has no step or hold rows")]
    EmptyChart,
    #[error("feature dump line {line}: {message}")]
    Dump { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub song_id: String,
    pub level_index: usize,
    pub meter: u32,
    pub rows: Vec<FeatureVector>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn level_id(&self) -> String {
        level_id(&self.song_id, self.level_index)
    }
}

/// Canonical identifier of a level: `song_id#index`.
pub fn level_id(song_id: &str, level_index: usize) -> String {
    format!("{song_id}#{level_index}")
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Note level of a row as a quarter-note-relative denominator: 4 for
/// quarter notes, 8 for eighths, 12 for triplets, 20 for quintuplets and
/// so on.
pub fn note_level(row_index: usize, subdivisions: usize) -> u64 {
    let (row, subdivisions) = (row_index as u64, subdivisions.max(1) as u64);
    let denominator = subdivisions / gcd(row, subdivisions);
    // Positions on the whole or half measure still read as quarter notes.
    let g = gcd(denominator, 4);
    denominator / g * 4
}

/// Seven note-level flags for a quarter-relative denominator. Grid `d` is
/// set when `d` divides the denominator (so a 1/24 also sits on the 1/4,
/// 1/8 and 1/12 grids); the last flag is set when the position lies on
/// none of the six grids.
pub fn note_level_flags(denominator: u64) -> [f64; 7] {
    let mut flags = [0.0; 7];
    for (flag, grid) in flags.iter_mut().zip(NOTE_GRIDS) {
        if denominator.is_multiple_of(grid) {
            *flag = 1.0;
        }
    }
    if !NOTE_GRIDS.iter().any(|grid| grid % denominator == 0) {
        flags[6] = 1.0;
    }
    flags
}

pub fn encode_note_level(row_index: usize, subdivisions: usize) -> [f64; 7] {
    note_level_flags(note_level(row_index, subdivisions))
}

/// `min(4 * delta, 8)`; the first event of a chart reads as the cap.
pub fn encode_time_delta(current_seconds: f64, previous_seconds: Option<f64>) -> f64 {
    match previous_seconds {
        None => MAX_TIME_DELTA,
        Some(prev) => (4.0 * (current_seconds - prev)).clamp(0.0, MAX_TIME_DELTA),
    }
}

/// Extracts the feature sequence of one level.
pub fn extract_sequence(
    level: &Level,
    header: &SongHeader,
    song_id: &str,
    level_index: usize,
) -> Result<FeatureSequence, FeatureError> {
    let tempo = TempoMap::new(header);
    let times = row_times(level, header);
    let total_rows = times.len();

    // Columns held down at each row: start exclusive, tail inclusive.
    let mut held = vec![[false; PANELS]; total_rows];
    for hold in &level.holds {
        for row in held.iter_mut().take(hold.end_row + 1).skip(hold.start_row + 1) {
            row[hold.column] = true;
        }
    }

    let start_seconds = times.first().map_or(0.0, |t| t.seconds);
    let end_beat = 4.0 * level.measures.len() as f64;
    let duration = tempo.seconds_at(end_beat) - start_seconds;

    let mut rows: Vec<FeatureVector> = Vec::new();
    let mut previous = None;
    for ((m_row, time), held) in level.rows().zip(&times).zip(&held) {
        let (_, r, s, note_row) = m_row;
        let taps: Vec<bool> = note_row.0.iter().map(|sym| sym.is_step()).collect();
        if !taps.iter().any(|&t| t) && !held.iter().any(|&h| h) {
            continue;
        }
        let mut v = [0.0; FEATURE_DIM];
        v[TEMPO] = tempo.bpm_at(time.beat) / 240.0;
        v[NOTE_LEVEL..NOTE_LEVEL + 7].copy_from_slice(&encode_note_level(r, s));
        v[PROGRESS_TIME] = if duration > 0.0 {
            ((time.seconds - start_seconds) / duration).clamp(0.0, 1.0)
        } else {
            0.0
        };
        v[TIME_SINCE_LAST] = encode_time_delta(time.seconds, previous);
        for c in 0..PANELS {
            if taps[c] {
                v[TAP_DIRECTIONS + c] = 1.0;
            }
            if held[c] {
                v[HOLD_DIRECTIONS + c] = 1.0;
            }
        }
        previous = Some(time.seconds);
        rows.push(v);
    }
    if rows.is_empty() {
        return Err(FeatureError::EmptyChart);
    }
    let last = rows.len() - 1;
    for (i, v) in rows.iter_mut().enumerate() {
        v[PROGRESS_STEPS] = if last == 0 { 0.0 } else { i as f64 / last as f64 };
    }
    Ok(FeatureSequence {
        song_id: song_id.to_string(),
        level_index,
        meter: level.meter,
        rows,
    })
}

/// Rounds to 9 significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Writes one JSON line per sequence with reals rounded to 9 significant
/// digits.
pub fn write_feature_dump<W: Write>(mut out: W, sequences: &[FeatureSequence]) -> std::io::Result<()> {
    for seq in sequences {
        let mut rounded = seq.clone();
        for row in &mut rounded.rows {
            for x in row.iter_mut() {
                *x = round_sig9(*x);
            }
        }
        serde_json::to_writer(&mut out, &rounded)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_feature_dump<R: BufRead>(input: R) -> Result<Vec<FeatureSequence>, FeatureError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| FeatureError::Dump {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: FeatureSequence = serde_json::from_str(&line).map_err(|e| FeatureError::Dump {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(seq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sm::parse_sm;

    fn chart(rows: &str, bpm: f64) -> (Level, SongHeader) {
        let text = format!(
            "#TITLE:t;\n#BPMS:0={bpm};\n#NOTES:\ndance-single:\n:\nHard:\n3:\n0:\n{rows}\n;\n"
        );
        let song = parse_sm(text.as_bytes()).unwrap();
        (song.levels[0].clone(), song.header)
    }

    #[test]
    fn twenty_fourth_flags() {
        assert_eq!(note_level_flags(24), [1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        // 1/24 of a measure is a sixth of a beat.
        assert_eq!(note_level(1, 24), 24);
    }

    #[test]
    fn quarter_and_other_flags() {
        assert_eq!(note_level_flags(4), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(note_level_flags(5), [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        // Quintuplet sixteenths sit on the quarter grid only by the divisor
        // rule, and on none of the grids as a position.
        assert_eq!(encode_note_level(1, 20), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn note_levels_by_position() {
        assert_eq!(note_level(0, 4), 4);
        assert_eq!(note_level(2, 4), 4);
        assert_eq!(note_level(1, 8), 8);
        assert_eq!(note_level(1, 12), 12);
        assert_eq!(note_level(3, 12), 4);
        assert_eq!(note_level(4, 12), 12);
        assert_eq!(note_level(1, 3), 12);
        assert_eq!(note_level(3, 16), 16);
        assert_eq!(note_level(1, 192), 192);
        assert_eq!(note_level(6, 192), 32);
    }

    #[test]
    fn time_delta() {
        assert_eq!(encode_time_delta(1.5, Some(1.0)), 2.0);
        assert_eq!(encode_time_delta(4.0, Some(1.0)), 8.0);
        assert_eq!(encode_time_delta(0.0, None), 8.0);
    }

    #[test]
    fn single_tap() {
        let (level, header) = chart("1000\n0000\n0000\n0000", 120.0);
        let seq = extract_sequence(&level, &header, "s", 0).unwrap();
        assert_eq!(seq.len(), 1);
        let v = seq.rows[0];
        assert_eq!(v[TEMPO], 0.5);
        assert_eq!(&v[TAP_DIRECTIONS..TAP_DIRECTIONS + 4], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&v[HOLD_DIRECTIONS..], &[0.0; 4]);
        assert_eq!(v[PROGRESS_TIME], 0.0);
        assert_eq!(v[PROGRESS_STEPS], 0.0);
        assert_eq!(v[TIME_SINCE_LAST], 8.0);
    }

    #[test]
    fn jump_is_a_bag_of_steps() {
        let (level, header) = chart("1001\n0000\n0000\n0000", 120.0);
        let seq = extract_sequence(&level, &header, "s", 0).unwrap();
        assert_eq!(&seq.rows[0][TAP_DIRECTIONS..TAP_DIRECTIONS + 4], &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn hold_body_is_encoded() {
        let (level, header) = chart("0020\n1000\n0000\n0030", 120.0);
        let seq = extract_sequence(&level, &header, "s", 0).unwrap();
        // head, tap under the hold, empty row under the hold, tail
        assert_eq!(seq.len(), 4);
        assert_eq!(&seq.rows[0][TAP_DIRECTIONS..TAP_DIRECTIONS + 4], &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(&seq.rows[0][HOLD_DIRECTIONS..], &[0.0; 4]);
        assert_eq!(&seq.rows[1][TAP_DIRECTIONS..TAP_DIRECTIONS + 4], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&seq.rows[1][HOLD_DIRECTIONS..], &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(&seq.rows[3][HOLD_DIRECTIONS..], &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(seq.rows[1][TIME_SINCE_LAST], 2.0);
        assert_eq!(seq.rows[3][PROGRESS_STEPS], 1.0);
    }

    #[test]
    fn mines_only_is_empty() {
        let (level, header) = chart("M000\n0000\n0000\n0000", 120.0);
        assert_eq!(
            extract_sequence(&level, &header, "s", 0).unwrap_err(),
            FeatureError::EmptyChart
        );
    }

    #[test]
    fn dump_round_trip_rounds_to_nine_digits() {
        let (level, header) = chart("1000\n0100\n0010\n0001\n,\n1000\n0000\n0100\n0000\n0000\n0010", 133.0);
        let seq = extract_sequence(&level, &header, "pack/song", 2).unwrap();
        let mut buf = Vec::new();
        write_feature_dump(&mut buf, std::slice::from_ref(&seq)).unwrap();
        let back = read_feature_dump(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        for (a, b) in back[0].rows.iter().flatten().zip(seq.rows.iter().flatten()) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-30));
        }
        assert_eq!(back[0].level_id(), "pack/song#2");
    }
}
