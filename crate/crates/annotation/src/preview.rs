//! What an annotator is shown of a level: the song and the step chart,
//! never its difficulty number or any model's opinion.

use serde::{Deserialize, Serialize};
use stepdiff::features::note_level;
use stepdiff::sm::{row_beat, HoldKind, Level, Song, TempoMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewRow {
    /// Row within its measure.
    pub index: usize,
    pub beat: f64,
    pub seconds: f64,
    /// One character per panel, as in the simfile (`1` step, `2` hold head,
    /// `3` tail, `4` roll head, `M` mine).
    pub notes: String,
    /// Quarter-relative denominator: 4, 8, 12, 16, ...
    pub note_level: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewMeasure {
    pub subdivisions: usize,
    /// Non-empty rows only.
    pub rows: Vec<PreviewRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewHold {
    pub column: usize,
    pub roll: bool,
    pub start_beat: f64,
    pub end_beat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPreview {
    pub chart_type: String,
    pub measures: Vec<PreviewMeasure>,
    pub holds: Vec<PreviewHold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub title: String,
    pub artist: String,
    pub meter_hidden: bool,
    pub chart_preview: ChartPreview,
}

pub fn chart_preview(level: &Level, song: &Song) -> ChartPreview {
    let tempo = TempoMap::new(&song.header);
    let mut flat_beats = Vec::with_capacity(level.row_count());
    let measures = level
        .measures
        .iter()
        .enumerate()
        .map(|(m, measure)| {
            let s = measure.subdivisions();
            let rows = measure
                .rows
                .iter()
                .enumerate()
                .filter_map(|(r, row)| {
                    let beat = row_beat(m, r, s);
                    flat_beats.push(beat);
                    (!row.is_empty()).then(|| PreviewRow {
                        index: r,
                        beat,
                        seconds: tempo.seconds_at(beat),
                        notes: row.columns().iter().map(|n| n.to_char()).collect(),
                        note_level: note_level(r, s),
                    })
                })
                .collect();
            PreviewMeasure { subdivisions: s, rows }
        })
        .collect();
    let beat_of = |row: usize| flat_beats.get(row).or(flat_beats.last()).copied().unwrap_or(0.0);
    let holds = level
        .holds
        .iter()
        .map(|h| PreviewHold {
            column: h.column,
            roll: h.kind == HoldKind::Roll,
            start_beat: beat_of(h.start_row),
            end_beat: beat_of(h.end_row),
        })
        .collect();
    ChartPreview {
        chart_type: level.chart_type.clone(),
        measures,
        holds,
    }
}

pub fn level_info(level: &Level, song: &Song) -> LevelInfo {
    LevelInfo {
        title: song.header.title.clone(),
        artist: song.header.artist.clone(),
        meter_hidden: true,
        chart_preview: chart_preview(level, song),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stepdiff::sm::parse_sm;

    const SONG: &str = "#TITLE:T;#ARTIST:A;#OFFSET:0;#BPMS:0=120;\n\
        #NOTES:dance-single::Hard:9:0:\n1000\n0000\n2000\n0000\n,\n3100\n0000\n0000\nM000\n;";

    #[test]
    fn rows_beats_and_holds() {
        let song = parse_sm(SONG.as_bytes()).unwrap();
        let info = level_info(&song.levels[0], &song);
        let p = &info.chart_preview;
        assert_eq!(p.measures.len(), 2);
        assert_eq!(p.measures[0].rows.len(), 2);
        assert_eq!(p.measures[0].rows[1].notes, "2000");
        assert_eq!(p.measures[0].rows[1].beat, 2.0);
        assert_eq!(p.measures[0].rows[1].seconds, 1.0);
        assert_eq!(p.measures[1].rows[1].notes, "M000");
        assert_eq!(p.holds, vec![PreviewHold { column: 0, roll: false, start_beat: 2.0, end_beat: 4.0 }]);
        let json = serde_json::to_string(&info).unwrap();
        assert!(!json.contains("\"meter\""));
        assert!(!json.contains("Hard"));
    }
}
