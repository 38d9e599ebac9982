//! SM simfile parsing.
//!
//! The grammar handled here is the subset StepMania itself relies on for
//! 4-panel play: a header made of `#TAG:VALUE;` entries followed by one or
//! more `#NOTES:` charts. Each chart carries five `:`-terminated metadata
//! fields (chart type, description, difficulty class, meter, radar values)
//! and then the note data: measures separated by `,`, terminated by `;`,
//! one row of four symbols per line. `//` starts a comment.
//!
//! Only `dance-single` charts are kept. Hold and roll bodies are paired per
//! column into [`HoldSpan`]s so downstream code does not have to re-scan the
//! rows.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

/// Chart type tag of 4-panel single play.
pub const SUPPORTED_CHART_TYPE: &str = "dance-single";

pub const PANELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SmError {
    #[error("no supported #NOTES chart found (scanned to byte {offset})")]
    MissingNotesSection { offset: usize },
    #[error("malformed #BPMS at byte {offset}: {reason}")]
    MalformedBpms { offset: usize, reason: String },
    #[error("note row at byte {offset} is {width} symbols wide, expected 4")]
    RowWidthError { offset: usize, width: usize },
    #[error("#NOTES chart starting at byte {offset} has no ';' terminator")]
    UnterminatedChart { offset: usize },
}

#[derive(Debug, Error)]
pub enum PackError {
    #[error("cannot read pack directory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no parsable songs under {dir} ({} failures)", failures.len())]
    NoSongsFound {
        dir: PathBuf,
        failures: Vec<PackFailure>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoteSymbol {
    Empty,
    Tap,
    HoldStart,
    TailEnd,
    RollStart,
    Mine,
    /// Lifts, fakes, keysounds and anything else; kept only so files
    /// round-trip.
    Other(char),
}

impl NoteSymbol {
    pub fn from_char(c: char) -> Self {
        match c {
            '0' => NoteSymbol::Empty,
            '1' => NoteSymbol::Tap,
            '2' => NoteSymbol::HoldStart,
            '3' => NoteSymbol::TailEnd,
            '4' => NoteSymbol::RollStart,
            'M' => NoteSymbol::Mine,
            other => NoteSymbol::Other(other),
        }
    }

    pub fn to_char(self) -> char {
        match self {
            NoteSymbol::Empty => '0',
            NoteSymbol::Tap => '1',
            NoteSymbol::HoldStart => '2',
            NoteSymbol::TailEnd => '3',
            NoteSymbol::RollStart => '4',
            NoteSymbol::Mine => 'M',
            NoteSymbol::Other(c) => c,
        }
    }

    /// True for symbols that require a new step on the panel.
    pub fn is_step(self) -> bool {
        matches!(
            self,
            NoteSymbol::Tap | NoteSymbol::HoldStart | NoteSymbol::RollStart
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteRow(pub [NoteSymbol; PANELS]);

impl NoteRow {
    pub const EMPTY: NoteRow = NoteRow([NoteSymbol::Empty; PANELS]);

    pub fn columns(&self) -> &[NoteSymbol; PANELS] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|s| *s == NoteSymbol::Empty)
    }
}

impl fmt::Display for NoteRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.0 {
            f.write_char(s.to_char())?;
        }
        Ok(())
    }
}

impl std::str::FromStr for NoteRow {
    type Err = SmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.trim().chars().collect();
        if chars.len() != PANELS {
            return Err(SmError::RowWidthError {
                offset: 0,
                width: chars.len(),
            });
        }
        let mut row = NoteRow::EMPTY;
        for (slot, c) in row.0.iter_mut().zip(chars) {
            *slot = NoteSymbol::from_char(c);
        }
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub rows: Vec<NoteRow>,
}

impl Measure {
    pub fn subdivisions(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HoldKind {
    Hold,
    Roll,
}

/// A hold or roll body on one column, in flattened row indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldSpan {
    pub column: usize,
    pub kind: HoldKind,
    pub start_row: usize,
    /// Row of the tail, or the final row of the chart when the file never
    /// closed the hold.
    pub end_row: usize,
    pub repaired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub chart_type: String,
    pub author_note: String,
    pub difficulty_class: String,
    pub meter: u32,
    pub measures: Vec<Measure>,
    pub holds: Vec<HoldSpan>,
    pub warnings: Vec<String>,
}

impl Level {
    /// Iterates `(measure_index, row_in_measure, subdivisions, row)` in
    /// chart order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, usize, &NoteRow)> {
        self.measures.iter().enumerate().flat_map(|(m, measure)| {
            let s = measure.subdivisions();
            measure
                .rows
                .iter()
                .enumerate()
                .map(move |(r, row)| (m, r, s, row))
        })
    }

    pub fn row_count(&self) -> usize {
        self.measures.iter().map(Measure::subdivisions).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpmChange {
    pub beat: f64,
    pub bpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongHeader {
    pub title: String,
    pub artist: String,
    pub offset_seconds: f64,
    pub bpms: Vec<BpmChange>,
    /// `(beat, seconds)` pairs. Kept for completeness; never used for timing.
    pub stops: Vec<(f64, f64)>,
    /// `(beat, length in beats)` pairs. Kept for completeness; never used
    /// for timing.
    pub warps: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Song {
    pub header: SongHeader,
    pub levels: Vec<Level>,
    pub source_path: String,
    pub warnings: Vec<String>,
}

/// Parses simfile bytes. Stray non-UTF-8 bytes are replaced, never fatal.
pub fn parse_sm(bytes: &[u8]) -> Result<Song, SmError> {
    let buf = blank_comments(bytes);
    let mut tags = TagScanner::new(&buf);

    let mut title = String::new();
    let mut artist = String::new();
    let mut offset_seconds = 0.0;
    let mut bpms_raw: Option<(usize, String)> = None;
    let mut stops = Vec::new();
    let mut warps = Vec::new();
    let mut warnings = Vec::new();
    let mut levels = Vec::new();

    while let Some(tag) = tags.next_tag()? {
        let value = || String::from_utf8_lossy(&buf[tag.value.clone()]).into_owned();
        match tag.name.as_str() {
            "TITLE" => title = value().trim().to_string(),
            "ARTIST" => artist = value().trim().to_string(),
            "OFFSET" => match value().trim().parse::<f64>() {
                Ok(v) if v.is_finite() => offset_seconds = v,
                _ => warnings.push(format!("unparsable #OFFSET at byte {}", tag.start)),
            },
            "BPMS" => bpms_raw = Some((tag.start, value())),
            "STOPS" | "FREEZES" => stops = parse_pairs(&value(), &mut warnings, "#STOPS"),
            "WARPS" => warps = parse_pairs(&value(), &mut warnings, "#WARPS"),
            "NOTES" => {
                if let Some(level) = parse_chart(&buf, tag.start, tag.value.clone(), &mut warnings)? {
                    levels.push(level);
                }
            }
            _ => {}
        }
    }

    if levels.is_empty() {
        return Err(SmError::MissingNotesSection { offset: buf.len() });
    }
    let (bpm_offset, bpm_text) = bpms_raw.ok_or(SmError::MalformedBpms {
        offset: 0,
        reason: "missing #BPMS tag".into(),
    })?;
    let bpms = parse_bpms(&bpm_text, bpm_offset, &mut warnings)?;

    Ok(Song {
        header: SongHeader {
            title,
            artist,
            offset_seconds,
            bpms,
            stops,
            warps,
        },
        levels,
        source_path: String::new(),
        warnings,
    })
}

/// Reads and parses one simfile, recording its path on the song.
pub fn parse_sm_file(path: &Path) -> Result<Song, PackFailureKind> {
    let bytes = fs::read(path).map_err(|e| PackFailureKind::Io(e.to_string()))?;
    let mut song = parse_sm(&bytes).map_err(PackFailureKind::Parse)?;
    song.source_path = path.to_string_lossy().into_owned();
    Ok(song)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PackFailureKind {
    Io(String),
    Parse(SmError),
}

impl fmt::Display for PackFailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PackFailureKind::Io(e) => write!(f, "io error: {e}"),
            PackFailureKind::Parse(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackFailure {
    pub path: PathBuf,
    pub error: PackFailureKind,
}

#[derive(Debug, Clone)]
pub struct ParsedPack {
    pub songs: Vec<Song>,
    pub failures: Vec<PackFailure>,
}

/// Recursively parses every `*.sm` file below `dir`, in lexicographic path
/// order. Per-file failures are collected; only a pack with zero parsable
/// songs is an error.
pub fn parse_pack(dir: &Path) -> Result<ParsedPack, PackError> {
    let mut paths = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| PackError::Io {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf()),
            source: e
                .into_io_error()
                .unwrap_or_else(|| std::io::Error::other("directory walk failed")),
        })?;
        let is_sm = entry
            .path()
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("sm"));
        if entry.file_type().is_file() && is_sm {
            paths.push(entry.into_path());
        }
    }
    paths.sort();

    let mut songs = Vec::new();
    let mut failures = Vec::new();
    for path in paths {
        match parse_sm_file(&path) {
            Ok(song) => songs.push(song),
            Err(error) => {
                log::warn!("skipping {}: {error}", path.display());
                failures.push(PackFailure { path, error });
            }
        }
    }
    if songs.is_empty() {
        return Err(PackError::NoSongsFound {
            dir: dir.to_path_buf(),
            failures,
        });
    }
    Ok(ParsedPack { songs, failures })
}

/// Replaces `//` comments with spaces so byte offsets stay valid.
fn blank_comments(bytes: &[u8]) -> Vec<u8> {
    let mut out = bytes.to_vec();
    let mut i = 0;
    while i + 1 < out.len() {
        if out[i] == b'/' && out[i + 1] == b'/' {
            while i < out.len() && out[i] != b'\n' {
                out[i] = b' ';
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

struct Tag {
    name: String,
    start: usize,
    value: std::ops::Range<usize>,
}

struct TagScanner<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> TagScanner<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn next_tag(&mut self) -> Result<Option<Tag>, SmError> {
        let buf = self.buf;
        loop {
            let Some(hash) = find(buf, self.pos, b'#') else {
                self.pos = buf.len();
                return Ok(None);
            };
            let Some(colon) = find(buf, hash + 1, b':') else {
                self.pos = buf.len();
                return Ok(None);
            };
            let name_bytes = &buf[hash + 1..colon];
            if name_bytes.iter().any(|b| matches!(b, b';' | b'#' | b'\n')) {
                // Stray '#', not a tag.
                self.pos = hash + 1;
                continue;
            }
            let name = String::from_utf8_lossy(name_bytes).trim().to_ascii_uppercase();
            let value_start = colon + 1;
            let semicolon = find(buf, value_start, b';');

            if name == "NOTES" {
                let end = match semicolon {
                    Some(end) if next_line_tag(buf, value_start, end).is_none() => end,
                    _ => return Err(SmError::UnterminatedChart { offset: hash }),
                };
                self.pos = end + 1;
                return Ok(Some(Tag {
                    name,
                    start: hash,
                    value: value_start..end,
                }));
            }

            // Header values sometimes lose their ';'. A '#' opening a new
            // line ends the value in that case.
            let limit = semicolon.unwrap_or(buf.len());
            let end = next_line_tag(buf, value_start, limit).unwrap_or(limit);
            self.pos = if Some(end) == semicolon { end + 1 } else { end };
            return Ok(Some(Tag {
                name,
                start: hash,
                value: value_start..end,
            }));
        }
    }
}

fn find(buf: &[u8], from: usize, needle: u8) -> Option<usize> {
    buf.get(from..)?
        .iter()
        .position(|&b| b == needle)
        .map(|p| p + from)
}

fn next_line_tag(buf: &[u8], from: usize, limit: usize) -> Option<usize> {
    let mut line_start = false;
    for (i, &b) in buf[from..limit].iter().enumerate() {
        match b {
            b'\n' => line_start = true,
            b'#' if line_start => return Some(from + i),
            b' ' | b'\t' | b'\r' => {}
            _ => line_start = false,
        }
    }
    None
}

fn parse_pairs(text: &str, warnings: &mut Vec<String>, what: &str) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let parsed = part
            .split_once('=')
            .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)));
        match parsed {
            Some(pair) => out.push(pair),
            None => warnings.push(format!("ignoring malformed {what} entry '{part}'")),
        }
    }
    out
}

fn parse_bpms(text: &str, offset: usize, warnings: &mut Vec<String>) -> Result<Vec<BpmChange>, SmError> {
    let malformed = |reason: String| SmError::MalformedBpms { offset, reason };
    let mut bpms = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (beat, bpm) = part
            .split_once('=')
            .ok_or_else(|| malformed(format!("entry '{part}' has no '='")))?;
        let beat: f64 = beat
            .trim()
            .parse()
            .map_err(|_| malformed(format!("unparsable beat in '{part}'")))?;
        let bpm: f64 = bpm
            .trim()
            .parse()
            .map_err(|_| malformed(format!("unparsable bpm in '{part}'")))?;
        if !beat.is_finite() || beat < 0.0 {
            return Err(malformed(format!("invalid beat {beat}")));
        }
        if !bpm.is_finite() || bpm <= 0.0 {
            return Err(malformed(format!("non-positive bpm {bpm} at beat {beat}")));
        }
        bpms.push(BpmChange { beat, bpm });
    }
    if bpms.is_empty() {
        return Err(malformed("no tempo entries".into()));
    }
    // Stable sort, then the last entry for a given beat wins.
    bpms.sort_by(|a, b| a.beat.total_cmp(&b.beat));
    let mut dedup: Vec<BpmChange> = Vec::with_capacity(bpms.len());
    for change in bpms {
        match dedup.last_mut() {
            Some(last) if last.beat == change.beat => *last = change,
            _ => dedup.push(change),
        }
    }
    if dedup[0].beat > 0.0 {
        warnings.push(format!(
            "first tempo starts at beat {}; extended back to beat 0",
            dedup[0].beat
        ));
        dedup[0].beat = 0.0;
    }
    Ok(dedup)
}

/// Parses one `#NOTES` value. Returns `Ok(None)` for charts that are skipped
/// (other play modes, broken metadata).
fn parse_chart(
    buf: &[u8],
    tag_start: usize,
    value: std::ops::Range<usize>,
    song_warnings: &mut Vec<String>,
) -> Result<Option<Level>, SmError> {
    let mut fields = Vec::with_capacity(5);
    let mut cursor = value.start;
    for _ in 0..5 {
        match find(&buf[..value.end], cursor, b':') {
            Some(colon) => {
                fields.push(String::from_utf8_lossy(&buf[cursor..colon]).trim().to_string());
                cursor = colon + 1;
            }
            None => {
                song_warnings.push(format!(
                    "chart at byte {tag_start} has fewer than five metadata fields; skipped"
                ));
                return Ok(None);
            }
        }
    }
    let chart_type = fields[0].clone();
    if !chart_type.eq_ignore_ascii_case(SUPPORTED_CHART_TYPE) {
        return Ok(None);
    }
    let meter = match fields[3].parse::<i64>() {
        Ok(m) if m >= 1 && m <= u32::MAX as i64 => m as u32,
        _ => {
            song_warnings.push(format!(
                "chart at byte {tag_start} has invalid meter '{}'; skipped",
                fields[3]
            ));
            return Ok(None);
        }
    };

    let mut warnings = Vec::new();
    let mut measures = Vec::new();
    let data = cursor..value.end;
    let mut chunks: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = data.start;
    for i in data.clone() {
        if buf[i] == b',' {
            chunks.push(start..i);
            start = i + 1;
        }
    }
    chunks.push(start..data.end);

    let chunk_count = chunks.len();
    for (index, chunk) in chunks.into_iter().enumerate() {
        let mut rows = Vec::new();
        let mut line_start = chunk.start;
        for i in chunk.start..=chunk.end {
            if i == chunk.end || buf[i] == b'\n' {
                let line = &buf[line_start..i];
                let lead = line.iter().take_while(|b| b.is_ascii_whitespace()).count();
                let text = String::from_utf8_lossy(line);
                let trimmed = text.trim();
                if !trimmed.is_empty() {
                    let width = trimmed.chars().count();
                    if width != PANELS {
                        return Err(SmError::RowWidthError {
                            offset: line_start + lead,
                            width,
                        });
                    }
                    let mut row = NoteRow::EMPTY;
                    for (slot, c) in row.0.iter_mut().zip(trimmed.chars()) {
                        *slot = NoteSymbol::from_char(c);
                    }
                    rows.push(row);
                }
                line_start = i + 1;
            }
        }
        if rows.is_empty() {
            if index + 1 == chunk_count {
                // Trailing ',' before ';'.
                continue;
            }
            warnings.push(format!("measure {index} is empty; treated as one blank row"));
            rows.push(NoteRow::EMPTY);
        } else if rows.len() < 4 {
            warnings.push(format!("measure {index} has only {} rows", rows.len()));
        } else if rows.len() > 192 {
            warnings.push(format!("measure {index} has {} rows (more than 192)", rows.len()));
        }
        measures.push(Measure { rows });
    }
    if measures.is_empty() {
        song_warnings.push(format!("chart at byte {tag_start} has no note rows; skipped"));
        return Ok(None);
    }

    let holds = pair_holds(&measures, &mut warnings);
    Ok(Some(Level {
        chart_type,
        author_note: fields[1].clone(),
        difficulty_class: fields[2].clone(),
        meter,
        measures,
        holds,
        warnings,
    }))
}

/// Matches hold/roll heads with tails per column. Unmatched heads are
/// closed at the final row; stray tails are ignored.
fn pair_holds(measures: &[Measure], warnings: &mut Vec<String>) -> Vec<HoldSpan> {
    let mut open: [Option<(usize, HoldKind)>; PANELS] = [None; PANELS];
    let mut holds = Vec::new();
    let mut row_index: usize = 0;
    for measure in measures {
        for row in &measure.rows {
            for (column, symbol) in row.0.iter().enumerate() {
                let head = match symbol {
                    NoteSymbol::HoldStart => Some(HoldKind::Hold),
                    NoteSymbol::RollStart => Some(HoldKind::Roll),
                    _ => None,
                };
                if let Some(kind) = head {
                    if let Some((start_row, prev_kind)) = open[column].take() {
                        warnings.push(format!(
                            "hold in column {column} from row {start_row} interrupted by a new head at row {row_index}"
                        ));
                        holds.push(HoldSpan {
                            column,
                            kind: prev_kind,
                            start_row,
                            end_row: row_index.saturating_sub(1).max(start_row),
                            repaired: true,
                        });
                    }
                    open[column] = Some((row_index, kind));
                } else if *symbol == NoteSymbol::TailEnd {
                    match open[column].take() {
                        Some((start_row, kind)) => holds.push(HoldSpan {
                            column,
                            kind,
                            start_row,
                            end_row: row_index,
                            repaired: false,
                        }),
                        None => warnings.push(format!(
                            "tail without hold in column {column} at row {row_index}"
                        )),
                    }
                }
            }
            row_index += 1;
        }
    }
    let last_row = row_index.saturating_sub(1);
    for (column, slot) in open.iter().enumerate() {
        if let Some((start_row, kind)) = *slot {
            warnings.push(format!(
                "hold in column {column} from row {start_row} never closed; closed at row {last_row}"
            ));
            holds.push(HoldSpan {
                column,
                kind,
                start_row,
                end_row: last_row,
                repaired: true,
            });
        }
    }
    holds.sort_by_key(|h| (h.start_row, h.column));
    holds
}

/// Piecewise-constant tempo map over beats.
#[derive(Debug, Clone)]
pub struct TempoMap {
    changes: Vec<BpmChange>,
    /// Seconds elapsed at each change's beat, before the offset is applied.
    elapsed: Vec<f64>,
    offset_seconds: f64,
}

impl TempoMap {
    pub fn new(header: &SongHeader) -> Self {
        let changes = header.bpms.clone();
        let mut elapsed = Vec::with_capacity(changes.len());
        let mut acc = 0.0;
        for (i, change) in changes.iter().enumerate() {
            if i > 0 {
                let prev = changes[i - 1];
                acc += (change.beat - prev.beat) * 60.0 / prev.bpm;
            }
            elapsed.push(acc);
        }
        Self {
            changes,
            elapsed,
            offset_seconds: header.offset_seconds,
        }
    }

    fn segment(&self, beat: f64) -> usize {
        self.changes
            .partition_point(|c| c.beat <= beat)
            .saturating_sub(1)
    }

    pub fn bpm_at(&self, beat: f64) -> f64 {
        self.changes[self.segment(beat)].bpm
    }

    pub fn seconds_at(&self, beat: f64) -> f64 {
        let i = self.segment(beat);
        let change = self.changes[i];
        self.elapsed[i] + (beat - change.beat) * 60.0 / change.bpm - self.offset_seconds
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowTime {
    /// Flattened row index within the level.
    pub row: usize,
    pub beat: f64,
    pub seconds: f64,
}

pub fn row_beat(measure: usize, row: usize, subdivisions: usize) -> f64 {
    4.0 * measure as f64 + 4.0 * row as f64 / subdivisions as f64
}

/// Beat and wall-clock time of every row of `level`.
pub fn row_times(level: &Level, header: &SongHeader) -> Vec<RowTime> {
    let tempo = TempoMap::new(header);
    level
        .rows()
        .enumerate()
        .map(|(row, (m, r, s, _))| {
            let beat = row_beat(m, r, s);
            RowTime {
                row,
                beat,
                seconds: tempo.seconds_at(beat),
            }
        })
        .collect()
}

fn write_pairs(out: &mut String, tag: &str, pairs: &[(f64, f64)]) {
    if pairs.is_empty() {
        return;
    }
    let body: Vec<String> = pairs.iter().map(|(a, b)| format!("{a}={b}")).collect();
    let _ = writeln!(out, "#{tag}:{};", body.join(","));
}

/// Writes `song` back out as SM text. Only the tags this parser reads are
/// emitted.
pub fn to_sm_string(song: &Song) -> String {
    let h = &song.header;
    let mut out = String::new();
    let _ = writeln!(out, "#TITLE:{};", h.title);
    let _ = writeln!(out, "#ARTIST:{};", h.artist);
    let _ = writeln!(out, "#OFFSET:{};", h.offset_seconds);
    let bpms: Vec<String> = h.bpms.iter().map(|c| format!("{}={}", c.beat, c.bpm)).collect();
    let _ = writeln!(out, "#BPMS:{};", bpms.join(","));
    write_pairs(&mut out, "STOPS", &h.stops);
    write_pairs(&mut out, "WARPS", &h.warps);
    for level in &song.levels {
        let _ = writeln!(out);
        let _ = writeln!(out, "//---------------{} - {}----------------", level.chart_type, level.author_note);
        let _ = writeln!(out, "#NOTES:");
        let _ = writeln!(out, "     {}:", level.chart_type);
        let _ = writeln!(out, "     {}:", level.author_note);
        let _ = writeln!(out, "     {}:", level.difficulty_class);
        let _ = writeln!(out, "     {}:", level.meter);
        let _ = writeln!(out, "     0,0,0,0,0:");
        for (i, measure) in level.measures.iter().enumerate() {
            if i > 0 {
                let _ = writeln!(out, ",");
            }
            for row in &measure.rows {
                let _ = writeln!(out, "{row}");
            }
        }
        let _ = writeln!(out, ";");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "#TITLE:Tiny;\n#BPMS:0.000=120.000;\n#NOTES:\n dance-single:\n me:\n Beginner:\n 1:\n 0,0,0,0,0:\n1000\n0000\n0000\n0000\n;\n";

    #[test]
    fn minimal_file() {
        let song = parse_sm(MINIMAL.as_bytes()).unwrap();
        assert_eq!(song.levels.len(), 1);
        let level = &song.levels[0];
        assert_eq!(level.measures.len(), 1);
        assert_eq!(level.measures[0].subdivisions(), 4);
        assert_eq!(level.measures[0].rows[0].0[0], NoteSymbol::Tap);
        let taps = level
            .rows()
            .flat_map(|(_, _, _, r)| r.0)
            .filter(|s| *s == NoteSymbol::Tap)
            .count();
        assert_eq!(taps, 1);
        assert_eq!(song.header.title, "Tiny");
        assert_eq!(song.header.bpms, vec![BpmChange { beat: 0.0, bpm: 120.0 }]);
    }

    #[test]
    fn mine_row() {
        let row: NoteRow = "0M00".parse().unwrap();
        assert_eq!(row.0[1], NoteSymbol::Mine);
        assert_eq!(row.0[0], NoteSymbol::Empty);
    }

    #[test]
    fn empty_input_has_no_notes() {
        assert!(matches!(parse_sm(b""), Err(SmError::MissingNotesSection { .. })));
    }

    #[test]
    fn comments_are_stripped() {
        let text = MINIMAL.replace("1000\n", "1000 // first step\n");
        let song = parse_sm(text.as_bytes()).unwrap();
        assert_eq!(song.levels[0].measures[0].rows.len(), 4);
    }

    #[test]
    fn non_positive_bpm_rejected() {
        let text = MINIMAL.replace("0.000=120.000", "0.000=120.000,8=-60");
        assert!(matches!(
            parse_sm(text.as_bytes()),
            Err(SmError::MalformedBpms { .. })
        ));
        let text = MINIMAL.replace("0.000=120.000", "0=abc");
        assert!(matches!(
            parse_sm(text.as_bytes()),
            Err(SmError::MalformedBpms { .. })
        ));
    }

    #[test]
    fn row_width_error_names_offset() {
        let text = MINIMAL.replace("0000\n;", "00000\n;");
        let err = parse_sm(text.as_bytes()).unwrap_err();
        let offset = text.find("00000").unwrap();
        assert_eq!(err, SmError::RowWidthError { offset, width: 5 });
    }

    #[test]
    fn unterminated_chart() {
        let text = MINIMAL.trim_end().trim_end_matches(';');
        let offset = text.find("#NOTES").unwrap();
        assert_eq!(
            parse_sm(text.as_bytes()).unwrap_err(),
            SmError::UnterminatedChart { offset }
        );
    }

    #[test]
    fn other_modes_are_skipped() {
        let doubles = "#NOTES:\n dance-double:\n x:\n Hard:\n 5:\n 0:\n10000000\n;\n";
        let text = format!("{doubles}{MINIMAL}");
        let song = parse_sm(text.as_bytes()).unwrap();
        assert_eq!(song.levels.len(), 1);
        let only_doubles = format!("#BPMS:0=120;\n{doubles}");
        assert!(matches!(
            parse_sm(only_doubles.as_bytes()),
            Err(SmError::MissingNotesSection { .. })
        ));
    }

    #[test]
    fn stray_bytes_are_lossy() {
        let mut bytes = MINIMAL.as_bytes().to_vec();
        let pos = MINIMAL.find("Tiny").unwrap();
        bytes[pos] = 0xff;
        let song = parse_sm(&bytes).unwrap();
        assert!(song.header.title.ends_with("iny"));
    }

    #[test]
    fn missing_header_semicolon_is_tolerated() {
        let text = MINIMAL.replace("#TITLE:Tiny;", "#TITLE:Tiny");
        let song = parse_sm(text.as_bytes()).unwrap();
        assert_eq!(song.header.title, "Tiny");
        assert_eq!(song.header.bpms[0].bpm, 120.0);
    }

    #[test]
    fn holds_pair_and_repair() {
        let text = MINIMAL.replace("1000\n0000\n0000\n0000", "2000\n0040\n3000\n0000");
        let song = parse_sm(text.as_bytes()).unwrap();
        let level = &song.levels[0];
        assert_eq!(
            level.holds,
            vec![
                HoldSpan { column: 0, kind: HoldKind::Hold, start_row: 0, end_row: 2, repaired: false },
                HoldSpan { column: 2, kind: HoldKind::Roll, start_row: 1, end_row: 3, repaired: true },
            ]
        );
        assert_eq!(level.warnings.len(), 1);
    }

    #[test]
    fn stops_and_warps_kept_aside() {
        let text = MINIMAL.replace("#BPMS", "#STOPS:4=0.5;\n#WARPS:8=2;\n#BPMS");
        let song = parse_sm(text.as_bytes()).unwrap();
        assert_eq!(song.header.stops, vec![(4.0, 0.5)]);
        assert_eq!(song.header.warps, vec![(8.0, 2.0)]);
    }

    fn header(bpms: &[(f64, f64)], offset: f64) -> SongHeader {
        SongHeader {
            title: String::new(),
            artist: String::new(),
            offset_seconds: offset,
            bpms: bpms.iter().map(|&(beat, bpm)| BpmChange { beat, bpm }).collect(),
            stops: vec![],
            warps: vec![],
        }
    }

    #[test]
    fn constant_tempo_timing() {
        let song = parse_sm(MINIMAL.as_bytes()).unwrap();
        let times = row_times(&song.levels[0], &song.header);
        assert_eq!(times[2].beat, 2.0);
        assert_eq!(times[2].seconds, 1.0);
        assert_eq!(times[0].seconds, 0.0);

        let shifted = header(&[(0.0, 120.0)], 0.25);
        let times = row_times(&song.levels[0], &shifted);
        assert_eq!(times[0].seconds, -0.25);
    }

    #[test]
    fn piecewise_tempo_timing() {
        let tempo = TempoMap::new(&header(&[(0.0, 120.0), (4.0, 240.0)], 0.0));
        assert_eq!(tempo.seconds_at(6.0), 2.5);
        assert_eq!(tempo.bpm_at(6.0), 240.0);
        assert_eq!(tempo.bpm_at(3.99), 120.0);
    }

    #[test]
    fn round_trip() {
        let text = MINIMAL.replace("1000\n0000\n0000\n0000", "2000\n0M40\n3000\n0F01\n,\n1001\n0000\n0000\n0000\n0000\n0000\n0000\n0000");
        let song = parse_sm(text.as_bytes()).unwrap();
        let again = parse_sm(to_sm_string(&song).as_bytes()).unwrap();
        assert_eq!(song, again);
    }
}
