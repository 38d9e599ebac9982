//! Judgment storage: an append-only JSON Lines event log plus a periodic
//! snapshot of the aggregates.
//!
//! The aggregates are a pure fold over the log, so replaying the log from
//! the snapshot's event count reproduces them exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stepdiff::checkpoint::write_atomic;
use thiserror::Error;

/// Events between snapshots.
pub const SNAPSHOT_EVERY: u64 = 50;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown pair {0}")]
    UnknownPair(String),
    #[error("submission {nonce} of {annotator} for {pair_id} was already recorded")]
    DuplicateSubmission {
        pair_id: String,
        annotator: String,
        nonce: String,
    },
    #[error("no judgments recorded yet")]
    NoJudgments,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    AHarder,
    BHarder,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentEvent {
    pub seq: u64,
    pub pair_id: String,
    pub choice: Choice,
    pub annotator: String,
    pub nonce: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairJudgment {
    pub pair_id: String,
    pub votes_a_harder: u64,
    pub votes_b_harder: u64,
    /// Share of votes for "a is harder"; absent before the first vote.
    pub r_a_harder: Option<f64>,
}

impl PairJudgment {
    fn new(pair_id: &str) -> Self {
        Self {
            pair_id: pair_id.to_string(),
            votes_a_harder: 0,
            votes_b_harder: 0,
            r_a_harder: None,
        }
    }
}

/// Everything derived from the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub events: u64,
    pub judgments: BTreeMap<String, PairJudgment>,
    /// `(annotator, pair id, nonce)` of every accepted submission.
    pub submissions: BTreeSet<(String, String, String)>,
}

impl Aggregates {
    pub fn judged_by(&self, annotator: &str, pair_id: &str) -> bool {
        self.submissions
            .range((annotator.to_string(), pair_id.to_string(), String::new())..)
            .next()
            .is_some_and(|(a, p, _)| a == annotator && p == pair_id)
    }

    fn check(&self, pair_ids: &BTreeSet<String>, pair_id: &str, annotator: &str, nonce: &str) -> Result<(), StoreError> {
        if !pair_ids.contains(pair_id) {
            return Err(StoreError::UnknownPair(pair_id.to_string()));
        }
        if self
            .submissions
            .contains(&(annotator.to_string(), pair_id.to_string(), nonce.to_string()))
        {
            return Err(StoreError::DuplicateSubmission {
                pair_id: pair_id.to_string(),
                annotator: annotator.to_string(),
                nonce: nonce.to_string(),
            });
        }
        Ok(())
    }

    fn apply(&mut self, event: &JudgmentEvent) -> PairJudgment {
        self.events += 1;
        self.submissions
            .insert((event.annotator.clone(), event.pair_id.clone(), event.nonce.clone()));
        let j = self
            .judgments
            .entry(event.pair_id.clone())
            .or_insert_with(|| PairJudgment::new(&event.pair_id));
        match event.choice {
            Choice::AHarder => j.votes_a_harder += 1,
            Choice::BHarder => j.votes_b_harder += 1,
        }
        j.r_a_harder = Some(j.votes_a_harder as f64 / (j.votes_a_harder + j.votes_b_harder) as f64);
        j.clone()
    }
}

/// The single writer of a judgment log.
#[derive(Debug)]
pub struct JudgmentLog {
    log_path: PathBuf,
    snapshot_path: PathBuf,
    file: File,
    pair_ids: BTreeSet<String>,
    aggregates: Aggregates,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl JudgmentLog {
    pub fn snapshot_path(log_path: &Path) -> PathBuf {
        let mut name = log_path.file_name().unwrap_or_default().to_os_string();
        name.push(".snapshot.json");
        log_path.with_file_name(name)
    }

    /// Opens (or creates) the log at `log_path` and rebuilds the aggregates
    /// from the latest snapshot plus the events after it.
    pub fn open(log_path: &Path, pair_ids: BTreeSet<String>) -> Result<Self, StoreError> {
        let snapshot_path = Self::snapshot_path(log_path);
        let mut aggregates = match std::fs::read_to_string(&snapshot_path) {
            Ok(text) => serde_json::from_str(&text).map_err(|source| StoreError::Corrupt {
                path: snapshot_path.clone(),
                line: 1,
                source,
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Aggregates::default(),
            Err(e) => return Err(io_err(&snapshot_path)(e)),
        };
        repair_tail(log_path)?;
        let events = read_events(log_path)?;
        if (events.len() as u64) < aggregates.events {
            log::warn!(
                "snapshot {} is ahead of its log; rebuilding from the log",
                snapshot_path.display()
            );
            aggregates = Aggregates::default();
        }
        for event in events.iter().skip(aggregates.events as usize) {
            aggregates.apply(event);
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .map_err(io_err(log_path))?;
        Ok(Self {
            log_path: log_path.to_path_buf(),
            snapshot_path,
            file,
            pair_ids,
            aggregates,
        })
    }

    pub fn aggregates(&self) -> &Aggregates {
        &self.aggregates
    }

    /// Validates, persists and applies one vote.
    pub fn record(&mut self, pair_id: &str, choice: Choice, annotator: &str, nonce: &str) -> Result<PairJudgment, StoreError> {
        self.aggregates.check(&self.pair_ids, pair_id, annotator, nonce)?;
        let event = JudgmentEvent {
            seq: self.aggregates.events,
            pair_id: pair_id.to_string(),
            choice,
            annotator: annotator.to_string(),
            nonce: nonce.to_string(),
        };
        let mut line = serde_json::to_string(&event).expect("events always serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.log_path))?;
        self.file.sync_data().map_err(io_err(&self.log_path))?;
        let judgment = self.aggregates.apply(&event);
        if self.aggregates.events.is_multiple_of(SNAPSHOT_EVERY) {
            self.snapshot()?;
        }
        Ok(judgment)
    }

    pub fn snapshot(&self) -> Result<(), StoreError> {
        let text = serde_json::to_string(&self.aggregates).expect("aggregates always serialize");
        write_atomic(&self.snapshot_path, text.as_bytes()).map_err(io_err(&self.snapshot_path))
    }
}

/// Ends a log with a newline so new events never append to a partial line:
/// a final line that parses gets its newline, a torn one is cut off.
fn repair_tail(log_path: &Path) -> Result<(), StoreError> {
    let bytes = match std::fs::read(log_path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_err(log_path)(e)),
    };
    if bytes.last().is_none_or(|&b| b == b'\n') {
        return Ok(());
    }
    let start = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut file = OpenOptions::new().write(true).open(log_path).map_err(io_err(log_path))?;
    if serde_json::from_slice::<JudgmentEvent>(&bytes[start..]).is_ok() {
        file.seek(SeekFrom::End(0)).map_err(io_err(log_path))?;
        file.write_all(b"\n").map_err(io_err(log_path))?;
    } else {
        log::warn!("{}: dropping torn final line", log_path.display());
        file.set_len(start as u64).map_err(io_err(log_path))?;
    }
    file.sync_data().map_err(io_err(log_path))
}

/// Reads every complete event of a log. A torn final line (from a crash
/// mid-write) is dropped with a warning; corruption elsewhere is an error.
pub fn read_events(log_path: &Path) -> Result<Vec<JudgmentEvent>, StoreError> {
    let file = match File::open(log_path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(log_path)(e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(log_path))?;
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => events.push(e),
            Err(_) if i + 1 == lines.len() => {
                log::warn!("{}: dropping torn final line", log_path.display());
            }
            Err(source) => {
                return Err(StoreError::Corrupt {
                    path: log_path.to_path_buf(),
                    line: i + 1,
                    source,
                })
            }
        }
    }
    Ok(events)
}

/// Aggregates recomputed from the log alone.
pub fn replay(log_path: &Path) -> Result<Aggregates, StoreError> {
    let mut aggregates = Aggregates::default();
    for event in read_events(log_path)? {
        aggregates.apply(&event);
    }
    Ok(aggregates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids() -> BTreeSet<String> {
        ["a|b".to_string(), "a|c".to_string()].into_iter().collect()
    }

    #[test]
    fn votes_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("judgments.jsonl");
        let mut log = JudgmentLog::open(&path, ids()).unwrap();
        let j = log.record("a|b", Choice::AHarder, "ann1", "n1").unwrap();
        assert_eq!(j.r_a_harder, Some(1.0));
        log.record("a|b", Choice::AHarder, "ann2", "n1").unwrap();
        let j = log.record("a|b", Choice::BHarder, "ann1", "n2").unwrap();
        assert!((j.r_a_harder.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let before = log.aggregates().clone();
        assert!(matches!(
            log.record("a|b", Choice::BHarder, "ann1", "n2"),
            Err(StoreError::DuplicateSubmission { .. })
        ));
        assert_eq!(log.aggregates(), &before);
        assert!(matches!(
            log.record("x|y", Choice::AHarder, "ann1", "n3"),
            Err(StoreError::UnknownPair(_))
        ));
        assert!(log.aggregates().judged_by("ann1", "a|b"));
        assert!(!log.aggregates().judged_by("ann1", "a|c"));
        assert!(!log.aggregates().judged_by("ann", "a|b"));
    }

    #[test]
    fn reopening_replays_the_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("judgments.jsonl");
        let mut log = JudgmentLog::open(&path, ids()).unwrap();
        for i in 0..(SNAPSHOT_EVERY + 7) {
            let choice = if i % 3 == 0 { Choice::BHarder } else { Choice::AHarder };
            log.record(if i % 2 == 0 { "a|b" } else { "a|c" }, choice, "ann", &format!("n{i}"))
                .unwrap();
        }
        let live = log.aggregates().clone();
        drop(log);
        assert!(JudgmentLog::snapshot_path(&path).exists());
        assert_eq!(replay(&path).unwrap(), live);
        let reopened = JudgmentLog::open(&path, ids()).unwrap();
        assert_eq!(reopened.aggregates(), &live);
    }

    #[test]
    fn torn_final_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("judgments.jsonl");
        let mut log = JudgmentLog::open(&path, ids()).unwrap();
        log.record("a|b", Choice::AHarder, "ann", "n1").unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":1,\"pair").unwrap();
        assert_eq!(replay(&path).unwrap().events, 1);
        let mut log = JudgmentLog::open(&path, ids()).unwrap();
        log.record("a|c", Choice::BHarder, "ann", "n2").unwrap();
        drop(log);
        assert_eq!(replay(&path).unwrap().events, 2);

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.trim_end()).unwrap();
        let log = JudgmentLog::open(&path, ids()).unwrap();
        assert_eq!(log.aggregates().events, 2);
        assert!(std::fs::read_to_string(&path).unwrap().ends_with('\n'));
    }
}
