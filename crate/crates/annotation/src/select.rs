//! Choosing the level pairs that sources disagree on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use stepdiff::experiment::PredictionFile;
use stepdiff::features::level_id;
use stepdiff::pipeline::{DatasetManifest, PairLabel};
use thiserror::Error;

/// Name of the source that stands for the charts' own difficulty numbers.
pub const ORIGINAL: &str = "original";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectError {
    #[error("at least two sources are required, got {0}")]
    TooFewSources(usize),
    #[error("no pair is ordered differently by two sources")]
    NoDisagreements,
}

/// Difficulty scores one source assigns to levels; larger is harder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub name: String,
    pub scores: BTreeMap<String, f64>,
}

impl Source {
    /// The source's order of `a` and `b`, if it scores both.
    pub fn order(&self, a: &str, b: &str) -> Option<PairLabel> {
        Some(PairLabel::from_scores(*self.scores.get(a)?, *self.scores.get(b)?))
    }
}

/// One source per method with predictions, scoring each level by its
/// predicted label (averaged when several files predict the level), plus
/// [`ORIGINAL`] scoring the same levels by their raw meter.
pub fn sources_from_predictions(files: &[PredictionFile], manifest: &DatasetManifest) -> Vec<Source> {
    let mut sums: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for file in files {
        let per_level = sums.entry(file.method.name().to_string()).or_default();
        for p in &file.predictions {
            let e = per_level.entry(p.level_id.clone()).or_insert((0.0, 0));
            e.0 += p.predicted as f64;
            e.1 += 1;
        }
    }
    let predicted: std::collections::BTreeSet<&String> = sums.values().flat_map(|m| m.keys()).collect();
    let original = Source {
        name: ORIGINAL.to_string(),
        scores: manifest
            .songs
            .iter()
            .flat_map(|s| s.levels.iter().map(move |l| (level_id(&s.song_id, l.index), l.raw_meter as f64)))
            .filter(|(id, _)| predicted.contains(id))
            .collect(),
    };
    let mut sources: Vec<Source> = sums
        .iter()
        .map(|(name, levels)| Source {
            name: name.clone(),
            scores: levels.iter().map(|(id, (sum, n))| (id.clone(), sum / *n as f64)).collect(),
        })
        .collect();
    sources.push(original);
    sources.sort_by(|x, y| x.name.cmp(&y.name));
    sources
}

/// Pair id of two level ids, `"a|b"` with `a < b`.
pub fn pair_id(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}|{b}")
    } else {
        format!("{b}|{a}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub pair_id: String,
    pub a: String,
    pub b: String,
    /// Strict orders of every source that orders the pair, by source name.
    pub sources: Vec<(String, PairLabel)>,
    /// Number of source pairs with opposite orders.
    pub disagreements: usize,
}

/// Pairs of levels that at least two sources order in opposite ways,
/// most contested first (ties by pair id), truncated to `budget`.
///
/// A source that rates a pair as equal, or does not score one of its levels,
/// is left out of that pair.
pub fn select_pairs(sources: &[Source], budget: usize) -> Result<Vec<CandidatePair>, SelectError> {
    if sources.len() < 2 {
        return Err(SelectError::TooFewSources(sources.len()));
    }
    let mut sorted: Vec<&Source> = sources.iter().collect();
    sorted.sort_by(|x, y| x.name.cmp(&y.name));
    let mut levels: Vec<&String> = sorted.iter().flat_map(|s| s.scores.keys()).collect();
    levels.sort();
    levels.dedup();

    let mut candidates = Vec::new();
    for (i, a) in levels.iter().enumerate() {
        for b in &levels[i + 1..] {
            let orders: Vec<(String, PairLabel)> = sorted
                .iter()
                .filter_map(|s| s.order(a, b).filter(|o| o.is_strict()).map(|o| (s.name.clone(), o)))
                .collect();
            let easier_a = orders.iter().filter(|(_, o)| *o == PairLabel::ALess).count();
            let disagreements = easier_a * (orders.len() - easier_a);
            if disagreements > 0 {
                candidates.push(CandidatePair {
                    pair_id: pair_id(a, b),
                    a: (*a).clone(),
                    b: (*b).clone(),
                    sources: orders,
                    disagreements,
                });
            }
        }
    }
    if candidates.is_empty() {
        return Err(SelectError::NoDisagreements);
    }
    candidates.sort_by(|x, y| y.disagreements.cmp(&x.disagreements).then_with(|| x.pair_id.cmp(&y.pair_id)));
    candidates.truncate(budget);
    Ok(candidates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(name: &str, scores: &[(&str, f64)]) -> Source {
        Source {
            name: name.into(),
            scores: scores.iter().map(|(l, s)| (l.to_string(), *s)).collect(),
        }
    }

    #[test]
    fn identical_orderings_have_no_disagreement() {
        let a = source("original", &[("x", 1.0), ("y", 2.0)]);
        let b = source("laplace", &[("x", 3.0), ("y", 4.0)]);
        assert_eq!(select_pairs(&[a, b], 10), Err(SelectError::NoDisagreements));
    }

    #[test]
    fn single_conflict() {
        let a = source("original", &[("x", 1.0), ("y", 2.0), ("z", 3.0)]);
        let b = source("binomial", &[("x", 2.0), ("y", 1.0), ("z", 3.0)]);
        let pairs = select_pairs(&[a, b], 10).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].pair_id, "x|y");
        assert_eq!(
            pairs[0].sources,
            vec![("binomial".into(), PairLabel::BLess), ("original".into(), PairLabel::ALess)]
        );
    }

    #[test]
    fn equal_sources_are_left_out() {
        let a = source("original", &[("x", 1.0), ("y", 1.0)]);
        let b = source("nnrank", &[("x", 2.0), ("y", 1.0)]);
        let c = source("redsvm", &[("x", 1.0), ("y", 2.0)]);
        let pairs = select_pairs(&[a, b, c], 10).unwrap();
        assert_eq!(pairs[0].sources.len(), 2);
        assert_eq!(pairs[0].disagreements, 1);
    }
}
