//! Concordance of every source with the collected judgments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use stepdiff::metrics::concordance_accuracy;
use stepdiff::pipeline::PairLabel;

use crate::select::{CandidatePair, Source};
use crate::store::{PairJudgment, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub source: String,
    /// Mean correctness over the judged pairs the source orders strictly;
    /// absent when it orders none of them.
    pub concordance: Option<f64>,
    /// Judged pairs the source orders strictly.
    pub pairs: usize,
    pub no_coverage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub judged_pairs: usize,
    pub votes: u64,
    pub sources: Vec<SourceScore>,
}

/// Scores each source (sorted by name) against the judged pairs among
/// `pairs`.
pub fn score_sources(
    sources: &[Source],
    pairs: &[CandidatePair],
    judgments: &BTreeMap<String, PairJudgment>,
) -> Result<ScoreReport, StoreError> {
    let judged: Vec<(&CandidatePair, f64)> = pairs
        .iter()
        .filter_map(|p| Some((p, judgments.get(&p.pair_id)?.r_a_harder?)))
        .collect();
    if judged.is_empty() {
        return Err(StoreError::NoJudgments);
    }
    let votes = judged
        .iter()
        .map(|(p, _)| {
            let j = &judgments[&p.pair_id];
            j.votes_a_harder + j.votes_b_harder
        })
        .sum();
    let mut sorted: Vec<&Source> = sources.iter().collect();
    sorted.sort_by(|x, y| x.name.cmp(&y.name));
    let scores = sorted
        .into_iter()
        .map(|source| {
            let (orders, r_a_less): (Vec<PairLabel>, Vec<f64>) = judged
                .iter()
                .filter_map(|(p, r_a_harder)| {
                    let order = source.order(&p.a, &p.b)?;
                    order.is_strict().then_some((order, 1.0 - r_a_harder))
                })
                .unzip();
            let concordance = if orders.is_empty() {
                log::warn!("source {} orders none of the judged pairs", source.name);
                None
            } else {
                Some(concordance_accuracy(&orders, &r_a_less).expect("strict orders and correctness in [0, 1]"))
            };
            SourceScore {
                source: source.name.clone(),
                concordance,
                pairs: orders.len(),
                no_coverage: concordance.is_none(),
            }
        })
        .collect();
    Ok(ScoreReport {
        judged_pairs: judged.len(),
        votes,
        sources: scores,
    })
}
