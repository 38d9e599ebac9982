//! Category pooling, Monte Carlo train/test splits, ranking pairs and
//! cross-dataset label remapping.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream;
use crate::sm::Song;

pub const DEFAULT_POOL_THRESHOLD: f64 = 0.02;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("no label counts to pool")]
    EmptyCounts,
    #[error("pooling would leave fewer than two categories")]
    AllMerged,
    #[error("no valid split after {attempts} attempts{}", infeasible_label.map(|l| format!(" (label {l} cannot appear on both sides)")).unwrap_or_default())]
    RejectionExhausted {
        attempts: usize,
        infeasible_label: Option<u32>,
    },
    #[error("test fraction {0} must lie in (0, 1)")]
    InvalidFraction(f64),
    #[error("raw meter {0} is not covered by the pooling map")]
    UnmappedMeter(u32),
}

/// Maps raw meters onto contiguous pooled labels `1..=k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingMap {
    pub raw_to_pooled: BTreeMap<u32, u32>,
    pub k: u32,
}

impl PoolingMap {
    pub fn pooled(&self, raw: u32) -> Result<u32, PipelineError> {
        self.raw_to_pooled
            .get(&raw)
            .copied()
            .ok_or(PipelineError::UnmappedMeter(raw))
    }

    /// Raw meters that share each pooled label, in label order.
    pub fn groups(&self) -> Vec<Vec<u32>> {
        let mut groups = vec![Vec::new(); self.k as usize];
        for (&raw, &pooled) in &self.raw_to_pooled {
            groups[pooled as usize - 1].push(raw);
        }
        groups
    }
}

/// Merges adjacent raw categories until each holds at least
/// `threshold_fraction` of all levels.
///
/// Each round takes the smallest category (ties: the easiest) and joins it
/// with its smaller neighbour (ties: the easier neighbour).
pub fn pool_categories(counts: &BTreeMap<u32, usize>, threshold_fraction: f64) -> Result<PoolingMap, PipelineError> {
    if counts.is_empty() {
        return Err(PipelineError::EmptyCounts);
    }
    let total: usize = counts.values().sum();
    let threshold = threshold_fraction * total as f64;
    let mut groups: Vec<(Vec<u32>, usize)> = counts.iter().map(|(&raw, &n)| (vec![raw], n)).collect();
    if groups.len() < 2 {
        return Err(PipelineError::AllMerged);
    }
    loop {
        let smallest = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| (g.1 as f64) < threshold)
            .min_by_key(|(i, g)| (g.1, *i))
            .map(|(i, _)| i);
        let Some(i) = smallest else { break };
        if groups.len() == 2 {
            return Err(PipelineError::AllMerged);
        }
        let neighbour = if i == 0 {
            1
        } else if i == groups.len() - 1 {
            i - 1
        } else if groups[i + 1].1 < groups[i - 1].1 {
            i + 1
        } else {
            i - 1
        };
        let (lo, hi) = (i.min(neighbour), i.max(neighbour));
        let (raws, n) = groups.remove(hi);
        groups[lo].0.extend(raws);
        groups[lo].1 += n;
    }
    let raw_to_pooled = groups
        .iter()
        .enumerate()
        .flat_map(|(i, (raws, _))| raws.iter().map(move |&r| (r, i as u32 + 1)))
        .collect();
    Ok(PoolingMap {
        raw_to_pooled,
        k: groups.len() as u32,
    })
}

/// Pooled labels of one song's levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SongLabels {
    pub song_id: String,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_song_ids: BTreeSet<String>,
    pub train_song_ids: BTreeSet<String>,
    pub seed: u64,
    pub replicate_index: u64,
}

impl SplitPlan {
    pub fn is_test(&self, song_id: &str) -> bool {
        self.test_song_ids.contains(song_id)
    }
}

/// Number of test songs for `songs` songs: `ceil(fraction * songs)`.
pub fn test_size(songs: usize, fraction: f64) -> usize {
    // The small slack keeps e.g. 0.2 * 15 from rounding up to 4.
    ((fraction * songs as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Draws song-level train/test splits until every label occurs on both
/// sides. Replicate `r` of a seed always yields the same plan.
pub fn mc_split(
    songs: &[SongLabels],
    fraction: f64,
    seed: u64,
    replicate: u64,
    max_attempts: usize,
) -> Result<SplitPlan, PipelineError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(PipelineError::InvalidFraction(fraction));
    }
    let n_test = test_size(songs.len(), fraction);
    let mut songs_per_label: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for (i, s) in songs.iter().enumerate() {
        for &label in &s.labels {
            songs_per_label.entry(label).or_default().insert(i);
        }
    }
    let infeasible = songs_per_label.iter().find(|(_, s)| s.len() < 2).map(|(&l, _)| l);
    if infeasible.is_some() || n_test == 0 || n_test >= songs.len() {
        return Err(PipelineError::RejectionExhausted {
            attempts: 0,
            infeasible_label: infeasible,
        });
    }

    let mut rng = substream(seed, "split", replicate);
    for _ in 0..max_attempts {
        let mut is_test = vec![false; songs.len()];
        for i in sample(&mut rng, songs.len(), n_test) {
            is_test[i] = true;
        }
        let ok = songs_per_label
            .values()
            .all(|owners| owners.iter().any(|&i| is_test[i]) && owners.iter().any(|&i| !is_test[i]));
        if ok {
            let (test, train): (Vec<_>, Vec<_>) = songs.iter().zip(&is_test).partition(|(_, &t)| t);
            return Ok(SplitPlan {
                test_song_ids: test.into_iter().map(|(s, _)| s.song_id.clone()).collect(),
                train_song_ids: train.into_iter().map(|(s, _)| s.song_id.clone()).collect(),
                seed,
                replicate_index: replicate,
            });
        }
    }
    Err(PipelineError::RejectionExhausted {
        attempts: max_attempts,
        infeasible_label: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairLabel {
    /// `a` is easier than `b`.
    ALess,
    /// `b` is easier than `a`.
    BLess,
    Equal,
}

impl PairLabel {
    pub fn from_labels(a: u32, b: u32) -> Self {
        Self::from_scores(a as f64, b as f64)
    }

    pub fn from_scores(a: f64, b: f64) -> Self {
        if a < b {
            PairLabel::ALess
        } else if a > b {
            PairLabel::BLess
        } else {
            PairLabel::Equal
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            PairLabel::ALess => PairLabel::BLess,
            PairLabel::BLess => PairLabel::ALess,
            PairLabel::Equal => PairLabel::Equal,
        }
    }

    pub fn is_strict(self) -> bool {
        self != PairLabel::Equal
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingPair {
    pub a: String,
    pub b: String,
    pub label: PairLabel,
}

/// Every unordered pair of `(level id, label)` entries, in input order.
pub fn make_ranking_pairs(levels: &[(String, u32)]) -> Vec<RankingPair> {
    let mut pairs = Vec::with_capacity(levels.len() * levels.len().saturating_sub(1) / 2);
    for (i, (a, ya)) in levels.iter().enumerate() {
        for (b, yb) in &levels[i + 1..] {
            pairs.push(RankingPair {
                a: a.clone(),
                b: b.clone(),
                label: PairLabel::from_labels(*ya, *yb),
            });
        }
    }
    pairs
}

/// Maps raw meters of another dataset through `pooling`. Meters outside the
/// observed range clamp to the nearest end; a meter that falls in a gap takes
/// the label of the closest observed meter below it.
pub fn remap_cross_dataset(raw_labels: &[u32], pooling: &PoolingMap) -> Vec<u32> {
    raw_labels
        .iter()
        .map(|&raw| match pooling.raw_to_pooled.range(..=raw).next_back() {
            Some((_, &pooled)) => pooled,
            None => 1,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestLevel {
    pub index: usize,
    pub raw_meter: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSong {
    pub song_id: String,
    pub path: String,
    pub levels: Vec<ManifestLevel>,
}

/// A pack with its pooling and every split drawn for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub songs: Vec<ManifestSong>,
    pub pooling: PoolingMap,
    pub splits: Vec<SplitPlan>,
}

impl DatasetManifest {
    /// Raw meter counts over every level.
    pub fn meter_counts(songs: &[ManifestSong]) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for level in songs.iter().flat_map(|s| &s.levels) {
            *counts.entry(level.raw_meter).or_insert(0) += 1;
        }
        counts
    }

    /// Pooled labels per song, the input of [`mc_split`].
    pub fn song_labels(&self) -> Result<Vec<SongLabels>, PipelineError> {
        self.songs
            .iter()
            .map(|s| {
                Ok(SongLabels {
                    song_id: s.song_id.clone(),
                    labels: s
                        .levels
                        .iter()
                        .map(|l| self.pooling.pooled(l.raw_meter))
                        .collect::<Result<_, _>>()?,
                })
            })
            .collect()
    }
}

/// Stable id of a simfile below a pack root: its relative path without the
/// extension, with `/` separators.
pub fn song_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Manifest entries for parsed songs of a pack rooted at `root`.
pub fn manifest_songs(root: &Path, songs: &[Song]) -> Vec<ManifestSong> {
    songs
        .iter()
        .map(|s| ManifestSong {
            song_id: song_id(root, Path::new(&s.source_path)),
            path: s.source_path.clone(),
            levels: s
                .levels
                .iter()
                .enumerate()
                .map(|(index, l)| ManifestLevel {
                    index,
                    raw_meter: l.meter,
                })
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(u32, usize)]) -> BTreeMap<u32, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn pooling_merges_rare_endpoint() {
        let map = pool_categories(&counts(&[(1, 1), (2, 50), (3, 49)]), 0.02).unwrap();
        assert_eq!(map.k, 2);
        assert_eq!(map.raw_to_pooled, [(1, 1), (2, 1), (3, 2)].into_iter().collect());
    }

    #[test]
    fn pooling_identity_when_all_frequent() {
        let map = pool_categories(&counts(&[(3, 10), (5, 10), (9, 10)]), 0.02).unwrap();
        assert_eq!(map.raw_to_pooled, [(3, 1), (5, 2), (9, 3)].into_iter().collect());
    }

    #[test]
    fn pooling_prefers_smaller_neighbour_then_lower() {
        let map = pool_categories(&counts(&[(1, 40), (2, 1), (3, 30), (4, 29)]), 0.02).unwrap();
        assert_eq!(map.groups(), vec![vec![1], vec![2, 3], vec![4]]);
        let map = pool_categories(&counts(&[(1, 30), (2, 1), (3, 30), (4, 39)]), 0.02).unwrap();
        assert_eq!(map.groups(), vec![vec![1, 2], vec![3], vec![4]]);
    }

    #[test]
    fn pooling_errors() {
        assert_eq!(pool_categories(&counts(&[(1, 5)]), 0.02), Err(PipelineError::AllMerged));
        assert_eq!(pool_categories(&counts(&[(1, 1), (2, 1)]), 0.6), Err(PipelineError::AllMerged));
        assert_eq!(pool_categories(&BTreeMap::new(), 0.02), Err(PipelineError::EmptyCounts));
    }

    fn songs(labels: &[&[u32]]) -> Vec<SongLabels> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| SongLabels {
                song_id: format!("s{i}"),
                labels: l.to_vec(),
            })
            .collect()
    }

    #[test]
    fn split_of_ten_songs() {
        let s = songs(&[&[1u32, 2][..]; 10]);
        let plan = mc_split(&s, 0.2, 7, 0, DEFAULT_MAX_ATTEMPTS).unwrap();
        assert_eq!(plan.test_song_ids.len(), 2);
        assert_eq!(plan.train_song_ids.len(), 8);
        assert!(plan.test_song_ids.is_disjoint(&plan.train_song_ids));
        assert_eq!(plan, mc_split(&s, 0.2, 7, 0, DEFAULT_MAX_ATTEMPTS).unwrap());
    }

    #[test]
    fn split_rejects_single_song_label() {
        let s = songs(&[&[1], &[1], &[1, 2], &[1]]);
        assert_eq!(
            mc_split(&s, 0.2, 0, 0, DEFAULT_MAX_ATTEMPTS),
            Err(PipelineError::RejectionExhausted {
                attempts: 0,
                infeasible_label: Some(2)
            })
        );
    }

    #[test]
    fn test_size_rounds_up() {
        assert_eq!(test_size(10, 0.2), 2);
        assert_eq!(test_size(15, 0.2), 3);
        assert_eq!(test_size(11, 0.2), 3);
        assert_eq!(test_size(1, 0.2), 1);
    }

    #[test]
    fn ranking_pairs() {
        let levels: Vec<(String, u32)> = [("a", 1), ("b", 2), ("c", 2)].iter().map(|(i, y)| (i.to_string(), *y)).collect();
        let pairs = make_ranking_pairs(&levels);
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[0].label, PairLabel::ALess);
        assert_eq!(pairs[2].label, PairLabel::Equal);
        assert_eq!(PairLabel::from_labels(3, 1), PairLabel::BLess);
    }

    #[test]
    fn cross_dataset_remap() {
        let pooling = PoolingMap {
            raw_to_pooled: [(2, 1), (3, 2), (4, 3), (5, 3), (8, 4)].into_iter().collect(),
            k: 4,
        };
        assert_eq!(remap_cross_dataset(&[5, 1, 20, 6, 2], &pooling), vec![3, 1, 4, 3, 1]);
    }

    #[test]
    fn song_ids_are_relative() {
        assert_eq!(song_id(Path::new("/p"), Path::new("/p/Song A/a.sm")), "Song A/a");
    }
}
