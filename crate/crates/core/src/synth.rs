//! Synthetic simfiles whose difficulty is a fixed function of note density.
//!
//! Label `y` plants steps on the grid of `DENSITY_GRIDS[y - 1]` subdivisions
//! per measure; labels from `DENSITY_GRIDS.len()` upward also turn every
//! other step into a jump. Tempo, arrows, measure counts and a sprinkle of mines vary per song
//! so that no two charts are identical, but the label never depends on them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng::substream;
use crate::sm::{parse_sm, Song};

/// Steps per measure for labels 1, 2, 3, ...; labels past the end reuse the
/// last grid.
pub const DENSITY_GRIDS: [usize; 4] = [4, 8, 12, 16];

const CLASS_NAMES: [&str; 5] = ["Beginner", "Easy", "Medium", "Hard", "Challenge"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub songs: usize,
    /// Number of labels; every song carries one level of each.
    pub k: u32,
    pub min_measures: usize,
    pub max_measures: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            songs: 15,
            k: 4,
            min_measures: 6,
            max_measures: 10,
            seed: 0,
        }
    }
}

/// One generated simfile.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSong {
    pub song_id: String,
    pub text: String,
}

impl SynthSong {
    pub fn parse(&self) -> Song {
        let mut song = parse_sm(self.text.as_bytes()).expect("generated simfiles always parse");
        song.source_path = format!("{}.sm", self.song_id);
        song
    }
}

fn level_text<R: Rng>(label: u32, measures: usize, rng: &mut R) -> String {
    let grid_index = (label as usize - 1).min(DENSITY_GRIDS.len() - 1);
    let grid = DENSITY_GRIDS[grid_index];
    let jumps = label as usize >= DENSITY_GRIDS.len();
    let mut out = String::new();
    for m in 0..measures {
        if m > 0 {
            out.push_str(",\n");
        }
        for step in 0..grid {
            let mut row = ['0'; 4];
            let mut columns = [0usize, 1, 2, 3];
            columns.shuffle(rng);
            row[columns[0]] = '1';
            if jumps && step % 2 == 0 {
                row[columns[1]] = '1';
            } else if rng.gen_bool(0.05) {
                row[columns[1]] = 'M';
            }
            out.extend(row);
            out.push('\n');
        }
    }
    out.push_str(";\n");
    out
}

/// Generates `config.songs` simfiles, each with one level per label.
pub fn synth_songs(config: &SynthConfig) -> Vec<SynthSong> {
    (0..config.songs)
        .map(|i| {
            let mut rng = substream(config.seed, "synth", i as u64);
            let song_id = format!("synth{i:03}");
            let bpm = rng.gen_range(100..=180) as f64;
            let mut text = String::new();
            writeln!(text, "#TITLE:Synthetic {i};").unwrap();
            writeln!(text, "#ARTIST:stepdiff;").unwrap();
            writeln!(text, "#OFFSET:0.000;").unwrap();
            writeln!(text, "#BPMS:0.000={bpm:.3};").unwrap();
            writeln!(text, "#STOPS:;").unwrap();
            for label in 1..=config.k {
                let measures = rng.gen_range(config.min_measures..=config.max_measures);
                let class = CLASS_NAMES[(label as usize - 1).min(CLASS_NAMES.len() - 1)];
                writeln!(text, "#NOTES:\n     dance-single:\n     :\n     {class}:\n     {label}:\n     0,0,0,0,0:").unwrap();
                text.push_str(&level_text(label, measures, &mut rng));
            }
            SynthSong { song_id, text }
        })
        .collect()
}

/// Writes each song to `<dir>/<song_id>/<song_id>.sm` and returns the paths.
pub fn write_synth_pack(dir: &Path, songs: &[SynthSong]) -> std::io::Result<Vec<PathBuf>> {
    songs
        .iter()
        .map(|s| {
            let folder = dir.join(&s.song_id);
            std::fs::create_dir_all(&folder)?;
            let path = folder.join(format!("{}.sm", s.song_id));
            std::fs::write(&path, &s.text)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_density() {
        let songs = synth_songs(&SynthConfig {
            songs: 3,
            ..SynthConfig::default()
        });
        assert_eq!(songs.len(), 3);
        for s in &songs {
            let song = s.parse();
            assert_eq!(song.levels.len(), 4);
            for (i, level) in song.levels.iter().enumerate() {
                assert_eq!(level.meter, i as u32 + 1);
                let per_measure = level.measures[0].rows.len();
                assert_eq!(per_measure, DENSITY_GRIDS[i]);
            }
            let top = &song.levels[3];
            assert!(top.measures[0].rows[0].0.iter().filter(|c| c.is_step()).count() == 2);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_songs(&cfg), synth_songs(&cfg));
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(synth_songs(&cfg), synth_songs(&other));
    }
}
