//! The PATTERN baseline: hand-made chart statistics fed to a small MLP.
//!
//! The statistics stand in for the pattern counts of the original baseline,
//! which are not published in full. The list is fixed:
//!
//! | index | feature                                                    |
//! |-------|------------------------------------------------------------|
//! | 0     | chart duration in seconds                                  |
//! | 1     | number of arrows stepped on                                |
//! | 2, 3  | mean and max arrows per second over 1 s windows            |
//! | 4..10 | step rows whose finest grid is 1/4, 1/8, 1/12, 1/16, 1/24, 1/32 |
//! | 10    | jumps (rows with two or more steps)                        |
//! | 11    | holds                                                      |
//! | 12    | rolls                                                      |
//! | 13    | mines                                                      |
//! | 14    | longest stream (16th-or-faster steps, gaps under 0.25 s)   |
//! | 15    | mean seconds between step rows                             |

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::encoder::{Allocator, Init};
use super::tensor::{linear, linear_backward};
use crate::features::{note_level, NOTE_GRIDS};
use crate::sm::{row_times, HoldKind, Level, NoteSymbol, SongHeader, TempoMap};

pub const PATTERN_DIM: usize = 16;
pub const PATTERN_HIDDEN: usize = 32;

const STREAM_MAX_GAP_BEATS: f64 = 0.25;
const STREAM_MAX_GAP_SECONDS: f64 = 0.25;

pub fn pattern_features(level: &Level, header: &SongHeader) -> [f64; PATTERN_DIM] {
    let times = row_times(level, header);
    let tempo = TempoMap::new(header);
    let start = times.first().map_or(0.0, |t| t.seconds);
    let duration = (tempo.seconds_at(4.0 * level.measures.len() as f64) - start).max(0.0);

    let mut f = [0.0; PATTERN_DIM];
    f[0] = duration;

    let windows = duration.ceil().max(1.0) as usize;
    let mut per_second = vec![0.0; windows];
    let mut step_rows: Vec<(f64, f64)> = Vec::new();
    let mut stream = 0usize;
    let mut longest = 0usize;

    for ((_, r, s, row), time) in level.rows().zip(&times) {
        let steps = row.0.iter().filter(|sym| sym.is_step()).count();
        f[13] += row.0.iter().filter(|sym| **sym == NoteSymbol::Mine).count() as f64;
        if steps == 0 {
            continue;
        }
        f[1] += steps as f64;
        let w = (((time.seconds - start).max(0.0)) as usize).min(windows - 1);
        per_second[w] += steps as f64;
        let level_denominator = note_level(r, s);
        if let Some(class) = NOTE_GRIDS.iter().position(|g| g % level_denominator == 0) {
            f[4 + class] += 1.0;
        }
        if steps >= 2 {
            f[10] += 1.0;
        }
        stream = match step_rows.last() {
            Some(&(beat, seconds))
                if time.beat - beat <= STREAM_MAX_GAP_BEATS + 1e-9
                    && time.seconds - seconds < STREAM_MAX_GAP_SECONDS =>
            {
                stream + 1
            }
            _ => 1,
        };
        longest = longest.max(stream);
        step_rows.push((time.beat, time.seconds));
    }
    f[2] = per_second.iter().sum::<f64>() / windows as f64;
    f[3] = per_second.iter().copied().fold(0.0, f64::max);
    f[11] = level.holds.iter().filter(|h| h.kind == HoldKind::Hold).count() as f64;
    f[12] = level.holds.iter().filter(|h| h.kind == HoldKind::Roll).count() as f64;
    f[14] = longest as f64;
    if step_rows.len() > 1 {
        let span = step_rows.last().unwrap().1 - step_rows[0].1;
        f[15] = span / (step_rows.len() - 1) as f64;
    }
    f
}

/// Per-feature z-scoring fitted on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Three dense layers: input -> 32 -> 32 -> output, ReLU between.
#[derive(Debug, Clone)]
pub(crate) struct MlpLayout {
    pub input_dim: usize,
    pub out_dim: usize,
    w: [Range<usize>; 3],
    b: [Range<usize>; 3],
    pub total: usize,
}

pub(crate) struct MlpCache {
    input: Vec<f64>,
    pre: [Vec<f64>; 2],
    act: [Vec<f64>; 2],
    pub output: Vec<f64>,
}

impl MlpLayout {
    pub fn new(input_dim: usize, out_dim: usize) -> Self {
        let h = PATTERN_HIDDEN;
        let mut a = Allocator::new();
        let w0 = a.take(input_dim * h);
        let b0 = a.take(h);
        let w1 = a.take(h * h);
        let b1 = a.take(h);
        let w2 = a.take(h * out_dim);
        let b2 = a.take(out_dim);
        Self {
            input_dim,
            out_dim,
            w: [w0, w1, w2],
            b: [b0, b1, b2],
            total: a.total(),
        }
    }

    fn dims(&self) -> [(usize, usize); 3] {
        let h = PATTERN_HIDDEN;
        [(self.input_dim, h), (h, h), (h, self.out_dim)]
    }

    pub fn init_plan(&self) -> Vec<(Range<usize>, Init)> {
        self.dims()
            .iter()
            .enumerate()
            .flat_map(|(i, &(fan_in, fan_out))| {
                [
                    (self.w[i].clone(), Init::Xavier { fan_in, fan_out }),
                    (self.b[i].clone(), Init::Zeros),
                ]
            })
            .collect()
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> MlpCache {
        let dims = self.dims();
        let mut pre: [Vec<f64>; 2] = Default::default();
        let mut act: [Vec<f64>; 2] = Default::default();
        let mut h = x.to_vec();
        for i in 0..2 {
            let (inn, out) = dims[i];
            let z = linear(&h, 1, inn, &params[self.w[i].clone()], &params[self.b[i].clone()], out);
            h = z.iter().map(|v| v.max(0.0)).collect();
            pre[i] = z;
            act[i] = h.clone();
        }
        let (inn, out) = dims[2];
        let output = linear(&h, 1, inn, &params[self.w[2].clone()], &params[self.b[2].clone()], out);
        MlpCache {
            input: x.to_vec(),
            pre,
            act,
            output,
        }
    }

    pub fn backward(&self, params: &[f64], cache: &MlpCache, d_output: &[f64], grads: &mut [f64]) {
        let dims = self.dims();
        let mut dy = d_output.to_vec();
        for i in (0..3).rev() {
            let (inn, out) = dims[i];
            let x = if i == 0 { &cache.input } else { &cache.act[i - 1] };
            let (dw, db) = super::encoder::split_two(grads, self.w[i].clone(), self.b[i].clone());
            let dx = linear_backward(x, &dy, 1, inn, out, &params[self.w[i].clone()], dw, db, i > 0);
            if let Some(mut dx) = dx {
                for (g, &z) in dx.iter_mut().zip(&cache.pre[i - 1]) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
                dy = dx;
            }
        }
    }
}
