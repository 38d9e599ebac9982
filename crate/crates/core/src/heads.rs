//! Training targets, losses and label decoders for every compared method.
//!
//! Labels are 1-based (`1..=K`). Target vectors and model outputs are
//! 0-based slices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeadError {
    #[error("target entry {index} of candidate label {label} is zero where the prediction has mass")]
    ZeroTargetEntry { label: u32, index: usize },
    #[error("need at least two categories, got {0}")]
    TooFewCategories(u32),
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
}

/// Every compared predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pattern,
    Classification,
    Regression,
    NnRank,
    RedSvm,
    Laplace,
    Binomial,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Pattern,
        Method::Classification,
        Method::Regression,
        Method::NnRank,
        Method::RedSvm,
        Method::Laplace,
        Method::Binomial,
    ];

    pub const ORDINAL: [Method; 4] = [Method::NnRank, Method::RedSvm, Method::Laplace, Method::Binomial];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pattern => "pattern",
            Method::Classification => "classification",
            Method::Regression => "regression",
            Method::NnRank => "nnrank",
            Method::RedSvm => "redsvm",
            Method::Laplace => "laplace",
            Method::Binomial => "binomial",
        }
    }

    /// Width of the model output layer for `k` categories.
    pub fn output_dim(self, k: u32) -> usize {
        let k = k as usize;
        match self {
            Method::Pattern | Method::Classification | Method::Laplace => k,
            Method::Regression | Method::RedSvm => 1,
            Method::NnRank => k - 1,
            Method::Binomial => k + 4,
        }
    }

    pub fn is_sequence_model(self) -> bool {
        self != Method::Pattern
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HeadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| HeadError::UnknownMethod(s.to_string()))
    }
}

pub fn cost(predicted: u32, truth: u32) -> f64 {
    (predicted as f64 - truth as f64).abs()
}

/// `y - 1` ones followed by `K - y` zeros.
pub fn nnrank_target(y: u32, k: u32) -> Vec<f64> {
    (1..k).map(|i| if i < y { 1.0 } else { 0.0 }).collect()
}

/// One plus the largest threshold index whose probability reaches 0.5.
pub fn nnrank_decode(p: &[f64]) -> u32 {
    let crossed = p.iter().rposition(|&pi| pi >= 0.5).map_or(0, |i| i + 1);
    crossed as u32 + 1
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `+1` when threshold `k` (1-based) lies below the label, else `-1`.
pub fn redsvm_sign(k: u32, y: u32) -> f64 {
    if k < y {
        1.0
    } else {
        -1.0
    }
}

/// Logistic reduction loss: `sum_k log(1 + exp(-s_k (g - theta_k)))`.
pub fn redsvm_loss(g: f64, theta: &[f64], y: u32) -> f64 {
    theta
        .iter()
        .enumerate()
        .map(|(i, &t)| softplus(-redsvm_sign(i as u32 + 1, y) * (g - t)))
        .sum()
}

/// Gradient of [`redsvm_loss`] with respect to `g` and each threshold.
pub fn redsvm_loss_grad(g: f64, theta: &[f64], y: u32) -> (f64, Vec<f64>) {
    let mut dg = 0.0;
    let dtheta = theta
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let s = redsvm_sign(i as u32 + 1, y);
            let w = sigmoid(-s * (g - t));
            dg -= s * w;
            s * w
        })
        .collect();
    (dg, dtheta)
}

/// `1 + |{k : g > theta_k}|`.
pub fn redsvm_decode(g: f64, theta: &[f64]) -> u32 {
    1 + theta.iter().filter(|&&t| g - t > 0.0).count() as u32
}

/// Distance used to shape a soft target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distance {
    /// `|y - i|`, the Laplace target.
    Absolute,
    /// `(y - i)^2`, a discretized normal.
    Squared,
}

pub fn laplace_target(y: u32, k: u32, distance: Distance) -> Vec<f64> {
    let weights: Vec<f64> = (1..=k)
        .map(|i| {
            let d = (y as f64 - i as f64).abs();
            let phi = match distance {
                Distance::Absolute => d,
                Distance::Squared => d * d,
            };
            (-phi).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / z).collect()
}

/// Poisson-binomial parameters: `mu` trials succeed with `p1`, the other
/// `n - mu` with `p2`, giving mean `mu = y + 1` and unit variance over
/// `n = K + 3` trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialParams {
    pub n: u32,
    pub mu: u32,
    pub p1: f64,
    pub p2: f64,
}

pub fn binomial_params(y: u32, k: u32) -> BinomialParams {
    let n = k + 3;
    let mu = y + 1;
    let (nf, muf) = (n as f64, mu as f64);
    let rest = nf - muf;
    let base = muf / nf;
    // Both radicands are nonnegative whenever 2 <= mu <= n - 2.
    let a1 = (rest * rest / (nf * nf) - rest / (muf * nf)).max(0.0).sqrt();
    let a2 = (muf * muf / (nf * nf) - muf / (rest * nf)).max(0.0).sqrt();
    BinomialParams {
        n,
        mu,
        p1: base + a1,
        p2: base - a2,
    }
}

/// Pascal's triangle up to row `n`.
#[derive(Debug, Clone)]
pub struct BinomialTable {
    rows: Vec<Vec<f64>>,
}

impl BinomialTable {
    pub fn new(n: u32) -> Self {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n as usize + 1);
        for r in 0..=n as usize {
            let mut row = vec![1.0; r + 1];
            for c in 1..r {
                row[c] = rows[r - 1][c - 1] + rows[r - 1][c];
            }
            rows.push(row);
        }
        Self { rows }
    }

    pub fn choose(&self, n: u32, k: u32) -> f64 {
        self.rows[n as usize][k as usize]
    }
}

/// Poisson-binomial pmf over `0..=n`, as the convolution of two binomials.
pub fn binomial_target_with(params: &BinomialParams, table: &BinomialTable) -> Vec<f64> {
    let BinomialParams { n, mu, p1, p2 } = *params;
    let rest = n - mu;
    (0..=n)
        .map(|k| {
            let i0 = (k + mu).saturating_sub(n);
            let ik = k.min(mu);
            (i0..=ik)
                .map(|i| {
                    let j = k - i;
                    table.choose(mu, i)
                        * p1.powi(i as i32)
                        * (1.0 - p1).powi((mu - i) as i32)
                        * table.choose(rest, j)
                        * p2.powi(j as i32)
                        * (1.0 - p2).powi((rest - j) as i32)
                })
                .sum()
        })
        .collect()
}

pub fn binomial_target(params: &BinomialParams) -> Vec<f64> {
    binomial_target_with(params, &BinomialTable::new(params.n))
}

/// Argmin over candidate labels of the cross-entropy `-sum f_i log t_i`.
/// `targets[y - 1]` is the target of label `y`. Ties go to the smaller
/// label.
pub fn softlabel_decode(f: &[f64], targets: &[Vec<f64>]) -> Result<u32, HeadError> {
    let mut best = (f64::INFINITY, 1u32);
    for (y, t) in targets.iter().enumerate() {
        let label = y as u32 + 1;
        let mut ce = 0.0;
        for (i, (&fi, &ti)) in f.iter().zip(t).enumerate() {
            if fi > 0.0 {
                if ti <= 0.0 {
                    return Err(HeadError::ZeroTargetEntry { label, index: i });
                }
                ce -= fi * ti.ln();
            }
        }
        if ce < best.0 {
            best = (ce, label);
        }
    }
    Ok(best.1)
}

/// Argmax with ties to the smaller label.
pub fn classification_decode(p: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best as u32 + 1
}

/// Rounds half away from zero, then clamps to `1..=K`.
pub fn regression_decode(value: f64, k: u32) -> u32 {
    let r = value.round();
    if r.is_nan() || r < 1.0 {
        1
    } else if r > k as f64 {
        k
    } else {
        r as u32
    }
}

/// Per-label soft targets of the soft-label methods, precomputed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTargets {
    pub targets: Vec<Vec<f64>>,
}

impl SoftTargets {
    pub fn laplace(k: u32) -> Self {
        Self {
            targets: (1..=k).map(|y| laplace_target(y, k, Distance::Absolute)).collect(),
        }
    }

    pub fn binomial(k: u32) -> Self {
        let table = BinomialTable::new(k + 3);
        Self {
            targets: (1..=k)
                .map(|y| binomial_target_with(&binomial_params(y, k), &table))
                .collect(),
        }
    }

    pub fn for_label(&self, y: u32) -> &[f64] {
        &self.targets[y as usize - 1]
    }
}

/// Method-specific training target.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalTarget {
    pub method: Method,
    pub payload: Vec<f64>,
}

impl OrdinalTarget {
    pub fn new(method: Method, y: u32, k: u32) -> Self {
        let payload = match method {
            Method::Pattern | Method::Classification => {
                (1..=k).map(|i| if i == y { 1.0 } else { 0.0 }).collect()
            }
            Method::Regression => vec![y as f64],
            Method::NnRank => nnrank_target(y, k),
            Method::RedSvm => (1..k).map(|i| redsvm_sign(i, y)).collect(),
            Method::Laplace => laplace_target(y, k, Distance::Absolute),
            Method::Binomial => binomial_target(&binomial_params(y, k)),
        };
        Self { method, payload }
    }
}

/// Turns an (ensemble-averaged) head output into a label.
///
/// `output` holds probabilities for the probabilistic heads, and the scalar
/// score for regression and RED-SVM. `thresholds` is only read for RED-SVM.
pub fn decode(
    method: Method,
    output: &[f64],
    k: u32,
    thresholds: &[f64],
    soft: Option<&SoftTargets>,
) -> Result<u32, HeadError> {
    Ok(match method {
        Method::Pattern | Method::Classification => classification_decode(output),
        Method::Regression => regression_decode(output[0], k),
        Method::NnRank => nnrank_decode(output),
        Method::RedSvm => redsvm_decode(output[0], thresholds),
        Method::Laplace => match soft {
            Some(s) => softlabel_decode(output, &s.targets)?,
            None => softlabel_decode(output, &SoftTargets::laplace(k).targets)?,
        },
        Method::Binomial => match soft {
            Some(s) => softlabel_decode(output, &s.targets)?,
            None => softlabel_decode(output, &SoftTargets::binomial(k).targets)?,
        },
    })
}
