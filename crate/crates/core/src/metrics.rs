//! Evaluation metrics, confusion matrices and aggregate reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::heads::cost;
use crate::pipeline::PairLabel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no records")]
    EmptyRecords,
    #[error("label {0} has no records")]
    EmptyClass(u32),
    #[error("label {label} outside 1..={k}")]
    LabelOutOfRange { label: u32, k: u32 },
    #[error("no pair has a strict order on both sides")]
    NoStrictPairs,
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("prediction {0} is not a strict order")]
    EqualPrediction(usize),
    #[error("correctness value {0} outside [0, 1]")]
    InvalidCorrectness(f64),
    #[error("confusion matrices disagree on the number of labels")]
    InconsistentK,
}

/// `(truth, prediction)` pairs over labels `1..=k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pairs: Vec<(u32, u32)>,
    pub k: u32,
}

impl EvalRecord {
    pub fn new(pairs: Vec<(u32, u32)>, k: u32) -> Result<Self, MetricsError> {
        for &(t, p) in &pairs {
            for label in [t, p] {
                if label < 1 || label > k {
                    return Err(MetricsError::LabelOutOfRange { label, k });
                }
            }
        }
        Ok(Self { pairs, k })
    }

    fn nonempty(&self) -> Result<(), MetricsError> {
        if self.pairs.is_empty() {
            Err(MetricsError::EmptyRecords)
        } else {
            Ok(())
        }
    }

    fn support(&self) -> Vec<usize> {
        let mut support = vec![0; self.k as usize];
        for &(t, _) in &self.pairs {
            support[t as usize - 1] += 1;
        }
        support
    }
}

/// Class-weighted mean absolute error: the mean over labels of each label's
/// mean absolute error.
pub fn wae(records: &EvalRecord) -> Result<f64, MetricsError> {
    let support = records.support();
    if let Some(empty) = support.iter().position(|&n| n == 0) {
        return Err(MetricsError::EmptyClass(empty as u32 + 1));
    }
    let mut per_class = vec![0.0; records.k as usize];
    for &(t, p) in &records.pairs {
        per_class[t as usize - 1] += cost(p, t) / support[t as usize - 1] as f64;
    }
    Ok(per_class.iter().sum::<f64>() / records.k as f64)
}

pub fn mae(records: &EvalRecord) -> Result<f64, MetricsError> {
    records.nonempty()?;
    Ok(records.pairs.iter().map(|&(t, p)| cost(p, t)).sum::<f64>() / records.pairs.len() as f64)
}

pub fn rmse(records: &EvalRecord) -> Result<f64, MetricsError> {
    records.nonempty()?;
    let mse = records.pairs.iter().map(|&(t, p)| cost(p, t).powi(2)).sum::<f64>() / records.pairs.len() as f64;
    Ok(mse.sqrt())
}

pub fn accuracy(records: &EvalRecord) -> Result<f64, MetricsError> {
    records.nonempty()?;
    Ok(records.pairs.iter().filter(|(t, p)| t == p).count() as f64 / records.pairs.len() as f64)
}

/// Macro-averaged recall over labels that occur in the records.
pub fn tpr(records: &EvalRecord) -> Result<f64, MetricsError> {
    records.nonempty()?;
    let support = records.support();
    let mut hits = vec![0usize; records.k as usize];
    for &(t, p) in &records.pairs {
        if t == p {
            hits[t as usize - 1] += 1;
        }
    }
    let mut recalls = Vec::new();
    for (i, (&h, &n)) in hits.iter().zip(&support).enumerate() {
        if n == 0 {
            log::warn!("label {} has no records; left out of the true positive rate", i + 1);
        } else {
            recalls.push(h as f64 / n as f64);
        }
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgreementMode {
    /// Only pairs ordered strictly on both sides count.
    StrictOnly,
    /// Three-way accuracy with `Equal` as its own label.
    Full,
}

pub fn agreement(predicted: &[PairLabel], truth: &[PairLabel], mode: AgreementMode) -> Result<f64, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    let considered: Vec<(PairLabel, PairLabel)> = predicted
        .iter()
        .zip(truth)
        .filter(|(p, t)| mode == AgreementMode::Full || (p.is_strict() && t.is_strict()))
        .map(|(&p, &t)| (p, t))
        .collect();
    if considered.is_empty() {
        return Err(match mode {
            AgreementMode::StrictOnly => MetricsError::NoStrictPairs,
            AgreementMode::Full => MetricsError::EmptyRecords,
        });
    }
    Ok(considered.iter().filter(|(p, t)| p == t).count() as f64 / considered.len() as f64)
}

/// Mean correctness of a model's strict orderings, where `r_a_less[i]` is
/// the share of judgments saying `a` is easier than `b` in pair `i`.
pub fn concordance_accuracy(model: &[PairLabel], r_a_less: &[f64]) -> Result<f64, MetricsError> {
    if model.len() != r_a_less.len() {
        return Err(MetricsError::LengthMismatch {
            expected: r_a_less.len(),
            actual: model.len(),
        });
    }
    if model.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let mut total = 0.0;
    for (i, (&order, &r)) in model.iter().zip(r_a_less).enumerate() {
        if !(0.0..=1.0).contains(&r) {
            return Err(MetricsError::InvalidCorrectness(r));
        }
        total += match order {
            PairLabel::ALess => r,
            PairLabel::BLess => 1.0 - r,
            PairLabel::Equal => return Err(MetricsError::EqualPrediction(i)),
        };
    }
    Ok(total / model.len() as f64)
}

/// Ranking pairs implied by every unordered pair of records.
pub fn record_pairs(records: &EvalRecord) -> (Vec<PairLabel>, Vec<PairLabel>) {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (i, &(ta, pa)) in records.pairs.iter().enumerate() {
        for &(tb, pb) in &records.pairs[i + 1..] {
            predicted.push(PairLabel::from_labels(pa, pb));
            truth.push(PairLabel::from_labels(ta, tb));
        }
    }
    (predicted, truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    Raw,
    CategoryNormalized,
}

/// `cells[truth - 1][prediction - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: u32,
    pub normalization: Normalization,
    pub cells: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    /// Row-major cells.
    pub fn row_major(&self) -> Vec<f64> {
        self.cells.iter().flatten().copied().collect()
    }
}

pub fn confusion(records: &EvalRecord, normalization: Normalization) -> ConfusionMatrix {
    let k = records.k as usize;
    let mut cells = vec![vec![0.0; k]; k];
    for &(t, p) in &records.pairs {
        cells[t as usize - 1][p as usize - 1] += 1.0;
    }
    if normalization == Normalization::CategoryNormalized {
        for row in &mut cells {
            let n: f64 = row.iter().sum();
            if n > 0.0 {
                row.iter_mut().for_each(|c| *c /= n);
            }
        }
    }
    ConfusionMatrix {
        k: records.k,
        normalization,
        cells,
    }
}

/// Element-wise mean of matrices that share `k`.
pub fn average_confusions(matrices: &[ConfusionMatrix]) -> Result<ConfusionMatrix, MetricsError> {
    let first = matrices.first().ok_or(MetricsError::EmptyRecords)?;
    if matrices.iter().any(|m| m.k != first.k) {
        return Err(MetricsError::InconsistentK);
    }
    let k = first.k as usize;
    let mut cells = vec![vec![0.0; k]; k];
    for m in matrices {
        for (row, src) in cells.iter_mut().zip(&m.cells) {
            for (c, s) in row.iter_mut().zip(src) {
                *c += s / matrices.len() as f64;
            }
        }
    }
    Ok(ConfusionMatrix {
        k: first.k,
        normalization: first.normalization,
        cells,
    })
}

/// All metrics of one evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub wae: f64,
    pub mae: f64,
    pub rmse: f64,
    pub accuracy: f64,
    pub tpr: f64,
    /// `None` when no pair is strictly ordered on both sides.
    pub agreement_strict: Option<f64>,
    pub agreement_full: f64,
}

pub fn metric_set(records: &EvalRecord) -> Result<MetricSet, MetricsError> {
    let (predicted, truth) = record_pairs(records);
    let agreement_strict = match agreement(&predicted, &truth, AgreementMode::StrictOnly) {
        Ok(a) => Some(a),
        Err(MetricsError::NoStrictPairs) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricSet {
        wae: wae(records)?,
        mae: mae(records)?,
        rmse: rmse(records)?,
        accuracy: accuracy(records)?,
        tpr: tpr(records)?,
        agreement_strict,
        agreement_full: agreement(&predicted, &truth, AgreementMode::Full)?,
    })
}

/// Names of the report columns, in [`MetricSet`] field order.
pub const METRIC_NAMES: [&str; 7] = [
    "wae",
    "mae",
    "rmse",
    "accuracy",
    "tpr",
    "agreement_strict",
    "agreement_full",
];

impl MetricSet {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "wae" => Some(self.wae),
            "mae" => Some(self.mae),
            "rmse" => Some(self.rmse),
            "accuracy" => Some(self.accuracy),
            "tpr" => Some(self.tpr),
            "agreement_strict" => self.agreement_strict,
            "agreement_full" => Some(self.agreement_full),
            _ => None,
        }
    }
}

/// Whether a larger value of the named metric is better.
pub fn higher_is_better(name: &str) -> bool {
    !matches!(name, "wae" | "mae" | "rmse")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std, n })
}

/// Two-sided p-value of the pooled-variance two-sample t-test. `None`
/// when either sample has fewer than two values.
pub fn t_test_p_value(a: &[f64], b: &[f64]) -> Option<f64> {
    let (sa, sb) = (mean_std(a)?, mean_std(b)?);
    if sa.n < 2 || sb.n < 2 {
        return None;
    }
    let df = (sa.n + sb.n - 2) as f64;
    let pooled = ((sa.n - 1) as f64 * sa.std.powi(2) + (sb.n - 1) as f64 * sb.std.powi(2)) / df;
    let se = (pooled * (1.0 / sa.n as f64 + 1.0 / sb.n as f64)).sqrt();
    let diff = sa.mean - sb.mean;
    if se == 0.0 {
        return Some(if diff == 0.0 { 1.0 } else { 0.0 });
    }
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(2.0 * (1.0 - dist.cdf((diff / se).abs())))
}

/// One cell of an aggregate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub mean: f64,
    pub std: f64,
    pub replicates: usize,
    /// Best mean of the column.
    pub best: bool,
    /// Not significantly worse than the best at the 5% level.
    pub underlined: bool,
}

/// Aggregate report: `columns[metric][method]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub significance_level: f64,
    pub columns: BTreeMap<String, BTreeMap<String, ReportCell>>,
}

/// Aggregates per-replicate metrics of several methods into mean ± std
/// cells, marking the best method of every column and underlining methods
/// whose gap to it is not significant at `alpha`.
pub fn aggregate_report(per_method: &BTreeMap<String, Vec<MetricSet>>, alpha: f64) -> AggregateReport {
    let mut columns = BTreeMap::new();
    for name in METRIC_NAMES {
        let samples: BTreeMap<&String, Vec<f64>> = per_method
            .iter()
            .map(|(m, sets)| (m, sets.iter().filter_map(|s| s.get(name)).collect::<Vec<_>>()))
            .filter(|(_, v)| !v.is_empty())
            .collect();
        let stats: BTreeMap<&String, MeanStd> = samples.iter().map(|(m, v)| (*m, mean_std(v).unwrap())).collect();
        let best = stats
            .iter()
            .min_by(|a, b| {
                let (x, y) = (a.1.mean, b.1.mean);
                if higher_is_better(name) {
                    y.total_cmp(&x)
                } else {
                    x.total_cmp(&y)
                }
            })
            .map(|(m, _)| *m);
        let mut column = BTreeMap::new();
        for (method, s) in &stats {
            let is_best = Some(*method) == best;
            let underlined = !is_best
                && best
                    .and_then(|b| t_test_p_value(&samples[method], &samples[b]))
                    .is_some_and(|p| p >= alpha);
            column.insert(
                (*method).clone(),
                ReportCell {
                    mean: s.mean,
                    std: s.std,
                    replicates: s.n,
                    best: is_best,
                    underlined,
                },
            );
        }
        columns.insert(name.to_string(), column);
    }
    AggregateReport {
        significance_level: alpha,
        columns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pairs: &[(u32, u32)], k: u32) -> EvalRecord {
        EvalRecord::new(pairs.to_vec(), k).unwrap()
    }

    #[test]
    fn wae_weights_classes() {
        let r = rec(&[(1, 1), (1, 2), (2, 2)], 2);
        assert!((wae(&r).unwrap() - 0.25).abs() < 1e-15);
        assert!((mae(&r).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wae(&rec(&[(1, 1)], 2)), Err(MetricsError::EmptyClass(2)));
    }

    #[test]
    fn standard_metrics() {
        let perfect = rec(&[(1, 1), (2, 2), (3, 3)], 3);
        assert_eq!(mae(&perfect).unwrap(), 0.0);
        assert_eq!(rmse(&perfect).unwrap(), 0.0);
        assert_eq!(accuracy(&perfect).unwrap(), 1.0);
        assert_eq!(tpr(&perfect).unwrap(), 1.0);
        let swapped = rec(&[(1, 2), (2, 1)], 2);
        assert_eq!(mae(&swapped).unwrap(), 1.0);
        assert_eq!(rmse(&swapped).unwrap(), 1.0);
        assert_eq!(accuracy(&swapped).unwrap(), 0.0);
        assert_eq!(tpr(&rec(&[(1, 1), (1, 1), (2, 1)], 2)).unwrap(), 0.5);
        assert_eq!(tpr(&rec(&[(1, 1), (3, 1)], 3)).unwrap(), 0.5);
        assert_eq!(mae(&rec(&[], 2)), Err(MetricsError::EmptyRecords));
        assert!(EvalRecord::new(vec![(0, 1)], 2).is_err());
    }

    #[test]
    fn agreement_modes() {
        use PairLabel::*;
        let truth = [ALess, BLess, ALess, ALess];
        let predicted = [ALess, BLess, BLess, Equal];
        assert!((agreement(&predicted, &truth, AgreementMode::StrictOnly).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(agreement(&predicted, &truth, AgreementMode::Full).unwrap(), 0.5);
        assert_eq!(agreement(&truth, &truth, AgreementMode::StrictOnly).unwrap(), 1.0);
        assert_eq!(agreement(&truth, &truth, AgreementMode::Full).unwrap(), 1.0);
        let equal = [Equal; 4];
        assert_eq!(
            agreement(&equal, &truth, AgreementMode::StrictOnly),
            Err(MetricsError::NoStrictPairs)
        );
        assert_eq!(agreement(&equal, &truth, AgreementMode::Full).unwrap(), 0.0);
    }

    #[test]
    fn concordance() {
        use PairLabel::*;
        assert_eq!(concordance_accuracy(&[ALess, BLess], &[1.0, 0.0]).unwrap(), 1.0);
        assert!((concordance_accuracy(&[ALess], &[0.6]).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(concordance_accuracy(&[BLess], &[1.0]).unwrap(), 0.0);
        assert_eq!(concordance_accuracy(&[Equal], &[1.0]), Err(MetricsError::EqualPrediction(0)));
    }

    #[test]
    fn confusion_matrices() {
        let perfect = confusion(&rec(&[(1, 1), (2, 2), (2, 2)], 2), Normalization::CategoryNormalized);
        assert_eq!(perfect.cells, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let constant = confusion(&rec(&[(1, 2), (2, 2), (2, 2)], 2), Normalization::Raw);
        assert_eq!(constant.cells, vec![vec![0.0, 1.0], vec![0.0, 2.0]]);
        let constant = confusion(&rec(&[(1, 2), (2, 2), (2, 2)], 2), Normalization::CategoryNormalized);
        let avg = average_confusions(&[perfect, constant]).unwrap();
        assert_eq!(avg.cells, vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert_eq!(avg.row_major(), vec![0.5, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn t_test_against_reference() {
        // Reference: scipy.stats.ttest_ind([1, 2, 3, 4], [3, 4, 5, 6]) -> p = 0.0709876...
        let p = t_test_p_value(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((p - 0.070_987_654_320_987_64).abs() < 1e-9, "{p}");
        assert!(t_test_p_value(&[1.0], &[2.0, 3.0]).is_none());
    }

    #[test]
    fn report_marks_best_and_underlines() {
        let set = |wae: f64| MetricSet {
            wae,
            mae: wae,
            rmse: wae,
            accuracy: 1.0 - wae,
            tpr: 1.0 - wae,
            agreement_strict: Some(1.0 - wae),
            agreement_full: 1.0 - wae,
        };
        let mut per_method = BTreeMap::new();
        per_method.insert("a".to_string(), vec![set(0.30), set(0.32), set(0.31)]);
        per_method.insert("b".to_string(), vec![set(0.31), set(0.33), set(0.30)]);
        per_method.insert("c".to_string(), vec![set(0.90), set(0.91), set(0.92)]);
        let report = aggregate_report(&per_method, 0.05);
        let wae_col = &report.columns["wae"];
        assert!(wae_col["a"].best);
        assert!(wae_col["b"].underlined);
        assert!(!wae_col["c"].underlined && !wae_col["c"].best);
        assert!(report.columns["accuracy"]["a"].best);
    }
}
