//! Overall and fairness metrics over labeled prediction records.
//!
//! Overall: macro F1 for expression recognition, mean per-AU F1 for AU
//! detection, mean concordance for VA estimation. Fairness, per demographic
//! attribute: EOP (mean pairwise distance between subgroup error-rate
//! matrices), EOD (per-AU true-positive-rate gap across subgroups) and fCCC
//! (mean per-subgroup concordance).
//!
//! All reductions run in a fixed order (subgroups sorted by label) so
//! reports are bit-reproducible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{ccc, CccBreakdown};
use crate::record::{Attribute, SampleRecord};
use crate::relatedness::{ActionUnit, Expression};

/// EOP/EOD scores at or below this value count as fair.
pub const FAIRNESS_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty input")]
    EmptyInput,
    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("class id {id} out of range for {n_classes} classes")]
    ClassOutOfRange { id: usize, n_classes: usize },
    #[error("active AU set is empty")]
    EmptyActiveSet,
    #[error("matrix shapes differ: {left}x{left} vs {right}x{right}")]
    ShapeMismatch { left: usize, right: usize },
    #[error("need at least 2 subgroups with usable records, found {found}")]
    NotEnoughSubgroups { found: usize },
    #[error("no AU has defined true-positive rates in at least 2 subgroups")]
    NoDefinedAus,
    #[error("need at least {needed} VA-labeled records with predictions, got {got}")]
    InsufficientVaData { needed: usize, got: usize },
}

// ---------------------------------------------------------------------------
// F1 scores
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroF1 {
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
}

/// Macro-averaged F1 over `n_classes` classes.
///
/// A class with no true or predicted occurrences contributes an F1 of 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<MacroF1, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch { left: preds.len(), right: labels.len() });
    }
    if preds.is_empty() || n_classes == 0 {
        return Err(MetricError::EmptyInput);
    }
    let mut tp = vec![0u64; n_classes];
    let mut fp = vec![0u64; n_classes];
    let mut fn_ = vec![0u64; n_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= n_classes {
            return Err(MetricError::ClassOutOfRange { id: p, n_classes });
        }
        if y >= n_classes {
            return Err(MetricError::ClassOutOfRange { id: y, n_classes });
        }
        if p == y {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let per_class: Vec<f64> =
        (0..n_classes).map(|c| binary_f1(tp[c], fp[c], fn_[c])).collect();
    let macro_f1 = per_class.iter().sum::<f64>() / n_classes as f64;
    debug_assert!((0.0..=1.0).contains(&macro_f1));
    Ok(MacroF1 { macro_f1, per_class })
}

/// `2 TP / (2 TP + FP + FN)`, defined as 0 for an empty denominator.
fn binary_f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuF1 {
    pub mean: f64,
    /// `(code, f1)` per active AU, ascending code order.
    pub per_au: Vec<(u8, f64)>,
}

/// Mean binary F1 on the positive class over the active AUs.
///
/// Labels carry a per-AU presence mask; a sample contributes to an AU's
/// counts only when that AU was annotated.
pub fn mean_au_f1(
    preds: &[[bool; ActionUnit::COUNT]],
    labels: &[crate::record::AuLabelSet],
    active: &[ActionUnit],
) -> Result<AuF1, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch { left: preds.len(), right: labels.len() });
    }
    if active.is_empty() {
        return Err(MetricError::EmptyActiveSet);
    }
    let mut per_au = Vec::with_capacity(active.len());
    for &au in active {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        for (pred, label) in preds.iter().zip(labels) {
            let Some(y) = label.value(au) else { continue };
            let p = pred[au.index()];
            match (p, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        per_au.push((au.code(), binary_f1(tp, fp, fn_)));
    }
    let mean = per_au.iter().map(|(_, f)| f).sum::<f64>() / per_au.len() as f64;
    debug_assert!((0.0..=1.0).contains(&mean));
    Ok(AuF1 { mean, per_au })
}

// ---------------------------------------------------------------------------
// Confusion matrices
// ---------------------------------------------------------------------------

/// Square count matrix; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix { n: n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn from_pairs(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Self, MetricError> {
        if preds.len() != labels.len() {
            return Err(MetricError::LengthMismatch { left: preds.len(), right: labels.len() });
        }
        let mut cm = ConfusionMatrix::new(n_classes);
        for (&p, &y) in preds.iter().zip(labels) {
            if p >= n_classes {
                return Err(MetricError::ClassOutOfRange { id: p, n_classes });
            }
            if y >= n_classes {
                return Err(MetricError::ClassOutOfRange { id: y, n_classes });
            }
            cm.add(y, p);
        }
        Ok(cm)
    }

    pub fn add(&mut self, true_class: usize, predicted_class: usize) {
        self.counts[true_class * self.n + predicted_class] += 1;
    }

    pub fn count(&self, true_class: usize, predicted_class: usize) -> u64 {
        self.counts[true_class * self.n + predicted_class]
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Row-normalized (error-rate) view. Rows with no samples become
    /// all-zero rows and are reported.
    pub fn row_normalized(&self) -> (SquareMatrix, Vec<usize>) {
        let mut values = vec![0.0; self.n * self.n];
        let mut zero_rows = Vec::new();
        for i in 0..self.n {
            let row = &self.counts[i * self.n..(i + 1) * self.n];
            let sum: u64 = row.iter().sum();
            if sum == 0 {
                zero_rows.push(i);
            } else {
                for (j, &c) in row.iter().enumerate() {
                    values[i * self.n + j] = c as f64 / sum as f64;
                }
            }
        }
        (SquareMatrix { n: self.n, values }, zero_rows)
    }
}

/// Dense square matrix of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SquareMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for row in rows {
            assert_eq!(row.len(), n, "rows must form a square matrix");
            values.extend_from_slice(row);
        }
        SquareMatrix { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Mean absolute deviation between two square matrices:
/// `sum |a - b| / n^2`.
pub fn mad(a: &SquareMatrix, b: &SquareMatrix) -> Result<f64, MetricError> {
    if a.n != b.n {
        return Err(MetricError::ShapeMismatch { left: a.n, right: b.n });
    }
    let sum: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / (a.n * a.n) as f64)
}

// ---------------------------------------------------------------------------
// Subgroup partitioning
// ---------------------------------------------------------------------------

/// Record indices grouped by the value of one demographic attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgroupPartition {
    pub attribute: Attribute,
    /// Subgroup label -> record indices, ordered by label.
    pub groups: BTreeMap<String, Vec<usize>>,
    /// Indices of records without a value for the attribute.
    pub missing: Vec<usize>,
}

pub fn partition_by_attribute(records: &[SampleRecord], attribute: Attribute) -> SubgroupPartition {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut missing = Vec::new();
    for (i, record) in records.iter().enumerate() {
        match record.attribute_value(attribute) {
            Some(value) => groups.entry(value.to_string()).or_default().push(i),
            None => missing.push(i),
        }
    }
    SubgroupPartition { attribute, groups, missing }
}

// ---------------------------------------------------------------------------
// Fairness: EOP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EopSubgroup {
    pub records: usize,
    /// True classes absent from the subgroup (all-zero confusion rows).
    pub zero_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMad {
    pub a: String,
    pub b: String,
    pub mad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EopReport {
    pub attribute: Attribute,
    /// Mean pairwise MAD between subgroup error-rate matrices.
    pub score: f64,
    pub fair: bool,
    pub per_subgroup: BTreeMap<String, EopSubgroup>,
    pub pairwise: Vec<PairwiseMad>,
    pub excluded_missing_attribute: usize,
}

/// Equality of opportunity for expression recognition.
///
/// Uses records carrying both an expression label and an expression
/// prediction; needs at least two subgroups with such records.
pub fn eop(records: &[SampleRecord], attribute: Attribute) -> Result<EopReport, MetricError> {
    let partition = partition_by_attribute(records, attribute);
    let mut normalized: Vec<(String, SquareMatrix)> = Vec::new();
    let mut per_subgroup = BTreeMap::new();

    for (label, indices) in &partition.groups {
        let mut cm = ConfusionMatrix::new(Expression::COUNT);
        let mut used = 0;
        for &i in indices {
            let record = &records[i];
            let (Some(y), Some(p)) = (record.expr_label(), record.expr_prediction()) else {
                continue;
            };
            cm.add(y.index(), p.class().index());
            used += 1;
        }
        if used == 0 {
            continue;
        }
        let (matrix, zero_rows) = cm.row_normalized();
        per_subgroup.insert(label.clone(), EopSubgroup { records: used, zero_rows });
        normalized.push((label.clone(), matrix));
    }

    if normalized.len() < 2 {
        return Err(MetricError::NotEnoughSubgroups { found: normalized.len() });
    }

    let mut pairwise = Vec::new();
    for i in 0..normalized.len() {
        for j in i + 1..normalized.len() {
            let d = mad(&normalized[i].1, &normalized[j].1).expect("same shape");
            pairwise.push(PairwiseMad {
                a: normalized[i].0.clone(),
                b: normalized[j].0.clone(),
                mad: d,
            });
        }
    }
    let score = pairwise.iter().map(|p| p.mad).sum::<f64>() / pairwise.len() as f64;
    debug_assert!((0.0..=1.0).contains(&score));
    Ok(EopReport {
        attribute,
        score,
        fair: score <= FAIRNESS_THRESHOLD,
        per_subgroup,
        pairwise,
        excluded_missing_attribute: partition.missing.len(),
    })
}

// ---------------------------------------------------------------------------
// Fairness: EOD
// ---------------------------------------------------------------------------

/// True-positive rate of one AU over the given records.
///
/// `None` when the records contain no positive labels for the AU
/// (an undefined rate, not an error).
pub fn subgroup_tpr(records: &[SampleRecord], indices: &[usize], au: ActionUnit) -> Option<f64> {
    let mut tp = 0u64;
    let mut positives = 0u64;
    for &i in indices {
        let record = &records[i];
        let (Some(labels), Some(preds)) = (record.au_labels(), record.au_predictions()) else {
            continue;
        };
        if labels.value(au) == Some(true) {
            positives += 1;
            if preds.thresholded()[au.index()] {
                tp += 1;
            }
        }
    }
    (positives > 0).then(|| tp as f64 / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuTprGap {
    pub au: u8,
    /// Max minus min TPR over subgroups with a defined rate.
    pub gap: f64,
    pub tprs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EodReport {
    pub attribute: Attribute,
    /// Mean TPR gap over the retained AUs.
    pub score: f64,
    pub fair: bool,
    pub per_au: Vec<AuTprGap>,
    /// AUs with a defined TPR in fewer than two subgroups.
    pub skipped_aus: Vec<u8>,
    pub excluded_missing_attribute: usize,
}

/// Equal opportunity difference for AU detection.
pub fn eod(
    records: &[SampleRecord],
    attribute: Attribute,
    active: &[ActionUnit],
) -> Result<EodReport, MetricError> {
    if active.is_empty() {
        return Err(MetricError::EmptyActiveSet);
    }
    let partition = partition_by_attribute(records, attribute);
    // subgroups usable for EOD: at least one record with AU labels + predictions
    let groups: Vec<(&String, &Vec<usize>)> = partition
        .groups
        .iter()
        .filter(|(_, indices)| {
            indices.iter().any(|&i| {
                records[i].au_labels().is_some() && records[i].au_predictions().is_some()
            })
        })
        .collect();
    if groups.len() < 2 {
        return Err(MetricError::NotEnoughSubgroups { found: groups.len() });
    }

    let mut per_au = Vec::new();
    let mut skipped_aus = Vec::new();
    for &au in active {
        let mut tprs = BTreeMap::new();
        for (label, indices) in &groups {
            if let Some(tpr) = subgroup_tpr(records, indices, au) {
                tprs.insert((*label).clone(), tpr);
            }
        }
        if tprs.len() < 2 {
            skipped_aus.push(au.code());
            continue;
        }
        let max = tprs.values().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = tprs.values().cloned().fold(f64::INFINITY, f64::min);
        per_au.push(AuTprGap { au: au.code(), gap: max - min, tprs });
    }
    if per_au.is_empty() {
        return Err(MetricError::NoDefinedAus);
    }
    let score = per_au.iter().map(|g| g.gap).sum::<f64>() / per_au.len() as f64;
    debug_assert!((0.0..=1.0).contains(&score));
    Ok(EodReport {
        attribute,
        score,
        fair: score <= FAIRNESS_THRESHOLD,
        per_au,
        skipped_aus,
        excluded_missing_attribute: partition.missing.len(),
    })
}

// ---------------------------------------------------------------------------
// VA concordance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallCcc {
    /// Mean of the valence and arousal coefficients.
    pub ccc: f64,
    pub valence: CccBreakdown,
    pub arousal: CccBreakdown,
    pub records: usize,
}

fn va_pairs(records: &[SampleRecord], indices: impl Iterator<Item = usize>) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut pv = Vec::new();
    let mut tv = Vec::new();
    let mut pa = Vec::new();
    let mut ta = Vec::new();
    for i in indices {
        let record = &records[i];
        let (Some(label), Some(pred)) = (record.va_label(), record.va_prediction()) else {
            continue;
        };
        pv.push(pred.valence);
        tv.push(label.valence);
        pa.push(pred.arousal);
        ta.push(label.arousal);
    }
    (pv, tv, pa, ta)
}

/// Mean concordance of valence and arousal over all VA-labeled records.
pub fn overall_ccc(records: &[SampleRecord]) -> Result<OverallCcc, MetricError> {
    let (pv, tv, pa, ta) = va_pairs(records, 0..records.len());
    if pv.len() < 2 {
        return Err(MetricError::InsufficientVaData { needed: 2, got: pv.len() });
    }
    let valence = ccc(&pv, &tv).expect("length checked");
    let arousal = ccc(&pa, &ta).expect("length checked");
    let score = 0.5 * (valence.ccc + arousal.ccc);
    debug_assert!((-1.0..=1.0).contains(&score));
    Ok(OverallCcc { ccc: score, valence, arousal, records: pv.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupCcc {
    pub records: usize,
    pub ccc_valence: f64,
    pub ccc_arousal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcccReport {
    pub attribute: Attribute,
    /// `(1 / 2|G|) * sum_g (ccc_v^g + ccc_a^g)` over the included subgroups.
    pub score: f64,
    pub per_subgroup: BTreeMap<String, SubgroupCcc>,
    /// Subgroups excluded for having fewer than two usable records.
    pub excluded_subgroups: Vec<String>,
    pub excluded_missing_attribute: usize,
}

/// Fairness CCC: mean per-subgroup concordance for VA estimation.
pub fn fccc(records: &[SampleRecord], attribute: Attribute) -> Result<FcccReport, MetricError> {
    let partition = partition_by_attribute(records, attribute);
    let mut per_subgroup = BTreeMap::new();
    let mut excluded_subgroups = Vec::new();
    let mut sum = 0.0;
    for (label, indices) in &partition.groups {
        let (pv, tv, pa, ta) = va_pairs(records, indices.iter().copied());
        if pv.len() < 2 {
            excluded_subgroups.push(label.clone());
            continue;
        }
        let v = ccc(&pv, &tv).expect("length checked");
        let a = ccc(&pa, &ta).expect("length checked");
        sum += v.ccc + a.ccc;
        per_subgroup.insert(
            label.clone(),
            SubgroupCcc { records: pv.len(), ccc_valence: v.ccc, ccc_arousal: a.ccc },
        );
    }
    if per_subgroup.is_empty() {
        return Err(MetricError::InsufficientVaData { needed: 2, got: 0 });
    }
    let score = sum / (2.0 * per_subgroup.len() as f64);
    debug_assert!((-1.0..=1.0).contains(&score));
    Ok(FcccReport {
        attribute,
        score,
        per_subgroup,
        excluded_subgroups,
        excluded_missing_attribute: partition.missing.len(),
    })
}

/// One fairness metric outcome, tagged by metric name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "lowercase")]
pub enum FairnessReport {
    Eop(EopReport),
    Eod(EodReport),
    Fccc(FcccReport),
}

impl FairnessReport {
    pub fn score(&self) -> f64 {
        match self {
            FairnessReport::Eop(r) => r.score,
            FairnessReport::Eod(r) => r.score,
            FairnessReport::Fccc(r) => r.score,
        }
    }

    pub fn attribute(&self) -> Attribute {
        match self {
            FairnessReport::Eop(r) => r.attribute,
            FairnessReport::Eod(r) => r.attribute,
            FairnessReport::Fccc(r) => r.attribute,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{AuActivations, VaPair};
    use crate::record::{AuLabelSet, Demographics, ExprId, ExprPrediction, Labels, Predictions};

    fn au(code: u8) -> ActionUnit {
        ActionUnit::from_code(code).unwrap()
    }

    #[test]
    fn macro_f1_perfect_predictions() {
        let labels: Vec<usize> = (0..70).map(|i| i % 7).collect();
        let r = macro_f1(&labels, &labels, 7).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert!(r.per_class.iter().all(|&f| f == 1.0));
    }

    #[test]
    fn macro_f1_single_present_class() {
        let labels = vec![2usize; 10];
        let r = macro_f1(&labels, &labels, 7).unwrap();
        assert_eq!(r.per_class[2], 1.0);
        assert_eq!(r.per_class[0], 0.0);
        assert!((r.macro_f1 - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn macro_f1_matches_counting_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(59);
        for _ in 0..20 {
            let n = 200;
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..7)).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..7)).collect();
            let got = macro_f1(&preds, &labels, 7).unwrap();

            // oracle: literal TP/FP/FN counting with precision/recall
            let mut expected = 0.0;
            for c in 0..7 {
                let tp = preds.iter().zip(&labels).filter(|&(&p, &y)| p == c && y == c).count() as f64;
                let fp = preds.iter().zip(&labels).filter(|&(&p, &y)| p == c && y != c).count() as f64;
                let fnn = preds.iter().zip(&labels).filter(|&(&p, &y)| p != c && y == c).count() as f64;
                let f1 = if tp + fp + fnn == 0.0 {
                    0.0
                } else {
                    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
                    let rec = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
                    if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 }
                };
                expected += f1;
            }
            expected /= 7.0;
            assert!((got.macro_f1 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_au_f1_perfect_and_zero_recall() {
        let labels: Vec<AuLabelSet> = (0..10)
            .map(|i| AuLabelSet::full(std::array::from_fn(|j| (i + j) % 3 == 0)))
            .collect();
        let preds: Vec<[bool; 17]> = labels.iter().map(|l| *l.values_dense()).collect();
        let r = mean_au_f1(&preds, &labels, &ActionUnit::ALL).unwrap();
        assert_eq!(r.mean, 1.0);

        let all_zero = vec![[false; 17]; 10];
        let r = mean_au_f1(&all_zero, &labels, &ActionUnit::ALL).unwrap();
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn mean_au_f1_respects_mask() {
        // one sample, AU1 mispredicted but unknown -> ignored
        let labels = vec![AuLabelSet::from_codes(&[2], Some(&[2])).unwrap()];
        let mut pred = [false; 17];
        pred[au(1).index()] = true; // unknown, must not count as FP
        pred[au(2).index()] = true;
        let r = mean_au_f1(&[pred], &labels, &[au(1), au(2)]).unwrap();
        assert_eq!(r.per_au, vec![(1, 0.0), (2, 1.0)]);
    }

    #[test]
    fn row_normalization_examples() {
        let mut cm = ConfusionMatrix::new(3);
        for i in 0..3 {
            cm.add(i, i);
        }
        let (m, zero_rows) = cm.row_normalized();
        assert!(zero_rows.is_empty());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }

        let mut cm = ConfusionMatrix::new(3);
        cm.add(0, 0);
        cm.add(0, 0);
        cm.add(0, 1);
        cm.add(0, 1);
        let (m, zero_rows) = cm.row_normalized();
        assert_eq!(m.get(0, 0), 0.5);
        assert_eq!(m.get(0, 1), 0.5);
        assert_eq!(zero_rows, vec![1, 2]);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn mad_examples() {
        let identity = SquareMatrix::from_rows(
            &(0..7).map(|i| (0..7).map(|j| (i == j) as u8 as f64).collect()).collect::<Vec<_>>(),
        );
        assert_eq!(mad(&identity, &identity).unwrap(), 0.0);

        // shift one row of the identity by one column: two cells differ by 1
        let shifted = SquareMatrix::from_rows(
            &(0..7)
                .map(|i| {
                    (0..7)
                        .map(|j| {
                            let target = if i == 3 { 4 } else { i };
                            (j == target) as u8 as f64
                        })
                        .collect()
                })
                .collect::<Vec<_>>(),
        );
        let d = mad(&identity, &shifted).unwrap();
        assert!((d - 2.0 / 49.0).abs() < 1e-15);
        assert_eq!(mad(&identity, &shifted).unwrap(), mad(&shifted, &identity).unwrap());
    }

    fn expr_record(id: &str, gender: &str, label: Expression, pred: Expression) -> SampleRecord {
        let mut r = SampleRecord::new(id);
        r.demographics = Some(Demographics { gender: Some(gender.into()), ..Default::default() });
        r.labels = Some(Labels { expr: Some(ExprId(label)), ..Default::default() });
        r.predictions = Some(Predictions {
            expr: Some(ExprPrediction::ClassId(ExprId(pred))),
            ..Default::default()
        });
        r
    }

    #[test]
    fn eop_zero_for_identical_subgroups() {
        let mut records = Vec::new();
        for g in ["a", "b", "c"] {
            for i in 0..20 {
                let label = Expression::from_index(i % 7).unwrap();
                let pred = Expression::from_index((i + 1) % 7).unwrap();
                records.push(expr_record(&format!("{g}{i}"), g, label, pred));
            }
        }
        let r = eop(&records, Attribute::Gender).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(r.fair);
        assert_eq!(r.pairwise.len(), 3);
    }

    #[test]
    fn eop_two_subgroups_reduces_to_single_mad() {
        let mut records = Vec::new();
        for i in 0..30 {
            let label = Expression::from_index(i % 7).unwrap();
            records.push(expr_record(&format!("a{i}"), "a", label, label));
        }
        for i in 0..30 {
            let label = Expression::from_index(i % 7).unwrap();
            let pred = Expression::from_index((i + i / 7) % 7).unwrap();
            records.push(expr_record(&format!("b{i}"), "b", label, pred));
        }
        let r = eop(&records, Attribute::Gender).unwrap();
        assert_eq!(r.pairwise.len(), 1);
        assert_eq!(r.score, r.pairwise[0].mad);
    }

    #[test]
    fn eop_needs_two_subgroups() {
        let records: Vec<SampleRecord> = (0..5)
            .map(|i| expr_record(&i.to_string(), "only", Expression::Fear, Expression::Fear))
            .collect();
        assert!(matches!(
            eop(&records, Attribute::Gender),
            Err(MetricError::NotEnoughSubgroups { found: 1 })
        ));
        assert!(matches!(
            eop(&records, Attribute::Age),
            Err(MetricError::NotEnoughSubgroups { found: 0 })
        ));
    }

    fn au_record(id: &str, race: &str, label_codes: &[u8], pred_codes: &[u8]) -> SampleRecord {
        let mut r = SampleRecord::new(id);
        r.demographics = Some(Demographics { race: Some(race.into()), ..Default::default() });
        r.labels = Some(Labels {
            aus: Some(AuLabelSet::from_codes(label_codes, None).unwrap()),
            ..Default::default()
        });
        r.predictions = Some(Predictions {
            aus: Some(AuActivations::from_active_codes(pred_codes).unwrap()),
            ..Default::default()
        });
        r
    }

    #[test]
    fn tpr_examples() {
        let records =
            vec![au_record("0", "x", &[1, 2], &[1, 2]), au_record("1", "x", &[1], &[2])];
        let idx = [0usize, 1];
        assert_eq!(subgroup_tpr(&records, &idx, au(2)), Some(1.0));
        assert_eq!(subgroup_tpr(&records, &idx, au(1)), Some(0.5));
        // no positive labels for AU4 -> undefined
        assert_eq!(subgroup_tpr(&records, &idx, au(4)), None);
    }

    #[test]
    fn eod_single_au_two_subgroups() {
        let mut records = Vec::new();
        // subgroup a: TPR 0.9 on AU1; subgroup b: TPR 0.6
        for i in 0..10 {
            records.push(au_record(&format!("a{i}"), "a", &[1], if i < 9 { &[1] } else { &[] }));
        }
        for i in 0..10 {
            records.push(au_record(&format!("b{i}"), "b", &[1], if i < 6 { &[1] } else { &[] }));
        }
        let r = eod(&records, Attribute::Race, &[au(1)]).unwrap();
        assert!((r.score - 0.3).abs() < 1e-12);
        assert!(!r.fair);
    }

    #[test]
    fn eod_excludes_undefined_aus() {
        let records = vec![
            au_record("a0", "a", &[1], &[1]),
            au_record("b0", "b", &[1], &[1]),
            // AU2 never positively labeled anywhere
        ];
        let r = eod(&records, Attribute::Race, &[au(1), au(2)]).unwrap();
        assert_eq!(r.skipped_aus, vec![2]);
        assert_eq!(r.per_au.len(), 1);
        assert_eq!(r.score, 0.0);

        assert!(matches!(
            eod(&records, Attribute::Race, &[au(2)]),
            Err(MetricError::NoDefinedAus)
        ));
    }

    fn va_record(id: &str, age: &str, label: (f64, f64), pred: (f64, f64)) -> SampleRecord {
        let mut r = SampleRecord::new(id);
        r.demographics = Some(Demographics { age_group: Some(age.into()), ..Default::default() });
        r.labels = Some(Labels { va: Some(VaPair::new(label.0, label.1).unwrap()), ..Default::default() });
        r.predictions =
            Some(Predictions { va: Some(VaPair::new(pred.0, pred.1).unwrap()), ..Default::default() });
        r
    }

    #[test]
    fn perfect_va_predictions_score_one() {
        let records: Vec<SampleRecord> = (0..10)
            .map(|i| {
                let v = (i as f64 / 10.0) - 0.5;
                va_record(&i.to_string(), if i % 2 == 0 { "young" } else { "old" }, (v, -v), (v, -v))
            })
            .collect();
        let overall = overall_ccc(&records).unwrap();
        assert!((overall.ccc - 1.0).abs() < 1e-12);
        let f = fccc(&records, Attribute::Age).unwrap();
        assert!((f.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fccc_single_subgroup_equals_overall() {
        let records: Vec<SampleRecord> = (0..8)
            .map(|i| {
                let v = (i as f64 / 8.0) - 0.4;
                va_record(&i.to_string(), "only", (v, v * 0.5), (v * 0.8, v * 0.3 + 0.1))
            })
            .collect();
        let overall = overall_ccc(&records).unwrap();
        let f = fccc(&records, Attribute::Age).unwrap();
        assert!((f.score - overall.ccc).abs() < 1e-15);
    }

    #[test]
    fn fccc_excludes_tiny_subgroups() {
        let mut records: Vec<SampleRecord> = (0..6)
            .map(|i| {
                let v = (i as f64 / 6.0) - 0.4;
                va_record(&i.to_string(), "big", (v, v), (v, v))
            })
            .collect();
        records.push(va_record("lone", "small", (0.5, 0.5), (0.4, 0.4)));
        let f = fccc(&records, Attribute::Age).unwrap();
        assert_eq!(f.excluded_subgroups, vec!["small".to_string()]);
        assert_eq!(f.per_subgroup.len(), 1);
    }
}
