//! Confusion matrix and accuracy / precision / recall / F1.
//!
//! Counts stay integral; per-class and aggregate values are kept as exact
//! fractions and only converted to floating point for output.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("label sequences differ in length: {truth} truths, {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {0:?} is not one of the class names")]
    UnknownLabel(String),
    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("confusion matrix must be square with one row per class")]
    NotSquare,
    #[error("confusion matrix is empty")]
    Empty,
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
}

/// Nonnegative fraction. Arithmetic saturates into an approximate value
/// when the exact numerator/denominator would overflow.
#[derive(Debug, Clone, Copy)]
pub struct Fraction {
    num: u128,
    den: u128,
    approx: Option<f64>,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Fraction {
    /// `num / den`; a zero denominator yields zero.
    pub fn new(num: u128, den: u128) -> Self {
        if den == 0 || num == 0 {
            return Fraction {
                num: 0,
                den: 1,
                approx: None,
            };
        }
        let g = gcd(num, den);
        Fraction {
            num: num / g,
            den: den / g,
            approx: None,
        }
    }

    fn from_f64(v: f64) -> Self {
        Fraction {
            num: 0,
            den: 1,
            approx: Some(v),
        }
    }

    pub fn to_f64(self) -> f64 {
        self.approx.unwrap_or(self.num as f64 / self.den as f64)
    }

    pub fn is_exact(&self) -> bool {
        self.approx.is_none()
    }

    pub fn add(self, o: Fraction) -> Fraction {
        if self.is_exact() && o.is_exact() {
            let exact = (|| {
                let num = self
                    .num
                    .checked_mul(o.den)?
                    .checked_add(o.num.checked_mul(self.den)?)?;
                let den = self.den.checked_mul(o.den)?;
                Some(Fraction::new(num, den))
            })();
            if let Some(f) = exact {
                return f;
            }
        }
        Fraction::from_f64(self.to_f64() + o.to_f64())
    }

    pub fn mul(self, o: Fraction) -> Fraction {
        if self.is_exact() && o.is_exact() {
            if let (Some(num), Some(den)) = (self.num.checked_mul(o.num), self.den.checked_mul(o.den))
            {
                return Fraction::new(num, den);
            }
        }
        Fraction::from_f64(self.to_f64() * o.to_f64())
    }
}

impl PartialEq for Fraction {
    fn eq(&self, o: &Fraction) -> bool {
        if self.is_exact() && o.is_exact() {
            self.num == o.num && self.den == o.den
        } else {
            self.to_f64() == o.to_f64()
        }
    }
}

/// `c x c` count table, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_names: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: Vec<String>) -> Result<Self, MetricsError> {
        let c = class_names.len();
        Self::from_counts(class_names, vec![vec![0; c]; c])
    }

    pub fn from_counts(class_names: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        if class_names.is_empty() {
            return Err(MetricsError::Empty);
        }
        for (i, n) in class_names.iter().enumerate() {
            if class_names[..i].contains(n) {
                return Err(MetricsError::DuplicateClass(n.clone()));
            }
        }
        if counts.len() != class_names.len() || counts.iter().any(|r| r.len() != class_names.len()) {
            return Err(MetricsError::NotSquare);
        }
        Ok(Self {
            class_names,
            counts,
        })
    }

    /// Tallies class indices.
    pub fn from_indices(
        class_names: Vec<String>,
        truth: &[usize],
        predicted: &[usize],
    ) -> Result<Self, MetricsError> {
        if truth.len() != predicted.len() {
            return Err(MetricsError::LengthMismatch {
                truth: truth.len(),
                predicted: predicted.len(),
            });
        }
        let mut m = Self::zeros(class_names)?;
        let c = m.num_classes();
        for (&t, &p) in truth.iter().zip(predicted) {
            for index in [t, p] {
                if index >= c {
                    return Err(MetricsError::IndexOutOfRange { index, classes: c });
                }
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// One-vs-rest `(tp, fp, fn, tn)` for class `i`.
    pub fn one_vs_rest(&self, i: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[i][i];
        let fp = self.col_sum(i) - tp;
        let fn_ = self.row_sum(i) - tp;
        let tn = self.total() - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }

    /// Reorders classes; `order[k]` is the old index of new class `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let names = order.iter().map(|&i| self.class_names[i].clone()).collect();
        let counts = order
            .iter()
            .map(|&i| order.iter().map(|&j| self.counts[i][j]).collect())
            .collect();
        Self {
            class_names: names,
            counts,
        }
    }

    fn nonempty(&self) -> Result<u64, MetricsError> {
        match self.total() {
            0 => Err(MetricsError::Empty),
            t => Ok(t),
        }
    }

    pub fn accuracy_exact(&self) -> Result<Fraction, MetricsError> {
        let total = self.nonempty()?;
        Ok(Fraction::new(self.trace() as u128, total as u128))
    }
}

/// Tallies string labels into a confusion matrix.
pub fn confusion<S: AsRef<str>>(
    truth: &[S],
    predicted: &[S],
    class_names: &[String],
) -> Result<ConfusionMatrix, MetricsError> {
    let index = |s: &S| {
        class_names
            .iter()
            .position(|n| n == s.as_ref())
            .ok_or_else(|| MetricsError::UnknownLabel(s.as_ref().to_string()))
    };
    let t = truth.iter().map(index).collect::<Result<Vec<_>, _>>()?;
    let p = predicted.iter().map(index).collect::<Result<Vec<_>, _>>()?;
    ConfusionMatrix::from_indices(class_names.to_vec(), &t, &p)
}

/// Trace over total.
pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    Ok(m.accuracy_exact()?.to_f64())
}

/// Precision and recall of one class, with flags for empty columns/rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// No sample was predicted as this class; precision reported as 0.
    pub precision_undefined: bool,
    /// No sample of this class exists; recall reported as 0.
    pub recall_undefined: bool,
}

pub fn precision_recall(m: &ConfusionMatrix, class: usize) -> PrecisionRecall {
    let tp = m.get(class, class) as u128;
    let (col, row) = (m.col_sum(class) as u128, m.row_sum(class) as u128);
    PrecisionRecall {
        precision: Fraction::new(tp, col).to_f64(),
        recall: Fraction::new(tp, row).to_f64(),
        precision_undefined: col == 0,
        recall_undefined: row == 0,
    }
}

/// Harmonic mean; zero when both inputs are zero.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    #[default]
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
    pub precision_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub total: u64,
    pub accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: Aggregate,
    #[serde(rename = "weighted")]
    pub weighted_avg: Aggregate,
    /// Which aggregate is reported as the headline precision/recall/F1.
    pub default_averaging: Averaging,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsSummary {
    pub fn aggregate(&self, averaging: Averaging) -> Aggregate {
        match averaging {
            Averaging::Macro => self.macro_avg,
            Averaging::Weighted => self.weighted_avg,
        }
    }
}

/// Per-class and aggregate metrics. `averaging` picks the headline
/// aggregate; both are always computed.
pub fn summarize(m: &ConfusionMatrix, averaging: Averaging) -> Result<MetricsSummary, MetricsError> {
    let total = m.nonempty()?;
    let c = m.num_classes();
    let zero = Fraction::new(0, 1);
    let (mut mp, mut mr, mut mf) = (zero, zero, zero);
    let (mut wp, mut wr, mut wf) = (zero, zero, zero);
    let mut per_class = Vec::with_capacity(c);
    for i in 0..c {
        let tp = m.get(i, i) as u128;
        let (row, col) = (m.row_sum(i) as u128, m.col_sum(i) as u128);
        let p = Fraction::new(tp, col);
        let r = Fraction::new(tp, row);
        // 2PR/(P+R) = 2tp / (row + col)
        let f = Fraction::new(2 * tp, row + col);
        mp = mp.add(p);
        mr = mr.add(r);
        mf = mf.add(f);
        let w = Fraction::new(row, 1);
        wp = wp.add(p.mul(w));
        wr = wr.add(r.mul(w));
        wf = wf.add(f.mul(w));
        per_class.push(ClassMetrics {
            class_name: m.class_names()[i].clone(),
            precision: p.to_f64(),
            recall: r.to_f64(),
            f1: f.to_f64(),
            support: row as u64,
            predicted: col as u64,
            precision_undefined: col == 0,
        });
    }
    let per = |f: Fraction, d: u128| f.mul(Fraction::new(1, d)).to_f64();
    Ok(MetricsSummary {
        total,
        accuracy: m.accuracy_exact()?.to_f64(),
        macro_avg: Aggregate {
            precision: per(mp, c as u128),
            recall: per(mr, c as u128),
            f1: per(mf, c as u128),
        },
        weighted_avg: Aggregate {
            precision: per(wp, total as u128),
            recall: per(wr, total as u128),
            f1: per(wf, total as u128),
        },
        default_averaging: averaging,
        per_class,
    })
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self
            .class_names
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(0)
            .max(6);
        write!(f, "{:>w$}", "")?;
        for n in &self.class_names {
            write!(f, " {n:>w$}")?;
        }
        writeln!(f)?;
        for (n, row) in self.class_names.iter().zip(&self.counts) {
            write!(f, "{n:>w$}")?;
            for v in row {
                write!(f, " {v:>w$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Matrix CSV: header `true\predicted,<classes...>`, one row per true class.
pub fn write_confusion_csv(path: &Path, m: &ConfusionMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(m.class_names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (name, row) in m.class_names.iter().zip(&m.counts) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_confusion_csv(path: &Path) -> Result<ConfusionMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut rows = rdr.records();
    let header = rows
        .next()
        .ok_or_else(|| Error::format(path, "empty file"))?
        .map_err(|e| Error::csv(path, e))?;
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut counts = Vec::new();
    for (k, rec) in rows.enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.get(0) != names.get(k).map(String::as_str) {
            return Err(Error::format(path, format!("row {} label does not match header", k + 2)));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        counts.push(row);
    }
    Ok(ConfusionMatrix::from_counts(names, counts)?)
}

pub fn write_summary_json(path: &Path, s: &MetricsSummary) -> Result<()> {
    crate::geo::io::write_json(path, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let t = [0, 1, 2, 2, 1, 0, 0];
        let m = ConfusionMatrix::from_indices(names(3), &t, &t).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j) > 0, i == j);
            }
        }
        assert_eq!(accuracy(&m).unwrap(), 1.0);
    }

    #[test]
    fn single_off_diagonal_tally() {
        let classes = crate::ConditionClass::names();
        let m = confusion(&["Fair"], &["Good"], &classes).unwrap();
        assert_eq!(m.total(), 1);
        assert_eq!(m.get(2, 1), 1);
        assert_eq!(accuracy(&m).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(
            ConfusionMatrix::from_indices(names(2), &[0, 1], &[0]),
            Err(MetricsError::LengthMismatch { truth: 2, predicted: 1 })
        );
        assert!(matches!(
            ConfusionMatrix::from_indices(names(2), &[0], &[2]),
            Err(MetricsError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            confusion(&["x"], &["c0"], &names(2)),
            Err(MetricsError::UnknownLabel(_))
        ));
        let empty = ConfusionMatrix::zeros(names(2)).unwrap();
        assert_eq!(accuracy(&empty), Err(MetricsError::Empty));
        assert!(ConfusionMatrix::from_counts(names(2), vec![vec![1, 2]]).is_err());
        assert!(ConfusionMatrix::from_counts(vec!["a".into(), "a".into()], vec![vec![0; 2]; 2]).is_err());
    }

    #[test]
    fn empty_predicted_column_is_flagged() {
        let m = ConfusionMatrix::from_counts(names(2), vec![vec![3, 0], vec![2, 0]]).unwrap();
        let pr = precision_recall(&m, 1);
        assert!(pr.precision_undefined);
        assert_eq!(pr.precision, 0.0);
        assert_eq!(pr.recall, 0.0);
        let s = summarize(&m, Averaging::Weighted).unwrap();
        assert!(s.per_class[1].precision_undefined);
        assert_eq!(s.per_class[1].f1, 0.0);
    }

    #[test]
    fn f1_edge_cases() {
        assert_eq!(f1(1.0, 1.0), 1.0);
        assert_eq!(f1(1.0, 0.0), 0.0);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn binary_case_matches_textbook_formulas() {
        let m = ConfusionMatrix::from_counts(names(2), vec![vec![40, 10], vec![5, 45]]).unwrap();
        // Positive class = c1.
        let (tp, fp, fn_, tn) = m.one_vs_rest(1);
        assert_eq!((tp, fp, fn_, tn), (45, 10, 5, 40));
        let acc = (tp + tn) as f64 / (tp + tn + fp + fn_) as f64;
        assert_eq!(accuracy(&m).unwrap(), acc);
        let pr = precision_recall(&m, 1);
        assert_eq!(pr.precision, tp as f64 / (tp + fp) as f64);
        assert_eq!(pr.recall, tp as f64 / (tp + fn_) as f64);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cm.csv");
        let m = ConfusionMatrix::from_counts(names(3), vec![vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]])
            .unwrap();
        write_confusion_csv(&p, &m).unwrap();
        assert_eq!(read_confusion_csv(&p).unwrap(), m);
    }

    fn random_labels(c: usize, n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t = (0..n).map(|_| rng.random_range(0..c)).collect();
        let p = (0..n).map(|_| rng.random_range(0..c)).collect();
        (t, p)
    }

    #[test]
    fn tally_matches_hash_map_oracle() {
        for seed in 0..20 {
            let (t, p) = random_labels(5, 300, seed);
            let m = ConfusionMatrix::from_indices(names(5), &t, &p).unwrap();
            let mut oracle: HashMap<(usize, usize), u64> = HashMap::new();
            for (&a, &b) in t.iter().zip(&p) {
                *oracle.entry((a, b)).or_default() += 1;
            }
            for i in 0..5 {
                for j in 0..5 {
                    assert_eq!(m.get(i, j), oracle.get(&(i, j)).copied().unwrap_or(0));
                }
            }
        }
    }

    #[test]
    fn metrics_match_per_sample_counting_oracle() {
        for seed in 0..20 {
            let (t, p) = random_labels(5, 257, 100 + seed);
            let m = ConfusionMatrix::from_indices(names(5), &t, &p).unwrap();
            let s = summarize(&m, Averaging::Weighted).unwrap();
            let n = t.len() as u128;
            let correct = t.iter().zip(&p).filter(|(a, b)| a == b).count() as u128;
            assert_eq!(s.accuracy, Fraction::new(correct, n).to_f64());
            for k in 0..5 {
                let tp = t.iter().zip(&p).filter(|(&a, &b)| a == k && b == k).count() as u128;
                let pred = p.iter().filter(|&&b| b == k).count() as u128;
                let actual = t.iter().filter(|&&a| a == k).count() as u128;
                assert_eq!(s.per_class[k].precision, Fraction::new(tp, pred).to_f64());
                assert_eq!(s.per_class[k].recall, Fraction::new(tp, actual).to_f64());
                assert_eq!(s.per_class[k].f1, Fraction::new(2 * tp, pred + actual).to_f64());
            }
        }
    }

    proptest! {
        #[test]
        fn weighted_recall_equals_accuracy(
            counts in proptest::collection::vec(0u64..500, 25),
        ) {
            let rows: Vec<Vec<u64>> = counts.chunks(5).map(|r| r.to_vec()).collect();
            prop_assume!(rows.iter().all(|r| r.iter().sum::<u64>() > 0));
            let m = ConfusionMatrix::from_counts(names(5), rows).unwrap();
            let s = summarize(&m, Averaging::Weighted).unwrap();
            prop_assert_eq!(s.weighted_avg.recall, s.accuracy);
            for c in &s.per_class {
                for v in [c.precision, c.recall, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn permutation_leaves_aggregates_unchanged(
            counts in proptest::collection::vec(0u64..200, 16),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let rows: Vec<Vec<u64>> = counts.chunks(4).map(|r| r.to_vec()).collect();
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let m = ConfusionMatrix::from_counts(names(4), rows).unwrap();
            let mut order: Vec<usize> = (0..4).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pm = m.permuted(&order);
            let (a, b) = (summarize(&m, Averaging::Macro).unwrap(), summarize(&pm, Averaging::Macro).unwrap());
            prop_assert_eq!(a.accuracy, b.accuracy);
            prop_assert_eq!(a.macro_avg, b.macro_avg);
            prop_assert_eq!(a.weighted_avg, b.weighted_avg);
            for (k, &old) in order.iter().enumerate() {
                prop_assert_eq!(&b.per_class[k], &a.per_class[old]);
            }
        }
    }
}
