//! Soft-voting ensembles over per-model class probabilities, plus the
//! CSV interchange format that carries those probabilities between stages.
//!
//! Combined probabilities are computed as a weighted mean from exact
//! error-free sums and products, so the result depends only on the multiset
//! of (weight, row) pairs and not on model order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{ConditionClass, Error, Result, NUM_CLASSES};

/// Tolerance on probability-row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

pub type ProbRow = [f64; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one model")]
    NoModels,
    #[error("configured k = {expected} but {got} predictions were supplied")]
    KMismatch { expected: usize, got: usize },
    #[error(
        "model {model_id:?} is not aligned with {reference:?} at row {index}: expected sample {expected:?}, found {found:?}"
    )]
    Alignment {
        model_id: String,
        reference: String,
        index: usize,
        expected: String,
        found: String,
    },
    #[error("accuracy-weighted mode needs an accuracy for model {0:?}")]
    MissingAccuracy(String),
    #[error("accuracy {value} for model {model_id:?} is outside [0, 1]")]
    InvalidAccuracy { model_id: String, value: f64 },
    #[error("accuracies of all selected models are zero")]
    ZeroTotalWeight,
    #[error("model {model_id:?}, sample {sample_id:?}: {reason}")]
    InvalidRow {
        model_id: String,
        sample_id: String,
        reason: String,
    },
    #[error("model {model_id:?} lists sample {sample_id:?} more than once")]
    DuplicateSample { model_id: String, sample_id: String },
    #[error("model {0:?} supplied more than once")]
    DuplicateModel(String),
    #[error("model {model_id:?} has {ids} sample ids but {rows} rows")]
    RowCount {
        model_id: String,
        ids: usize,
        rows: usize,
    },
    #[error("cannot select top {k} of {available} models")]
    InvalidK { k: usize, available: usize },
}

/// Checks one probability row: entries in [0,1], sum within tolerance.
pub fn validate_row(row: &ProbRow) -> std::result::Result<(), String> {
    if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("probability {v} outside [0, 1]"));
    }
    let s = exact_sum(row.iter().copied());
    if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(format!("probabilities sum to {s}, not 1"));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Correctly rounded sum of finite values (Shewchuk partials with the
/// half-way correction). Independent of input order.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// `a * b` as an unevaluated sum `p + e`, exactly.
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `sum(w_j * v_j) / sum(w_j)`, evaluated from exact sums and refined by
/// one exactly computed residual step. Identical values give back that
/// value exactly.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    let mut terms = Vec::with_capacity(4 * values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let (p, e) = two_product(w, v);
        terms.extend([p, e]);
    }
    let num = exact_sum(terms.iter().copied());
    let den = exact_sum(weights.iter().copied());
    let q0 = num / den;
    for &w in weights {
        let (p, e) = two_product(q0, w);
        terms.extend([-p, -e]);
    }
    let residual = exact_sum(terms);
    q0 + residual / den
}

/// One model's probabilities for an ordered list of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPrediction {
    model_id: String,
    sample_ids: Vec<String>,
    rows: Vec<ProbRow>,
}

impl ModelPrediction {
    pub fn new(
        model_id: impl Into<String>,
        sample_ids: Vec<String>,
        rows: Vec<ProbRow>,
    ) -> Result<Self, EnsembleError> {
        let model_id = model_id.into();
        if sample_ids.len() != rows.len() {
            return Err(EnsembleError::RowCount {
                model_id,
                ids: sample_ids.len(),
                rows: rows.len(),
            });
        }
        let mut seen = HashSet::new();
        for (id, row) in sample_ids.iter().zip(&rows) {
            if !seen.insert(id.as_str()) {
                return Err(EnsembleError::DuplicateSample {
                    model_id,
                    sample_id: id.clone(),
                });
            }
            validate_row(row).map_err(|reason| EnsembleError::InvalidRow {
                model_id: model_id.clone(),
                sample_id: id.clone(),
                reason,
            })?;
        }
        Ok(Self {
            model_id,
            sample_ids,
            rows,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn rows(&self) -> &[ProbRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn predicted(&self) -> Vec<usize> {
        self.rows.iter().map(|r| argmax(r)).collect()
    }

    /// Reorders rows to follow `order`, which must be a permutation of
    /// this prediction's sample ids.
    pub fn reordered(&self, order: &[String]) -> Result<Self, EnsembleError> {
        let pos: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(order.len());
        for (index, id) in order.iter().enumerate() {
            match pos.get(id.as_str()) {
                Some(&i) => rows.push(self.rows[i]),
                None => {
                    return Err(EnsembleError::Alignment {
                        model_id: self.model_id.clone(),
                        reference: "requested order".into(),
                        index,
                        expected: id.clone(),
                        found: self.sample_ids.get(index).cloned().unwrap_or_default(),
                    })
                }
            }
        }
        if order.len() != self.sample_ids.len() {
            let extra = self
                .sample_ids
                .iter()
                .find(|s| !order.contains(s))
                .cloned()
                .unwrap_or_default();
            return Err(EnsembleError::Alignment {
                model_id: self.model_id.clone(),
                reference: "requested order".into(),
                index: order.len(),
                expected: String::new(),
                found: extra,
            });
        }
        Ok(Self {
            model_id: self.model_id.clone(),
            sample_ids: order.to_vec(),
            rows,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    Uniform,
    AccuracyWeighted,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub mode: EnsembleMode,
    /// Expected number of models; checked when set.
    pub k: Option<usize>,
    /// Per-model accuracy, keyed by model id.
    pub accuracies: BTreeMap<String, f64>,
}

impl EnsembleConfig {
    pub fn uniform() -> Self {
        Self::default()
    }

    pub fn accuracy_weighted(accuracies: BTreeMap<String, f64>) -> Self {
        Self {
            mode: EnsembleMode::AccuracyWeighted,
            k: None,
            accuracies,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub model_ids: Vec<String>,
    /// Normalized weights in `model_ids` order.
    pub weights: Vec<f64>,
    pub sample_ids: Vec<String>,
    pub combined: Vec<ProbRow>,
    /// Zero-based class index of each combined row's argmax.
    pub predicted: Vec<usize>,
}

impl EnsemblePrediction {
    pub fn predicted_class(&self, i: usize) -> ConditionClass {
        ConditionClass::from_index(self.predicted[i]).expect("argmax is below NUM_CLASSES")
    }

    /// Views the combined rows as a single model's prediction.
    pub fn as_model_prediction(&self, model_id: &str) -> ModelPrediction {
        ModelPrediction {
            model_id: model_id.to_string(),
            sample_ids: self.sample_ids.clone(),
            rows: self.combined.clone(),
        }
    }
}

fn check_alignment(preds: &[ModelPrediction]) -> Result<(), EnsembleError> {
    let reference = &preds[0];
    let mut ids = HashSet::new();
    for p in preds {
        if !ids.insert(p.model_id.as_str()) {
            return Err(EnsembleError::DuplicateModel(p.model_id.clone()));
        }
        let n = reference.len().max(p.len());
        for index in 0..n {
            let expected = reference.sample_ids.get(index);
            let found = p.sample_ids.get(index);
            if expected != found {
                return Err(EnsembleError::Alignment {
                    model_id: p.model_id.clone(),
                    reference: reference.model_id.clone(),
                    index,
                    expected: expected.cloned().unwrap_or_default(),
                    found: found.cloned().unwrap_or_default(),
                });
            }
        }
    }
    Ok(())
}

fn weights_for(preds: &[ModelPrediction], cfg: &EnsembleConfig) -> Result<Option<Vec<f64>>, EnsembleError> {
    if cfg.mode == EnsembleMode::Uniform {
        return Ok(None);
    }
    let mut acc = Vec::with_capacity(preds.len());
    for p in preds {
        let a = *cfg
            .accuracies
            .get(&p.model_id)
            .ok_or_else(|| EnsembleError::MissingAccuracy(p.model_id.clone()))?;
        if !(0.0..=1.0).contains(&a) {
            return Err(EnsembleError::InvalidAccuracy {
                model_id: p.model_id.clone(),
                value: a,
            });
        }
        acc.push(a);
    }
    if acc.iter().all(|&a| a == 0.0) {
        return Err(EnsembleError::ZeroTotalWeight);
    }
    Ok(Some(acc))
}

/// Soft voting. Uniform mode averages the k rows per sample; weighted
/// mode uses `w_j = acc_j / sum(acc)`. Each class entry is a
/// [`weighted_mean`]. Predicted class is the argmax with
/// ties to the lowest class index.
pub fn combine(preds: &[ModelPrediction], cfg: &EnsembleConfig) -> Result<EnsemblePrediction, EnsembleError> {
    if preds.is_empty() {
        return Err(EnsembleError::NoModels);
    }
    if let Some(k) = cfg.k {
        if k != preds.len() {
            return Err(EnsembleError::KMismatch {
                expected: k,
                got: preds.len(),
            });
        }
    }
    check_alignment(preds)?;
    let k = preds.len();
    let raw_weights = weights_for(preds, cfg)?.unwrap_or_else(|| vec![1.0; k]);
    let total = exact_sum(raw_weights.iter().copied());
    let n = preds[0].len();
    let mut column = Vec::with_capacity(k);
    let mut combined = Vec::with_capacity(n);
    for s in 0..n {
        let mut row = [0.0; NUM_CLASSES];
        for (c, out) in row.iter_mut().enumerate() {
            column.clear();
            column.extend(preds.iter().map(|p| p.rows[s][c]));
            *out = weighted_mean(&column, &raw_weights);
        }
        combined.push(row);
    }
    let predicted = combined.iter().map(|r| argmax(r)).collect();
    Ok(EnsemblePrediction {
        model_ids: preds.iter().map(|p| p.model_id.clone()).collect(),
        weights: raw_weights.iter().map(|w| w / total).collect(),
        sample_ids: preds[0].sample_ids.clone(),
        combined,
        predicted,
    })
}

/// The `k` most accurate model ids; equal accuracies are ordered by id.
pub fn top_k_select(reports: &[(String, f64)], k: usize) -> Result<Vec<String>, EnsembleError> {
    if k == 0 || k > reports.len() {
        return Err(EnsembleError::InvalidK {
            k,
            available: reports.len(),
        });
    }
    if let Some((id, a)) = reports.iter().find(|(_, a)| !(0.0..=1.0).contains(a)) {
        return Err(EnsembleError::InvalidAccuracy {
            model_id: id.clone(),
            value: *a,
        });
    }
    let mut sorted: Vec<&(String, f64)> = reports.iter().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(sorted.into_iter().take(k).map(|(id, _)| id.clone()).collect())
}

const PROB_COLUMNS: [&str; NUM_CLASSES] = ["p1", "p2", "p3", "p4", "p5"];

fn parse_probs(rec: &csv::StringRecord, start: usize) -> std::result::Result<ProbRow, String> {
    let mut row = [0.0; NUM_CLASSES];
    for (c, v) in row.iter_mut().enumerate() {
        let field = rec.get(start + c).ok_or("missing probability column")?;
        *v = field
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("{}: {e}", PROB_COLUMNS[c]))?;
    }
    Ok(row)
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::format(
            path,
            format!("header {:?}, expected {:?}", got.join(","), expected.join(",")),
        ));
    }
    Ok(())
}

fn interchange_header() -> Vec<&'static str> {
    let mut h = vec!["sample_id", "model_id"];
    h.extend(PROB_COLUMNS);
    h
}

/// Reads an interchange file. Rows are grouped by model in order of first
/// appearance; sample order within each model follows the file.
pub fn read_interchange(path: &Path) -> Result<Vec<ModelPrediction>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    expect_header(path, &mut rdr, &interchange_header())?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Vec<String>, Vec<ProbRow>)> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() != 2 + NUM_CLASSES {
            return Err(Error::format(path, format!("line {line}: expected {} fields", 2 + NUM_CLASSES)));
        }
        let sample = rec[0].trim().to_string();
        let model = rec[1].trim().to_string();
        let row = parse_probs(&rec, 2).map_err(|m| Error::format(path, format!("line {line}: {m}")))?;
        validate_row(&row).map_err(|m| {
            Error::format(path, format!("line {line} (sample {sample:?}, model {model:?}): {m}"))
        })?;
        let g = groups.entry(model.clone()).or_insert_with(|| {
            order.push(model.clone());
            Default::default()
        });
        g.0.push(sample);
        g.1.push(row);
    }
    let mut out = Vec::with_capacity(order.len());
    for model in order {
        let (ids, rows) = groups.remove(&model).expect("group exists");
        out.push(ModelPrediction::new(model, ids, rows)?);
    }
    Ok(out)
}

/// Writes one row per (sample, model), model-major.
pub fn write_interchange(path: &Path, preds: &[ModelPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(interchange_header()).map_err(|e| Error::csv(path, e))?;
    for p in preds {
        for (id, row) in p.sample_ids.iter().zip(&p.rows) {
            let mut rec = vec![id.clone(), p.model_id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn ensemble_header() -> Vec<&'static str> {
    let mut h = vec!["sample_id"];
    h.extend(PROB_COLUMNS);
    h.extend(["predicted", "predicted_class"]);
    h
}

/// Ensemble output: `sample_id,p1..p5,predicted,predicted_class`, where
/// `predicted` is the one-based class number.
pub fn write_ensemble(path: &Path, e: &EnsemblePrediction) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(ensemble_header()).map_err(|e| Error::csv(path, e))?;
    for (i, (id, row)) in e.sample_ids.iter().zip(&e.combined).enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        rec.push((e.predicted[i] + 1).to_string());
        rec.push(e.predicted_class(i).name().to_string());
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an ensemble output file back as a single prediction.
pub fn read_ensemble(path: &Path, model_id: &str) -> Result<ModelPrediction> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    expect_header(path, &mut rdr, &ensemble_header())?;
    let (mut ids, mut rows) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let row = parse_probs(&rec, 1).map_err(|m| Error::format(path, format!("line {line}: {m}")))?;
        let predicted: usize = rec
            .get(1 + NUM_CLASSES)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::format(path, format!("line {line}: bad predicted column")))?;
        if predicted != argmax(&row) + 1 {
            return Err(Error::format(
                path,
                format!("line {line}: predicted class {predicted} is not the row argmax"),
            ));
        }
        ids.push(rec[0].trim().to_string());
        rows.push(row);
    }
    Ok(ModelPrediction::new(model_id, ids, rows)?)
}

/// Reads either file shape: an interchange file holding exactly one model,
/// or an ensemble output file.
pub fn read_any_prediction(path: &Path) -> Result<ModelPrediction> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let first = rdr
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .get(1)
        .map(|s| s.trim().to_string());
    if first.as_deref() == Some("model_id") {
        let mut preds = read_interchange(path)?;
        if preds.len() != 1 {
            return Err(Error::format(
                path,
                format!("expected predictions of one model, found {}", preds.len()),
            ));
        }
        Ok(preds.remove(0))
    } else {
        read_ensemble(path, "ensemble")
    }
}

/// `accuracies.json`: `{model_id: accuracy}`.
pub fn read_accuracies(path: &Path) -> Result<BTreeMap<String, f64>> {
    let map: BTreeMap<String, f64> = crate::geo::io::read_json(path)?;
    if let Some((id, v)) = map.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::format(path, format!("accuracy {v} for {id:?} outside [0, 1]")));
    }
    Ok(map)
}

pub fn write_accuracies(path: &Path, acc: &BTreeMap<String, f64>) -> Result<()> {
    crate::geo::io::write_json(path, acc)
}
