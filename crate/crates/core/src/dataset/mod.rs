//! Joining section images with condition labels, the 8:2 split,
//! oversampling, and the per-sample image transforms used for training.

mod image;
mod manifest;
mod split;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geo::SectionSpec;
use crate::pmis::records::LabelRecord;
use crate::pmis::{classify, ConditionScore};
use crate::{ConditionClass, Error, Result};

pub use image::{
    apply_augmentation, augment, load_masked_png, normalize, AugmentParams, AugmentationConfig, Interpolation,
    MaskedImage,
};
pub use manifest::{read_manifest, write_manifest, ClassCounts, DatasetManifest, ManifestSeeds};
pub use split::{
    apportion, class_counts, holdout_validation, oversample, split, SplitConfig,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("more than one {source_kind} entry for section {key}")]
    AmbiguousKey { key: String, source_kind: &'static str },
    #[error("stratified split needs at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("invalid dataset configuration: {0}")]
    InvalidConfig(String),
    #[error("image {0} is fully masked")]
    FullyMasked(String),
    #[error("cannot oversample an empty training set")]
    EmptyTrain,
    #[error("image buffer has {got} values, expected {expected} for {width}x{height}x{channels}")]
    ImageShape {
        width: usize,
        height: usize,
        channels: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}: cannot decode image: {message}")]
    Decode { path: String, message: String },
    #[error("sample {0:?} is not in the manifest")]
    UnknownSample(String),
}

/// Join key: route plus offsets rounded to a thousandth of a mile.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SectionKey {
    pub route_name: String,
    pub from_milli: i64,
    pub to_milli: i64,
}

impl SectionKey {
    pub fn of(spec: &SectionSpec) -> Self {
        Self {
            route_name: spec.route_name.clone(),
            from_milli: (spec.offset_from * 1000.0).round() as i64,
            to_milli: (spec.offset_to * 1000.0).round() as i64,
        }
    }

    pub fn sample_id(&self) -> String {
        format!(
            "{}_{:.3}_{:.3}",
            self.route_name,
            self.from_milli as f64 / 1000.0,
            self.to_milli as f64 / 1000.0
        )
    }
}

impl std::fmt::Display for SectionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:.3}-{:.3}",
            self.route_name,
            self.from_milli as f64 / 1000.0,
            self.to_milli as f64 / 1000.0
        )
    }
}

/// Sample id for a section, `{route}_{from:.3}_{to:.3}`.
pub fn sample_id(spec: &SectionSpec) -> String {
    SectionKey::of(spec).sample_id()
}

/// File-system-safe version of a sample id.
pub fn file_stem(sample_id: &str) -> String {
    sample_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// An extracted section image available for labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionImageRef {
    pub spec: SectionSpec,
    /// Path as it should appear in the manifest (relative to the workdir).
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample_id: String,
    pub image: String,
    pub label: ConditionClass,
    pub condition_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ImageWithoutRecord,
    RecordWithoutImage,
    /// The section image has no pixel inside the section polygon.
    ImageFullyMasked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub route_name: String,
    pub offset_from: f64,
    pub offset_to: f64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JoinResult {
    /// Sorted by sample id.
    pub samples: Vec<LabeledSample>,
    pub rejects: Vec<Reject>,
}

/// Matches images to label records on (route, from, to). The class is
/// recomputed from the score. Unmatched keys on either side are reported
/// as rejects; duplicate keys are an error.
pub fn join_labels(images: &[SectionImageRef], records: &[LabelRecord]) -> Result<JoinResult> {
    let mut by_key: BTreeMap<SectionKey, &LabelRecord> = BTreeMap::new();
    for r in records {
        let key = SectionKey::of(&r.spec());
        if by_key.insert(key.clone(), r).is_some() {
            return Err(DatasetError::AmbiguousKey {
                key: key.to_string(),
                source_kind: "PMIS",
            }
            .into());
        }
    }
    let mut image_keys: BTreeMap<SectionKey, &SectionImageRef> = BTreeMap::new();
    for img in images {
        let key = SectionKey::of(&img.spec);
        if image_keys.insert(key.clone(), img).is_some() {
            return Err(DatasetError::AmbiguousKey {
                key: key.to_string(),
                source_kind: "image",
            }
            .into());
        }
    }
    let mut out = JoinResult::default();
    for (key, img) in &image_keys {
        match by_key.get(key) {
            Some(rec) => {
                let score = ConditionScore::new(rec.condition_score)?;
                out.samples.push(LabeledSample {
                    sample_id: key.sample_id(),
                    image: img.image.clone(),
                    label: classify(score),
                    condition_score: score.value(),
                });
            }
            None => out.rejects.push(Reject {
                route_name: img.spec.route_name.clone(),
                offset_from: img.spec.offset_from,
                offset_to: img.spec.offset_to,
                reason: RejectReason::ImageWithoutRecord,
            }),
        }
    }
    for (key, rec) in &by_key {
        if !image_keys.contains_key(key) {
            out.rejects.push(Reject {
                route_name: rec.route_name.clone(),
                offset_from: rec.offset_from,
                offset_to: rec.offset_to,
                reason: RejectReason::RecordWithoutImage,
            });
        }
    }
    out.samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(out)
}

/// Rejects report: `route_name,offset_from,offset_to,reason`.
pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(["route_name", "offset_from", "offset_to", "reason"])
        .map_err(|e| Error::csv(path, e))?;
    for r in rejects {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rejects(path: &Path) -> Result<Vec<Reject>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::csv(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(route: &str, from: f64, to: f64) -> SectionImageRef {
        let spec = SectionSpec::new(route, from, to);
        SectionImageRef {
            image: format!("sections/{}.png", sample_id(&spec)),
            spec,
        }
    }

    fn rec(route: &str, from: f64, to: f64, score: f64) -> LabelRecord {
        LabelRecord::new(
            &SectionSpec::new(route, from, to),
            ConditionScore::new(score).unwrap(),
        )
    }

    #[test]
    fn bijection_matches_everything() {
        let images = vec![img("A", 0.0, 0.5), img("A", 0.5, 1.0), img("B", 2.0, 2.5)];
        let records = vec![rec("B", 2.0, 2.5, 40.0), rec("A", 0.0, 0.5, 95.0), rec("A", 0.5, 1.0, 72.0)];
        let j = join_labels(&images, &records).unwrap();
        assert_eq!(j.samples.len(), images.len());
        assert!(j.rejects.is_empty());
        assert_eq!(j.samples[0].sample_id, "A_0.000_0.500");
        assert_eq!(j.samples[0].label, ConditionClass::VeryGood);
        assert_eq!(j.samples[2].label, ConditionClass::Poor);
    }

    #[test]
    fn disjoint_keys_all_rejected() {
        let images = vec![img("A", 0.0, 0.5)];
        let records = vec![rec("B", 0.0, 0.5, 50.0), rec("A", 0.0, 0.6, 50.0)];
        let j = join_labels(&images, &records).unwrap();
        assert!(j.samples.is_empty());
        assert_eq!(j.rejects.len(), 3);
        assert_eq!(
            j.rejects.iter().filter(|r| r.reason == RejectReason::RecordWithoutImage).count(),
            2
        );
    }

    #[test]
    fn duplicate_records_are_ambiguous() {
        let images = vec![img("A", 0.0, 0.5)];
        let records = vec![rec("A", 0.0, 0.5, 50.0), rec("A", 0.0, 0.5, 60.0)];
        let err = join_labels(&images, &records).unwrap_err().to_string();
        assert!(err.contains("A 0.000-0.500"), "{err}");
    }

    #[test]
    fn offsets_are_matched_to_a_thousandth() {
        let images = vec![img("A", 0.1 + 0.2, 0.8)];
        let records = vec![rec("A", 0.3, 0.8000001, 80.0)];
        assert_eq!(join_labels(&images, &records).unwrap().samples.len(), 1);
    }

    #[test]
    fn rejects_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rejects.csv");
        let j = join_labels(&[img("A", 0.0, 0.5)], &[]).unwrap();
        write_rejects(&p, &j.rejects).unwrap();
        assert_eq!(read_rejects(&p).unwrap(), j.rejects);
        write_rejects(&p, &[]).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("route_name,"));
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("IH 10/A_0.000_0.500"), "IH-10-A_0.000_0.500");
    }
}
