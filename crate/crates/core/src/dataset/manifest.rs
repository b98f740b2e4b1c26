use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::{class_counts, holdout_validation, oversample, split, SplitConfig};
use super::{DatasetError, LabeledSample};
use crate::{ConditionClass, Error, Result, NUM_CLASSES};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSeeds {
    pub split: u64,
    pub validation: u64,
    pub oversample: u64,
    pub augment: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub all: [usize; NUM_CLASSES],
    pub train: [usize; NUM_CLASSES],
    pub test: [usize; NUM_CLASSES],
    pub validation: [usize; NUM_CLASSES],
    /// Training samples minus validation, before oversampling.
    pub fit: [usize; NUM_CLASSES],
    pub train_balanced: [usize; NUM_CLASSES],
}

/// Split lists plus everything needed to reproduce them.
///
/// `train` and `test` partition the joined samples. `validation` holds
/// ids drawn from `train`; `train_balanced` is the remaining training ids
/// after oversampling, duplicates included, in oversampling order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub class_names: Vec<String>,
    pub split: SplitConfig,
    pub validation_fraction: f64,
    pub seeds: ManifestSeeds,
    pub config_hash: String,
    pub class_counts: ClassCounts,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub validation: Vec<String>,
    pub train_balanced: Vec<String>,
}

impl DatasetManifest {
    pub fn build(
        samples: &[LabeledSample],
        split_cfg: &SplitConfig,
        validation_fraction: f64,
        seeds: ManifestSeeds,
        config_hash: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(DatasetError::InvalidConfig(format!(
                "validation_fraction {validation_fraction} must lie in [0, 1)"
            )));
        }
        let split_cfg = SplitConfig {
            seed: seeds.split,
            ..*split_cfg
        };
        let (train, test) = split(samples, &split_cfg)?;
        let (fit, validation) = holdout_validation(&train, validation_fraction, seeds.validation)?;
        let balanced = oversample(&fit, seeds.oversample)?;
        let manifest = Self {
            version: MANIFEST_VERSION,
            class_names: ConditionClass::names(),
            split: split_cfg,
            validation_fraction,
            seeds,
            config_hash: config_hash.into(),
            class_counts: ClassCounts {
                all: class_counts(samples),
                train: class_counts(&train),
                test: class_counts(&test),
                validation: class_counts(&validation),
                fit: class_counts(&fit),
                train_balanced: class_counts(&balanced),
            },
            train,
            test,
            validation: validation.into_iter().map(|s| s.sample_id).collect(),
            train_balanced: balanced.into_iter().map(|s| s.sample_id).collect(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks the split invariants.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidConfig(format!("manifest: {m}")));
        let train_ids: HashSet<&str> = self.train.iter().map(|s| s.sample_id.as_str()).collect();
        if train_ids.len() != self.train.len() {
            return bad("duplicate id in train".into());
        }
        let mut test_ids = HashSet::new();
        for s in &self.test {
            if train_ids.contains(s.sample_id.as_str()) {
                return bad(format!("{} is in both train and test", s.sample_id));
            }
            if !test_ids.insert(s.sample_id.as_str()) {
                return bad(format!("{} listed twice in test", s.sample_id));
            }
        }
        let val: HashSet<&str> = self.validation.iter().map(String::as_str).collect();
        for id in self.validation.iter().chain(&self.train_balanced) {
            if !train_ids.contains(id.as_str()) {
                return bad(format!("{id} is not a training sample"));
            }
        }
        if let Some(id) = self.train_balanced.iter().find(|id| val.contains(id.as_str())) {
            return bad(format!("validation sample {id} is also used for fitting"));
        }
        let counts = self.class_counts.train_balanced;
        let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
        if present.windows(2).any(|w| w[0] != w[1]) {
            return bad(format!("oversampled counts {counts:?} are not equal"));
        }
        Ok(())
    }

    pub fn lookup(&self) -> HashMap<&str, &LabeledSample> {
        self.train
            .iter()
            .chain(&self.test)
            .map(|s| (s.sample_id.as_str(), s))
            .collect()
    }

    fn resolve<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a LabeledSample>, DatasetError> {
        let map = self.lookup();
        ids.iter()
            .map(|id| {
                map.get(id.as_str())
                    .copied()
                    .ok_or_else(|| DatasetError::UnknownSample(id.clone()))
            })
            .collect()
    }

    pub fn balanced_samples(&self) -> Result<Vec<&LabeledSample>, DatasetError> {
        self.resolve(&self.train_balanced)
    }

    pub fn validation_samples(&self) -> Result<Vec<&LabeledSample>, DatasetError> {
        self.resolve(&self.validation)
    }

    /// Named split: `train` (balanced fit list), `validation`, `test`.
    pub fn split_samples(&self, name: &str) -> Result<Vec<&LabeledSample>, DatasetError> {
        match name {
            "train" => self.balanced_samples(),
            "validation" => self.validation_samples(),
            "test" => Ok(self.test.iter().collect()),
            other => Err(DatasetError::InvalidConfig(format!(
                "unknown split {other:?}; expected train, validation or test"
            ))),
        }
    }
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    crate::geo::io::write_json(path, m)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = crate::geo::io::read_json(path)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format(path, format!("unsupported manifest version {}", m.version)));
    }
    m.validate()?;
    Ok(m)
}
