//! File-to-file pipeline stages driven by one JSON config.
//!
//! Layout of the working directory:
//!
//! ```text
//! sections/<stem>.png|json      extract
//! extract_failures.csv          extract
//! labels.csv                    score
//! manifest.json, rejects.csv    build
//! models/<id>.weights           train
//! models/<id>.history.csv       train
//! predictions/<id>.<split>.csv  predict, ensemble
//! eval/<name>/                  evaluate (confusion.csv, summary.json, learning_curves.csv)
//! accuracies.json               evaluate (single-model predictions)
//! report.geojson                report
//! ```
//!
//! Every path written into an artifact is relative to the working
//! directory, so two runs in different directories produce identical bytes.

mod report;
mod source;
mod stages;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{AugmentationConfig, ManifestSeeds, SplitConfig};
use crate::ensemble::EnsembleConfig;
use crate::geo::LinearUnit;
use crate::model::{CompactNetConfig, ConvBlockConfig, TrainConfig};
use crate::pmis::RideUtilityCurve;
use crate::seed::{derive_seed, stage_seed, SeedPart};
use crate::{Error, Result};

pub use report::{cmd_report, REPORT_FILE};
pub use source::ImageSource;
pub use stages::{
    cmd_build, cmd_ensemble, cmd_evaluate, cmd_extract, cmd_predict, cmd_score, cmd_train,
    Evaluation, ExtractFailure, ExtractReport,
};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    /// Directory of GeoTIFF tiles (`*.tif`, `*.tiff`).
    pub rasters: Option<PathBuf>,
    /// `route_id,milepoint,x,y`
    pub centerlines: Option<PathBuf>,
    /// `route_name,offset_from,offset_to`
    pub sections: Option<PathBuf>,
    /// `route_name,offset_from,offset_to,condition_score`
    pub pmis: Option<PathBuf>,
    /// Raw distress/ride measurements; with `coefficients`, scores are
    /// recomputed instead of read from `pmis`.
    pub measurements: Option<PathBuf>,
    pub coefficients: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoParams {
    pub half_width_ft: f64,
    /// CRS id of the centerlines. Defaults to the CRS of the first raster.
    pub crs: Option<String>,
    pub unit: LinearUnit,
    /// When set, centerline x/y are longitude/latitude and are projected to
    /// this UTM zone (northern hemisphere).
    pub utm_zone: Option<u8>,
}

impl Default for GeoParams {
    fn default() -> Self {
        Self {
            half_width_ft: crate::geo::DEFAULT_HALF_WIDTH_FT,
            crs: None,
            unit: LinearUnit::Foot,
            utm_zone: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmisParams {
    pub ride_curve: RideUtilityCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    /// The seed field is ignored; split seeds derive from the global seed.
    pub split: SplitConfig,
    pub validation_fraction: f64,
    /// Augment training inputs each epoch. The test split never is.
    pub augment: bool,
    /// The seed field is ignored, as for `split`.
    pub augmentation: AugmentationConfig,
    /// `(height, width)` of the network input.
    pub normalize_size: (usize, usize),
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            split: SplitConfig::default(),
            validation_fraction: 0.1,
            augment: true,
            augmentation: AugmentationConfig::default(),
            normalize_size: (224, 224),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub conv_blocks: Vec<ConvBlockConfig>,
    pub dense_hidden: Vec<usize>,
    /// Layer names excluded from updates during the main training phase.
    pub frozen: Vec<String>,
    /// Epochs of all-layer training at `train.fine_tune_lr` after the main
    /// phase; 0 skips it.
    pub fine_tune_epochs: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        let desk = CompactNetConfig::desk_scale(1, 1);
        Self {
            conv_blocks: desk.conv_blocks,
            dense_hidden: desk.dense_hidden,
            frozen: Vec::new(),
            fine_tune_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Global seed; every stage seed is derived from it.
    pub seed: u64,
    pub workdir: PathBuf,
    pub paths: InputPaths,
    pub geo: GeoParams,
    pub pmis: PmisParams,
    pub dataset: DatasetParams,
    pub model: ModelParams,
    /// The seed field is ignored; each model's seed derives from the global
    /// seed and the model id.
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workdir: PathBuf::from("work"),
            paths: InputPaths::default(),
            geo: GeoParams::default(),
            pmis: PmisParams::default(),
            dataset: DatasetParams::default(),
            model: ModelParams::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = crate::geo::io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.workdir);
        let InputPaths {
            rasters,
            centerlines,
            sections,
            pmis,
            measurements,
            coefficients,
        } = &mut self.paths;
        for p in [rasters, centerlines, sections, pmis, measurements, coefficients]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.split.validate()?;
        self.dataset.augmentation.validate()?;
        self.train.validate()?;
        let (h, w) = self.dataset.normalize_size;
        if h == 0 || w == 0 {
            return Err(Error::Config("normalize_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dataset.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if !(self.geo.half_width_ft > 0.0) {
            return Err(Error::Config("half_width_ft must be positive".into()));
        }
        Ok(())
    }

    /// Input path that a stage needs, or a config error naming it.
    pub(crate) fn require<'a>(&self, p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        let p = p
            .as_deref()
            .ok_or_else(|| Error::Config(format!("paths.{name} is not set")))?;
        if !p.exists() {
            return Err(Error::Config(format!("paths.{name} {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.workdir.join(rel)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path("manifest.json")
    }

    pub fn weights_path(&self, model_id: &str) -> PathBuf {
        self.path("models").join(format!("{model_id}.weights"))
    }

    pub fn history_path(&self, model_id: &str) -> PathBuf {
        self.path("models").join(format!("{model_id}.history.csv"))
    }

    pub fn prediction_path(&self, model_id: &str, split: &str) -> PathBuf {
        self.path("predictions").join(format!("{model_id}.{split}.csv"))
    }

    pub fn manifest_seeds(&self) -> ManifestSeeds {
        ManifestSeeds {
            split: stage_seed(self.seed, "split"),
            validation: stage_seed(self.seed, "validation"),
            oversample: stage_seed(self.seed, "oversample"),
            augment: stage_seed(self.seed, "augment"),
        }
    }

    pub fn model_seed(&self, model_id: &str) -> u64 {
        derive_seed(self.seed, &[SeedPart::Str("train"), SeedPart::Str(model_id)])
    }

    pub fn net_config(&self) -> CompactNetConfig {
        let (h, w) = self.dataset.normalize_size;
        CompactNetConfig {
            input: (3, h, w),
            conv_blocks: self.model.conv_blocks.clone(),
            dense_hidden: self.model.dense_hidden.clone(),
            frozen: self.model.frozen.clone(),
        }
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
