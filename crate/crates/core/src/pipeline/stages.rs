use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{create_dir, ImageSource, PipelineConfig};
use crate::dataset::{
    file_stem, join_labels, load_masked_png, read_manifest, sample_id, write_manifest,
    write_rejects, DatasetError, DatasetManifest, LabeledSample, Reject, RejectReason,
    SectionImageRef,
};
use crate::ensemble::{
    combine, read_accuracies, read_any_prediction, read_interchange, write_accuracies,
    write_ensemble, write_interchange, EnsembleMode, EnsemblePrediction, ModelPrediction,
};
use crate::geo::geotiff::read_geotiff;
use crate::geo::io::{read_centerlines, read_sections, read_sidecar, write_section_image};
use crate::geo::projection::TransverseMercator;
use crate::geo::{crop_section, mosaic_lookup, section_polygon, Centerline, GeoRaster, SectionSpec};
use crate::metrics::{summarize, write_confusion_csv, write_summary_json, Averaging, ConfusionMatrix, MetricsSummary};
use crate::model::{self, read_history, write_history, Net, TrainConfig, TrainingHistory};
use crate::pmis::records::{
    read_coefficients, read_measurements, read_pmis_records, score_measurements, write_labels,
    LabelRecord,
};
use crate::pmis::ConditionScore;
use crate::seed::{derive_seed, SeedPart};
use crate::{ConditionClass, Error, Result};

/// One section that could not be extracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractFailure {
    pub route_name: String,
    pub offset_from: f64,
    pub offset_to: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtractReport {
    /// Sample ids of the images written.
    pub written: Vec<String>,
    pub failures: Vec<ExtractFailure>,
}

pub(crate) fn load_centerlines(cfg: &PipelineConfig, crs: &str) -> Result<BTreeMap<String, Centerline>> {
    let path = cfg.require(&cfg.paths.centerlines, "centerlines")?;
    let tm = cfg.geo.utm_zone.map(TransverseMercator::utm_north);
    read_centerlines(path, crs, cfg.geo.unit, tm.as_ref())
}

fn load_rasters(dir: &Path) -> Result<Vec<GeoRaster>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| x.eq_ignore_ascii_case("tif") || x.eq_ignore_ascii_case("tiff"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no GeoTIFF files in {}", dir.display())));
    }
    paths.iter().map(|p| read_geotiff(p)).collect()
}

/// CRS for centerlines: configured, else that of the first raster.
pub(crate) fn centerline_crs(cfg: &PipelineConfig, rasters: Option<&[GeoRaster]>) -> Result<String> {
    if let Some(crs) = &cfg.geo.crs {
        return Ok(crs.clone());
    }
    if let Some(r) = rasters.and_then(|r| r.first()) {
        return Ok(r.crs_id.clone());
    }
    let dir = cfg.require(&cfg.paths.rasters, "rasters")?;
    Ok(load_rasters(dir)?[0].crs_id.clone())
}

fn write_failures(path: &Path, failures: &[ExtractFailure]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(["route_name", "offset_from", "offset_to", "error"])
        .map_err(|e| Error::csv(path, e))?;
    for f in failures {
        w.serialize(f).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Crops every listed section out of the raster tiles into
/// `sections/<stem>.png|json`. Sections that cannot be cut (unknown route,
/// offsets off the centerline, no raster coverage) go to
/// `extract_failures.csv`.
pub fn cmd_extract(cfg: &PipelineConfig) -> Result<ExtractReport> {
    let tiles = load_rasters(cfg.require(&cfg.paths.rasters, "rasters")?)?;
    let crs = centerline_crs(cfg, Some(&tiles))?;
    let lines = load_centerlines(cfg, &crs)?;
    let sections = read_sections(cfg.require(&cfg.paths.sections, "sections")?)?;
    let out_dir = cfg.path("sections");
    create_dir(&out_dir)?;
    let mut report = ExtractReport::default();
    for spec in &sections {
        let result = (|| -> Result<String> {
            let line = lines.get(&spec.route_name).ok_or_else(|| {
                Error::Config(format!("no centerline for route {:?}", spec.route_name))
            })?;
            let poly = section_polygon(line, spec, cfg.geo.half_width_ft)?;
            let mosaic = mosaic_lookup(&tiles, &poly)?;
            let img = crop_section(&mosaic, &poly)?;
            let id = sample_id(spec);
            write_section_image(&out_dir, &file_stem(&id), &img)?;
            Ok(id)
        })();
        match result {
            Ok(id) => report.written.push(id),
            Err(e) => {
                tracing::warn!(route = %spec.route_name, from = spec.offset_from, to = spec.offset_to, error = %e, "section not extracted");
                report.failures.push(ExtractFailure {
                    route_name: spec.route_name.clone(),
                    offset_from: spec.offset_from,
                    offset_to: spec.offset_to,
                    error: e.to_string(),
                });
            }
        }
    }
    write_failures(&cfg.path("extract_failures.csv"), &report.failures)?;
    tracing::info!(written = report.written.len(), failed = report.failures.len(), "extract finished");
    Ok(report)
}

/// Writes `labels.csv`. Scores are recomputed from raw measurements when
/// `paths.measurements` and `paths.coefficients` are set, else read from
/// `paths.pmis`.
pub fn cmd_score(cfg: &PipelineConfig) -> Result<Vec<LabelRecord>> {
    let labels = match (&cfg.paths.measurements, &cfg.paths.coefficients) {
        (Some(_), Some(_)) => {
            let m = read_measurements(cfg.require(&cfg.paths.measurements, "measurements")?)?;
            let table = read_coefficients(cfg.require(&cfg.paths.coefficients, "coefficients")?)?;
            m.iter()
                .map(|s| Ok(LabelRecord::new(&s.spec, score_measurements(s, &table, &cfg.pmis.ride_curve)?)))
                .collect::<Result<Vec<_>>>()?
        }
        (None, None) => {
            let path = cfg.require(&cfg.paths.pmis, "pmis")?;
            read_pmis_records(path)?
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let score = ConditionScore::new(r.condition_score)
                        .map_err(|e| Error::format(path, format!("row {}: {e}", i + 2)))?;
                    Ok(LabelRecord::new(&r.spec(), score))
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => {
            return Err(Error::Config(
                "paths.measurements and paths.coefficients must be set together".into(),
            ))
        }
    };
    create_dir(&cfg.workdir)?;
    write_labels(&cfg.path("labels.csv"), &labels)?;
    tracing::info!(sections = labels.len(), "score finished");
    Ok(labels)
}

fn config_hash(cfg: &PipelineConfig) -> String {
    let key = serde_json::json!({
        "seed": cfg.seed,
        "dataset": cfg.dataset,
    });
    crate::seed::sha256_hex(key.to_string().as_bytes())
}

/// Joins extracted images with `labels.csv`, splits, holds out validation
/// samples and oversamples; writes `manifest.json` and `rejects.csv`.
pub fn cmd_build(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let sections = cfg.path("sections");
    let mut sidecars: Vec<PathBuf> = std::fs::read_dir(&sections)
        .map_err(|e| Error::io(&sections, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    sidecars.sort();
    let mut images = Vec::with_capacity(sidecars.len());
    let mut empty = Vec::new();
    for path in &sidecars {
        let spec = read_sidecar(path)?.spec();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let rel = format!("sections/{stem}.png");
        if load_masked_png(&cfg.path(&rel))?.inside_count() == 0 {
            empty.push(spec);
            continue;
        }
        images.push(SectionImageRef { spec, image: rel });
    }
    let labels = crate::pmis::records::read_labels(&cfg.path("labels.csv"))?;
    let mut joined = join_labels(&images, &labels)?;
    for spec in empty {
        joined.rejects.push(Reject {
            route_name: spec.route_name,
            offset_from: spec.offset_from,
            offset_to: spec.offset_to,
            reason: RejectReason::ImageFullyMasked,
        });
    }
    write_rejects(&cfg.path("rejects.csv"), &joined.rejects)?;
    let manifest = DatasetManifest::build(
        &joined.samples,
        &cfg.dataset.split,
        cfg.dataset.validation_fraction,
        cfg.manifest_seeds(),
        config_hash(cfg),
    )?;
    write_manifest(&cfg.manifest_path(), &manifest)?;
    tracing::info!(
        samples = joined.samples.len(),
        rejects = joined.rejects.len(),
        train = manifest.train.len(),
        test = manifest.test.len(),
        "build finished"
    );
    Ok(manifest)
}

/// Trains model `model_id` on the manifest's oversampled fit set, tracking
/// the validation holdout; writes weights and history under `models/`.
pub fn cmd_train(cfg: &PipelineConfig, model_id: &str) -> Result<TrainingHistory> {
    let manifest = read_manifest(&cfg.manifest_path())?;
    let seed = cfg.model_seed(model_id);
    let size = cfg.dataset.normalize_size;
    let augmentation = cfg.dataset.augment.then(|| {
        let stream = derive_seed(manifest.seeds.augment, &[SeedPart::Str(model_id)]);
        (cfg.dataset.augmentation.clone(), stream)
    });
    let fit = ImageSource::load(&cfg.workdir, &manifest.balanced_samples()?, size, augmentation)?;
    let validation = ImageSource::load(&cfg.workdir, &manifest.validation_samples()?, size, None)?;
    let mut net = Net::new(&cfg.net_config(), seed)?;
    let train_cfg = TrainConfig { seed, ..cfg.train };
    tracing::info!(model_id, fit = fit_len(&fit), validation = fit_len(&validation), "training");
    let mut history = model::train(&mut net, &fit, Some(&validation), &train_cfg)?;
    if cfg.model.fine_tune_epochs > 0 {
        let ft_cfg = TrainConfig {
            epochs: cfg.model.fine_tune_epochs,
            seed: derive_seed(seed, &[SeedPart::Str("fine-tune")]),
            ..train_cfg
        };
        let offset = history.len();
        let more = model::fine_tune(&mut net, &fit, Some(&validation), &ft_cfg)?;
        history.epochs.extend(more.epochs.into_iter().map(|mut e| {
            e.epoch += offset;
            e
        }));
    }
    create_dir(&cfg.path("models"))?;
    model::save(&net, &cfg.weights_path(model_id))?;
    write_history(&cfg.history_path(model_id), &history)?;
    Ok(history)
}

fn fit_len(s: &ImageSource) -> usize {
    crate::model::SampleSource::len(s)
}

/// Samples of a named split: `train` (every training sample once),
/// `validation`, `test` or `all`.
fn split_for_prediction<'a>(m: &'a DatasetManifest, split: &str) -> Result<Vec<&'a LabeledSample>> {
    Ok(match split {
        "train" => m.train.iter().collect(),
        "all" => {
            let mut all: Vec<&LabeledSample> = m.train.iter().chain(&m.test).collect();
            all.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
            all
        }
        other => m.split_samples(other)?,
    })
}

/// Runs a trained model over a split and writes
/// `predictions/<model_id>.<split>.csv` in the interchange format.
pub fn cmd_predict(cfg: &PipelineConfig, model_id: &str, split: &str) -> Result<ModelPrediction> {
    let manifest = read_manifest(&cfg.manifest_path())?;
    let net = model::load(&cfg.weights_path(model_id))?;
    let samples = split_for_prediction(&manifest, split)?;
    let source = ImageSource::load(&cfg.workdir, &samples, cfg.dataset.normalize_size, None)?;
    let pred = model::predict(&net, &source, model_id)?;
    let out = cfg.prediction_path(model_id, split);
    create_dir(out.parent().expect("prediction path has a parent"))?;
    write_interchange(&out, std::slice::from_ref(&pred))?;
    tracing::info!(model_id, split, samples = pred.len(), path = %out.display(), "predict finished");
    Ok(pred)
}

/// Soft-votes the models in `inputs` (interchange files, one or more models
/// each) and writes the ensemble file to `out`. Accuracy weighting reads
/// `accuracies.json` from the workdir unless the config lists accuracies.
pub fn cmd_ensemble(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<EnsemblePrediction> {
    let mut preds = Vec::new();
    for p in inputs {
        preds.extend(read_interchange(p)?);
    }
    let mut ens_cfg = cfg.ensemble.clone();
    if ens_cfg.mode == EnsembleMode::AccuracyWeighted && ens_cfg.accuracies.is_empty() {
        ens_cfg.accuracies = read_accuracies(&cfg.path("accuracies.json"))?;
    }
    let e = combine(&preds, &ens_cfg)?;
    if let Some(dir) = out.parent() {
        create_dir(dir)?;
    }
    write_ensemble(out, &e)?;
    tracing::info!(models = e.model_ids.len(), samples = e.sample_ids.len(), path = %out.display(), "ensemble finished");
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub model_id: String,
    pub out_dir: PathBuf,
    pub matrix: ConfusionMatrix,
    pub summary: MetricsSummary,
}

fn history_model_id(path: &Path) -> String {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
    name.strip_suffix(".history.csv").unwrap_or(name).to_string()
}

fn write_learning_curves(path: &Path, histories: &[PathBuf]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["model_id", "epoch", "train_loss", "val_loss", "train_acc", "val_acc"])
        .map_err(|e| Error::csv(path, e))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for h in histories {
        let id = history_model_id(h);
        for e in read_history(h)?.epochs {
            w.write_record([
                id.clone(),
                e.epoch.to_string(),
                e.train_loss.to_string(),
                opt(e.val_loss),
                e.train_acc.to_string(),
                opt(e.val_acc),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn default_histories(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.path("models");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".history.csv")))
        .collect();
    out.sort();
    Ok(out)
}

/// Scores a prediction file (interchange with one model, or ensemble
/// output) against the manifest labels. Writes `confusion.csv`,
/// `summary.json` and `learning_curves.csv` to `eval/<file stem>/`; with no
/// `histories` given, every history under `models/` is used. Single-model
/// accuracies are also recorded in `accuracies.json`.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    predictions: &Path,
    manifest: &Path,
    histories: &[PathBuf],
) -> Result<Evaluation> {
    let manifest = read_manifest(manifest)?;
    let pred = read_any_prediction(predictions)?;
    let truth = manifest.lookup();
    let mut t = Vec::with_capacity(pred.len());
    for id in pred.sample_ids() {
        let s = truth
            .get(id.as_str())
            .ok_or_else(|| DatasetError::UnknownSample(id.clone()))?;
        t.push(s.label.index());
    }
    let matrix = ConfusionMatrix::from_indices(ConditionClass::names(), &t, &pred.predicted())?;
    let summary = summarize(&matrix, Averaging::Weighted)?;

    let name = predictions
        .file_name()
        .and_then(|s| s.to_str())
        .map(|s| s.strip_suffix(".csv").unwrap_or(s).to_string())
        .unwrap_or_else(|| pred.model_id().to_string());
    let out_dir = cfg.path("eval").join(name);
    create_dir(&out_dir)?;
    write_confusion_csv(&out_dir.join("confusion.csv"), &matrix)?;
    write_summary_json(&out_dir.join("summary.json"), &summary)?;
    let histories = if histories.is_empty() {
        default_histories(cfg)?
    } else {
        histories.to_vec()
    };
    write_learning_curves(&out_dir.join("learning_curves.csv"), &histories)?;

    if pred.model_id() != "ensemble" {
        let acc_path = cfg.path("accuracies.json");
        let mut acc = if acc_path.exists() {
            read_accuracies(&acc_path)?
        } else {
            BTreeMap::new()
        };
        acc.insert(pred.model_id().to_string(), summary.accuracy);
        write_accuracies(&acc_path, &acc)?;
    }
    tracing::info!(
        model_id = pred.model_id(),
        accuracy = summary.accuracy,
        weighted_f1 = summary.weighted_avg.f1,
        macro_f1 = summary.macro_avg.f1,
        "evaluate finished"
    );
    Ok(Evaluation {
        model_id: pred.model_id().to_string(),
        out_dir,
        matrix,
        summary,
    })
}

/// Looks up the polygon of every configured section; failures map to `None`.
pub(crate) fn section_polygons(
    cfg: &PipelineConfig,
) -> Result<Vec<(SectionSpec, Option<crate::geo::SectionPolygon>)>> {
    let crs = centerline_crs(cfg, None)?;
    let lines = load_centerlines(cfg, &crs)?;
    let sections = read_sections(cfg.require(&cfg.paths.sections, "sections")?)?;
    Ok(sections
        .into_iter()
        .map(|spec| {
            let poly = lines
                .get(&spec.route_name)
                .and_then(|l| section_polygon(l, &spec, cfg.geo.half_width_ft).ok());
            (spec, poly)
        })
        .collect())
}
