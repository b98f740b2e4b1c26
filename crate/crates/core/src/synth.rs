//! Procedural test data: pavement textures whose crack density grows with
//! the condition class, and a small georeferenced scenario (GeoTIFF tiles,
//! centerlines, section list, PMIS records) painted with those textures.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{file_stem, sample_id, MaskedImage};
use crate::geo::geotiff::{write_geotiff, TiffCompression};
use crate::geo::io::{write_sections, CropSidecar};
use crate::geo::{AffineGeoTransform, GeoRaster, PixelWindow, SectionSpec};
use crate::pipeline::{InputPaths, PipelineConfig};
use crate::pmis::records::{write_labels, write_pmis_records, LabelRecord, PmisRecord};
use crate::pmis::ConditionScore;
use crate::seed::{derive_seed, rng_from_seed, SeedPart};
use crate::{ConditionClass, Error, Result, NUM_CLASSES};

/// Fraction of crack pixels drawn for each class, best to worst.
pub const CRACK_DENSITY: [(f64, f64); NUM_CLASSES] =
    [(0.0, 0.01), (0.03, 0.05), (0.08, 0.11), (0.15, 0.19), (0.25, 0.31)];

fn noise<R: Rng + ?Sized>(rng: &mut R, amplitude: f32) -> f32 {
    // Sum of uniforms: cheap, bounded, roughly bell shaped.
    (rng.random::<f32>() + rng.random::<f32>() + rng.random::<f32>() - 1.5) * amplitude
}

/// Gray asphalt with speckle and random-walk cracks covering a fraction of
/// pixels drawn from [`CRACK_DENSITY`] for `class`. Fully unmasked.
pub fn distress_texture<R: Rng + ?Sized>(
    class: ConditionClass,
    width: usize,
    height: usize,
    rng: &mut R,
) -> MaskedImage {
    let n = width * height;
    let base: f32 = rng.random_range(95.0..135.0);
    let tint = [rng.random_range(-4.0..4.0f32), 0.0, rng.random_range(-4.0..4.0f32)];
    let mut gray: Vec<f32> = (0..n).map(|_| base + noise(rng, 16.0)).collect();

    let (lo, hi) = CRACK_DENSITY[class.index()];
    let target = (rng.random_range(lo..=hi) * n as f64).round() as usize;
    let mut cracked = vec![false; n];
    let mut count = 0;
    while count < target {
        let (mut x, mut y) = (rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64));
        let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let steps = rng.random_range(8..40);
        for _ in 0..steps {
            let (c, r) = (x.floor() as isize, y.floor() as isize);
            if c < 0 || r < 0 || c >= width as isize || r >= height as isize {
                break;
            }
            let i = r as usize * width + c as usize;
            if !cracked[i] {
                cracked[i] = true;
                count += 1;
                if count >= target {
                    break;
                }
            }
            heading += rng.random_range(-0.5..0.5);
            x += heading.cos();
            y += heading.sin();
        }
    }
    for (g, &c) in gray.iter_mut().zip(&cracked) {
        if c {
            *g = base * 0.35 + noise(rng, 6.0);
        }
    }
    let mut pixels = Vec::with_capacity(n * 3);
    for g in gray {
        for t in tint {
            pixels.push((g + t).clamp(0.0, 255.0).round());
        }
    }
    MaskedImage::new(width, height, 3, pixels, vec![1; n]).expect("buffer sizes match")
}

/// A condition score drawn uniformly among the integers of the class range.
pub fn score_in_class<R: Rng + ?Sized>(class: ConditionClass, rng: &mut R) -> ConditionScore {
    let (lo, hi) = class.score_range();
    let hi = if class == ConditionClass::VeryGood { hi } else { hi - 1.0 };
    let v = rng.random_range(lo as u32..=hi as u32);
    ConditionScore::new(v as f64).expect("class ranges lie in [1, 100]")
}

/// Classes cycled evenly over `n` items, then shuffled.
fn balanced_classes(n: usize, rng: &mut ChaCha8Rng) -> Vec<ConditionClass> {
    let mut classes: Vec<ConditionClass> = (0..n).map(|i| ConditionClass::ALL[i % NUM_CLASSES]).collect();
    classes.shuffle(rng);
    classes
}

#[derive(Debug, Clone)]
pub struct TextureDataset {
    pub samples: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for TextureDataset {
    fn default() -> Self {
        Self {
            samples: 500,
            size: 64,
            seed: 0,
        }
    }
}

/// Writes `sections/<stem>.png|json` and `labels.csv` into `workdir`, laid
/// out as if extraction and scoring had already run. Returns the labels.
pub fn write_texture_dataset(workdir: &Path, cfg: &TextureDataset) -> Result<Vec<LabelRecord>> {
    let sections = workdir.join("sections");
    std::fs::create_dir_all(&sections).map_err(|e| Error::io(&sections, e))?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[SeedPart::Str("synth-classes")]));
    let classes = balanced_classes(cfg.samples, &mut rng);
    let mut labels = Vec::with_capacity(cfg.samples);
    for (i, &class) in classes.iter().enumerate() {
        let spec = SectionSpec::new("SYN", i as f64 * 0.5, (i + 1) as f64 * 0.5);
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[SeedPart::Str("synth-texture"), SeedPart::from(i)]));
        let img = distress_texture(class, cfg.size, cfg.size, &mut rng);
        let stem = file_stem(&sample_id(&spec));
        img.write_png(&sections.join(format!("{stem}.png")))?;
        let sidecar = CropSidecar {
            route_name: spec.route_name.clone(),
            offset_from: spec.offset_from,
            offset_to: spec.offset_to,
            pixel_window: PixelWindow {
                col: 0,
                row: 0,
                width: cfg.size,
                height: cfg.size,
            },
            crs_id: "synthetic".into(),
        };
        crate::geo::io::write_json(&sections.join(format!("{stem}.json")), &sidecar)?;
        labels.push(LabelRecord::new(&spec, score_in_class(class, &mut rng)));
    }
    write_labels(&workdir.join("labels.csv"), &labels)?;
    Ok(labels)
}

/// Layout of the georeferenced scenario: straight east-running routes in a
/// foot-based CRS, split into two raster tiles.
#[derive(Debug, Clone)]
pub struct GeoScenario {
    pub routes: Vec<String>,
    pub sections_per_route: usize,
    /// Section length in miles.
    pub section_miles: f64,
    /// Ground sample distance in feet.
    pub pixel_size: f64,
    pub crs_id: String,
    pub seed: u64,
}

impl Default for GeoScenario {
    fn default() -> Self {
        Self {
            routes: vec!["SH-1".into(), "FM-2".into()],
            sections_per_route: 15,
            section_miles: 0.02,
            pixel_size: 2.0,
            crs_id: "EPSG:2278".into(),
            seed: 0,
        }
    }
}

/// Files written by [`write_geo_scenario`].
#[derive(Debug, Clone)]
pub struct GeoScenarioFiles {
    pub config: PathBuf,
    pub sections: Vec<SectionSpec>,
    pub labels: Vec<LabelRecord>,
}

const MARGIN_FT: f64 = 40.0;
const ROUTE_SPACING_FT: f64 = 60.0;
const HALF_WIDTH_FT: f64 = 12.0;

/// Writes rasters, centerlines, sections, PMIS records and a pipeline
/// config (`pipeline.json`, workdir `work`) under `dir`.
///
/// The section list holds one extra entry past the end of the last route
/// and the PMIS file one record without a matching section, so the
/// failure and reject reports are exercised.
pub fn write_geo_scenario(dir: &Path, sc: &GeoScenario) -> Result<GeoScenarioFiles> {
    let rasters_dir = dir.join("rasters");
    std::fs::create_dir_all(&rasters_dir).map_err(|e| Error::io(&rasters_dir, e))?;
    let g = sc.pixel_size;
    let route_ft = sc.sections_per_route as f64 * sc.section_miles * crate::geo::FEET_PER_MILE;
    let width = ((route_ft + 2.0 * MARGIN_FT) / g).ceil() as usize;
    let height = ((ROUTE_SPACING_FT * (sc.routes.len() + 1) as f64) / g).ceil() as usize;
    let top = height as f64 * g;
    let route_y = |r: usize| top - ROUTE_SPACING_FT * (r + 1) as f64;

    let mut rng = rng_from_seed(derive_seed(sc.seed, &[SeedPart::Str("scenario-classes")]));
    let n = sc.routes.len() * sc.sections_per_route;
    let classes = balanced_classes(n, &mut rng);

    let mut data = vec![0u8; width * height * 3];
    // Grass background.
    let mut bg = rng_from_seed(derive_seed(sc.seed, &[SeedPart::Str("scenario-background")]));
    for px in data.chunks_exact_mut(3) {
        px.copy_from_slice(&[
            (70.0 + noise(&mut bg, 20.0)) as u8,
            (110.0 + noise(&mut bg, 20.0)) as u8,
            (60.0 + noise(&mut bg, 20.0)) as u8,
        ]);
    }
    let sec_px = sc.section_miles * crate::geo::FEET_PER_MILE / g;
    let road_px = (2.0 * HALF_WIDTH_FT / g).ceil() as usize + 2;
    let milli = |k: usize| (k as f64 * sc.section_miles * 1000.0).round() / 1000.0;
    let mut sections = Vec::with_capacity(n + 1);
    let mut pmis = Vec::with_capacity(n + 1);
    let mut labels = Vec::with_capacity(n);
    for (r, route) in sc.routes.iter().enumerate() {
        let y = route_y(r);
        let road_top = ((top - (y + HALF_WIDTH_FT)) / g).floor() as usize;
        let road_bottom = ((top - (y - HALF_WIDTH_FT)) / g).ceil() as usize;
        for s in 0..sc.sections_per_route {
            let k = r * sc.sections_per_route + s;
            let class = classes[k];
            let mut rng = rng_from_seed(derive_seed(sc.seed, &[SeedPart::Str("scenario-section"), SeedPart::from(k)]));
            let col0 = (MARGIN_FT / g + s as f64 * sec_px).floor() as usize;
            let col1 = ((MARGIN_FT / g + (s + 1) as f64 * sec_px).ceil() as usize).min(width);
            let tex = distress_texture(class, col1 - col0, road_px.max(road_bottom - road_top), &mut rng);
            for row in road_top..road_bottom.min(height) {
                for col in col0..col1 {
                    let t = ((row - road_top) * tex.width + (col - col0)) * 3;
                    let d = (row * width + col) * 3;
                    for c in 0..3 {
                        data[d + c] = tex.pixels[t + c] as u8;
                    }
                }
            }
            let (from, to) = (milli(s), milli(s + 1));
            let spec = SectionSpec::new(route.clone(), from, to);
            let score = score_in_class(class, &mut rng);
            pmis.push(PmisRecord {
                route_name: route.clone(),
                offset_from: from,
                offset_to: to,
                condition_score: score.value(),
            });
            labels.push(LabelRecord::new(&spec, score));
            sections.push(spec);
        }
    }
    let last = sc.routes.last().cloned().unwrap_or_default();
    let end = milli(sc.sections_per_route);
    sections.push(SectionSpec::new(last.clone(), end, milli(sc.sections_per_route + 1)));
    pmis.push(PmisRecord {
        route_name: last,
        offset_from: milli(sc.sections_per_route + 1),
        offset_to: milli(sc.sections_per_route + 2),
        condition_score: 75.0,
    });

    // Two tiles split at mid-width so some sections need a mosaic.
    let split = width / 2;
    for (t, (c0, c1)) in [(0, split), (split, width)].into_iter().enumerate() {
        let w = c1 - c0;
        let mut tile = Vec::with_capacity(w * height * 3);
        for row in 0..height {
            tile.extend_from_slice(&data[(row * width + c0) * 3..(row * width + c1) * 3]);
        }
        let transform = AffineGeoTransform::north_up(c0 as f64 * g, top, g)?;
        let raster = GeoRaster::new(format!("tile{t}"), w, height, 3, transform, &sc.crs_id, tile)?;
        write_geotiff(&rasters_dir.join(format!("tile{t}.tif")), &raster, TiffCompression::Deflate)?;
    }

    let centerlines = dir.join("centerlines.csv");
    let mut w = csv::Writer::from_path(&centerlines).map_err(|e| Error::csv(&centerlines, e))?;
    w.write_record(["route_id", "milepoint", "x", "y"]).map_err(|e| Error::csv(&centerlines, e))?;
    for (r, route) in sc.routes.iter().enumerate() {
        let y = route_y(r);
        for (m, x) in [(0.0, MARGIN_FT), (end, MARGIN_FT + route_ft)] {
            w.write_record([route.clone(), m.to_string(), x.to_string(), y.to_string()])
                .map_err(|e| Error::csv(&centerlines, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&centerlines, e))?;
    write_sections(&dir.join("sections.csv"), &sections)?;
    write_pmis_records(&dir.join("pmis.csv"), &pmis)?;

    let mut cfg = PipelineConfig {
        seed: sc.seed,
        workdir: PathBuf::from("work"),
        paths: InputPaths {
            rasters: Some("rasters".into()),
            centerlines: Some("centerlines.csv".into()),
            sections: Some("sections.csv".into()),
            pmis: Some("pmis.csv".into()),
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.geo.half_width_ft = HALF_WIDTH_FT;
    cfg.dataset.normalize_size = (16, 64);
    cfg.train.epochs = 5;
    cfg.train.batch_size = 8;
    let config = dir.join("pipeline.json");
    crate::geo::io::write_json(&config, &cfg)?;
    Ok(GeoScenarioFiles {
        config,
        sections,
        labels,
    })
}
