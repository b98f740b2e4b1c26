//! CSV inputs for centerlines and section lists, and the crop output
//! (RGBA PNG with the mask in alpha, plus a JSON sidecar).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::projection::TransverseMercator;
use super::{Centerline, GeoPoint, LinearUnit, PixelWindow, SectionImage, SectionSpec};
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
struct CenterlineRow {
    route_id: String,
    milepoint: f64,
    x: f64,
    y: f64,
}

/// Reads `route_id,milepoint,x,y` rows into one centerline per route.
///
/// With `projection` set, `x`/`y` are longitude/latitude in degrees and are
/// projected first.
pub fn read_centerlines(
    path: &Path,
    crs_id: &str,
    unit: LinearUnit,
    projection: Option<&TransverseMercator>,
) -> Result<BTreeMap<String, Centerline>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut routes: BTreeMap<String, (Vec<GeoPoint>, Vec<f64>)> = BTreeMap::new();
    for row in rdr.deserialize::<CenterlineRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let p = match projection {
            Some(tm) => tm.project(row.x, row.y),
            None => GeoPoint::new(row.x, row.y),
        };
        let entry = routes.entry(row.route_id).or_default();
        entry.0.push(p);
        entry.1.push(row.milepoint);
    }
    routes
        .into_iter()
        .map(|(route, (vertices, milepoints))| {
            let line = Centerline::new(route.clone(), crs_id, unit, vertices, milepoints)?;
            Ok((route, line))
        })
        .collect()
}

pub fn read_sections(path: &Path) -> Result<Vec<SectionSpec>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    rdr.deserialize::<SectionSpec>()
        .map(|r| r.map_err(|e| Error::csv(path, e)))
        .collect()
}

pub fn write_sections(path: &Path, sections: &[SectionSpec]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for s in sections {
        w.serialize(s).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// JSON sidecar written next to each section PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSidecar {
    pub route_name: String,
    pub offset_from: f64,
    pub offset_to: f64,
    pub pixel_window: PixelWindow,
    pub crs_id: String,
}

impl CropSidecar {
    pub fn spec(&self) -> SectionSpec {
        SectionSpec::new(self.route_name.clone(), self.offset_from, self.offset_to)
    }
}

/// Writes `<stem>.png` (RGB + mask as alpha) and `<stem>.json` into `dir`.
pub fn write_section_image(dir: &Path, stem: &str, img: &SectionImage) -> Result<()> {
    let png_path = dir.join(format!("{stem}.png"));
    let mut rgba = Vec::with_capacity(img.width * img.height * 4);
    for (i, &m) in img.mask.iter().enumerate() {
        let px = &img.pixels[i * img.bands..(i + 1) * img.bands];
        let (r, g, b) = if img.bands >= 3 {
            (px[0], px[1], px[2])
        } else {
            (px[0], px[0], px[0])
        };
        rgba.extend_from_slice(&[r, g, b, if m != 0 { 255 } else { 0 }]);
    }
    write_rgba_png(&png_path, img.width as u32, img.height as u32, &rgba)?;

    let sidecar = CropSidecar {
        route_name: img.spec.route_name.clone(),
        offset_from: img.spec.offset_from,
        offset_to: img.spec.offset_to,
        pixel_window: img.window,
        crs_id: img.crs_id.clone(),
    };
    write_json(&dir.join(format!("{stem}.json")), &sidecar)
}

pub(crate) fn write_rgba_png(path: &Path, width: u32, height: u32, rgba: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = image::codecs::png::PngEncoder::new(BufWriter::new(file));
    image::ImageEncoder::write_image(
        encoder,
        rgba,
        width,
        height,
        image::ExtendedColorType::Rgba8,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_sidecar(path: &Path) -> Result<CropSidecar> {
    read_json(path)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
