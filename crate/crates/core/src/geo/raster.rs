use serde::{Deserialize, Serialize};

use super::{AffineGeoTransform, GeoError, GeoPoint, SectionPolygon, SectionSpec};

/// 8-bit georeferenced raster, pixel-interleaved, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub transform: AffineGeoTransform,
    pub crs_id: String,
    pub data: Vec<u8>,
    pub nodata: Option<u8>,
}

impl GeoRaster {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        bands: usize,
        transform: AffineGeoTransform,
        crs_id: impl Into<String>,
        data: Vec<u8>,
    ) -> Result<Self, GeoError> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(GeoError::InvalidRaster(format!(
                "empty raster {width}x{height}x{bands}"
            )));
        }
        if data.len() != width * height * bands {
            return Err(GeoError::InvalidRaster(format!(
                "data length {} != {width}x{height}x{bands}",
                data.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            bands,
            transform,
            crs_id: crs_id.into(),
            data,
            nodata: None,
        })
    }

    pub fn with_nodata(mut self, nodata: Option<u8>) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[u8] {
        let i = (row * self.width + col) * self.bands;
        &self.data[i..i + self.bands]
    }

    /// World-space bounding box `(min, max)` of the raster footprint.
    pub fn extent(&self) -> (GeoPoint, GeoPoint) {
        let corners = [
            self.transform.pixel_to_world(0.0, 0.0),
            self.transform.pixel_to_world(self.width as f64, 0.0),
            self.transform.pixel_to_world(0.0, self.height as f64),
            self.transform
                .pixel_to_world(self.width as f64, self.height as f64),
        ];
        bbox_of(&corners)
    }

    /// Whether the pixel size matches `gsd` (world units) within 1%.
    pub fn has_ground_sample_distance(&self, gsd: f64) -> bool {
        let (gx, gy) = self.transform.ground_sample_distance();
        (gx - gsd).abs() <= 0.01 * gsd && (gy - gsd).abs() <= 0.01 * gsd
    }
}

fn bbox_of(points: &[GeoPoint]) -> (GeoPoint, GeoPoint) {
    let mut min = GeoPoint::new(f64::INFINITY, f64::INFINITY);
    let mut max = GeoPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    (min, max)
}

/// Pixel window inside a source raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelWindow {
    pub col: usize,
    pub row: usize,
    pub width: usize,
    pub height: usize,
}

/// A section cut out of a raster. Pixels outside the polygon are zero and
/// have mask 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionImage {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub pixels: Vec<u8>,
    /// 1 inside the polygon, 0 outside; one entry per pixel.
    pub mask: Vec<u8>,
    pub window: PixelWindow,
    pub raster_id: String,
    pub spec: SectionSpec,
    pub crs_id: String,
}

impl SectionImage {
    pub fn inside_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }
}

/// Candidate pixel range along one axis whose centers lie in `[lo, hi]`,
/// clipped to `[0, n)`.
fn center_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    if last < first {
        None
    } else {
        Some((first as usize, last as usize))
    }
}

/// Cuts `poly` out of `raster` using the pixel-center rule.
///
/// The returned window is the smallest one holding every pixel whose center
/// lies inside the polygon.
pub fn crop_section(raster: &GeoRaster, poly: &SectionPolygon) -> Result<SectionImage, GeoError> {
    if raster.crs_id != poly.crs_id {
        return Err(GeoError::CrsMismatch {
            raster: raster.crs_id.clone(),
            polygon: poly.crs_id.clone(),
        });
    }
    let empty = || GeoError::EmptyCrop {
        raster: raster.id.clone(),
        route: poly.source_spec.route_name.clone(),
        from: poly.source_spec.offset_from,
        to: poly.source_spec.offset_to,
    };
    let t = &raster.transform;
    let px: Vec<GeoPoint> = poly
        .ring
        .iter()
        .map(|p| {
            let (c, r) = t.world_to_pixel(*p);
            GeoPoint::new(c, r)
        })
        .collect();
    let (lo, hi) = bbox_of(&px);
    let (c0, c1) = center_range(lo.x, hi.x, raster.width).ok_or_else(empty)?;
    let (r0, r1) = center_range(lo.y, hi.y, raster.height).ok_or_else(empty)?;

    let cw = c1 - c0 + 1;
    let mut inside = vec![false; cw * (r1 - r0 + 1)];
    let (mut min_c, mut max_c, mut min_r, mut max_r) = (usize::MAX, 0, usize::MAX, 0);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if poly.contains(t.pixel_center(c, r)) {
                inside[(r - r0) * cw + (c - c0)] = true;
                min_c = min_c.min(c);
                max_c = max_c.max(c);
                min_r = min_r.min(r);
                max_r = max_r.max(r);
            }
        }
    }
    if min_c == usize::MAX {
        return Err(empty());
    }

    let (width, height, bands) = (max_c - min_c + 1, max_r - min_r + 1, raster.bands);
    let mut pixels = vec![0u8; width * height * bands];
    let mut mask = vec![0u8; width * height];
    for r in min_r..=max_r {
        for c in min_c..=max_c {
            if inside[(r - r0) * cw + (c - c0)] {
                let o = (r - min_r) * width + (c - min_c);
                mask[o] = 1;
                pixels[o * bands..(o + 1) * bands].copy_from_slice(raster.pixel(c, r));
            }
        }
    }
    Ok(SectionImage {
        width,
        height,
        bands,
        pixels,
        mask,
        window: PixelWindow {
            col: min_c,
            row: min_r,
            width,
            height,
        },
        raster_id: raster.id.clone(),
        spec: poly.source_spec.clone(),
        crs_id: raster.crs_id.clone(),
    })
}

/// Assembles a raster covering the polygon's bounding box from a tile set.
///
/// Tiles must share CRS, band count and an unrotated pixel grid. Where tiles
/// overlap, the first tile in `tiles` wins. Every pixel whose center is
/// inside the polygon must be covered by some tile.
pub fn mosaic_lookup(tiles: &[GeoRaster], poly: &SectionPolygon) -> Result<GeoRaster, GeoError> {
    let first = tiles
        .first()
        .ok_or_else(|| GeoError::IncompatibleTiles("no tiles given".into()))?;
    let t0 = first.transform;
    if t0.is_rotated() {
        return Err(GeoError::IncompatibleTiles(format!(
            "tile {} has a rotated geotransform",
            first.id
        )));
    }
    let (pw, ph) = (t0.pixel_width(), t0.pixel_height());
    let mut offsets = Vec::with_capacity(tiles.len());
    for tile in tiles {
        if tile.crs_id != first.crs_id {
            return Err(GeoError::CrsMismatch {
                raster: tile.crs_id.clone(),
                polygon: first.crs_id.clone(),
            });
        }
        if tile.bands != first.bands {
            return Err(GeoError::IncompatibleTiles(format!(
                "tile {} has {} bands, expected {}",
                tile.id, tile.bands, first.bands
            )));
        }
        let t = tile.transform;
        let same_size = (t.pixel_width() - pw).abs() <= 1e-9 * pw.abs()
            && (t.pixel_height() - ph).abs() <= 1e-9 * ph.abs();
        if t.is_rotated() || !same_size {
            return Err(GeoError::IncompatibleTiles(format!(
                "tile {} does not share the pixel grid of {}",
                tile.id, first.id
            )));
        }
        let (oc, or) = t0.world_to_pixel(t.origin());
        let (ic, ir) = (oc.round(), or.round());
        if (oc - ic).abs() > 1e-6 || (or - ir).abs() > 1e-6 {
            return Err(GeoError::IncompatibleTiles(format!(
                "tile {} is not aligned to the pixel grid of {}",
                tile.id, first.id
            )));
        }
        offsets.push((ic as i64, ir as i64));
    }
    if poly.crs_id != first.crs_id {
        return Err(GeoError::CrsMismatch {
            raster: first.crs_id.clone(),
            polygon: poly.crs_id.clone(),
        });
    }

    let px: Vec<GeoPoint> = poly
        .ring
        .iter()
        .map(|p| {
            let (c, r) = t0.world_to_pixel(*p);
            GeoPoint::new(c, r)
        })
        .collect();
    let (lo, hi) = bbox_of(&px);
    let (gc0, gc1) = (lo.x.floor() as i64, hi.x.ceil() as i64);
    let (gr0, gr1) = (lo.y.floor() as i64, hi.y.ceil() as i64);
    let width = (gc1 - gc0).max(1) as usize;
    let height = (gr1 - gr0).max(1) as usize;
    let bands = first.bands;
    let transform = t0.shifted(gc0, gr0);

    let mut data = vec![first.nodata.unwrap_or(0); width * height * bands];
    let mut missing = Vec::new();
    for r in 0..height {
        for c in 0..width {
            let (gc, gr) = (gc0 + c as i64, gr0 + r as i64);
            let hit = tiles.iter().zip(&offsets).find_map(|(tile, &(oc, or))| {
                let (lc, lr) = (gc - oc, gr - or);
                (lc >= 0 && lr >= 0 && (lc as usize) < tile.width && (lr as usize) < tile.height)
                    .then(|| tile.pixel(lc as usize, lr as usize))
            });
            match hit {
                Some(src) => {
                    let o = (r * width + c) * bands;
                    data[o..o + bands].copy_from_slice(src);
                }
                None => {
                    let center = transform.pixel_center(c, r);
                    if poly.contains(center) {
                        missing.push(center);
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        let (min, max) = bbox_of(&missing);
        return Err(GeoError::CoverageGap {
            missing_pixels: missing.len(),
            min_x: min.x,
            min_y: min.y,
            max_x: max.x,
            max_y: max.y,
        });
    }
    let ids: Vec<&str> = tiles.iter().map(|t| t.id.as_str()).collect();
    Ok(GeoRaster {
        id: format!("mosaic({})", ids.join("+")),
        width,
        height,
        bands,
        transform,
        crs_id: first.crs_id.clone(),
        data,
        nodata: first.nodata,
    })
}
