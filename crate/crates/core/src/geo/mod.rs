//! Section geometry and georeferenced raster cropping.
//!
//! A route centerline is a polyline with a cumulative milepoint per vertex.
//! A PMIS section (route, offset from, offset to) is located on it by
//! milepoint interpolation, buffered by a fixed half-width on each side into
//! a lane polygon, and the polygon is used to cut the section out of a
//! georeferenced raster.

mod centerline;
pub mod geotiff;
pub mod io;
mod polygon;
pub mod projection;
mod raster;
mod transform;

pub use centerline::{interpolate_centerline, Centerline, LinearUnit, SectionSpec};
pub use polygon::{point_in_ring, ring_signed_area, section_polygon, SectionPolygon};
pub use raster::{crop_section, mosaic_lookup, GeoRaster, PixelWindow, SectionImage};
pub use transform::AffineGeoTransform;

use serde::{Deserialize, Serialize};

/// Lane half-width used to buffer section centerlines, in feet.
pub const DEFAULT_HALF_WIDTH_FT: f64 = 12.0;

pub const FEET_PER_MILE: f64 = 5280.0;

/// A point in a projected coordinate system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &GeoPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub(crate) fn lerp(&self, other: &GeoPoint, t: f64) -> GeoPoint {
        GeoPoint::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("route {route}: milepoint {milepoint} outside [{min}, {max}]")]
    MilepointOutOfRange {
        route: String,
        milepoint: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid centerline for route {route}: {reason}")]
    InvalidCenterline { route: String, reason: String },
    #[error("invalid section {route} [{from}, {to}]: {reason}")]
    InvalidSection {
        route: String,
        from: f64,
        to: f64,
        reason: String,
    },
    #[error("section {route} [{from}, {to}] has zero length")]
    ZeroLengthSection { route: String, from: f64, to: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("geotransform is not invertible (determinant {determinant})")]
    SingularTransform { determinant: f64 },
    #[error("polygon for {route} [{from}, {to}] does not intersect raster {raster}")]
    EmptyCrop {
        raster: String,
        route: String,
        from: f64,
        to: f64,
    },
    #[error("CRS mismatch: raster is {raster}, polygon is {polygon}")]
    CrsMismatch { raster: String, polygon: String },
    #[error(
        "tiles do not cover {missing_pixels} pixel(s) under the polygon, missing extent \
         x [{min_x}, {max_x}] y [{min_y}, {max_y}]"
    )]
    CoverageGap {
        missing_pixels: usize,
        min_x: f64,
        min_y: f64,
        max_x: f64,
        max_y: f64,
    },
    #[error("incompatible tiles: {0}")]
    IncompatibleTiles(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("unknown route {0}")]
    UnknownRoute(String),
}
