use serde::{Deserialize, Serialize};

use super::{GeoError, GeoPoint};

/// Affine mapping from fractional pixel coordinates (col, row) to world
/// coordinates, in the GDAL geotransform convention:
///
/// ```text
/// x = origin_x + col * pixel_width  + row * row_rotation
/// y = origin_y + col * col_rotation + row * pixel_height
/// ```
///
/// Integer (col, row) is the upper-left corner of a pixel; its center is at
/// (col + 0.5, row + 0.5).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct AffineGeoTransform {
    origin_x: f64,
    origin_y: f64,
    pixel_width: f64,
    pixel_height: f64,
    row_rotation: f64,
    col_rotation: f64,
    determinant: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    origin_x: f64,
    origin_y: f64,
    pixel_width: f64,
    pixel_height: f64,
    #[serde(default)]
    row_rotation: f64,
    #[serde(default)]
    col_rotation: f64,
}

impl TryFrom<RawTransform> for AffineGeoTransform {
    type Error = GeoError;

    fn try_from(r: RawTransform) -> Result<Self, GeoError> {
        AffineGeoTransform::new(
            r.origin_x,
            r.origin_y,
            r.pixel_width,
            r.pixel_height,
            r.row_rotation,
            r.col_rotation,
        )
    }
}

impl From<AffineGeoTransform> for RawTransform {
    fn from(t: AffineGeoTransform) -> Self {
        RawTransform {
            origin_x: t.origin_x,
            origin_y: t.origin_y,
            pixel_width: t.pixel_width,
            pixel_height: t.pixel_height,
            row_rotation: t.row_rotation,
            col_rotation: t.col_rotation,
        }
    }
}

impl AffineGeoTransform {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        pixel_width: f64,
        pixel_height: f64,
        row_rotation: f64,
        col_rotation: f64,
    ) -> Result<Self, GeoError> {
        let all = [
            origin_x,
            origin_y,
            pixel_width,
            pixel_height,
            row_rotation,
            col_rotation,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GeoError::InvalidParameter(
                "geotransform coefficients must be finite".into(),
            ));
        }
        let determinant = pixel_width * pixel_height - row_rotation * col_rotation;
        let scale = pixel_width
            .abs()
            .max(pixel_height.abs())
            .max(row_rotation.abs())
            .max(col_rotation.abs());
        if scale == 0.0 || determinant.abs() <= 1e-12 * scale * scale {
            return Err(GeoError::SingularTransform { determinant });
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_width,
            pixel_height,
            row_rotation,
            col_rotation,
            determinant,
        })
    }

    /// North-up transform without rotation.
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self, GeoError> {
        Self::new(origin_x, origin_y, pixel_size, -pixel_size, 0.0, 0.0)
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0).expect("identity is invertible")
    }

    /// GDAL-ordered coefficients `[x0, pw, row_rot, y0, col_rot, ph]`.
    pub fn to_gdal(&self) -> [f64; 6] {
        [
            self.origin_x,
            self.pixel_width,
            self.row_rotation,
            self.origin_y,
            self.col_rotation,
            self.pixel_height,
        ]
    }

    pub fn from_gdal(gt: [f64; 6]) -> Result<Self, GeoError> {
        Self::new(gt[0], gt[3], gt[1], gt[5], gt[2], gt[4])
    }

    pub fn origin(&self) -> GeoPoint {
        GeoPoint::new(self.origin_x, self.origin_y)
    }

    pub fn pixel_width(&self) -> f64 {
        self.pixel_width
    }

    pub fn pixel_height(&self) -> f64 {
        self.pixel_height
    }

    pub fn row_rotation(&self) -> f64 {
        self.row_rotation
    }

    pub fn col_rotation(&self) -> f64 {
        self.col_rotation
    }

    pub fn is_rotated(&self) -> bool {
        self.row_rotation != 0.0 || self.col_rotation != 0.0
    }

    /// Ground size of a pixel along its column and row axes.
    pub fn ground_sample_distance(&self) -> (f64, f64) {
        (
            self.pixel_width.hypot(self.col_rotation),
            self.row_rotation.hypot(self.pixel_height),
        )
    }

    pub fn pixel_to_world(&self, col: f64, row: f64) -> GeoPoint {
        GeoPoint::new(
            self.origin_x + col * self.pixel_width + row * self.row_rotation,
            self.origin_y + col * self.col_rotation + row * self.pixel_height,
        )
    }

    /// Fractional (col, row) of a world point.
    pub fn world_to_pixel(&self, p: GeoPoint) -> (f64, f64) {
        let dx = p.x - self.origin_x;
        let dy = p.y - self.origin_y;
        let col = (self.pixel_height * dx - self.row_rotation * dy) / self.determinant;
        let row = (self.pixel_width * dy - self.col_rotation * dx) / self.determinant;
        (col, row)
    }

    /// World coordinate of the center of pixel (col, row).
    pub fn pixel_center(&self, col: usize, row: usize) -> GeoPoint {
        self.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// The same transform re-anchored at pixel (col, row).
    pub fn shifted(&self, col: i64, row: i64) -> Self {
        let o = self.pixel_to_world(col as f64, row as f64);
        Self {
            origin_x: o.x,
            origin_y: o.y,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_maps_coordinates_directly() {
        let t = AffineGeoTransform::identity();
        assert_eq!(t.world_to_pixel(GeoPoint::new(3.5, -7.25)), (3.5, -7.25));
    }

    #[test]
    fn hand_inverted_north_up() {
        let t = AffineGeoTransform::new(100.0, 200.0, 0.5, -0.5, 0.0, 0.0).unwrap();
        assert_eq!(t.world_to_pixel(GeoPoint::new(101.0, 199.0)), (2.0, 2.0));
        assert_eq!(t.pixel_to_world(2.0, 2.0), GeoPoint::new(101.0, 199.0));
    }

    #[test]
    fn singular_transform_rejected_at_construction() {
        let err = AffineGeoTransform::new(0.0, 0.0, 1.0, 2.0, 1.0, 2.0).unwrap_err();
        assert!(matches!(err, GeoError::SingularTransform { .. }));
        assert!(AffineGeoTransform::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(AffineGeoTransform::new(f64::NAN, 0.0, 1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn gdal_roundtrip() {
        let t = AffineGeoTransform::new(1.0, 2.0, 0.5, -0.5, 0.1, 0.2).unwrap();
        assert_eq!(AffineGeoTransform::from_gdal(t.to_gdal()).unwrap(), t);
    }

    #[test]
    fn thousand_random_points_roundtrip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let t = AffineGeoTransform::new(3.0e5, 3.2e6, 0.5, -0.5, 0.01, -0.02).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = GeoPoint::new(
                rng.random_range(2.9e5..3.1e5),
                rng.random_range(3.1e6..3.3e6),
            );
            let (c, r) = t.world_to_pixel(p);
            let q = t.pixel_to_world(c, r);
            let rel = p.distance(&q) / p.x.abs().max(p.y.abs());
            worst = worst.max(rel);
        }
        assert!(worst < 1e-9, "worst relative error {worst}");
    }

    proptest! {
        #[test]
        fn roundtrip_random_invertible(
            x0 in -1e6f64..1e6, y0 in -1e6f64..1e6,
            a in 0.1f64..10.0, e in -10.0f64..-0.1,
            b in -0.05f64..0.05, d in -0.05f64..0.05,
            px in -1e6f64..1e6, py in -1e6f64..1e6,
        ) {
            let t = AffineGeoTransform::new(x0, y0, a, e, b, d).unwrap();
            let p = GeoPoint::new(px, py);
            let (c, r) = t.world_to_pixel(p);
            let q = t.pixel_to_world(c, r);
            let scale = 1.0f64.max(px.abs()).max(py.abs()).max(x0.abs()).max(y0.abs());
            prop_assert!(p.distance(&q) <= 1e-9 * scale);
        }
    }
}
