//! Geodetic (lon/lat, WGS84) to local transverse Mercator projection.
//!
//! Ellipsoidal series of Snyder's "Map Projections: A Working Manual"; good
//! to millimetres within a few degrees of the central meridian, which is
//! all a district-sized road network needs.

use serde::{Deserialize, Serialize};

use super::{GeoPoint, LinearUnit};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransverseMercator {
    pub central_meridian_deg: f64,
    pub origin_latitude_deg: f64,
    pub scale_factor: f64,
    /// False easting/northing in output units.
    pub false_easting: f64,
    pub false_northing: f64,
    pub unit: LinearUnit,
}

impl TransverseMercator {
    /// Local projection centred on a point, in feet, unit scale.
    pub fn local(lon0_deg: f64, lat0_deg: f64) -> Self {
        Self {
            central_meridian_deg: lon0_deg,
            origin_latitude_deg: lat0_deg,
            scale_factor: 1.0,
            false_easting: 0.0,
            false_northing: 0.0,
            unit: LinearUnit::Foot,
        }
    }

    /// UTM zone (northern hemisphere), meters.
    pub fn utm_north(zone: u8) -> Self {
        Self {
            central_meridian_deg: -183.0 + 6.0 * zone as f64,
            origin_latitude_deg: 0.0,
            scale_factor: 0.9996,
            false_easting: 500_000.0,
            false_northing: 0.0,
            unit: LinearUnit::Meter,
        }
    }

    /// Projects a longitude/latitude pair given in degrees.
    pub fn project(&self, lon_deg: f64, lat_deg: f64) -> GeoPoint {
        let e2 = WGS84_F * (2.0 - WGS84_F);
        let ep2 = e2 / (1.0 - e2);
        let phi = lat_deg.to_radians();
        let lam = (lon_deg - self.central_meridian_deg).to_radians();
        let (sin_phi, cos_phi) = phi.sin_cos();
        let n = WGS84_A / (1.0 - e2 * sin_phi * sin_phi).sqrt();
        let t = phi.tan().powi(2);
        let c = ep2 * cos_phi * cos_phi;
        let a = lam * cos_phi;
        let m = meridian_arc(phi, e2);
        let m0 = meridian_arc(self.origin_latitude_deg.to_radians(), e2);
        let k0 = self.scale_factor;

        let x = k0
            * n
            * (a + (1.0 - t + c) * a.powi(3) / 6.0
                + (5.0 - 18.0 * t + t * t + 72.0 * c - 58.0 * ep2) * a.powi(5) / 120.0);
        let y = k0
            * (m - m0
                + n * phi.tan()
                    * (a * a / 2.0
                        + (5.0 - t + 9.0 * c + 4.0 * c * c) * a.powi(4) / 24.0
                        + (61.0 - 58.0 * t + t * t + 600.0 * c - 330.0 * ep2) * a.powi(6)
                            / 720.0));
        let to_unit = self.unit.per_foot() / 0.3048;
        GeoPoint::new(
            x * to_unit + self.false_easting,
            y * to_unit + self.false_northing,
        )
    }
}

fn meridian_arc(phi: f64, e2: f64) -> f64 {
    let e4 = e2 * e2;
    let e6 = e4 * e2;
    WGS84_A
        * ((1.0 - e2 / 4.0 - 3.0 * e4 / 64.0 - 5.0 * e6 / 256.0) * phi
            - (3.0 * e2 / 8.0 + 3.0 * e4 / 32.0 + 45.0 * e6 / 1024.0) * (2.0 * phi).sin()
            + (15.0 * e4 / 256.0 + 45.0 * e6 / 1024.0) * (4.0 * phi).sin()
            - (35.0 * e6 / 3072.0) * (6.0 * phi).sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meridian_arc_at_45_degrees() {
        // Reference WGS84 meridian distance equator -> 45N.
        let utm = TransverseMercator::utm_north(15);
        let p = utm.project(-93.0, 45.0);
        assert!((p.x - 500_000.0).abs() < 1e-6);
        assert!((p.y - 0.9996 * 4_984_944.378).abs() < 0.01, "{p:?}");
    }

    #[test]
    fn origin_maps_to_false_origin_and_is_symmetric() {
        let tm = TransverseMercator::local(-95.36, 29.76);
        let o = tm.project(-95.36, 29.76);
        assert!(o.x.abs() < 1e-6 && o.y.abs() < 1e-6);
        let e = tm.project(-95.30, 29.80);
        let w = tm.project(-95.42, 29.80);
        assert!((e.x + w.x).abs() < 1e-6);
        assert!((e.y - w.y).abs() < 1e-6);
    }

    #[test]
    fn local_scale_is_close_to_true_distance() {
        // One arc-minute of latitude at 29.77N spans 6,061.27 ft on the ellipsoid.
        let tm = TransverseMercator::local(-95.36, 29.76);
        let a = tm.project(-95.36, 29.76);
        let b = tm.project(-95.36, 29.76 + 1.0 / 60.0);
        let d = a.distance(&b);
        assert!((d - 6_061.27).abs() < 0.5, "{d}");
    }
}
