use serde::{Deserialize, Serialize};

use super::{Centerline, GeoError, GeoPoint, SectionSpec};

/// Lane-coverage polygon of one section: the centerline between the section
/// offsets buffered by `half_width` feet on each side, flat end caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionPolygon {
    /// Closed counterclockwise ring (first point repeated at the end).
    pub ring: Vec<GeoPoint>,
    pub source_spec: SectionSpec,
    /// Half-width in feet.
    pub half_width: f64,
    pub crs_id: String,
}

impl SectionPolygon {
    pub fn area(&self) -> f64 {
        ring_signed_area(&self.ring)
    }

    /// `(min, max)` corners of the bounding box.
    pub fn bbox(&self) -> (GeoPoint, GeoPoint) {
        let mut min = GeoPoint::new(f64::INFINITY, f64::INFINITY);
        let mut max = GeoPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.ring {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        (min, max)
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        point_in_ring(&self.ring, p)
    }
}

/// Shoelace area of a closed ring; positive when counterclockwise.
pub fn ring_signed_area(ring: &[GeoPoint]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    // Accumulate relative to the first vertex to limit cancellation with
    // large projected coordinates.
    let o = ring[0];
    let mut twice = 0.0;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        twice += (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
    }
    twice / 2.0
}

/// Even-odd (crossing number) point-in-polygon test. Works on open or
/// closed rings.
pub fn point_in_ring(ring: &[GeoPoint], p: GeoPoint) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[j], ring[i]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Buffers the centerline between the section offsets into a lane polygon.
///
/// Outer corners get a bevel join; on the inner side of a bend the two
/// offset segments are cut at their intersection so the ring stays simple.
pub fn section_polygon(
    line: &Centerline,
    spec: &SectionSpec,
    half_width: f64,
) -> Result<SectionPolygon, GeoError> {
    if !(half_width > 0.0) || !half_width.is_finite() {
        return Err(GeoError::InvalidParameter(format!(
            "half_width must be positive, got {half_width}"
        )));
    }
    spec.validate_against(line)?;
    let zero_length = || GeoError::ZeroLengthSection {
        route: spec.route_name.clone(),
        from: spec.offset_from,
        to: spec.offset_to,
    };
    if spec.length() <= 0.0 {
        return Err(zero_length());
    }
    let pts = line.sub_polyline(spec.offset_from, spec.offset_to)?;
    if pts.len() < 2 {
        return Err(zero_length());
    }
    let w = half_width * line.unit().per_foot();
    let right = offset_side(&pts, -w);
    let left = offset_side(&pts, w);

    let mut ring = Vec::with_capacity(right.len() + left.len() + 1);
    ring.extend_from_slice(&right);
    ring.extend(left.iter().rev());
    ring.push(right[0]);
    Ok(SectionPolygon {
        ring,
        source_spec: spec.clone(),
        half_width,
        crs_id: line.crs_id().to_string(),
    })
}

/// Offsets a polyline by `s` along its left normal (negative `s` offsets
/// to the right).
fn offset_side(pts: &[GeoPoint], s: f64) -> Vec<GeoPoint> {
    let dirs: Vec<(f64, f64)> = pts
        .windows(2)
        .map(|w| {
            let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
            let len = dx.hypot(dy);
            (dx / len, dy / len)
        })
        .collect();
    let normal = |d: (f64, f64)| (-d.1, d.0);
    let shift = |p: GeoPoint, n: (f64, f64)| GeoPoint::new(p.x + s * n.0, p.y + s * n.1);

    let mut out = Vec::with_capacity(2 * pts.len());
    out.push(shift(pts[0], normal(dirs[0])));
    for j in 1..dirs.len() {
        let (a, b) = (dirs[j - 1], dirs[j]);
        let (na, nb) = (normal(a), normal(b));
        let cross = a.0 * b.1 - a.1 * b.0;
        let dot = a.0 * b.0 + a.1 * b.1;
        if cross.abs() < 1e-12 && dot > 0.0 {
            out.push(shift(pts[j], nb));
        } else if cross * s > 0.0 {
            // Inner side of the turn: intersect the two offset lines.
            let dn = (nb.0 - na.0, nb.1 - na.1);
            let t = s * (dn.0 * b.1 - dn.1 * b.0) / cross;
            let p = shift(pts[j], na);
            out.push(GeoPoint::new(p.x + t * a.0, p.y + t * a.1));
        } else {
            out.push(shift(pts[j], na));
            out.push(shift(pts[j], nb));
        }
    }
    out.push(shift(pts[pts.len() - 1], normal(dirs[dirs.len() - 1])));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::LinearUnit;
    use rand::{Rng, SeedableRng};

    fn segments_intersect(p1: GeoPoint, p2: GeoPoint, q1: GeoPoint, q2: GeoPoint) -> bool {
        let orient = |a: GeoPoint, b: GeoPoint, c: GeoPoint| {
            let v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
            if v > 1e-9 {
                1
            } else if v < -1e-9 {
                -1
            } else {
                0
            }
        };
        let (o1, o2) = (orient(p1, p2, q1), orient(p1, p2, q2));
        let (o3, o4) = (orient(q1, q2, p1), orient(q1, q2, p2));
        o1 * o2 < 0 && o3 * o4 < 0
    }

    fn assert_simple(ring: &[GeoPoint]) {
        let n = ring.len() - 1;
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                assert!(
                    !segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]),
                    "edges {i} and {j} cross"
                );
            }
        }
    }

    #[test]
    fn straight_half_mile_is_a_rectangle() {
        let line = Centerline::new(
            "IH10",
            "local",
            LinearUnit::Foot,
            vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(5280.0, 0.0)],
            vec![0.0, 1.0],
        )
        .unwrap();
        let poly = section_polygon(&line, &SectionSpec::new("IH10", 0.25, 0.75), 12.0).unwrap();
        assert_eq!(poly.ring.len(), 5);
        assert_eq!(poly.ring[0], *poly.ring.last().unwrap());
        assert!((poly.area() - 63_360.0).abs() < 1e-6);
        let (min, max) = poly.bbox();
        assert_eq!((min.x, min.y, max.x, max.y), (1320.0, -12.0, 3960.0, 12.0));
        assert_eq!(poly.crs_id, "local");
    }

    #[test]
    fn meter_crs_converts_half_width() {
        let line = Centerline::from_arc_length(
            "R",
            "EPSG:32615",
            LinearUnit::Meter,
            vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 2000.0)],
            0.0,
        )
        .unwrap();
        let spec = SectionSpec::new("R", 0.0, 1.0);
        let poly = section_polygon(&line, &spec, 12.0).unwrap();
        let expected = 1609.344 * 2.0 * 12.0 * 0.3048;
        assert!((poly.area() - expected).abs() / expected < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let line = Centerline::new(
            "R",
            "c",
            LinearUnit::Foot,
            vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(5280.0, 0.0)],
            vec![0.0, 1.0],
        )
        .unwrap();
        let spec = SectionSpec::new("R", 0.0, 0.5);
        assert!(matches!(
            section_polygon(&line, &spec, 0.0),
            Err(GeoError::InvalidParameter(_))
        ));
        assert!(section_polygon(&line, &spec, -3.0).is_err());
        assert!(matches!(
            section_polygon(&line, &SectionSpec::new("R", 0.3, 0.3), 12.0),
            Err(GeoError::ZeroLengthSection { .. })
        ));
        assert!(matches!(
            section_polygon(&line, &SectionSpec::new("R", 0.5, 1.5), 12.0),
            Err(GeoError::InvalidSection { .. })
        ));
        assert!(matches!(
            section_polygon(&line, &SectionSpec::new("X", 0.0, 0.5), 12.0),
            Err(GeoError::InvalidSection { .. })
        ));
    }

    #[test]
    fn l_shaped_bend_monte_carlo_area() {
        // 0.3 mi east then 0.2 mi north, section covers the whole route.
        let (a, b) = (0.3 * 5280.0, 0.2 * 5280.0);
        for (turn, end) in [("left", (a, b)), ("right", (a, -b))] {
            let line = Centerline::from_arc_length(
                "L",
                "local",
                LinearUnit::Foot,
                vec![
                    GeoPoint::new(0.0, 0.0),
                    GeoPoint::new(a, 0.0),
                    GeoPoint::new(end.0, end.1),
                ],
                0.0,
            )
            .unwrap();
            let (_, max_m) = line.milepoint_range();
            let poly = section_polygon(&line, &SectionSpec::new("L", 0.0, max_m), 12.0).unwrap();
            assert_simple(&poly.ring);
            let area = poly.area();
            assert!(area > 0.0, "{turn}: ring must be counterclockwise");

            // Independent winding-number membership on uniform samples over
            // the bounding box.
            let winding = |p: GeoPoint| {
                let mut wn = 0i32;
                for w in poly.ring.windows(2) {
                    let (u, v) = (w[0], w[1]);
                    let is_left = (v.x - u.x) * (p.y - u.y) - (p.x - u.x) * (v.y - u.y);
                    if u.y <= p.y {
                        if v.y > p.y && is_left > 0.0 {
                            wn += 1;
                        }
                    } else if v.y <= p.y && is_left < 0.0 {
                        wn -= 1;
                    }
                }
                wn != 0
            };
            let (min, max) = poly.bbox();
            let box_area = (max.x - min.x) * (max.y - min.y);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
            let n = 1_000_000;
            let hits = (0..n)
                .filter(|_| {
                    winding(GeoPoint::new(
                        rng.random_range(min.x..max.x),
                        rng.random_range(min.y..max.y),
                    ))
                })
                .count();
            let p = hits as f64 / n as f64;
            let mc = p * box_area;
            let sigma = box_area * (p * (1.0 - p) / n as f64).sqrt();
            assert!((mc - area).abs() < 4.0 * sigma, "{turn}: mc {mc} vs {area}");

            let nominal = (a + b) * 24.0;
            // One bevel wedge (w^2/2) added outside, one w^2 overlap inside.
            assert!((area - nominal).abs() <= 144.0, "{turn}: {area} vs {nominal}");
            assert!((area - (nominal - 72.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn curved_route_ring_is_simple_and_area_close() {
        // Quarter circle of radius 2000 ft in 40 chords.
        let verts: Vec<GeoPoint> = (0..=40)
            .map(|i| {
                let t = std::f64::consts::FRAC_PI_2 * i as f64 / 40.0;
                GeoPoint::new(2000.0 * t.cos(), 2000.0 * t.sin())
            })
            .collect();
        let line = Centerline::from_arc_length("C", "c", LinearUnit::Foot, verts, 0.0).unwrap();
        let (_, max_m) = line.milepoint_range();
        let spec = SectionSpec::new("C", 0.1, max_m - 0.1);
        let poly = section_polygon(&line, &spec, 12.0).unwrap();
        assert_simple(&poly.ring);
        let nominal = spec.length() * 5280.0 * 24.0;
        assert!((poly.area() - nominal).abs() / nominal < 0.005);
    }

    #[test]
    fn crossing_number_basics() {
        let sq = [
            GeoPoint::new(0.0, 0.0),
            GeoPoint::new(2.0, 0.0),
            GeoPoint::new(2.0, 2.0),
            GeoPoint::new(0.0, 2.0),
            GeoPoint::new(0.0, 0.0),
        ];
        assert!(point_in_ring(&sq, GeoPoint::new(1.0, 1.0)));
        assert!(!point_in_ring(&sq, GeoPoint::new(3.0, 1.0)));
        assert!(!point_in_ring(&sq, GeoPoint::new(1.0, -0.5)));
        assert_eq!(ring_signed_area(&sq), 4.0);
    }
}
