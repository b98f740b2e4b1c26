use serde::{Deserialize, Serialize};

use super::{GeoError, GeoPoint, FEET_PER_MILE};

/// Linear unit of a projected CRS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearUnit {
    #[default]
    Foot,
    Meter,
}

impl LinearUnit {
    /// CRS units per foot.
    pub fn per_foot(self) -> f64 {
        match self {
            LinearUnit::Foot => 1.0,
            LinearUnit::Meter => 0.3048,
        }
    }

    pub fn per_mile(self) -> f64 {
        self.per_foot() * FEET_PER_MILE
    }
}

/// Route centerline with a cumulative milepoint for each vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    route_id: String,
    crs_id: String,
    unit: LinearUnit,
    vertices: Vec<GeoPoint>,
    milepoints: Vec<f64>,
}

impl Centerline {
    pub fn new(
        route_id: impl Into<String>,
        crs_id: impl Into<String>,
        unit: LinearUnit,
        vertices: Vec<GeoPoint>,
        milepoints: Vec<f64>,
    ) -> Result<Self, GeoError> {
        let route_id = route_id.into();
        let invalid = |reason: String| GeoError::InvalidCenterline {
            route: route_id.clone(),
            reason,
        };
        if vertices.len() < 2 {
            return Err(invalid(format!(
                "need at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.len() != milepoints.len() {
            return Err(invalid(format!(
                "{} vertices but {} milepoints",
                vertices.len(),
                milepoints.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|p| !p.is_finite()) {
            return Err(invalid(format!("vertex {i} is not finite")));
        }
        if let Some(i) = milepoints.iter().position(|m| !m.is_finite()) {
            return Err(invalid(format!("milepoint {i} is not finite")));
        }
        if let Some(i) = milepoints.windows(2).position(|w| w[1] < w[0]) {
            return Err(invalid(format!(
                "milepoints decrease at vertex {}: {} -> {}",
                i + 1,
                milepoints[i],
                milepoints[i + 1]
            )));
        }
        if milepoints[milepoints.len() - 1] <= milepoints[0] {
            return Err(invalid("milepoint range is empty".into()));
        }
        Ok(Self {
            route_id,
            crs_id: crs_id.into(),
            unit,
            vertices,
            milepoints,
        })
    }

    /// Builds a centerline whose milepoints are the cumulative planar arc
    /// length starting at `origin_milepoint`.
    pub fn from_arc_length(
        route_id: impl Into<String>,
        crs_id: impl Into<String>,
        unit: LinearUnit,
        vertices: Vec<GeoPoint>,
        origin_milepoint: f64,
    ) -> Result<Self, GeoError> {
        let per_mile = unit.per_mile();
        let mut milepoints = Vec::with_capacity(vertices.len());
        let mut acc = origin_milepoint;
        for (i, v) in vertices.iter().enumerate() {
            if i > 0 {
                acc += vertices[i - 1].distance(v) / per_mile;
            }
            milepoints.push(acc);
        }
        Self::new(route_id, crs_id, unit, vertices, milepoints)
    }

    pub fn route_id(&self) -> &str {
        &self.route_id
    }

    pub fn crs_id(&self) -> &str {
        &self.crs_id
    }

    pub fn unit(&self) -> LinearUnit {
        self.unit
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    pub fn milepoints(&self) -> &[f64] {
        &self.milepoints
    }

    pub fn milepoint_range(&self) -> (f64, f64) {
        (self.milepoints[0], self.milepoints[self.milepoints.len() - 1])
    }

    /// Point at `milepoint`, linearly interpolated between the bracketing
    /// vertices.
    pub fn interpolate(&self, milepoint: f64) -> Result<GeoPoint, GeoError> {
        let (min, max) = self.milepoint_range();
        if !(min..=max).contains(&milepoint) {
            return Err(GeoError::MilepointOutOfRange {
                route: self.route_id.clone(),
                milepoint,
                min,
                max,
            });
        }
        // First vertex whose milepoint is >= the query.
        let i = self.milepoints.partition_point(|&m| m < milepoint);
        if self.milepoints[i] == milepoint {
            return Ok(self.vertices[i]);
        }
        let (m0, m1) = (self.milepoints[i - 1], self.milepoints[i]);
        let t = (milepoint - m0) / (m1 - m0);
        Ok(self.vertices[i - 1].lerp(&self.vertices[i], t))
    }

    /// Points sampled every `step` miles from `from` to `to`, always
    /// including both ends.
    pub fn densify(&self, from: f64, to: f64, step: f64) -> Result<Vec<(f64, GeoPoint)>, GeoError> {
        if !(step > 0.0) {
            return Err(GeoError::InvalidParameter(format!(
                "interpolation step must be positive, got {step}"
            )));
        }
        let mut out = Vec::new();
        let n = ((to - from) / step).floor() as usize;
        for k in 0..=n {
            let m = from + k as f64 * step;
            if m < to {
                out.push((m, self.interpolate(m)?));
            }
        }
        out.push((to, self.interpolate(to)?));
        Ok(out)
    }

    /// The part of the centerline between two milepoints, with consecutive
    /// duplicate points removed.
    pub(crate) fn sub_polyline(&self, from: f64, to: f64) -> Result<Vec<GeoPoint>, GeoError> {
        let mut pts = vec![self.interpolate(from)?];
        for (v, &m) in self.vertices.iter().zip(&self.milepoints) {
            if m > from && m < to {
                pts.push(*v);
            }
        }
        pts.push(self.interpolate(to)?);
        pts.dedup_by(|b, a| a.distance(b) <= 1e-9 * (1.0 + a.x.abs().max(a.y.abs())));
        Ok(pts)
    }
}

/// Point on `line` at `milepoint`.
pub fn interpolate_centerline(line: &Centerline, milepoint: f64) -> Result<GeoPoint, GeoError> {
    line.interpolate(milepoint)
}

/// A PMIS section: a route and a milepoint interval on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub route_name: String,
    pub offset_from: f64,
    pub offset_to: f64,
}

impl SectionSpec {
    pub fn new(route_name: impl Into<String>, offset_from: f64, offset_to: f64) -> Self {
        Self {
            route_name: route_name.into(),
            offset_from,
            offset_to,
        }
    }

    pub fn validate_against(&self, line: &Centerline) -> Result<(), GeoError> {
        let invalid = |reason: String| GeoError::InvalidSection {
            route: self.route_name.clone(),
            from: self.offset_from,
            to: self.offset_to,
            reason,
        };
        if self.route_name != line.route_id() {
            return Err(invalid(format!(
                "centerline belongs to route {}",
                line.route_id()
            )));
        }
        if !(self.offset_from.is_finite() && self.offset_to.is_finite()) {
            return Err(invalid("offsets must be finite".into()));
        }
        if self.offset_from > self.offset_to {
            return Err(invalid("offset_from must be less than offset_to".into()));
        }
        let (min, max) = line.milepoint_range();
        if self.offset_from < min || self.offset_to > max {
            return Err(invalid(format!(
                "offsets outside route milepoint range [{min}, {max}]"
            )));
        }
        Ok(())
    }

    /// Section length in miles.
    pub fn length(&self) -> f64 {
        self.offset_to - self.offset_from
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_mile() -> Centerline {
        Centerline::new(
            "FM1",
            "local",
            LinearUnit::Foot,
            vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(5280.0, 0.0)],
            vec![0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn knot_returns_vertex() {
        let line = Centerline::new(
            "R",
            "local",
            LinearUnit::Foot,
            vec![
                GeoPoint::new(0.0, 0.0),
                GeoPoint::new(3000.0, 0.0),
                GeoPoint::new(3000.0, 2280.0),
            ],
            vec![0.0, 0.568, 1.0],
        )
        .unwrap();
        assert_eq!(line.interpolate(0.568).unwrap(), GeoPoint::new(3000.0, 0.0));
        assert_eq!(line.interpolate(0.0).unwrap(), GeoPoint::new(0.0, 0.0));
        assert_eq!(line.interpolate(1.0).unwrap(), GeoPoint::new(3000.0, 2280.0));
    }

    #[test]
    fn midpoint_of_straight_mile() {
        let p = straight_mile().interpolate(0.5).unwrap();
        assert_eq!(p, GeoPoint::new(2640.0, 0.0));
    }

    #[test]
    fn second_leg_matches_arc_length_walk() {
        let line = Centerline::new(
            "R",
            "local",
            LinearUnit::Foot,
            vec![
                GeoPoint::new(0.0, 0.0),
                GeoPoint::new(3000.0, 0.0),
                GeoPoint::new(3000.0, 2280.0),
            ],
            vec![0.0, 0.568, 1.0],
        )
        .unwrap();
        // Walk the polyline in 1-ft steps until 0.8 mi (4224 ft) is covered.
        let target_ft = 0.8 * 5280.0;
        let mut walked = 0.0;
        let mut pos = (0.0_f64, 0.0_f64);
        let legs = [((0.0, 0.0), (3000.0, 0.0)), ((3000.0, 0.0), (3000.0, 2280.0))];
        'outer: for ((x0, y0), (x1, y1)) in legs {
            let len: f64 = ((x1 - x0) as f64).hypot((y1 - y0) as f64);
            let steps = len as usize;
            for s in 1..=steps {
                walked += 1.0;
                let t = s as f64 / len;
                pos = (x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
                if walked >= target_ft {
                    break 'outer;
                }
            }
        }
        assert_eq!(pos, (3000.0, 1224.0));
        let p = line.interpolate(0.8).unwrap();
        assert_eq!(p.x, 3000.0);
        // The vertex milepoint 0.568 is rounded from 3000/5280, so the two
        // routes agree to well under a foot.
        assert!((p.y - pos.1).abs() < 1.0, "{p:?} vs {pos:?}");
    }

    #[test]
    fn out_of_range_names_route_and_bounds() {
        let err = straight_mile().interpolate(1.2).unwrap_err();
        match &err {
            GeoError::MilepointOutOfRange { route, min, max, .. } => {
                assert_eq!(route, "FM1");
                assert_eq!((*min, *max), (0.0, 1.0));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("FM1"));
    }

    #[test]
    fn rejects_bad_centerlines() {
        let v = vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(1.0, 0.0)];
        assert!(Centerline::new("R", "c", LinearUnit::Foot, v.clone(), vec![1.0, 0.5]).is_err());
        assert!(Centerline::new("R", "c", LinearUnit::Foot, v[..1].to_vec(), vec![0.0]).is_err());
        assert!(Centerline::new("R", "c", LinearUnit::Foot, v.clone(), vec![0.0]).is_err());
        assert!(Centerline::new("R", "c", LinearUnit::Foot, v, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn continuity_on_straight_segment() {
        let line = straight_mile();
        let eps = 1e-3;
        let mut m = 0.0;
        while m + eps <= 1.0 {
            let a = line.interpolate(m).unwrap();
            let b = line.interpolate(m + eps).unwrap();
            assert!(a.distance(&b) <= eps * 5280.0 * (1.0 + 1e-9));
            m += 0.0173;
        }
    }

    #[test]
    fn arc_length_milepoints() {
        let line = Centerline::from_arc_length(
            "R",
            "c",
            LinearUnit::Meter,
            vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(1609.344, 0.0)],
            2.0,
        )
        .unwrap();
        let (a, b) = line.milepoint_range();
        assert_eq!(a, 2.0);
        assert!((b - 3.0).abs() < 1e-12);
    }

    #[test]
    fn densify_includes_both_ends() {
        let pts = straight_mile().densify(0.1, 0.35, 0.1).unwrap();
        let ms: Vec<f64> = pts.iter().map(|(m, _)| *m).collect();
        assert_eq!(ms.len(), 4);
        assert_eq!(ms[0], 0.1);
        assert_eq!(*ms.last().unwrap(), 0.35);
        assert!(straight_mile().densify(0.0, 1.0, 0.0).is_err());
    }
}
