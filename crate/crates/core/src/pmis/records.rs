//! PMIS record files.
//!
//! * direct records: `route_name,offset_from,offset_to,condition_score`
//! * extended measurements (long format):
//!   `route_name,offset_from,offset_to,record_type,key,value,length` where
//!   `record_type` is `distress` (key = distress type, value = quantity) or
//!   `ride` (value = serviceability index, length = sample length)
//! * labels (output of scoring):
//!   `route_name,offset_from,offset_to,condition_score,condition_class`
//! * coefficient table: JSON `{distress_type: {alpha, rho, beta}}`

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    classify, condition_score, distress_utility, ride_score, ride_utility, CoefficientTable,
    ConditionClass, ConditionScore, PmisError, RideRecord, RideUtilityCurve,
};
use crate::geo::SectionSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmisRecord {
    pub route_name: String,
    pub offset_from: f64,
    pub offset_to: f64,
    pub condition_score: f64,
}

impl PmisRecord {
    pub fn spec(&self) -> SectionSpec {
        SectionSpec::new(self.route_name.clone(), self.offset_from, self.offset_to)
    }
}

pub fn read_pmis_records(path: &Path) -> Result<Vec<PmisRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::csv(path, e)))
        .collect()
}

pub fn write_pmis_records(path: &Path, rows: &[PmisRecord]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Debug, Deserialize)]
struct MeasurementRow {
    route_name: String,
    offset_from: f64,
    offset_to: f64,
    record_type: String,
    #[serde(default)]
    key: String,
    value: f64,
    #[serde(default)]
    length: Option<f64>,
}

/// Raw distress and ride measurements of one section.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionMeasurements {
    pub spec: SectionSpec,
    pub distress: Vec<(String, f64)>,
    pub ride: Vec<(f64, f64)>,
}

/// Reads the extended measurement file, grouped per section in order of
/// first appearance.
pub fn read_measurements(path: &Path) -> Result<Vec<SectionMeasurements>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out: Vec<SectionMeasurements> = Vec::new();
    let mut index: BTreeMap<(String, u64, u64), usize> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<MeasurementRow>().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let key = (
            row.route_name.clone(),
            row.offset_from.to_bits(),
            row.offset_to.to_bits(),
        );
        let i = *index.entry(key).or_insert_with(|| {
            out.push(SectionMeasurements {
                spec: SectionSpec::new(row.route_name.clone(), row.offset_from, row.offset_to),
                distress: Vec::new(),
                ride: Vec::new(),
            });
            out.len() - 1
        });
        match row.record_type.as_str() {
            "distress" => out[i].distress.push((row.key, row.value)),
            "ride" => {
                let length = row.length.ok_or_else(|| {
                    Error::format(path, format!("row {}: ride sample without length", line + 2))
                })?;
                out[i].ride.push((row.value, length))
            }
            other => {
                return Err(Error::format(
                    path,
                    format!("row {}: unknown record_type {other:?}", line + 2),
                ))
            }
        }
    }
    Ok(out)
}

/// Condition score of one section from its raw measurements.
pub fn score_measurements(
    m: &SectionMeasurements,
    table: &CoefficientTable,
    curve: &RideUtilityCurve,
) -> Result<ConditionScore, PmisError> {
    let ride = ride_score(&RideRecord {
        si_samples: m.ride.clone(),
    })?;
    let u_ride = ride_utility(curve, ride)?;
    let utilities = m
        .distress
        .iter()
        .map(|(kind, qty)| {
            let c = table
                .get(kind)
                .ok_or_else(|| PmisError::UnknownDistressType(kind.clone()))?;
            distress_utility(c, *qty)
        })
        .collect::<Result<Vec<_>, _>>()?;
    condition_score(u_ride, &utilities)
}

pub fn read_coefficients(path: &Path) -> Result<CoefficientTable> {
    crate::geo::io::read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub route_name: String,
    pub offset_from: f64,
    pub offset_to: f64,
    pub condition_score: f64,
    pub condition_class: ConditionClass,
}

impl LabelRecord {
    pub fn new(spec: &SectionSpec, score: ConditionScore) -> Self {
        Self {
            route_name: spec.route_name.clone(),
            offset_from: spec.offset_from,
            offset_to: spec.offset_to,
            condition_score: score.value(),
            condition_class: classify(score),
        }
    }

    pub fn spec(&self) -> SectionSpec {
        SectionSpec::new(self.route_name.clone(), self.offset_from, self.offset_to)
    }
}

pub fn write_labels(path: &Path, rows: &[LabelRecord]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::csv(path, e)))
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmis::UtilityCoefficients;

    #[test]
    fn measurements_are_grouped_and_scored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(
            &p,
            "route_name,offset_from,offset_to,record_type,key,value,length\n\
             FM1,0,0.5,ride,,2.0,0.25\n\
             FM1,0,0.5,distress,alligator,0,\n\
             FM2,1,1.5,ride,,5.0,0.5\n\
             FM1,0,0.5,ride,,4.0,0.75\n",
        )
        .unwrap();
        let ms = read_measurements(&p).unwrap();
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[0].ride, vec![(2.0, 0.25), (4.0, 0.75)]);
        let mut table = CoefficientTable::new();
        table.insert("alligator".into(), UtilityCoefficients::new(0.5, 2.0, 1.0).unwrap());
        let cs = score_measurements(&ms[0], &table, &RideUtilityCurve::Linear).unwrap();
        // ride 3.5 -> 0.7; zero distress -> 1
        assert!((cs.value() - 70.0).abs() < 1e-9);
        let cs2 = score_measurements(&ms[1], &table, &RideUtilityCurve::Linear).unwrap();
        assert_eq!(cs2.value(), 100.0);
    }

    #[test]
    fn unknown_distress_type_is_an_error() {
        let m = SectionMeasurements {
            spec: SectionSpec::new("R", 0.0, 0.5),
            distress: vec![("spalling".into(), 3.0)],
            ride: vec![(3.0, 1.0)],
        };
        assert_eq!(
            score_measurements(&m, &CoefficientTable::new(), &RideUtilityCurve::Linear),
            Err(PmisError::UnknownDistressType("spalling".into()))
        );
    }

    #[test]
    fn coefficient_table_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(
            &p,
            r#"{"longitudinal": {"alpha": 0.6, "rho": 12.0, "beta": 1.2},
                "patching": {"alpha": 0.45, "rho": 8.0, "beta": 0.9}}"#,
        )
        .unwrap();
        let t = read_coefficients(&p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t["patching"].rho(), 8.0);
        std::fs::write(&p, r#"{"x": {"alpha": 0.6, "rho": -1.0, "beta": 1.2}}"#).unwrap();
        assert!(read_coefficients(&p).is_err());
    }

    #[test]
    fn labels_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        let rows = vec![
            LabelRecord::new(&SectionSpec::new("A", 0.0, 0.5), ConditionScore::new(91.0).unwrap()),
            LabelRecord::new(&SectionSpec::new("A", 0.5, 1.0), ConditionScore::new(12.5).unwrap()),
        ];
        write_labels(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("route_name,offset_from,offset_to,condition_score,condition_class\n"));
        assert!(text.contains("VeryGood") && text.contains("VeryPoor"));
        assert_eq!(read_labels(&p).unwrap(), rows);
    }
}
