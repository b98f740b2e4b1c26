//! PMIS condition scoring.
//!
//! Each distress type contributes a utility `U = 1 - alpha * exp(-(rho/L)^beta)`
//! where `L` is the distress quantity. The distress score is
//! `100 * prod(U_i)`, the ride score a length-weighted mean of serviceability
//! index samples, and the condition score `U_ride * 100 * prod(U_i)`,
//! clamped to `[1, 100]`.

pub mod records;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PmisError {
    #[error("distress quantity must be >= 0, got {0}")]
    NegativeQuantity(f64),
    #[error("invalid utility coefficients alpha={alpha} rho={rho} beta={beta}")]
    InvalidCoefficients { alpha: f64, rho: f64, beta: f64 },
    #[error("ride record has no serviceability samples")]
    EmptyRide,
    #[error("serviceability index {0} outside [0.1, 5.0]")]
    SiOutOfRange(f64),
    #[error("ride sample length must be > 0, got {0}")]
    NonPositiveLength(f64),
    #[error("ride score {0} outside [0.1, 5.0]")]
    RideOutOfRange(f64),
    #[error("utility {0} outside [0, 1]")]
    UtilityOutOfRange(f64),
    #[error("condition score {0} outside [1, 100]")]
    ScoreOutOfRange(f64),
    #[error("no utility coefficients for distress type {0}")]
    UnknownDistressType(String),
    #[error("invalid ride utility curve: {0}")]
    InvalidCurve(String),
    #[error("unknown condition class {0:?}")]
    UnknownClass(String),
}

pub const RIDE_MIN: f64 = 0.1;
pub const RIDE_MAX: f64 = 5.0;

/// Shape coefficients of a distress utility curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoefficients")]
pub struct UtilityCoefficients {
    alpha: f64,
    rho: f64,
    beta: f64,
}

#[derive(Deserialize)]
struct RawCoefficients {
    alpha: f64,
    rho: f64,
    beta: f64,
}

impl TryFrom<RawCoefficients> for UtilityCoefficients {
    type Error = PmisError;

    fn try_from(r: RawCoefficients) -> Result<Self, PmisError> {
        UtilityCoefficients::new(r.alpha, r.rho, r.beta)
    }
}

impl UtilityCoefficients {
    pub fn new(alpha: f64, rho: f64, beta: f64) -> Result<Self, PmisError> {
        if !((0.0..=1.0).contains(&alpha) && rho > 0.0 && beta > 0.0)
            || !rho.is_finite()
            || !beta.is_finite()
        {
            return Err(PmisError::InvalidCoefficients { alpha, rho, beta });
        }
        Ok(Self { alpha, rho, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Coefficient table keyed by distress type.
pub type CoefficientTable = BTreeMap<String, UtilityCoefficients>;

#[derive(Debug, Clone, PartialEq)]
pub struct DistressRecord {
    pub distress_type: String,
    pub quantity: f64,
    pub coefficients: UtilityCoefficients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RideRecord {
    /// (serviceability index, segment length) pairs.
    pub si_samples: Vec<(f64, f64)>,
}

/// Utility of a single distress quantity. Zero distress has full utility.
pub fn distress_utility(c: &UtilityCoefficients, quantity: f64) -> Result<f64, PmisError> {
    if !(quantity >= 0.0) {
        return Err(PmisError::NegativeQuantity(quantity));
    }
    if quantity == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - c.alpha * (-(c.rho / quantity).powf(c.beta)).exp())
}

/// `100 * prod(U_i)`; an empty record list scores 100.
pub fn distress_score(records: &[DistressRecord]) -> Result<f64, PmisError> {
    records.iter().try_fold(100.0, |acc, r| {
        Ok(acc * distress_utility(&r.coefficients, r.quantity)?)
    })
}

/// Length-weighted mean serviceability index.
pub fn ride_score(r: &RideRecord) -> Result<f64, PmisError> {
    if r.si_samples.is_empty() {
        return Err(PmisError::EmptyRide);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &(si, len) in &r.si_samples {
        if !(RIDE_MIN..=RIDE_MAX).contains(&si) {
            return Err(PmisError::SiOutOfRange(si));
        }
        if !(len > 0.0) || !len.is_finite() {
            return Err(PmisError::NonPositiveLength(len));
        }
        num += si * len;
        den += len;
    }
    Ok((num / den).clamp(RIDE_MIN, RIDE_MAX))
}

/// Mapping from ride score to ride utility.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RideUtilityCurve {
    /// `ride / 5.0`
    #[default]
    Linear,
    /// Piecewise-linear through `(ride, utility)` points sorted by ride;
    /// constant beyond the first and last point.
    Table { points: Vec<(f64, f64)> },
}

impl RideUtilityCurve {
    pub fn table(points: Vec<(f64, f64)>) -> Result<Self, PmisError> {
        let curve = RideUtilityCurve::Table { points };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<(), PmisError> {
        let RideUtilityCurve::Table { points } = self else {
            return Ok(());
        };
        if points.len() < 2 {
            return Err(PmisError::InvalidCurve("need at least two points".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(PmisError::InvalidCurve(
                "ride values must be strictly increasing".into(),
            ));
        }
        if let Some(&(_, u)) = points.iter().find(|(_, u)| !(0.0..=1.0).contains(u)) {
            return Err(PmisError::UtilityOutOfRange(u));
        }
        Ok(())
    }

    fn eval(&self, ride: f64) -> f64 {
        match self {
            RideUtilityCurve::Linear => ride / RIDE_MAX,
            RideUtilityCurve::Table { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if ride <= first.0 {
                    return first.1;
                }
                if ride >= last.0 {
                    return last.1;
                }
                let i = points.partition_point(|p| p.0 <= ride);
                let (x0, y0) = points[i - 1];
                let (x1, y1) = points[i];
                y0 + (y1 - y0) * (ride - x0) / (x1 - x0)
            }
        }
    }
}

pub fn ride_utility(curve: &RideUtilityCurve, ride: f64) -> Result<f64, PmisError> {
    if !(RIDE_MIN..=RIDE_MAX).contains(&ride) {
        return Err(PmisError::RideOutOfRange(ride));
    }
    Ok(curve.eval(ride))
}

/// Condition score on the 1..100 scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConditionScore(f64);

impl ConditionScore {
    pub const MIN: f64 = 1.0;
    pub const MAX: f64 = 100.0;

    /// Clamps a raw value into `[1, 100]`.
    pub fn clamped(raw: f64) -> Self {
        ConditionScore(raw.clamp(Self::MIN, Self::MAX))
    }

    /// Accepts values already in `[1, 100]`.
    pub fn new(value: f64) -> Result<Self, PmisError> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(ConditionScore(value))
        } else {
            Err(PmisError::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ConditionScore {
    type Error = PmisError;

    fn try_from(v: f64) -> Result<Self, PmisError> {
        ConditionScore::new(v)
    }
}

impl From<ConditionScore> for f64 {
    fn from(s: ConditionScore) -> f64 {
        s.0
    }
}

/// `U_ride * 100 * prod(U_i)`, clamped to `[1, 100]`.
pub fn condition_score(
    u_ride: f64,
    distress_utilities: &[f64],
) -> Result<ConditionScore, PmisError> {
    let check = |u: f64| {
        if (0.0..=1.0).contains(&u) {
            Ok(u)
        } else {
            Err(PmisError::UtilityOutOfRange(u))
        }
    };
    let mut raw = check(u_ride)? * 100.0;
    for &u in distress_utilities {
        raw *= check(u)?;
    }
    Ok(ConditionScore::clamped(raw))
}

/// The five PMIS condition states.
///
/// The discriminant is the class index used in probability vectors
/// (`p1` = VeryGood ... `p5` = VeryPoor). `Ord` follows condition quality,
/// so `VeryGood` is the greatest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionClass {
    VeryGood = 0,
    Good = 1,
    Fair = 2,
    Poor = 3,
    VeryPoor = 4,
}

impl ConditionClass {
    pub const ALL: [ConditionClass; 5] = [
        ConditionClass::VeryGood,
        ConditionClass::Good,
        ConditionClass::Fair,
        ConditionClass::Poor,
        ConditionClass::VeryPoor,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ConditionClass::VeryGood => "VeryGood",
            ConditionClass::Good => "Good",
            ConditionClass::Fair => "Fair",
            ConditionClass::Poor => "Poor",
            ConditionClass::VeryPoor => "VeryPoor",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }

    /// Score interval `[lo, hi)` of the class (VeryGood includes 100).
    pub fn score_range(self) -> (f64, f64) {
        match self {
            ConditionClass::VeryGood => (90.0, 100.0),
            ConditionClass::Good => (70.0, 90.0),
            ConditionClass::Fair => (50.0, 70.0),
            ConditionClass::Poor => (35.0, 50.0),
            ConditionClass::VeryPoor => (1.0, 35.0),
        }
    }
}

impl PartialOrd for ConditionClass {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ConditionClass {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.index().cmp(&self.index())
    }
}

impl fmt::Display for ConditionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConditionClass {
    type Err = PmisError;

    fn from_str(s: &str) -> Result<Self, PmisError> {
        let norm: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .collect::<String>()
            .to_ascii_lowercase();
        ConditionClass::ALL
            .into_iter()
            .find(|c| c.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| PmisError::UnknownClass(s.to_string()))
    }
}

/// Maps a condition score onto its class; boundaries belong to the upper
/// class.
pub fn classify(cs: ConditionScore) -> ConditionClass {
    let v = cs.value();
    if v >= 90.0 {
        ConditionClass::VeryGood
    } else if v >= 70.0 {
        ConditionClass::Good
    } else if v >= 50.0 {
        ConditionClass::Fair
    } else if v >= 35.0 {
        ConditionClass::Poor
    } else {
        ConditionClass::VeryPoor
    }
}
