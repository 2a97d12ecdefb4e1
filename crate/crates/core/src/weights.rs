//! Per-profile weight vectors and monotone transforms of fitted scores.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Profile;

/// Bradley-Terry scores fitted directly per profile on the survey data,
/// normalised so profile 1 scores 1.
pub const TABLE5_DIRECT: [f64; 8] = [
    1.000000000,
    0.103243396,
    0.236280167,
    0.035722844,
    0.070045054,
    0.011349772,
    0.024072427,
    0.002769801,
];

/// Scores from the attribute-based fit of the same data (reference only).
pub const TABLE5_ATTRIBUTE: [f64; 8] = [
    1.00000000,
    0.29106507,
    0.13183083,
    0.08900390,
    0.03837135,
    0.02590593,
    0.01173346,
    0.00341520,
];

/// A real number per profile, indexed by profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileWeights([f64; 8]);

impl ProfileWeights {
    pub fn new(values: [f64; 8]) -> Self {
        ProfileWeights(values)
    }

    pub fn uniform(value: f64) -> Self {
        ProfileWeights([value; 8])
    }

    pub fn table5_direct() -> Self {
        ProfileWeights(TABLE5_DIRECT)
    }

    pub fn table5_attribute() -> Self {
        ProfileWeights(TABLE5_ATTRIBUTE)
    }

    pub fn get(&self, profile: Profile) -> f64 {
        self.0[profile.index()]
    }

    pub fn values(&self) -> &[f64; 8] {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ProfileWeights(self.0.map(|w| w * factor))
    }

    /// Profiles ordered by descending value, ties broken by ascending id.
    pub fn ranking(&self) -> [Profile; 8] {
        let mut order = Profile::ALL;
        order.sort_by(|a, b| {
            self.get(*b)
                .partial_cmp(&self.get(*a))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        });
        order
    }
}

impl TryFrom<BTreeMap<Profile, f64>> for ProfileWeights {
    type Error = Error;

    fn try_from(map: BTreeMap<Profile, f64>) -> Result<Self> {
        let mut values = [0.0; 8];
        for p in Profile::ALL {
            values[p.index()] = *map
                .get(&p)
                .ok_or_else(|| Error::param(format!("missing weight for profile {}", p.id())))?;
        }
        Ok(ProfileWeights(values))
    }
}

impl From<ProfileWeights> for BTreeMap<Profile, f64> {
    fn from(w: ProfileWeights) -> Self {
        Profile::ALL.into_iter().map(|p| (p, w.get(p))).collect()
    }
}

impl Serialize for ProfileWeights {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        BTreeMap::from(*self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ProfileWeights {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<Profile, f64>::deserialize(deserializer)?;
        ProfileWeights::try_from(map).map_err(serde::de::Error::custom)
    }
}

impl From<[f64; 8]> for ProfileWeights {
    fn from(values: [f64; 8]) -> Self {
        ProfileWeights(values)
    }
}

/// Labelled, strictly positive weights used by the prioritized matcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightVectorRepr", into = "WeightVectorRepr")]
pub struct WeightVector {
    label: String,
    weights: ProfileWeights,
}

impl WeightVector {
    pub fn new(label: impl Into<String>, weights: ProfileWeights) -> Result<Self> {
        if let Some(p) = Profile::ALL
            .iter()
            .find(|&&p| !(weights.get(p) > 0.0 && weights.get(p).is_finite()))
        {
            return Err(Error::param(format!(
                "weight for profile {} must be positive and finite, got {}",
                p.id(),
                weights.get(*p)
            )));
        }
        Ok(WeightVector {
            label: label.into(),
            weights,
        })
    }

    /// All-ones weights: the unprioritized baseline.
    pub fn standard() -> Self {
        WeightVector {
            label: "STANDARD".into(),
            weights: ProfileWeights::uniform(1.0),
        }
    }

    pub fn table5_direct() -> Self {
        WeightVector {
            label: "PRIORITIZED".into(),
            weights: ProfileWeights::table5_direct(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn weights(&self) -> &ProfileWeights {
        &self.weights
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

#[derive(Serialize, Deserialize)]
struct WeightVectorRepr {
    label: String,
    scores: ProfileWeights,
}

impl TryFrom<WeightVectorRepr> for WeightVector {
    type Error = Error;

    fn try_from(r: WeightVectorRepr) -> Result<Self> {
        WeightVector::new(r.label, r.scores)
    }
}

impl From<WeightVector> for WeightVectorRepr {
    fn from(w: WeightVector) -> Self {
        WeightVectorRepr {
            label: w.label,
            scores: w.weights,
        }
    }
}

pub const DEFAULT_RANK_TOP: f64 = 1.0;
pub const DEFAULT_RANK_STEP: f64 = 0.001;

/// Weights linear in rank: the profile ranked `r` (1 = highest score)
/// receives `top - (r - 1) * step`.
pub fn rank_linear(scores: &ProfileWeights, top: f64, step: f64) -> Result<WeightVector> {
    if !(step > 0.0) {
        return Err(Error::param(format!("rank step must be positive, got {step}")));
    }
    if !(top - 7.0 * step > 0.0) {
        return Err(Error::param(format!(
            "top {top} with step {step} would give a non-positive weight"
        )));
    }
    let mut values = [0.0; 8];
    for (rank, profile) in scores.ranking().into_iter().enumerate() {
        values[profile.index()] = top - rank as f64 * step;
    }
    WeightVector::new("LINEAR", ProfileWeights(values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    #[serde(rename = "sqrt")]
    SquareRoot,
    Rank,
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Transform::Identity),
            "sqrt" => Ok(Transform::SquareRoot),
            "rank" => Ok(Transform::Rank),
            other => Err(Error::param(format!("unknown transform {other:?}"))),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::Identity => "identity",
            Transform::SquareRoot => "sqrt",
            Transform::Rank => "rank",
        })
    }
}

/// Applies an order-preserving transform to fitted scores.
pub fn monotone_transform(scores: &ProfileWeights, transform: Transform) -> Result<WeightVector> {
    match transform {
        Transform::Identity => WeightVector::new("IDENTITY", *scores),
        Transform::SquareRoot => WeightVector::new("SQRT", ProfileWeights(scores.0.map(f64::sqrt))),
        Transform::Rank => rank_linear(scores, DEFAULT_RANK_TOP, DEFAULT_RANK_STEP),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(id: u8) -> Profile {
        Profile::new(id).unwrap()
    }

    #[test]
    fn linear_row_from_direct_scores() {
        let w = rank_linear(&ProfileWeights::table5_direct(), 1.0, 0.001).unwrap();
        let ranking: Vec<u8> = ProfileWeights::table5_direct().ranking().iter().map(|p| p.id()).collect();
        assert_eq!(ranking, [1, 3, 2, 5, 4, 7, 6, 8]);
        assert_eq!(w.weights().values(), &[1.0, 0.998, 0.999, 0.996, 0.997, 0.994, 0.995, 0.993]);
    }

    #[test]
    fn equal_scores_rank_by_id() {
        let w = rank_linear(&ProfileWeights::uniform(0.3), 1.0, 0.01).unwrap();
        for (i, profile) in Profile::ALL.iter().enumerate() {
            assert!((w.weights().get(*profile) - (1.0 - i as f64 * 0.01)).abs() < 1e-15);
        }
    }

    #[test]
    fn integer_ranks() {
        let w = rank_linear(&ProfileWeights::table5_direct(), 8.0, 1.0).unwrap();
        let expected = [8.0, 6.0, 7.0, 4.0, 5.0, 2.0, 3.0, 1.0];
        assert_eq!(w.weights().values(), &expected);
    }

    #[test]
    fn rank_parameter_errors() {
        let s = ProfileWeights::table5_direct();
        assert!(rank_linear(&s, 1.0, 0.0).is_err());
        assert!(rank_linear(&s, 0.007, 0.001).is_err());
        assert!(rank_linear(&s, 1.0, -0.1).is_err());
    }

    #[test]
    fn transforms() {
        let s = ProfileWeights::table5_direct();
        assert_eq!(monotone_transform(&s, Transform::Identity).unwrap().weights(), &s);
        let mut v = [1.0; 8];
        v[1] = 0.25;
        let root = monotone_transform(&ProfileWeights::new(v), Transform::SquareRoot).unwrap();
        assert_eq!(root.weights().get(p(1)), 1.0);
        assert_eq!(root.weights().get(p(2)), 0.5);
        let rank = monotone_transform(&s, Transform::Rank).unwrap();
        assert_eq!(rank.weights().get(p(8)), 0.993);
    }

    #[test]
    fn weight_vector_must_be_positive() {
        assert!(WeightVector::new("x", ProfileWeights::uniform(0.0)).is_err());
        let mut v = [1.0; 8];
        v[4] = f64::NAN;
        assert!(WeightVector::new("x", ProfileWeights::new(v)).is_err());
    }

    #[test]
    fn json_shape() {
        let json = serde_json::to_string(&WeightVector::table5_direct()).unwrap();
        assert!(json.starts_with(r#"{"label":"PRIORITIZED","scores":{"1":1.0,"2":0.103243396"#), "{json}");
        let back: WeightVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, WeightVector::table5_direct());
        assert!(serde_json::from_str::<ProfileWeights>(r#"{"1":1.0}"#).is_err());
        assert!(serde_json::from_str::<WeightVector>(
            r#"{"label":"x","scores":{"1":0,"2":1,"3":1,"4":1,"5":1,"6":1,"7":1,"8":1}}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn transforms_preserve_order(values in prop::array::uniform8(1e-6f64..10.0)) {
            let scores = ProfileWeights::new(values);
            for t in [Transform::Identity, Transform::SquareRoot, Transform::Rank] {
                let w = monotone_transform(&scores, t).unwrap();
                for a in Profile::ALL {
                    for b in Profile::ALL {
                        if scores.get(a) > scores.get(b) {
                            prop_assert!(w.weights().get(a) > w.weights().get(b), "{t} {a} {b}");
                        }
                    }
                }
            }
        }

        #[test]
        fn rank_linear_is_arithmetic(values in prop::array::uniform8(0.0f64..1.0), step in 1e-3f64..0.1) {
            let scores = ProfileWeights::new(values);
            let w = rank_linear(&scores, 1.0, step).unwrap();
            let by_rank: Vec<f64> = scores.ranking().iter().map(|&p| w.weights().get(p)).collect();
            for pair in by_rank.windows(2) {
                prop_assert!((pair[0] - pair[1] - step).abs() < 1e-12);
            }
        }
    }
}
