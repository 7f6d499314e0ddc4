//! Evaluated artifacts and their lineage.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Score carried by candidates whose evaluation failed.
pub const FAILED_SCORE: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateId(pub u64);

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// How a candidate came into existence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    SeedVariant,
    Mutation,
    ParadigmShift,
    PeVariant,
}

impl Origin {
    pub const ALL: [Origin; 5] = [
        Origin::Seed,
        Origin::SeedVariant,
        Origin::Mutation,
        Origin::ParadigmShift,
        Origin::PeVariant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Seed => "seed",
            Origin::SeedVariant => "seed_variant",
            Origin::Mutation => "mutation",
            Origin::ParadigmShift => "paradigm_shift",
            Origin::PeVariant => "pe_variant",
        }
    }
}

/// Raw descriptor values plus their normalized image in (0,1).
///
/// `normalized` is empty until the candidate has passed through the archive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub raw: Vec<f64>,
    #[serde(default)]
    pub normalized: Vec<f64>,
}

impl Descriptor {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        Descriptor {
            raw,
            normalized: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.raw.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: CandidateId,
    pub artifact: String,
    /// Canonical (maximize) score; [`FAILED_SCORE`] when `error` is set.
    #[serde(with = "score_serde")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_instance_scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
    pub descriptor: Descriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<CandidateId>,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub cost_usd: f64,
}

impl Candidate {
    pub fn new(id: CandidateId, artifact: impl Into<String>, origin: Origin) -> Self {
        Candidate {
            id,
            artifact: artifact.into(),
            score: FAILED_SCORE,
            per_instance_scores: None,
            runtime_s: None,
            descriptor: Descriptor::default(),
            parent_id: None,
            origin,
            error: None,
            cost_usd: 0.0,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.error.is_some() || !self.score.is_finite()
    }
}

/// Scores are serialized as JSON numbers; the failure sentinel becomes `null`.
pub(crate) mod score_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(score: &f64, s: S) -> Result<S::Ok, S::Error> {
        if score.is_finite() {
            s.serialize_f64(*score)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(super::FAILED_SCORE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_score_round_trips_through_json() {
        let mut c = Candidate::new(CandidateId(7), "x", Origin::Mutation);
        c.error = Some("boom".into());
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"score\":null"));
        let back: Candidate = serde_json::from_str(&text).unwrap();
        assert!(back.is_failed());
        assert_eq!(back.score, FAILED_SCORE);
    }
}
