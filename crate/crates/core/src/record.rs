//! Evaluation data model: one record per evaluated sample.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{AuActivations, CouplingError, ExprDistribution, VaPair};
use crate::relatedness::{ActionUnit, Expression, TableError};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("expression class id {0} is out of range 0..7")]
    ExprClassOutOfRange(u8),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error("active AU {0} is not listed as known")]
    ActiveNotKnown(u8),
    #[error("record '{id}' carries neither labels nor predictions")]
    EmptyRecord { id: String },
}

/// Expression referenced by its canonical class index (0..6).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ExprId(pub Expression);

impl TryFrom<u8> for ExprId {
    type Error = RecordError;

    fn try_from(id: u8) -> Result<Self, Self::Error> {
        Expression::from_index(id as usize)
            .map(ExprId)
            .ok_or(RecordError::ExprClassOutOfRange(id))
    }
}

impl From<ExprId> for u8 {
    fn from(e: ExprId) -> u8 {
        e.0.index() as u8
    }
}

/// Demographic annotations; free-form strings compared by exact equality.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race: Option<String>,
}

/// Demographic attribute a fairness metric partitions by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Age,
    Gender,
    Race,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Age, Attribute::Gender, Attribute::Race];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Age => "age",
            Attribute::Gender => "gender",
            Attribute::Race => "race",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "age" => Ok(Attribute::Age),
            "gender" => Ok(Attribute::Gender),
            "race" => Ok(Attribute::Race),
            other => Err(format!("unknown attribute '{other}' (expected age, gender or race)")),
        }
    }
}

/// Binary AU annotation with a per-AU presence mask; AUs outside `known`
/// were not annotated for this sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AuAnnotationRaw", into = "AuAnnotationRaw")]
pub struct AuLabelSet {
    values: [bool; ActionUnit::COUNT],
    known: [bool; ActionUnit::COUNT],
}

#[derive(Serialize, Deserialize)]
struct AuAnnotationRaw {
    /// Codes of AUs annotated active.
    active: Vec<u8>,
    /// Codes of annotated AUs; omitted = the full registry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    known: Option<Vec<u8>>,
}

impl AuLabelSet {
    /// Annotation covering the full registry.
    pub fn full(values: [bool; ActionUnit::COUNT]) -> Self {
        AuLabelSet { values, known: [true; ActionUnit::COUNT] }
    }

    pub fn from_codes(active: &[u8], known: Option<&[u8]>) -> Result<Self, RecordError> {
        let mut set = AuLabelSet { values: [false; 17], known: [true; 17] };
        if let Some(known_codes) = known {
            set.known = [false; 17];
            for &code in known_codes {
                set.known[ActionUnit::from_code(code)?.index()] = true;
            }
        }
        for &code in active {
            let idx = ActionUnit::from_code(code)?.index();
            if !set.known[idx] {
                return Err(RecordError::ActiveNotKnown(code));
            }
            set.values[idx] = true;
        }
        Ok(set)
    }

    pub fn is_known(&self, au: ActionUnit) -> bool {
        self.known[au.index()]
    }

    /// `Some(active)` when the AU was annotated, `None` otherwise.
    pub fn value(&self, au: ActionUnit) -> Option<bool> {
        self.known[au.index()].then_some(self.values[au.index()])
    }

    pub fn known_aus(&self) -> impl Iterator<Item = ActionUnit> + '_ {
        ActionUnit::ALL.into_iter().filter(|au| self.is_known(*au))
    }

    /// Raw values with unknown AUs reported inactive.
    pub fn values_dense(&self) -> &[bool; ActionUnit::COUNT] {
        &self.values
    }
}

impl TryFrom<AuAnnotationRaw> for AuLabelSet {
    type Error = RecordError;

    fn try_from(raw: AuAnnotationRaw) -> Result<Self, Self::Error> {
        AuLabelSet::from_codes(&raw.active, raw.known.as_deref())
    }
}

impl From<AuLabelSet> for AuAnnotationRaw {
    fn from(set: AuLabelSet) -> AuAnnotationRaw {
        let active = ActionUnit::ALL
            .into_iter()
            .filter(|au| set.value(*au) == Some(true))
            .map(ActionUnit::code)
            .collect();
        let known = if set.known.iter().all(|&k| k) {
            None
        } else {
            Some(set.known_aus().map(ActionUnit::code).collect())
        };
        AuAnnotationRaw { active, known }
    }
}

/// Ground-truth annotations carried by a record; all tasks optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<ExprId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compound: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aus: Option<AuLabelSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub va: Option<VaPair>,
}

impl Labels {
    pub fn is_empty(&self) -> bool {
        self.expr.is_none() && self.compound.is_none() && self.aus.is_none() && self.va.is_none()
    }
}

/// Expression prediction: either a full distribution or a bare class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExprPrediction {
    ClassId(ExprId),
    Distribution(ExprDistribution),
}

impl ExprPrediction {
    /// Predicted class (argmax for distributions, lowest index on ties).
    pub fn class(&self) -> Expression {
        match self {
            ExprPrediction::ClassId(id) => id.0,
            ExprPrediction::Distribution(d) => d.argmax(),
        }
    }

    pub fn distribution(&self) -> Option<&ExprDistribution> {
        match self {
            ExprPrediction::Distribution(d) => Some(d),
            ExprPrediction::ClassId(_) => None,
        }
    }
}

/// Model outputs carried by a record; all tasks optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<ExprPrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aus: Option<AuActivations>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub va: Option<VaPair>,
}

impl Predictions {
    pub fn is_empty(&self) -> bool {
        self.expr.is_none() && self.aus.is_none() && self.va.is_none()
    }
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Grouping key for video-derived records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<Demographics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Predictions>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>) -> Self {
        SampleRecord {
            id: id.into(),
            video: None,
            frame_index: None,
            demographics: None,
            labels: None,
            predictions: None,
        }
    }

    /// A record must carry at least one label or prediction.
    pub fn validate(&self) -> Result<(), RecordError> {
        let has_labels = self.labels.as_ref().is_some_and(|l| !l.is_empty());
        let has_preds = self.predictions.as_ref().is_some_and(|p| !p.is_empty());
        if has_labels || has_preds {
            Ok(())
        } else {
            Err(RecordError::EmptyRecord { id: self.id.clone() })
        }
    }

    pub fn attribute_value(&self, attribute: Attribute) -> Option<&str> {
        let demo = self.demographics.as_ref()?;
        match attribute {
            Attribute::Age => demo.age_group.as_deref(),
            Attribute::Gender => demo.gender.as_deref(),
            Attribute::Race => demo.race.as_deref(),
        }
    }

    pub fn expr_label(&self) -> Option<Expression> {
        self.labels.as_ref()?.expr.map(|e| e.0)
    }

    pub fn expr_prediction(&self) -> Option<&ExprPrediction> {
        self.predictions.as_ref()?.expr.as_ref()
    }

    pub fn au_labels(&self) -> Option<&AuLabelSet> {
        self.labels.as_ref()?.aus.as_ref()
    }

    pub fn au_predictions(&self) -> Option<&AuActivations> {
        self.predictions.as_ref()?.aus.as_ref()
    }

    pub fn va_label(&self) -> Option<VaPair> {
        self.labels.as_ref()?.va
    }

    pub fn va_prediction(&self) -> Option<VaPair> {
        self.predictions.as_ref()?.va
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expr_id_rejects_out_of_range() {
        assert!(ExprId::try_from(6).is_ok());
        assert!(ExprId::try_from(7).is_err());
    }

    #[test]
    fn au_label_set_masks_unknown_aus() {
        let set = AuLabelSet::from_codes(&[1, 4], Some(&[1, 2, 4])).unwrap();
        assert_eq!(set.value(ActionUnit::from_code(1).unwrap()), Some(true));
        assert_eq!(set.value(ActionUnit::from_code(2).unwrap()), Some(false));
        assert_eq!(set.value(ActionUnit::from_code(25).unwrap()), None);
        assert_eq!(set.known_aus().count(), 3);
    }

    #[test]
    fn active_outside_known_is_rejected() {
        assert!(matches!(
            AuLabelSet::from_codes(&[25], Some(&[1, 2])),
            Err(RecordError::ActiveNotKnown(25))
        ));
    }

    #[test]
    fn record_without_any_payload_is_invalid() {
        let record = SampleRecord::new("r0");
        assert!(record.validate().is_err());
        let mut labeled = SampleRecord::new("r1");
        labeled.labels = Some(Labels { expr: Some(ExprId(Expression::Fear)), ..Labels::default() });
        assert!(labeled.validate().is_ok());
    }

    #[test]
    fn expr_prediction_json_accepts_both_shapes() {
        let from_id: ExprPrediction = serde_json::from_str("3").unwrap();
        assert_eq!(from_id.class(), Expression::Fear);
        let from_dist: ExprPrediction =
            serde_json::from_str("[0.1, 0.6, 0.05, 0.05, 0.1, 0.05, 0.05]").unwrap();
        assert_eq!(from_dist.class(), Expression::Happiness);
        assert!(serde_json::from_str::<ExprPrediction>("[0.5, 0.1, 0.05, 0.05, 0.05, 0.05, 0.05]").is_err());
    }
}
