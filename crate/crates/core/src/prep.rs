//! Dataset preparation: VA/expression consistency cleaning and per-video
//! frame subsampling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::SampleRecord;
use crate::relatedness::Expression;

/// Neutral records must keep their VA vector inside this radius.
pub const NEUTRAL_RADIUS: f64 = 0.15;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("stride must be positive")]
    ZeroStride,
    #[error("record '{id}' has no frame_index (required for stride > 1)")]
    MissingFrameIndex { id: String },
}

/// Why a record failed the VA/expression consistency rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CleanReason {
    /// Neutral requires a VA radius below 0.15.
    NeutralRadius { radius: f64 },
    /// Sadness, disgust and fear require negative valence.
    NegativeValenceRequired { expression: Expression, valence: f64 },
    /// Anger requires negative valence and positive arousal.
    AngerQuadrant { valence: f64, arousal: f64 },
    /// Happiness requires positive valence.
    PositiveValenceRequired { valence: f64 },
}

impl std::fmt::Display for CleanReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CleanReason::NeutralRadius { radius } => {
                write!(f, "neutral requires VA radius < {NEUTRAL_RADIUS}, got {radius:.4}")
            }
            CleanReason::NegativeValenceRequired { expression, valence } => {
                write!(f, "{expression} requires negative valence, got {valence:.4}")
            }
            CleanReason::AngerQuadrant { valence, arousal } => write!(
                f,
                "anger requires negative valence and positive arousal, got ({valence:.4}, {arousal:.4})"
            ),
            CleanReason::PositiveValenceRequired { valence } => {
                write!(f, "happiness requires positive valence, got {valence:.4}")
            }
        }
    }
}

/// Result of the consistency filter; `kept` and `removed` partition the
/// input in order.
#[derive(Debug, Clone, Default)]
pub struct CleanOutcome {
    pub kept: Vec<SampleRecord>,
    pub removed: Vec<(SampleRecord, CleanReason)>,
}

/// Check a labeled (expression, VA) pair against the consistency rules.
pub fn va_expr_consistency(expr: Expression, va: &crate::coupling::VaPair) -> Option<CleanReason> {
    match expr {
        Expression::Neutral => {
            let radius = va.radius();
            (radius >= NEUTRAL_RADIUS).then_some(CleanReason::NeutralRadius { radius })
        }
        Expression::Sadness | Expression::Disgust | Expression::Fear => (va.valence >= 0.0)
            .then_some(CleanReason::NegativeValenceRequired {
                expression: expr,
                valence: va.valence,
            }),
        Expression::Anger => (!(va.valence < 0.0 && va.arousal > 0.0))
            .then_some(CleanReason::AngerQuadrant { valence: va.valence, arousal: va.arousal }),
        Expression::Happiness => {
            (va.valence <= 0.0).then_some(CleanReason::PositiveValenceRequired { valence: va.valence })
        }
        Expression::Surprise => None,
    }
}

/// Remove records whose expression and VA labels disagree. Records lacking
/// either label pass through untouched.
pub fn filter_va_expr_consistency(records: Vec<SampleRecord>) -> CleanOutcome {
    let mut outcome = CleanOutcome::default();
    for record in records {
        let verdict = match (record.expr_label(), record.va_label()) {
            (Some(expr), Some(va)) => va_expr_consistency(expr, &va),
            _ => None,
        };
        match verdict {
            None => outcome.kept.push(record),
            Some(reason) => outcome.removed.push((record, reason)),
        }
    }
    outcome
}

/// Keep every `stride`-th frame per video (by frame index, relative to the
/// video's first frame). Stride 1 is the identity. Records are grouped by
/// their `video` key; records without one share a single default group.
pub fn subsample_frames(
    records: Vec<SampleRecord>,
    stride: u64,
) -> Result<Vec<SampleRecord>, PrepError> {
    if stride == 0 {
        return Err(PrepError::ZeroStride);
    }
    if stride == 1 {
        return Ok(records);
    }
    let mut first_frame: BTreeMap<&str, u64> = BTreeMap::new();
    for record in &records {
        let frame = record
            .frame_index
            .ok_or_else(|| PrepError::MissingFrameIndex { id: record.id.clone() })?;
        let video = record.video.as_deref().unwrap_or("");
        first_frame
            .entry(video)
            .and_modify(|f| *f = (*f).min(frame))
            .or_insert(frame);
    }
    let keep: Vec<bool> = records
        .iter()
        .map(|record| {
            let frame = record.frame_index.expect("checked above");
            let base = first_frame[record.video.as_deref().unwrap_or("")];
            (frame - base).is_multiple_of(stride)
        })
        .collect();
    Ok(records
        .into_iter()
        .zip(keep)
        .filter_map(|(record, keep)| keep.then_some(record))
        .collect())
}
