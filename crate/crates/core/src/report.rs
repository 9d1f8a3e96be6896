//! Evaluation drivers and the structured report document.

use serde::{Deserialize, Serialize};

use crate::compound::predict_compound;
use crate::coupling::ExprDistribution;
use crate::metrics::{
    eod, eop, fccc, macro_f1, mean_au_f1, overall_ccc, FairnessReport, MetricError,
};
use crate::record::{Attribute, ExprPrediction, SampleRecord};
use crate::relatedness::{ActionUnit, CompoundTable, Expression};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        ToolInfo { name: "affect".to_string(), version: env!("CARGO_PKG_VERSION").to_string() }
    }
}

/// Which tasks a run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSelection {
    pub expr: bool,
    pub au: bool,
    pub va: bool,
}

impl Default for TaskSelection {
    fn default() -> Self {
        TaskSelection { expr: true, au: true, va: true }
    }
}

impl TaskSelection {
    /// Parse a comma-separated task list (`expr,au,va`).
    pub fn parse(s: &str) -> Result<TaskSelection, String> {
        let mut selection = TaskSelection { expr: false, au: false, va: false };
        for part in s.split(',') {
            match part.trim() {
                "expr" => selection.expr = true,
                "au" => selection.au = true,
                "va" => selection.va = true,
                other => return Err(format!("unknown task '{other}' (expected expr, au, va)")),
            }
        }
        Ok(selection)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExprOverall {
    pub records: usize,
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuOverall {
    pub records: usize,
    pub active_aus: Vec<u8>,
    pub mean_f1: f64,
    pub per_au: Vec<(u8, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaOverall {
    pub records: usize,
    pub ccc: f64,
    pub ccc_valence: f64,
    pub ccc_arousal: f64,
}

/// Overall per-task metrics; a task is `None` when not selected or not
/// computable from the data (explained in `notes`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<ExprOverall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub au: Option<AuOverall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub va: Option<VaOverall>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// AUs annotated at least once in the records, ascending code order.
pub fn active_aus(records: &[SampleRecord]) -> Vec<ActionUnit> {
    ActionUnit::ALL
        .into_iter()
        .filter(|&au| {
            records
                .iter()
                .any(|r| r.au_labels().is_some_and(|l| l.is_known(au)) && r.au_predictions().is_some())
        })
        .collect()
}

/// Compute the selected overall metrics over all usable records.
pub fn evaluate_overall(records: &[SampleRecord], tasks: &TaskSelection) -> OverallMetrics {
    let mut overall = OverallMetrics::default();

    if tasks.expr {
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for record in records {
            let (Some(y), Some(p)) = (record.expr_label(), record.expr_prediction()) else {
                continue;
            };
            preds.push(p.class().index());
            labels.push(y.index());
        }
        match macro_f1(&preds, &labels, Expression::COUNT) {
            Ok(result) => {
                overall.expr = Some(ExprOverall {
                    records: preds.len(),
                    macro_f1: result.macro_f1,
                    per_class: result.per_class,
                })
            }
            Err(e) => overall.notes.push(format!("expr metrics unavailable: {e}")),
        }
    }

    if tasks.au {
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for record in records {
            let (Some(l), Some(p)) = (record.au_labels(), record.au_predictions()) else {
                continue;
            };
            preds.push(p.thresholded());
            labels.push(l.clone());
        }
        let active = active_aus(records);
        match mean_au_f1(&preds, &labels, &active) {
            Ok(result) => {
                overall.au = Some(AuOverall {
                    records: preds.len(),
                    active_aus: active.iter().map(|a| a.code()).collect(),
                    mean_f1: result.mean,
                    per_au: result.per_au,
                })
            }
            Err(e) => overall.notes.push(format!("au metrics unavailable: {e}")),
        }
    }

    if tasks.va {
        match overall_ccc(records) {
            Ok(result) => {
                overall.va = Some(VaOverall {
                    records: result.records,
                    ccc: result.ccc,
                    ccc_valence: result.valence.ccc,
                    ccc_arousal: result.arousal.ccc,
                })
            }
            Err(e) => overall.notes.push(format!("va metrics unavailable: {e}")),
        }
    }

    overall
}

/// Fairness metrics for one attribute over the selected tasks. Metrics that
/// cannot be computed are reported as notes, not hard failures, so one
/// attribute cannot sink an entire multi-attribute run.
pub fn fairness_for_attribute(
    records: &[SampleRecord],
    attribute: Attribute,
    tasks: &TaskSelection,
) -> (Vec<FairnessReport>, Vec<String>) {
    let mut reports = Vec::new();
    let mut notes = Vec::new();
    let mut push = |result: Result<FairnessReport, MetricError>, name: &str| match result {
        Ok(report) => reports.push(report),
        Err(e) => notes.push(format!("{name} unavailable for {attribute}: {e}")),
    };

    if tasks.expr {
        push(eop(records, attribute).map(FairnessReport::Eop), "eop");
    }
    if tasks.au {
        let active = active_aus(records);
        push(eod(records, attribute, &active).map(FairnessReport::Eod), "eod");
    }
    if tasks.va {
        push(fccc(records, attribute).map(FairnessReport::Fccc), "fccc");
    }
    (reports, notes)
}

/// One record's compound prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CerPrediction {
    pub id: String,
    pub winner: String,
    pub total: f64,
}

/// Zero-shot compound recognition over a record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CerOutcome {
    pub scored: usize,
    /// Records lacking one of the three prediction heads.
    pub skipped_missing_heads: usize,
    pub labeled: usize,
    /// Compound labels not present in the table.
    pub unknown_labels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_f1: Option<Vec<(String, f64)>>,
    pub predictions: Vec<CerPrediction>,
}

/// Score every record that carries all three prediction heads. A class-id
/// expression prediction counts as a one-hot distribution. Accuracy and F1
/// are reported when compound labels are present.
pub fn cer_records(records: &[SampleRecord], table: &CompoundTable) -> CerOutcome {
    let mut outcome = CerOutcome {
        scored: 0,
        skipped_missing_heads: 0,
        labeled: 0,
        unknown_labels: 0,
        accuracy: None,
        macro_f1: None,
        per_class_f1: None,
        predictions: Vec::new(),
    };
    let mut pred_ids = Vec::new();
    let mut label_ids = Vec::new();
    for record in records {
        let heads = (record.expr_prediction(), record.au_predictions(), record.va_prediction());
        let (Some(expr), Some(aus), Some(va)) = heads else {
            outcome.skipped_missing_heads += 1;
            continue;
        };
        let p_expr = match expr {
            ExprPrediction::Distribution(d) => d.clone(),
            ExprPrediction::ClassId(id) => ExprDistribution::one_hot(id.0),
        };
        let prediction =
            predict_compound(&p_expr, aus, &va, table).expect("non-empty validated table");
        outcome.scored += 1;
        if let Some(label) = record.labels.as_ref().and_then(|l| l.compound.as_deref()) {
            match table.by_name(label) {
                Some((idx, _)) => {
                    outcome.labeled += 1;
                    pred_ids.push(prediction.winner_index);
                    label_ids.push(idx);
                }
                None => outcome.unknown_labels += 1,
            }
        }
        outcome.predictions.push(CerPrediction {
            id: record.id.clone(),
            total: prediction.scores[prediction.winner_index].total,
            winner: prediction.winner,
        });
    }
    if !label_ids.is_empty() {
        let correct = pred_ids.iter().zip(&label_ids).filter(|(p, y)| p == y).count();
        outcome.accuracy = Some(correct as f64 / label_ids.len() as f64);
        if let Ok(f1) = macro_f1(&pred_ids, &label_ids, table.len()) {
            outcome.per_class_f1 = Some(
                table
                    .compounds()
                    .iter()
                    .zip(&f1.per_class)
                    .map(|(c, &f)| (c.name.clone(), f))
                    .collect(),
            );
            outcome.macro_f1 = Some(f1.macro_f1);
        }
    }
    outcome
}

/// One run's structured output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub command: String,
    /// Echo of the effective options of the run.
    pub config: serde_json::Value,
    pub record_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall: Option<OverallMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fairness: Vec<FairnessReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvaluationReport {
    pub fn new(command: &str, config: serde_json::Value, record_count: usize) -> Self {
        EvaluationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            tool: ToolInfo::default(),
            command: command.to_string(),
            config,
            record_count,
            overall: None,
            fairness: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
