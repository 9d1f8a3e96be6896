//! Multi-task facial behaviour analysis at desk scale.
//!
//! The crate covers four areas:
//!
//! - [`relatedness`]: the expression/AU association knowledge base and the
//!   compound-expression table, with config-file overrides.
//! - [`coupling`]: the five terms of the multi-task objective (expression
//!   cross-entropy, AU binary cross-entropy, VA concordance loss, and the
//!   two coupling losses that tie the heads together), each with analytic
//!   gradients.
//! - [`metrics`]: overall metrics (macro F1, per-AU F1, concordance) and
//!   fairness metrics (EOP, EOD, fCCC) over demographic subgroups.
//! - [`compound`]: zero-shot compound-expression recognition by candidate
//!   scoring over the three prediction heads.
//!
//! The [`trainer`] module exercises all of it end to end: a small dense
//! multi-head network trained on synthetic, partially-annotated data with
//! the tri-batch feeding strategy. [`record`], [`io`], [`prep`] and
//! [`report`] form the evaluation harness around these pieces.

pub mod compound;
pub mod coupling;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod prep;
pub mod record;
pub mod relatedness;
pub mod report;
pub mod trainer;

pub use compound::{predict_compound, CandidateScore, CompoundPrediction};
pub use coupling::{
    AuActivations, ExprDistribution, LossBreakdown, LossWeights, TriBatch, VaPair,
};
pub use metrics::FairnessReport;
pub use record::{Attribute, SampleRecord};
pub use relatedness::{ActionUnit, CompoundTable, Expression, RelatednessTable};
pub use report::EvaluationReport;
