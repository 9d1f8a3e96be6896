//! Desk-scale multi-task trainer.
//!
//! Trains the dense multi-head model on synthetic partially-annotated data.
//! Each iteration concatenates three sub-batches, one from each task set
//! (VA, AU, expression), so every objective term sees data at every step.
//! Runs are bit-reproducible for a fixed seed.

mod model;
mod sgd;
mod synth;

pub use model::{backward, forward_tri, tri_batch_loss, FeatureBatch, ModelGrads, ToyModel};
pub use sgd::MomentumSgd;
pub use synth::{synth_dataset, SynthDataset, SynthSample, SynthSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{
    distribution_matching_loss, mixture_au_distribution, va_ccc, LossBreakdown, LossWeights,
    VaPair,
};
use crate::metrics::{macro_f1, mean_au_f1};
use crate::record::AuLabelSet;
use crate::relatedness::{ActionUnit, Expression, RelatednessTable};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset sample counts must be positive")]
    ZeroCount,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient at parameter {param_index}")]
    NonFiniteGradient { param_index: usize },
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
}

/// Full trainer configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    /// Training samples per task set.
    pub train_per_task: usize,
    /// Held-out samples per task set.
    pub val_per_task: usize,
    pub noise_rate: f64,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Sub-batch size per task set; each iteration feeds three of these.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            feature_dim: 32,
            hidden: vec![64, 64],
            train_per_task: 2500,
            val_per_task: 600,
            noise_rate: 0.02,
            // the distribution-matching term sums over the 17 AUs while the
            // AU task loss is mean-reduced; a sub-unit default weight keeps
            // the two on a comparable per-AU scale
            weights: LossWeights { expr: 1.0, au: 1.0, va: 1.0, dm: 0.25, sca: 1.0 },
            learning_rate: 1e-2,
            momentum: 0.9,
            epochs: 20,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be non-negative".into()));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(TrainError::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch training and validation measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean objective breakdown over the epoch's iterations.
    pub train_loss: LossBreakdown,
    pub val_macro_f1: f64,
    pub val_au_f1: f64,
    pub val_ccc: f64,
    /// Held-out expression/AU consistency: mean distribution-matching loss
    /// between the model's own AU predictions and the AU distribution
    /// induced from its own expression predictions.
    pub consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub config: TrainConfig,
    pub param_count: usize,
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn final_epoch(&self) -> &EpochStats {
        self.epochs.last().expect("at least one epoch")
    }
}

const MODEL_SEED_SALT: u64 = 0x3C6E_F372_FE94_F82A;
const LOOP_SEED_SALT: u64 = 0x5851_F42D_4C95_7F2D;

fn split_dataset(mut full: SynthDataset, train_per_task: usize) -> (SynthDataset, SynthDataset) {
    let val = SynthDataset {
        va: full.va.split_off(train_per_task),
        au: full.au.split_off(train_per_task),
        expr: full.expr.split_off(train_per_task),
    };
    (full, val)
}

/// Train the model per `config` on synthetic data; returns the per-epoch
/// history. Identical configs produce identical histories.
pub fn train(config: &TrainConfig) -> Result<TrainHistory, TrainError> {
    train_with_table(config, &RelatednessTable::builtin())
}

pub fn train_with_table(
    config: &TrainConfig,
    table: &RelatednessTable,
) -> Result<TrainHistory, TrainError> {
    config.validate()?;
    // one generation pass, split head/tail, so train and validation share
    // the cluster geometry
    let per_task = config.train_per_task + config.val_per_task;
    let full = synth_dataset(
        &SynthSpec {
            seed: config.seed,
            n_va: per_task,
            n_au: per_task,
            n_expr: per_task,
            feature_dim: config.feature_dim,
            noise_rate: config.noise_rate,
        },
        table,
    )?;
    let (train_set, val_set) = split_dataset(full, config.train_per_task);

    let mut model_rng = ChaCha8Rng::seed_from_u64(config.seed ^ MODEL_SEED_SALT);
    let mut model = ToyModel::init(&mut model_rng, config.feature_dim, &config.hidden);
    let mut optimizer =
        MomentumSgd::new(config.learning_rate, config.momentum, model.param_count());
    let mut loop_rng = ChaCha8Rng::seed_from_u64(config.seed ^ LOOP_SEED_SALT);

    let n_max = config.train_per_task;
    let iterations = n_max.div_ceil(config.batch_size);
    let mut va_order: Vec<usize> = (0..train_set.va.len()).collect();
    let mut au_order: Vec<usize> = (0..train_set.au.len()).collect();
    let mut expr_order: Vec<usize> = (0..train_set.expr.len()).collect();

    let mut history = TrainHistory {
        config: config.clone(),
        param_count: model.param_count(),
        epochs: Vec::with_capacity(config.epochs),
    };

    for epoch in 0..config.epochs {
        va_order.shuffle(&mut loop_rng);
        au_order.shuffle(&mut loop_rng);
        expr_order.shuffle(&mut loop_rng);

        let mut sum = LossSum::default();
        for iteration in 0..iterations {
            let batch = FeatureBatch {
                va: cyclic(&va_order, iteration, config.batch_size)
                    .map(|i| (&train_set.va[i].features[..], train_set.va[i].label))
                    .collect(),
                au: cyclic(&au_order, iteration, config.batch_size)
                    .map(|i| (&train_set.au[i].features[..], train_set.au[i].label))
                    .collect(),
                expr: cyclic(&expr_order, iteration, config.batch_size)
                    .map(|i| (&train_set.expr[i].features[..], train_set.expr[i].label))
                    .collect(),
            };
            let (breakdown, grads) = backward(&model, &batch, &config.weights, table)?;
            if !breakdown.total.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            let mut params = model.params_flat();
            optimizer.step(&mut params, &grads.flat())?;
            model.set_params_flat(&params)?;
            sum.add(&breakdown);
        }

        let stats = evaluate_epoch(epoch, &model, &val_set, sum.mean(iterations), table)?;
        history.epochs.push(stats);
    }
    Ok(history)
}

fn cyclic(order: &[usize], iteration: usize, batch: usize) -> impl Iterator<Item = usize> + '_ {
    let n = order.len();
    (0..batch).map(move |k| order[(iteration * batch + k) % n])
}

#[derive(Default)]
struct LossSum {
    total: f64,
    expr: f64,
    au: f64,
    va: f64,
    dm: f64,
    sca: f64,
}

impl LossSum {
    fn add(&mut self, b: &LossBreakdown) {
        self.total += b.total;
        self.expr += b.expr;
        self.au += b.au;
        self.va += b.va;
        self.dm += b.dm;
        self.sca += b.sca;
    }

    fn mean(&self, n: usize) -> LossBreakdown {
        let n = n as f64;
        LossBreakdown {
            total: self.total / n,
            expr: self.expr / n,
            au: self.au / n,
            va: self.va / n,
            dm: self.dm / n,
            sca: self.sca / n,
            skipped: Vec::new(),
        }
    }
}

fn evaluate_epoch(
    epoch: usize,
    model: &ToyModel,
    val: &SynthDataset,
    train_loss: LossBreakdown,
    table: &RelatednessTable,
) -> Result<EpochStats, TrainError> {
    // expression accuracy on the held-out expression set
    let mut preds = Vec::with_capacity(val.expr.len());
    let mut labels = Vec::with_capacity(val.expr.len());
    for sample in &val.expr {
        preds.push(model.forward(&sample.features)?.expr.argmax().index());
        labels.push(sample.label.index());
    }
    let val_macro_f1 =
        macro_f1(&preds, &labels, Expression::COUNT).expect("non-empty val set").macro_f1;

    // AU detection on the held-out AU set
    let mut au_preds = Vec::with_capacity(val.au.len());
    let mut au_labels = Vec::with_capacity(val.au.len());
    for sample in &val.au {
        au_preds.push(model.forward(&sample.features)?.au.thresholded());
        au_labels.push(AuLabelSet::full(sample.label));
    }
    let val_au_f1 =
        mean_au_f1(&au_preds, &au_labels, &ActionUnit::ALL).expect("non-empty val set").mean;

    // VA concordance on the held-out VA set
    let mut va_preds = Vec::with_capacity(val.va.len());
    let mut va_labels: Vec<VaPair> = Vec::with_capacity(val.va.len());
    for sample in &val.va {
        va_preds.push(model.forward(&sample.features)?.va);
        va_labels.push(sample.label);
    }
    let val_ccc = va_ccc(&va_preds, &va_labels).expect(">= 2 val samples").mean();

    // consistency between the model's own heads over all held-out features
    let mut consistency = 0.0;
    let mut count = 0usize;
    for features in val
        .va
        .iter()
        .map(|s| &s.features)
        .chain(val.au.iter().map(|s| &s.features))
        .chain(val.expr.iter().map(|s| &s.features))
    {
        let heads = model.forward(features)?;
        let q = mixture_au_distribution(&heads.expr, table);
        consistency += distribution_matching_loss(&heads.au, &q);
        count += 1;
    }
    consistency /= count as f64;

    Ok(EpochStats { epoch, train_loss, val_macro_f1, val_au_f1, val_ccc, consistency })
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

/// The four coupling configurations compared by the ablation.
pub const ABLATION_VARIANTS: [(&str, bool, bool); 4] = [
    ("typical-mtl", false, false),
    ("with-sca", false, true),
    ("with-dm", true, false),
    ("with-both", true, true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub name: String,
    pub weights: LossWeights,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub runs: Vec<AblationRun>,
}

impl AblationSummary {
    pub fn run(&self, name: &str) -> Option<&AblationRun> {
        self.runs.iter().find(|r| r.name == name)
    }
}

/// Run the ablation grid: same data, seed and schedule, with the two
/// coupling terms switched on/off.
pub fn ablate(base: &TrainConfig) -> Result<AblationSummary, TrainError> {
    let mut runs = Vec::with_capacity(ABLATION_VARIANTS.len());
    for (name, dm_on, sca_on) in ABLATION_VARIANTS {
        let mut config = base.clone();
        let on = |w: f64| if w > 0.0 { w } else { 1.0 };
        config.weights.dm = if dm_on { on(base.weights.dm) } else { 0.0 };
        config.weights.sca = if sca_on { on(base.weights.sca) } else { 0.0 };
        let history = train(&config)?;
        runs.push(AblationRun { name: name.to_string(), weights: config.weights, history });
    }
    Ok(AblationSummary { runs })
}
