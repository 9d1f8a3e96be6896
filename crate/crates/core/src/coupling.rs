//! Loss terms of the multi-task objective.
//!
//! The objective couples three prediction heads (7-way expression softmax,
//! 17-way AU sigmoid, valence/arousal) through five terms:
//!
//! ```text
//! L = w_expr * L_expr + w_au * L_au + w_va * L_va + w_dm * L_dm + w_sca * L_sca
//! ```
//!
//! `L_expr` is cross-entropy on expression-labeled samples, `L_au` is
//! mean-over-AUs binary cross-entropy on AU-labeled samples and `L_va` is a
//! concordance-based loss on VA-labeled samples. The two coupling terms tie
//! the heads together through the relatedness table: `L_dm` matches the AU
//! head against an AU distribution induced from the expression head, and
//! `L_sca` matches the expression head against a soft expression label
//! induced from ground-truth AU activations.
//!
//! Every loss comes with its analytic gradient; the gradients are checked
//! against central finite differences in the test suites.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relatedness::{ActionUnit, Expression, RelatednessTable};

/// Clamp applied to every probability entering a logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Tolerance on the simplex-sum invariant of [`ExprDistribution`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Below this denominator the concordance coefficient is defined as 0.
pub const CCC_DEGENERATE_EPS: f64 = 1e-12;

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[inline]
fn safe_ln(p: f64) -> f64 {
    clamp_prob(p).ln()
}

/// Derivative of `safe_ln` with respect to its argument (0 in the clamped
/// region, where the loss is locally constant).
#[inline]
fn dsafe_ln(p: f64) -> f64 {
    if p > PROB_EPS && p < 1.0 - PROB_EPS {
        1.0 / p
    } else {
        0.0
    }
}

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("expression probabilities sum to {sum}, expected 1 within {SIMPLEX_TOL}")]
    NotASimplex { sum: f64 },
    #[error("{what} = {value} is outside [{min}, {max}]")]
    OutOfRange { what: &'static str, value: f64, min: f64, max: f64 },
    #[error("{what} must be finite")]
    NonFinite { what: &'static str },
    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {min} samples, got {got}")]
    TooShort { min: usize, got: usize },
    #[error("expected {expected} entries, got {got}")]
    WrongArity { expected: usize, got: usize },
}

/// Probability distribution over the seven basic expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ExprDistribution([f64; Expression::COUNT]);

impl ExprDistribution {
    pub fn new(probs: [f64; Expression::COUNT]) -> Result<Self, CouplingError> {
        let mut sum = 0.0;
        for &p in &probs {
            if !p.is_finite() {
                return Err(CouplingError::NonFinite { what: "expression probability" });
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(CouplingError::OutOfRange {
                    what: "expression probability",
                    value: p,
                    min: 0.0,
                    max: 1.0,
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(CouplingError::NotASimplex { sum });
        }
        Ok(ExprDistribution(probs))
    }

    pub fn uniform() -> Self {
        ExprDistribution([1.0 / Expression::COUNT as f64; Expression::COUNT])
    }

    pub fn one_hot(expr: Expression) -> Self {
        let mut probs = [0.0; Expression::COUNT];
        probs[expr.index()] = 1.0;
        ExprDistribution(probs)
    }

    /// Numerically stable softmax.
    pub fn from_logits(logits: &[f64; Expression::COUNT]) -> Self {
        ExprDistribution(softmax(logits))
    }

    pub fn prob(&self, expr: Expression) -> f64 {
        self.0[expr.index()]
    }

    pub fn as_array(&self) -> &[f64; Expression::COUNT] {
        &self.0
    }

    /// Highest-probability expression; ties resolve to the lowest index.
    pub fn argmax(&self) -> Expression {
        let mut best = 0;
        for i in 1..Expression::COUNT {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        Expression::from_index(best).expect("index < COUNT")
    }
}

impl TryFrom<Vec<f64>> for ExprDistribution {
    type Error = CouplingError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; Expression::COUNT] = v
            .try_into()
            .map_err(|v: Vec<f64>| CouplingError::WrongArity { expected: Expression::COUNT, got: v.len() })?;
        ExprDistribution::new(arr)
    }
}

impl From<ExprDistribution> for Vec<f64> {
    fn from(d: ExprDistribution) -> Vec<f64> {
        d.0.to_vec()
    }
}

pub(crate) fn softmax<const N: usize>(logits: &[f64; N]) -> [f64; N] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N];
    let mut denom = 0.0;
    for i in 0..N {
        out[i] = (logits[i] - max).exp();
        denom += out[i];
    }
    for v in &mut out {
        *v /= denom;
    }
    out
}

/// Per-AU activation probabilities over the 17-AU registry.
///
/// Binary activation vectors are the special case with entries in {0, 1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AuActivations([f64; ActionUnit::COUNT]);

impl AuActivations {
    pub fn new(probs: [f64; ActionUnit::COUNT]) -> Result<Self, CouplingError> {
        for &p in &probs {
            if !p.is_finite() {
                return Err(CouplingError::NonFinite { what: "AU probability" });
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(CouplingError::OutOfRange {
                    what: "AU probability",
                    value: p,
                    min: 0.0,
                    max: 1.0,
                });
            }
        }
        Ok(AuActivations(probs))
    }

    pub fn zeros() -> Self {
        AuActivations([0.0; ActionUnit::COUNT])
    }

    pub fn from_binary(active: &[bool; ActionUnit::COUNT]) -> Self {
        let mut probs = [0.0; ActionUnit::COUNT];
        for (p, &a) in probs.iter_mut().zip(active) {
            *p = if a { 1.0 } else { 0.0 };
        }
        AuActivations(probs)
    }

    pub fn from_active_codes(codes: &[u8]) -> Result<Self, crate::relatedness::TableError> {
        let mut probs = [0.0; ActionUnit::COUNT];
        for &code in codes {
            probs[ActionUnit::from_code(code)?.index()] = 1.0;
        }
        Ok(AuActivations(probs))
    }

    pub fn prob(&self, au: ActionUnit) -> f64 {
        self.0[au.index()]
    }

    pub fn as_array(&self) -> &[f64; ActionUnit::COUNT] {
        &self.0
    }

    /// Thresholded view (`p >= 0.5` counts as active).
    pub fn thresholded(&self) -> [bool; ActionUnit::COUNT] {
        let mut out = [false; ActionUnit::COUNT];
        for (o, &p) in out.iter_mut().zip(&self.0) {
            *o = p >= 0.5;
        }
        out
    }
}

impl TryFrom<Vec<f64>> for AuActivations {
    type Error = CouplingError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; ActionUnit::COUNT] = v
            .try_into()
            .map_err(|v: Vec<f64>| CouplingError::WrongArity { expected: ActionUnit::COUNT, got: v.len() })?;
        AuActivations::new(arr)
    }
}

impl From<AuActivations> for Vec<f64> {
    fn from(a: AuActivations) -> Vec<f64> {
        a.0.to_vec()
    }
}

/// Continuous affect annotation: valence and arousal, both in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VaPairRaw")]
pub struct VaPair {
    pub valence: f64,
    pub arousal: f64,
}

#[derive(Deserialize)]
struct VaPairRaw {
    valence: f64,
    arousal: f64,
}

impl VaPair {
    pub fn new(valence: f64, arousal: f64) -> Result<Self, CouplingError> {
        for (what, v) in [("valence", valence), ("arousal", arousal)] {
            if !v.is_finite() {
                return Err(CouplingError::NonFinite { what });
            }
            if !(-1.0..=1.0).contains(&v) {
                return Err(CouplingError::OutOfRange { what, value: v, min: -1.0, max: 1.0 });
            }
        }
        Ok(VaPair { valence, arousal })
    }

    /// Euclidean norm of the (valence, arousal) vector.
    pub fn radius(&self) -> f64 {
        (self.valence * self.valence + self.arousal * self.arousal).sqrt()
    }
}

impl TryFrom<VaPairRaw> for VaPair {
    type Error = CouplingError;

    fn try_from(raw: VaPairRaw) -> Result<Self, Self::Error> {
        VaPair::new(raw.valence, raw.arousal)
    }
}

/// Weights of the five objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub expr: f64,
    pub au: f64,
    pub va: f64,
    pub dm: f64,
    pub sca: f64,
}

impl LossWeights {
    pub fn new(expr: f64, au: f64, va: f64, dm: f64, sca: f64) -> Result<Self, CouplingError> {
        for (what, v) in [("expr weight", expr), ("au weight", au), ("va weight", va), ("dm weight", dm), ("sca weight", sca)]
        {
            if !v.is_finite() {
                return Err(CouplingError::NonFinite { what });
            }
            if v < 0.0 {
                return Err(CouplingError::OutOfRange { what, value: v, min: 0.0, max: f64::INFINITY });
            }
        }
        Ok(LossWeights { expr, au, va, dm, sca })
    }

    /// Only the three task losses; both coupling terms off.
    pub fn without_coupling() -> Self {
        LossWeights { expr: 1.0, au: 1.0, va: 1.0, dm: 0.0, sca: 0.0 }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { expr: 1.0, au: 1.0, va: 1.0, dm: 1.0, sca: 1.0 }
    }
}

// ---------------------------------------------------------------------------
// Coupling transforms
// ---------------------------------------------------------------------------

/// AU distribution induced from an expression distribution:
/// `q[i] = sum_e p[e] * indicator(au_i, e)`.
pub fn mixture_au_distribution(p_expr: &ExprDistribution, table: &RelatednessTable) -> AuActivations {
    let mut q = [0.0; ActionUnit::COUNT];
    for au in ActionUnit::ALL {
        let mut acc = 0.0;
        for expr in Expression::ALL {
            if table.indicator(au, expr) {
                acc += p_expr.prob(expr);
            }
        }
        // guard against simplex-tolerance overshoot
        q[au.index()] = acc.clamp(0.0, 1.0);
    }
    AuActivations(q)
}

/// Per-expression indicator scores for a binary AU annotation:
/// weighted fraction of the expression's AUs that are active. Expressions
/// with no associated AUs (neutral) score 0.
pub fn soft_indicator_scores(
    y_au: &[bool; ActionUnit::COUNT],
    table: &RelatednessTable,
) -> [f64; Expression::COUNT] {
    let mut scores = [0.0; Expression::COUNT];
    for expr in Expression::ALL {
        let mut num = 0.0;
        let mut den = 0.0;
        for au in ActionUnit::ALL {
            let w = table.weight(au, expr);
            den += w;
            if y_au[au.index()] {
                num += w;
            }
        }
        scores[expr.index()] = if den > 0.0 { num / den } else { 0.0 };
    }
    scores
}

/// Soft expression label induced from ground-truth AU activations: softmax
/// over the seven indicator scores.
pub fn soft_expression_label(
    y_au: &[bool; ActionUnit::COUNT],
    table: &RelatednessTable,
) -> ExprDistribution {
    ExprDistribution(softmax(&soft_indicator_scores(y_au, table)))
}

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

/// Cross-entropy of an expression prediction against a hard label.
pub fn expr_ce_loss(p_expr: &ExprDistribution, y_expr: Expression) -> f64 {
    -safe_ln(p_expr.prob(y_expr))
}

/// Gradient of [`expr_ce_loss`] with respect to the probabilities.
pub fn expr_ce_grad(p_expr: &ExprDistribution, y_expr: Expression) -> [f64; Expression::COUNT] {
    let mut grad = [0.0; Expression::COUNT];
    grad[y_expr.index()] = -dsafe_ln(p_expr.prob(y_expr));
    grad
}

/// Binary cross-entropy averaged over the 17 AUs.
pub fn au_bce_loss(p_au: &AuActivations, y_au: &[bool; ActionUnit::COUNT]) -> f64 {
    let mut sum = 0.0;
    for (p, &y) in p_au.0.iter().zip(y_au) {
        let p = clamp_prob(*p);
        sum += if y { -p.ln() } else { -(1.0 - p).ln() };
    }
    sum / ActionUnit::COUNT as f64
}

/// Gradient of [`au_bce_loss`] with respect to the probabilities.
pub fn au_bce_grad(p_au: &AuActivations, y_au: &[bool; ActionUnit::COUNT]) -> [f64; ActionUnit::COUNT] {
    let mut grad = [0.0; ActionUnit::COUNT];
    for i in 0..ActionUnit::COUNT {
        let p = p_au.0[i];
        let interior = p > PROB_EPS && p < 1.0 - PROB_EPS;
        if interior {
            grad[i] = if y_au[i] { -1.0 / p } else { 1.0 / (1.0 - p) } / ActionUnit::COUNT as f64;
        }
    }
    grad
}

/// Distribution-matching loss: `sum_i -q[i] * ln p[i]`.
///
/// Only the active side of the cross-entropy appears; see
/// [`distribution_matching_loss_full_bce`] for the symmetric variant.
pub fn distribution_matching_loss(p_au: &AuActivations, q_au: &AuActivations) -> f64 {
    p_au.0.iter().zip(&q_au.0).map(|(&p, &q)| -q * safe_ln(p)).sum()
}

/// Gradient of [`distribution_matching_loss`] with respect to `p_au`.
pub fn distribution_matching_grad(
    p_au: &AuActivations,
    q_au: &AuActivations,
) -> [f64; ActionUnit::COUNT] {
    let mut grad = [0.0; ActionUnit::COUNT];
    for ((g, &p), &q) in grad.iter_mut().zip(&p_au.0).zip(&q_au.0) {
        *g = -q * dsafe_ln(p);
    }
    grad
}

/// Symmetric (two-sided) variant of the distribution-matching loss:
/// `sum_i [-q ln p - (1-q) ln(1-p)]`.
pub fn distribution_matching_loss_full_bce(p_au: &AuActivations, q_au: &AuActivations) -> f64 {
    p_au.0
        .iter()
        .zip(&q_au.0)
        .map(|(&p, &q)| {
            let p = clamp_prob(p);
            -q * p.ln() - (1.0 - q) * (1.0 - p).ln()
        })
        .sum()
}

/// Gradient of [`distribution_matching_loss_full_bce`] with respect to `p_au`.
pub fn distribution_matching_full_bce_grad(
    p_au: &AuActivations,
    q_au: &AuActivations,
) -> [f64; ActionUnit::COUNT] {
    let mut grad = [0.0; ActionUnit::COUNT];
    for ((g, &p), &q) in grad.iter_mut().zip(&p_au.0).zip(&q_au.0) {
        if p > PROB_EPS && p < 1.0 - PROB_EPS {
            *g = -q / p + (1.0 - q) / (1.0 - p);
        }
    }
    grad
}

/// Soft co-annotation loss: cross-entropy of the expression prediction
/// against a soft label, `sum_e -q[e] * ln p[e]`.
pub fn soft_co_annotation_loss(p_expr: &ExprDistribution, q_expr: &ExprDistribution) -> f64 {
    p_expr.0.iter().zip(&q_expr.0).map(|(&p, &q)| -q * safe_ln(p)).sum()
}

/// Gradient of [`soft_co_annotation_loss`] with respect to the probabilities.
pub fn soft_co_annotation_grad(
    p_expr: &ExprDistribution,
    q_expr: &ExprDistribution,
) -> [f64; Expression::COUNT] {
    let mut grad = [0.0; Expression::COUNT];
    for ((g, &p), &q) in grad.iter_mut().zip(&p_expr.0).zip(&q_expr.0) {
        *g = -q * dsafe_ln(p);
    }
    grad
}

/// Softmax cross-entropy evaluated from logits, with the gradient taken on
/// the logits: `(value, p - q)` for a target distribution `q` summing to 1.
pub fn softmax_ce_with_logits(
    logits: &[f64; Expression::COUNT],
    q_expr: &ExprDistribution,
) -> (f64, [f64; Expression::COUNT]) {
    let p = softmax(logits);
    let mut value = 0.0;
    let mut grad = [0.0; Expression::COUNT];
    for i in 0..Expression::COUNT {
        value -= q_expr.0[i] * safe_ln(p[i]);
        grad[i] = p[i] - q_expr.0[i];
    }
    (value, grad)
}

// ---------------------------------------------------------------------------
// Concordance correlation
// ---------------------------------------------------------------------------

/// Intermediate quantities of one concordance computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CccBreakdown {
    pub mean_pred: f64,
    pub mean_true: f64,
    pub var_pred: f64,
    pub var_true: f64,
    pub covariance: f64,
    pub ccc: f64,
}

/// Concordance correlation coefficient between predictions and targets,
/// using population (1/n) moments:
///
/// ```text
/// ccc = 2 * cov / (var_pred + var_true + (mean_pred - mean_true)^2)
/// ```
///
/// A degenerate denominator (both sequences constant and equal means) yields
/// ccc = 0.
pub fn ccc(preds: &[f64], targets: &[f64]) -> Result<CccBreakdown, CouplingError> {
    if preds.len() != targets.len() {
        return Err(CouplingError::LengthMismatch { left: preds.len(), right: targets.len() });
    }
    if preds.len() < 2 {
        return Err(CouplingError::TooShort { min: 2, got: preds.len() });
    }
    let n = preds.len() as f64;
    let mean_pred = preds.iter().sum::<f64>() / n;
    let mean_true = targets.iter().sum::<f64>() / n;
    let mut var_pred = 0.0;
    let mut var_true = 0.0;
    let mut covariance = 0.0;
    for (&x, &y) in preds.iter().zip(targets) {
        let dx = x - mean_pred;
        let dy = y - mean_true;
        var_pred += dx * dx;
        var_true += dy * dy;
        covariance += dx * dy;
    }
    var_pred /= n;
    var_true /= n;
    covariance /= n;

    let mean_diff = mean_pred - mean_true;
    let denom = var_pred + var_true + mean_diff * mean_diff;
    let ccc = if denom < CCC_DEGENERATE_EPS {
        0.0
    } else {
        (2.0 * covariance / denom).clamp(-1.0, 1.0)
    };
    Ok(CccBreakdown { mean_pred, mean_true, var_pred, var_true, covariance, ccc })
}

/// Gradient of the concordance coefficient with respect to the predictions:
/// `d ccc / d x_k = (2 / (n * denom)) * ((y_k - mean_true) - ccc * (x_k - mean_true))`.
pub fn ccc_grad(preds: &[f64], targets: &[f64]) -> Result<Vec<f64>, CouplingError> {
    let b = ccc(preds, targets)?;
    let n = preds.len() as f64;
    let mean_diff = b.mean_pred - b.mean_true;
    let denom = b.var_pred + b.var_true + mean_diff * mean_diff;
    if denom < CCC_DEGENERATE_EPS {
        return Ok(vec![0.0; preds.len()]);
    }
    let grad = preds
        .iter()
        .zip(targets)
        .map(|(&x, &y)| 2.0 / (n * denom) * ((y - b.mean_true) - b.ccc * (x - b.mean_true)))
        .collect();
    Ok(grad)
}

/// Concordance breakdown over the valence and arousal channels of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaCcc {
    pub valence: CccBreakdown,
    pub arousal: CccBreakdown,
}

impl VaCcc {
    /// Mean of the two channel coefficients.
    pub fn mean(&self) -> f64 {
        0.5 * (self.valence.ccc + self.arousal.ccc)
    }
}

pub fn va_ccc(va_pred: &[VaPair], va_true: &[VaPair]) -> Result<VaCcc, CouplingError> {
    let pv: Vec<f64> = va_pred.iter().map(|p| p.valence).collect();
    let tv: Vec<f64> = va_true.iter().map(|p| p.valence).collect();
    let pa: Vec<f64> = va_pred.iter().map(|p| p.arousal).collect();
    let ta: Vec<f64> = va_true.iter().map(|p| p.arousal).collect();
    Ok(VaCcc { valence: ccc(&pv, &tv)?, arousal: ccc(&pa, &ta)? })
}

/// Concordance-based VA loss: `1 - 0.5 * (ccc_valence + ccc_arousal)`.
pub fn ccc_loss(va_pred: &[VaPair], va_true: &[VaPair]) -> Result<f64, CouplingError> {
    Ok(1.0 - va_ccc(va_pred, va_true)?.mean())
}

/// Gradient of [`ccc_loss`] with respect to each predicted pair,
/// `(d/d valence_k, d/d arousal_k)`.
pub fn ccc_loss_grad(va_pred: &[VaPair], va_true: &[VaPair]) -> Result<Vec<(f64, f64)>, CouplingError> {
    let pv: Vec<f64> = va_pred.iter().map(|p| p.valence).collect();
    let tv: Vec<f64> = va_true.iter().map(|p| p.valence).collect();
    let pa: Vec<f64> = va_pred.iter().map(|p| p.arousal).collect();
    let ta: Vec<f64> = va_true.iter().map(|p| p.arousal).collect();
    let gv = ccc_grad(&pv, &tv)?;
    let ga = ccc_grad(&pa, &ta)?;
    Ok(gv.into_iter().zip(ga).map(|(v, a)| (-0.5 * v, -0.5 * a)).collect())
}

// ---------------------------------------------------------------------------
// Multi-task objective
// ---------------------------------------------------------------------------

/// All three head outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub expr: ExprDistribution,
    pub au: AuActivations,
    pub va: VaPair,
}

pub type AuLabels = [bool; ActionUnit::COUNT];

/// One training batch concatenated from the three task-specific sub-batches.
///
/// Every sample carries all head outputs; the sub-batch determines which
/// task label it contributes.
#[derive(Debug, Clone, Default)]
pub struct TriBatch {
    pub va: Vec<(HeadOutputs, VaPair)>,
    pub au: Vec<(HeadOutputs, AuLabels)>,
    pub expr: Vec<(HeadOutputs, Expression)>,
}

impl TriBatch {
    pub fn len(&self) -> usize {
        self.va.len() + self.au.len() + self.expr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Head outputs of every sample, in sub-batch order (va, au, expr).
    pub fn all_heads(&self) -> impl Iterator<Item = &HeadOutputs> {
        self.va
            .iter()
            .map(|(h, _)| h)
            .chain(self.au.iter().map(|(h, _)| h))
            .chain(self.expr.iter().map(|(h, _)| h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Expr,
    Au,
    Va,
    Dm,
    Sca,
}

/// Value of the objective plus its unweighted per-term breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub expr: f64,
    pub au: f64,
    pub va: f64,
    pub dm: f64,
    pub sca: f64,
    /// Terms with a positive weight whose supporting sub-batch was empty
    /// (or, for the VA term, shorter than two samples).
    pub skipped: Vec<LossTerm>,
}

impl LossBreakdown {
    pub fn term(&self, t: LossTerm) -> f64 {
        match t {
            LossTerm::Expr => self.expr,
            LossTerm::Au => self.au,
            LossTerm::Va => self.va,
            LossTerm::Dm => self.dm,
            LossTerm::Sca => self.sca,
        }
    }
}

/// Evaluate the five-term objective on a tri-batch.
///
/// Task terms average over their own sub-batch; the distribution-matching
/// term averages over every sample in the batch; the soft co-annotation term
/// averages over the AU-labeled sub-batch. Terms whose supporting data is
/// missing contribute 0 and are flagged when their weight is positive.
pub fn multi_task_loss(
    batch: &TriBatch,
    weights: &LossWeights,
    table: &RelatednessTable,
) -> LossBreakdown {
    let mut skipped = Vec::new();

    let expr = if batch.expr.is_empty() {
        if weights.expr > 0.0 {
            skipped.push(LossTerm::Expr);
        }
        0.0
    } else {
        batch.expr.iter().map(|(h, y)| expr_ce_loss(&h.expr, *y)).sum::<f64>()
            / batch.expr.len() as f64
    };

    let au = if batch.au.is_empty() {
        if weights.au > 0.0 {
            skipped.push(LossTerm::Au);
        }
        0.0
    } else {
        batch.au.iter().map(|(h, y)| au_bce_loss(&h.au, y)).sum::<f64>() / batch.au.len() as f64
    };

    let va = if batch.va.len() < 2 {
        if weights.va > 0.0 {
            skipped.push(LossTerm::Va);
        }
        0.0
    } else {
        let preds: Vec<VaPair> = batch.va.iter().map(|(h, _)| h.va).collect();
        let truth: Vec<VaPair> = batch.va.iter().map(|(_, y)| *y).collect();
        ccc_loss(&preds, &truth).expect("equal lengths >= 2")
    };

    let dm = if batch.is_empty() {
        if weights.dm > 0.0 {
            skipped.push(LossTerm::Dm);
        }
        0.0
    } else {
        batch
            .all_heads()
            .map(|h| distribution_matching_loss(&h.au, &mixture_au_distribution(&h.expr, table)))
            .sum::<f64>()
            / batch.len() as f64
    };

    let sca = if batch.au.is_empty() {
        if weights.sca > 0.0 {
            skipped.push(LossTerm::Sca);
        }
        0.0
    } else {
        batch
            .au
            .iter()
            .map(|(h, y)| soft_co_annotation_loss(&h.expr, &soft_expression_label(y, table)))
            .sum::<f64>()
            / batch.au.len() as f64
    };

    let total = weights.expr * expr + weights.au * au + weights.va * va + weights.dm * dm
        + weights.sca * sca;
    LossBreakdown { total, expr, au, va, dm, sca, skipped }
}
