//! Small dense network with three task heads.
//!
//! A tanh trunk feeds a 7-way softmax head (expression), a 17-way sigmoid
//! head (AU activations) and a 2-way tanh head (valence, arousal). The
//! backward pass produces the analytic gradient of the full multi-task
//! objective with respect to every parameter, including the paths through
//! which the coupling terms tie the expression head to the AU head.

use rand::Rng;

use crate::coupling::{
    ccc_loss_grad, multi_task_loss, soft_expression_label, AuLabels, ExprDistribution,
    HeadOutputs, LossBreakdown, LossWeights, TriBatch, VaPair,
};
use crate::relatedness::{ActionUnit, Expression, RelatednessTable};

use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[out_dim][in_dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Dense {
        // Xavier-uniform keeps tanh pre-activations in a sane range
        let scale = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-scale..scale)).collect();
        Dense { in_dim, out_dim, weights, bias: vec![0.0; out_dim] }
    }

    fn zeroed(in_dim: usize, out_dim: usize) -> Dense {
        Dense { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.in_dim)) {
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *o += acc;
        }
        out
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Zero-filled gradient buffer for one layer.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrads {
    fn zeros(layer: &Dense) -> DenseGrads {
        DenseGrads { weights: vec![0.0; layer.weights.len()], bias: vec![0.0; layer.bias.len()] }
    }

    /// Accumulate `dz (x) input` into the weight grads and `dz` into the
    /// bias grads; returns nothing, the input gradient is the caller's job.
    fn accumulate(&mut self, layer: &Dense, input: &[f64], dz: &[f64]) {
        for (i, &d) in dz.iter().enumerate() {
            self.bias[i] += d;
            let row = &mut self.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
            for (w, v) in row.iter_mut().zip(input) {
                *w += d * v;
            }
        }
    }
}

fn input_grad(layer: &Dense, dz: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; layer.in_dim];
    for (i, &d) in dz.iter().enumerate() {
        let row = &layer.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
        for (x, w) in dx.iter_mut().zip(row) {
            *x += d * w;
        }
    }
    dx
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Dense multi-head model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub feature_dim: usize,
    pub trunk: Vec<Dense>,
    pub expr_head: Dense,
    pub au_head: Dense,
    pub va_head: Dense,
}

/// Per-sample forward caches needed by the backward pass.
struct ForwardCache {
    /// Input followed by each trunk layer's tanh output.
    activations: Vec<Vec<f64>>,
    expr_probs: [f64; Expression::COUNT],
    au_probs: [f64; ActionUnit::COUNT],
    va: [f64; 2],
}

impl ToyModel {
    pub fn init(rng: &mut impl Rng, feature_dim: usize, hidden: &[usize]) -> ToyModel {
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut dim = feature_dim;
        for &h in hidden {
            trunk.push(Dense::init(rng, dim, h));
            dim = h;
        }
        ToyModel {
            feature_dim,
            trunk,
            expr_head: Dense::init(rng, dim, Expression::COUNT),
            au_head: Dense::init(rng, dim, ActionUnit::COUNT),
            va_head: Dense::init(rng, dim, 2),
        }
    }

    /// All-zero parameters: uniform softmax, 0.5 per AU, VA (0, 0).
    pub fn zeroed(feature_dim: usize, hidden: &[usize]) -> ToyModel {
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut dim = feature_dim;
        for &h in hidden {
            trunk.push(Dense::zeroed(dim, h));
            dim = h;
        }
        ToyModel {
            feature_dim,
            trunk,
            expr_head: Dense::zeroed(dim, Expression::COUNT),
            au_head: Dense::zeroed(dim, ActionUnit::COUNT),
            va_head: Dense::zeroed(dim, 2),
        }
    }

    pub fn param_count(&self) -> usize {
        self.trunk.iter().map(Dense::param_count).sum::<usize>()
            + self.expr_head.param_count()
            + self.au_head.param_count()
            + self.va_head.param_count()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk
            .iter()
            .chain([&self.expr_head, &self.au_head, &self.va_head])
    }

    /// Parameters flattened in layer order (weights then bias per layer).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in self.layers() {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<(), TrainError> {
        if params.len() != self.param_count() {
            return Err(TrainError::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        let mut layers: Vec<&mut Dense> = self.trunk.iter_mut().collect();
        layers.push(&mut self.expr_head);
        layers.push(&mut self.au_head);
        layers.push(&mut self.va_head);
        for layer in layers {
            let w_len = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + w_len]);
            offset += w_len;
            let b_len = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + b_len]);
            offset += b_len;
        }
        Ok(())
    }

    fn forward_cached(&self, features: &[f64]) -> Result<ForwardCache, TrainError> {
        if features.len() != self.feature_dim {
            return Err(TrainError::DimensionMismatch {
                expected: self.feature_dim,
                got: features.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.trunk.len() + 1);
        activations.push(features.to_vec());
        for layer in &self.trunk {
            let mut z = layer.forward(activations.last().expect("non-empty"));
            for v in &mut z {
                *v = v.tanh();
            }
            activations.push(z);
        }
        let h = activations.last().expect("non-empty");
        let expr_logits: [f64; Expression::COUNT] =
            self.expr_head.forward(h).try_into().expect("head arity");
        let au_logits = self.au_head.forward(h);
        let va_raw = self.va_head.forward(h);

        let expr_probs = crate::coupling::softmax(&expr_logits);
        let mut au_probs = [0.0; ActionUnit::COUNT];
        for (p, &z) in au_probs.iter_mut().zip(&au_logits) {
            *p = sigmoid(z);
        }
        let va = [va_raw[0].tanh(), va_raw[1].tanh()];
        Ok(ForwardCache { activations, expr_probs, au_probs, va })
    }

    /// Head outputs for one feature vector.
    pub fn forward(&self, features: &[f64]) -> Result<HeadOutputs, TrainError> {
        let cache = self.forward_cached(features)?;
        Ok(cache_to_heads(&cache))
    }
}

fn cache_to_heads(cache: &ForwardCache) -> HeadOutputs {
    HeadOutputs {
        expr: ExprDistribution::new(cache.expr_probs).expect("softmax output is a simplex"),
        au: crate::coupling::AuActivations::new(cache.au_probs).expect("sigmoid output in [0,1]"),
        va: VaPair::new(cache.va[0], cache.va[1]).expect("tanh output in [-1,1]"),
    }
}

/// A tri-batch of raw features with task labels, in sub-batch order.
#[derive(Debug, Clone, Default)]
pub struct FeatureBatch<'a> {
    pub va: Vec<(&'a [f64], VaPair)>,
    pub au: Vec<(&'a [f64], AuLabels)>,
    pub expr: Vec<(&'a [f64], Expression)>,
}

impl FeatureBatch<'_> {
    pub fn len(&self) -> usize {
        self.va.len() + self.au.len() + self.expr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradient of the objective with respect to every model parameter.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub trunk: Vec<DenseGrads>,
    pub expr_head: DenseGrads,
    pub au_head: DenseGrads,
    pub va_head: DenseGrads,
}

impl ModelGrads {
    fn zeros(model: &ToyModel) -> ModelGrads {
        ModelGrads {
            trunk: model.trunk.iter().map(DenseGrads::zeros).collect(),
            expr_head: DenseGrads::zeros(&model.expr_head),
            au_head: DenseGrads::zeros(&model.au_head),
            va_head: DenseGrads::zeros(&model.va_head),
        }
    }

    /// Same flat layout as [`ToyModel::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.trunk.iter().chain([&self.expr_head, &self.au_head, &self.va_head]) {
            out.extend_from_slice(&g.weights);
            out.extend_from_slice(&g.bias);
        }
        out
    }
}

/// Run the tri-batch through the model and build a loss batch.
pub fn forward_tri(model: &ToyModel, batch: &FeatureBatch) -> Result<TriBatch, TrainError> {
    let mut tri = TriBatch::default();
    for (x, y) in &batch.va {
        tri.va.push((model.forward(x)?, *y));
    }
    for (x, y) in &batch.au {
        tri.au.push((model.forward(x)?, *y));
    }
    for (x, y) in &batch.expr {
        tri.expr.push((model.forward(x)?, *y));
    }
    Ok(tri)
}

/// Objective value on a tri-batch (no gradients).
pub fn tri_batch_loss(
    model: &ToyModel,
    batch: &FeatureBatch,
    weights: &LossWeights,
    table: &RelatednessTable,
) -> Result<LossBreakdown, TrainError> {
    Ok(multi_task_loss(&forward_tri(model, batch)?, weights, table))
}

/// `-ln` with the same probability clamp as the loss values.
#[inline]
fn neg_safe_ln(p: f64) -> f64 {
    -p.clamp(crate::coupling::PROB_EPS, 1.0 - crate::coupling::PROB_EPS).ln()
}

#[inline]
fn interior(p: f64) -> bool {
    p > crate::coupling::PROB_EPS && p < 1.0 - crate::coupling::PROB_EPS
}

/// Backward pass: objective value plus its gradient with respect to every
/// parameter.
///
/// The distribution-matching term back-propagates into both heads: through
/// the AU probabilities directly and through the expression probabilities
/// that induce the matched distribution.
pub fn backward(
    model: &ToyModel,
    batch: &FeatureBatch,
    weights: &LossWeights,
    table: &RelatednessTable,
) -> Result<(LossBreakdown, ModelGrads), TrainError> {
    // forward with caches, in the same sub-batch order as TriBatch
    let mut caches: Vec<ForwardCache> = Vec::with_capacity(batch.len());
    for (x, _) in &batch.va {
        caches.push(model.forward_cached(x)?);
    }
    for (x, _) in &batch.au {
        caches.push(model.forward_cached(x)?);
    }
    for (x, _) in &batch.expr {
        caches.push(model.forward_cached(x)?);
    }

    let mut tri = TriBatch::default();
    for (cache, (_, y)) in caches.iter().zip(&batch.va) {
        tri.va.push((cache_to_heads(cache), *y));
    }
    for (cache, (_, y)) in caches[batch.va.len()..].iter().zip(&batch.au) {
        tri.au.push((cache_to_heads(cache), *y));
    }
    for (cache, (_, y)) in caches[batch.va.len() + batch.au.len()..].iter().zip(&batch.expr) {
        tri.expr.push((cache_to_heads(cache), *y));
    }
    let breakdown = multi_task_loss(&tri, weights, table);

    let n_all = batch.len() as f64;
    let n_va = batch.va.len();
    let n_au = batch.au.len() as f64;
    let n_expr = batch.expr.len() as f64;

    // concordance gradients are per-sequence, computed once for the VA group
    let va_grads: Option<Vec<(f64, f64)>> = if weights.va > 0.0 && n_va >= 2 {
        let preds: Vec<VaPair> = tri.va.iter().map(|(h, _)| h.va).collect();
        let truth: Vec<VaPair> = tri.va.iter().map(|(_, y)| *y).collect();
        Some(ccc_loss_grad(&preds, &truth).expect("lengths match"))
    } else {
        None
    };

    let mut grads = ModelGrads::zeros(model);

    for (pos, cache) in caches.iter().enumerate() {
        let mut dz_expr = [0.0; Expression::COUNT];
        let mut dz_au = [0.0; ActionUnit::COUNT];
        let mut dz_va = [0.0; 2];

        // distribution matching runs over every sample
        if weights.dm > 0.0 && !batch.is_empty() {
            let scale = weights.dm / n_all;
            // AU side: d/dz of -q ln sigmoid(z) is -q (1 - p)
            let p_expr = &cache.expr_probs;
            for au in ActionUnit::ALL {
                let mut q = 0.0;
                for expr in Expression::ALL {
                    if table.indicator(au, expr) {
                        q += p_expr[expr.index()];
                    }
                }
                let q = q.clamp(0.0, 1.0);
                let p = cache.au_probs[au.index()];
                if interior(p) {
                    dz_au[au.index()] += scale * (-q * (1.0 - p));
                }
            }
            // expression side: the loss is linear in q with coefficients
            // -ln p_au, so g[e] = sum_i indicator(i, e) * (-ln p_au[i])
            let mut g = [0.0; Expression::COUNT];
            for expr in Expression::ALL {
                for au in ActionUnit::ALL {
                    if table.indicator(au, expr) {
                        g[expr.index()] += neg_safe_ln(cache.au_probs[au.index()]);
                    }
                }
            }
            let dot: f64 = g.iter().zip(p_expr).map(|(a, b)| a * b).sum();
            for ((dz, &p), &ge) in dz_expr.iter_mut().zip(p_expr).zip(&g) {
                *dz += scale * p * (ge - dot);
            }
        }

        if pos < n_va {
            // VA sub-batch
            if let Some(ref gva) = va_grads {
                let (gv, ga) = gva[pos];
                // chain through tanh
                dz_va[0] += weights.va * gv * (1.0 - cache.va[0] * cache.va[0]);
                dz_va[1] += weights.va * ga * (1.0 - cache.va[1] * cache.va[1]);
            }
        } else if pos < n_va + batch.au.len() {
            // AU sub-batch
            let (_, y_au) = &batch.au[pos - n_va];
            if weights.au > 0.0 {
                let scale = weights.au / (n_au * ActionUnit::COUNT as f64);
                for i in 0..ActionUnit::COUNT {
                    let p = cache.au_probs[i];
                    if interior(p) {
                        dz_au[i] += scale * (p - y_au[i] as u8 as f64);
                    }
                }
            }
            if weights.sca > 0.0 {
                let q = soft_expression_label(y_au, table);
                let scale = weights.sca / n_au;
                for ((dz, &p), &qe) in dz_expr.iter_mut().zip(&cache.expr_probs).zip(q.as_array()) {
                    *dz += scale * (p - qe);
                }
            }
        } else {
            // expression sub-batch
            let (_, y_expr) = &batch.expr[pos - n_va - batch.au.len()];
            if weights.expr > 0.0 {
                let scale = weights.expr / n_expr;
                for (e, (dz, &p)) in dz_expr.iter_mut().zip(&cache.expr_probs).enumerate() {
                    let target = (e == y_expr.index()) as u8 as f64;
                    *dz += scale * (p - target);
                }
            }
        }

        backprop_sample(model, cache, &dz_expr, &dz_au, &dz_va, &mut grads);
    }

    Ok((breakdown, grads))
}

fn backprop_sample(
    model: &ToyModel,
    cache: &ForwardCache,
    dz_expr: &[f64; Expression::COUNT],
    dz_au: &[f64; ActionUnit::COUNT],
    dz_va: &[f64; 2],
    grads: &mut ModelGrads,
) {
    let h = cache.activations.last().expect("non-empty");

    grads.expr_head.accumulate(&model.expr_head, h, dz_expr);
    grads.au_head.accumulate(&model.au_head, h, dz_au);
    grads.va_head.accumulate(&model.va_head, h, dz_va);

    let mut dh = input_grad(&model.expr_head, dz_expr);
    for (a, b) in dh.iter_mut().zip(input_grad(&model.au_head, dz_au)) {
        *a += b;
    }
    for (a, b) in dh.iter_mut().zip(input_grad(&model.va_head, dz_va)) {
        *a += b;
    }

    for (l, layer) in model.trunk.iter().enumerate().rev() {
        let out = &cache.activations[l + 1];
        // through tanh
        let dz: Vec<f64> = dh.iter().zip(out).map(|(d, a)| d * (1.0 - a * a)).collect();
        grads.trunk[l].accumulate(layer, &cache.activations[l], &dz);
        if l > 0 {
            dh = input_grad(layer, &dz);
        }
    }
}
