//! Zero-shot compound-expression recognition by candidate scoring.
//!
//! Each compound candidate is scored from the three prediction heads:
//! the mean AU probability over the compound's associated AUs, the summed
//! probability of its two constituent expressions, and a 0/1 bonus for
//! positive valence on the eligible compounds. The prediction is the
//! candidate with the maximum score; ties resolve to the earlier table
//! entry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{AuActivations, ExprDistribution};
use crate::relatedness::{Compound, CompoundTable};

#[derive(Debug, Error)]
pub enum CompoundError {
    #[error("compound table is empty")]
    EmptyTable,
    #[error("compound '{0}' has an empty AU set")]
    EmptyAuSet(String),
    #[error("no training examples")]
    NoExamples,
    #[error("class id {id} out of range for {n_classes} classes")]
    ClassOutOfRange { id: usize, n_classes: usize },
    #[error("expected {expected} features, got {got}")]
    FeatureArity { expected: usize, got: usize },
}

/// Score breakdown for one compound candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub compound: String,
    /// Mean AU probability over the compound's associated AUs, in [0, 1].
    pub i_au: f64,
    /// Summed probability of the two constituents, in [0, 2].
    pub f_expr: f64,
    /// Valence bonus, 0 or 1.
    pub d_va: f64,
    pub total: f64,
}

/// Mean AU probability over the compound's associated AU set.
pub fn i_au_score(p_au: &AuActivations, compound: &Compound) -> Result<f64, CompoundError> {
    if compound.aus.is_empty() {
        return Err(CompoundError::EmptyAuSet(compound.name.clone()));
    }
    let sum: f64 = compound.aus.iter().map(|&au| p_au.prob(au)).sum();
    Ok(sum / compound.aus.len() as f64)
}

/// Summed probability of the compound's two constituent expressions.
pub fn f_expr_score(p_expr: &ExprDistribution, compound: &Compound) -> f64 {
    p_expr.prob(compound.constituents.0) + p_expr.prob(compound.constituents.1)
}

/// 1 iff the compound takes the valence bonus and the predicted valence is
/// positive.
pub fn d_va_score(compound: &Compound, valence: f64) -> f64 {
    if compound.d_va_eligible && valence > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn candidate_score(
    p_expr: &ExprDistribution,
    p_au: &AuActivations,
    valence: f64,
    compound: &Compound,
) -> Result<CandidateScore, CompoundError> {
    let i_au = i_au_score(p_au, compound)?;
    let f_expr = f_expr_score(p_expr, compound);
    let d_va = d_va_score(compound, valence);
    Ok(CandidateScore {
        compound: compound.name.clone(),
        i_au,
        f_expr,
        d_va,
        total: i_au + f_expr + d_va,
    })
}

/// Winner plus the full candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundPrediction {
    pub winner: String,
    pub winner_index: usize,
    pub scores: Vec<CandidateScore>,
}

/// Score every compound in the table and pick the maximum; ties resolve to
/// the earliest table entry.
pub fn predict_compound(
    p_expr: &ExprDistribution,
    p_au: &AuActivations,
    va: &crate::coupling::VaPair,
    table: &CompoundTable,
) -> Result<CompoundPrediction, CompoundError> {
    if table.is_empty() {
        return Err(CompoundError::EmptyTable);
    }
    let mut scores = Vec::with_capacity(table.len());
    for compound in table.compounds() {
        scores.push(candidate_score(p_expr, p_au, va.valence, compound)?);
    }
    let mut winner_index = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.total > scores[winner_index].total {
            winner_index = i;
        }
    }
    Ok(CompoundPrediction {
        winner: scores[winner_index].compound.clone(),
        winner_index,
        scores,
    })
}

// ---------------------------------------------------------------------------
// Few-shot mode: a linear head over the concatenated prediction heads
// ---------------------------------------------------------------------------

/// Dimension of the concatenated head-feature vector (7 + 17 + 2).
pub const HEAD_FEATURE_DIM: usize = 26;

/// Concatenate the three prediction heads into one feature vector.
pub fn head_features(
    p_expr: &ExprDistribution,
    p_au: &AuActivations,
    va: &crate::coupling::VaPair,
) -> [f64; HEAD_FEATURE_DIM] {
    let mut out = [0.0; HEAD_FEATURE_DIM];
    out[..7].copy_from_slice(p_expr.as_array());
    out[7..24].copy_from_slice(p_au.as_array());
    out[24] = va.valence;
    out[25] = va.arousal;
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig { epochs: 300, learning_rate: 0.2, momentum: 0.9 }
    }
}

/// Linear softmax classifier over head features, fit by full-batch gradient
/// descent. Zero-initialized; the objective is convex, so training is
/// deterministic without a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotHead {
    n_classes: usize,
    /// Row-major `[n_classes][HEAD_FEATURE_DIM]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl FewShotHead {
    pub fn train(
        examples: &[([f64; HEAD_FEATURE_DIM], usize)],
        n_classes: usize,
        config: &FewShotConfig,
    ) -> Result<FewShotHead, CompoundError> {
        if examples.is_empty() || n_classes == 0 {
            return Err(CompoundError::NoExamples);
        }
        for &(_, class) in examples {
            if class >= n_classes {
                return Err(CompoundError::ClassOutOfRange { id: class, n_classes });
            }
        }
        let mut head = FewShotHead {
            n_classes,
            weights: vec![0.0; n_classes * HEAD_FEATURE_DIM],
            bias: vec![0.0; n_classes],
        };
        let n = examples.len() as f64;
        let mut optimizer = crate::trainer::MomentumSgd::new(
            config.learning_rate,
            config.momentum,
            head.weights.len() + head.bias.len(),
        );
        for _ in 0..config.epochs {
            let mut grad_w = vec![0.0; head.weights.len()];
            let mut grad_b = vec![0.0; head.bias.len()];
            for (features, class) in examples {
                let probs = head.probabilities(features);
                for c in 0..n_classes {
                    let delta = (probs[c] - (c == *class) as u8 as f64) / n;
                    grad_b[c] += delta;
                    let row = &mut grad_w[c * HEAD_FEATURE_DIM..(c + 1) * HEAD_FEATURE_DIM];
                    for (g, x) in row.iter_mut().zip(features) {
                        *g += delta * x;
                    }
                }
            }
            let mut params: Vec<f64> =
                head.weights.iter().chain(&head.bias).copied().collect();
            let grads: Vec<f64> = grad_w.iter().chain(&grad_b).copied().collect();
            optimizer.step(&mut params, &grads).expect("finite gradients on bounded features");
            let w_len = head.weights.len();
            head.weights.copy_from_slice(&params[..w_len]);
            head.bias.copy_from_slice(&params[w_len..]);
        }
        Ok(head)
    }

    fn probabilities(&self, features: &[f64; HEAD_FEATURE_DIM]) -> Vec<f64> {
        let mut logits = self.bias.clone();
        for (c, logit) in logits.iter_mut().enumerate() {
            let row = &self.weights[c * HEAD_FEATURE_DIM..(c + 1) * HEAD_FEATURE_DIM];
            for (w, x) in row.iter().zip(features) {
                *logit += w * x;
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for l in &mut logits {
            *l = (*l - max).exp();
            denom += *l;
        }
        for l in &mut logits {
            *l /= denom;
        }
        logits
    }

    /// Predicted class index; ties resolve to the lowest index.
    pub fn predict(&self, features: &[f64; HEAD_FEATURE_DIM]) -> usize {
        let probs = self.probabilities(features);
        let mut best = 0;
        for (c, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = c;
            }
        }
        best
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::VaPair;
    use crate::relatedness::{ActionUnit, Expression, RelatednessTable};

    fn tables() -> (RelatednessTable, CompoundTable) {
        let table = RelatednessTable::builtin();
        let compounds = CompoundTable::builtin(&table);
        (table, compounds)
    }

    fn simplex_two(a: Expression, pa: f64, b: Expression, pb: f64) -> ExprDistribution {
        let mut probs = [0.0; 7];
        probs[a.index()] = pa;
        probs[b.index()] = pb;
        probs[Expression::Neutral.index()] = 1.0 - pa - pb;
        ExprDistribution::new(probs).unwrap()
    }

    #[test]
    fn i_au_on_exact_support_is_one() {
        let (_, compounds) = tables();
        for compound in compounds.compounds() {
            let codes: Vec<u8> = compound.aus.iter().map(|a| a.code()).collect();
            let p = AuActivations::from_active_codes(&codes).unwrap();
            assert_eq!(i_au_score(&p, compound).unwrap(), 1.0, "{}", compound.name);
        }
    }

    #[test]
    fn i_au_of_uniform_half_is_half() {
        let (_, compounds) = tables();
        let p = AuActivations::new([0.5; 17]).unwrap();
        for compound in compounds.compounds() {
            assert!((i_au_score(&p, compound).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn i_au_matches_indicator_weighted_mean_oracle() {
        use rand::{Rng, SeedableRng};
        let (_, compounds) = tables();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
        for _ in 0..50 {
            let probs: [f64; 17] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
            let p = AuActivations::new(probs).unwrap();
            for compound in compounds.compounds() {
                // oracle: indicator-weighted sum over the whole registry
                let mut num = 0.0;
                let mut den = 0.0;
                for au in ActionUnit::ALL {
                    let ind = compound.aus.contains(&au) as u8 as f64;
                    num += probs[au.index()] * ind;
                    den += ind;
                }
                let expected = num / den;
                assert!((i_au_score(&p, compound).unwrap() - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f_expr_sums_constituent_probabilities() {
        let (_, compounds) = tables();
        let (_, hs) = compounds.by_name("happily-surprised").unwrap();
        let p = simplex_two(Expression::Happiness, 0.6, Expression::Surprise, 0.3);
        assert!((f_expr_score(&p, hs) - 0.9).abs() < 1e-15);

        let neutral = ExprDistribution::one_hot(Expression::Neutral);
        for compound in compounds.compounds() {
            assert_eq!(f_expr_score(&neutral, compound), 0.0);
        }
    }

    #[test]
    fn d_va_examples() {
        let (_, compounds) = tables();
        let (_, hs) = compounds.by_name("happily-surprised").unwrap();
        let (_, sa) = compounds.by_name("sadly-angry").unwrap();
        assert_eq!(d_va_score(hs, 0.4), 1.0);
        assert_eq!(d_va_score(hs, -0.2), 0.0);
        assert_eq!(d_va_score(hs, 0.0), 0.0);
        assert_eq!(d_va_score(sa, 0.9), 0.0);
    }

    #[test]
    fn dominant_compound_wins() {
        let (_, compounds) = tables();
        let (_, target) = compounds.by_name("fearfully-surprised").unwrap();
        let codes: Vec<u8> = target.aus.iter().map(|a| a.code()).collect();
        let p_au = AuActivations::from_active_codes(&codes).unwrap();
        let p_expr = simplex_two(Expression::Fear, 0.5, Expression::Surprise, 0.5);
        let va = VaPair::new(-0.2, 0.6).unwrap();
        let pred = predict_compound(&p_expr, &p_au, &va, &compounds).unwrap();
        assert_eq!(pred.winner, "fearfully-surprised");
    }

    #[test]
    fn ties_resolve_to_earlier_table_entry() {
        let (_, compounds) = tables();
        // neutral heads: every candidate scores i_au = 0, f_expr = 0, d_va = 0
        let p_expr = ExprDistribution::one_hot(Expression::Neutral);
        let p_au = AuActivations::zeros();
        let va = VaPair::new(-0.5, 0.0).unwrap();
        let pred = predict_compound(&p_expr, &p_au, &va, &compounds).unwrap();
        assert_eq!(pred.winner_index, 0);
        assert_eq!(pred.winner, "happily-surprised");
    }

    fn generator_heads(
        table: &CompoundTable,
        index: usize,
        rng: &mut impl rand::Rng,
        sigma: f64,
    ) -> (ExprDistribution, AuActivations, VaPair) {
        let compound = table.get(index).unwrap();
        let mut probs = [0.0; 7];
        probs[compound.constituents.0.index()] = 0.5;
        probs[compound.constituents.1.index()] = 0.5;
        if sigma > 0.0 {
            let mut sum = 0.0;
            for p in &mut probs {
                *p = (*p + rng.gen_range(-sigma..sigma)).max(1e-6);
                sum += *p;
            }
            for p in &mut probs {
                *p /= sum;
            }
        }
        let mut au = [0.0; 17];
        for unit in &compound.aus {
            au[unit.index()] = 1.0;
        }
        if sigma > 0.0 {
            for p in &mut au {
                *p = (*p + rng.gen_range(-sigma..sigma)).clamp(0.0, 1.0);
            }
        }
        let valence = if compound.d_va_eligible { 0.5 } else { -0.3 };
        (
            ExprDistribution::new(probs).unwrap(),
            AuActivations::new(au).unwrap(),
            VaPair::new(valence, 0.1).unwrap(),
        )
    }

    #[test]
    fn few_shot_head_separates_noiseless_compounds() {
        use rand::SeedableRng;
        let (_, compounds) = tables();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(97);
        let mut examples = Vec::new();
        for index in 0..compounds.len() {
            for _ in 0..4 {
                let (p_expr, p_au, va) = generator_heads(&compounds, index, &mut rng, 0.05);
                examples.push((head_features(&p_expr, &p_au, &va), index));
            }
        }
        let head = FewShotHead::train(&examples, compounds.len(), &FewShotConfig::default())
            .unwrap();
        for index in 0..compounds.len() {
            let (p_expr, p_au, va) = generator_heads(&compounds, index, &mut rng, 0.0);
            assert_eq!(head.predict(&head_features(&p_expr, &p_au, &va)), index);
        }
    }

    #[test]
    fn few_shot_training_is_deterministic() {
        use rand::SeedableRng;
        let (_, compounds) = tables();
        let mut examples = Vec::new();
        for index in 0..compounds.len() {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(index as u64);
            let (p_expr, p_au, va) = generator_heads(&compounds, index, &mut rng, 0.02);
            examples.push((head_features(&p_expr, &p_au, &va), index));
        }
        let a = FewShotHead::train(&examples, compounds.len(), &FewShotConfig::default()).unwrap();
        let b = FewShotHead::train(&examples, compounds.len(), &FewShotConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn few_shot_rejects_bad_inputs() {
        assert!(matches!(
            FewShotHead::train(&[], 11, &FewShotConfig::default()),
            Err(CompoundError::NoExamples)
        ));
        let features = [0.0; HEAD_FEATURE_DIM];
        assert!(matches!(
            FewShotHead::train(&[(features, 11)], 11, &FewShotConfig::default()),
            Err(CompoundError::ClassOutOfRange { id: 11, n_classes: 11 })
        ));
    }

    #[test]
    fn score_ranges_hold() {
        use rand::{Rng, SeedableRng};
        let (_, compounds) = tables();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(67);
        for _ in 0..200 {
            let mut probs = [0.0; 7];
            let mut sum = 0.0;
            for p in &mut probs {
                *p = rng.gen_range(0.0..1.0);
                sum += *p;
            }
            for p in &mut probs {
                *p /= sum;
            }
            let p_expr = ExprDistribution::new(probs).unwrap();
            let au_probs: [f64; 17] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
            let p_au = AuActivations::new(au_probs).unwrap();
            let va = VaPair::new(rng.gen_range(-1.0..1.0), 0.0).unwrap();
            let pred = predict_compound(&p_expr, &p_au, &va, &compounds).unwrap();
            for s in &pred.scores {
                assert!((0.0..=1.0).contains(&s.i_au));
                assert!((0.0..=2.0).contains(&s.f_expr));
                assert!(s.d_va == 0.0 || s.d_va == 1.0);
                assert!(s.total.is_finite() && (0.0..=3.0).contains(&s.total));
                assert!((s.total - (s.i_au + s.f_expr + s.d_va)).abs() < 1e-15);
            }
        }
    }
}
