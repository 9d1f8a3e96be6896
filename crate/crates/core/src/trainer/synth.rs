//! Synthetic partially-annotated datasets.
//!
//! Samples are drawn from seven latent expression clusters in feature space.
//! The three task sets carry mutually consistent labels: AU activations are
//! sampled per the relatedness weights of the latent cluster, and VA labels
//! fall in a per-cluster region that satisfies the VA/expression consistency
//! rules (e.g. happiness has positive valence). Generation is fully
//! deterministic for a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coupling::{AuLabels, VaPair};
use crate::relatedness::{ActionUnit, Expression, RelatednessTable};

use super::TrainError;

/// Cluster center spread and per-sample feature noise.
const CENTER_SCALE: f64 = 2.0;
const FEATURE_NOISE: f64 = 0.6;

/// Recipe for one synthetic dataset triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_va: usize,
    pub n_au: usize,
    pub n_expr: usize,
    pub feature_dim: usize,
    /// Probability of corrupting a label (flipping an AU bit, resampling an
    /// expression class). VA labels are not corrupted.
    pub noise_rate: f64,
}

/// One synthetic sample: features, the task label, and the latent cluster
/// the sample was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample<L> {
    pub features: Vec<f64>,
    pub label: L,
    pub cluster: Expression,
}

/// The three task-specific sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub va: Vec<SynthSample<VaPair>>,
    pub au: Vec<SynthSample<AuLabels>>,
    pub expr: Vec<SynthSample<Expression>>,
}

pub fn synth_dataset(spec: &SynthSpec, table: &RelatednessTable) -> Result<SynthDataset, TrainError> {
    if spec.n_va == 0 || spec.n_au == 0 || spec.n_expr == 0 {
        return Err(TrainError::ZeroCount);
    }
    if spec.feature_dim == 0 {
        return Err(TrainError::InvalidConfig("feature_dim must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.noise_rate) {
        return Err(TrainError::InvalidConfig("noise_rate must be in [0, 1]".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..Expression::COUNT)
        .map(|_| (0..spec.feature_dim).map(|_| CENTER_SCALE * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let features_for = |cluster: Expression, rng: &mut ChaCha8Rng| -> Vec<f64> {
        centers[cluster.index()]
            .iter()
            .map(|c| c + FEATURE_NOISE * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let va = (0..spec.n_va)
        .map(|_| {
            let cluster = Expression::from_index(rng.gen_range(0..Expression::COUNT)).expect("in range");
            let features = features_for(cluster, &mut rng);
            let label = sample_va(cluster, &mut rng);
            SynthSample { features, label, cluster }
        })
        .collect();

    let au = (0..spec.n_au)
        .map(|_| {
            let cluster = Expression::from_index(rng.gen_range(0..Expression::COUNT)).expect("in range");
            let features = features_for(cluster, &mut rng);
            let mut label: AuLabels = [false; ActionUnit::COUNT];
            for unit in ActionUnit::ALL {
                let w = table.weight(unit, cluster);
                let mut active = w > 0.0 && rng.gen_bool(w);
                if spec.noise_rate > 0.0 && rng.gen_bool(spec.noise_rate) {
                    active = !active;
                }
                label[unit.index()] = active;
            }
            SynthSample { features, label, cluster }
        })
        .collect();

    let expr = (0..spec.n_expr)
        .map(|_| {
            let cluster = Expression::from_index(rng.gen_range(0..Expression::COUNT)).expect("in range");
            let features = features_for(cluster, &mut rng);
            let mut label = cluster;
            if spec.noise_rate > 0.0 && rng.gen_bool(spec.noise_rate) {
                let shift = rng.gen_range(1..Expression::COUNT);
                label = Expression::from_index((cluster.index() + shift) % Expression::COUNT)
                    .expect("in range");
            }
            SynthSample { features, label, cluster }
        })
        .collect();

    Ok(SynthDataset { va, au, expr })
}

/// VA label consistent with the cluster's expression: neutral stays inside
/// the 0.15 radius, negative-valence expressions stay negative, anger keeps
/// positive arousal, happiness keeps positive valence.
fn sample_va(cluster: Expression, rng: &mut ChaCha8Rng) -> VaPair {
    let (v, a) = match cluster {
        Expression::Neutral => {
            let r = rng.gen_range(0.0..0.12);
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            (r * theta.cos(), r * theta.sin())
        }
        Expression::Happiness => (rng.gen_range(0.1..0.9), rng.gen_range(-0.4..0.7)),
        Expression::Sadness => (rng.gen_range(-0.9..-0.1), rng.gen_range(-0.7..0.2)),
        Expression::Fear => (rng.gen_range(-0.9..-0.1), rng.gen_range(0.2..0.9)),
        Expression::Anger => (rng.gen_range(-0.9..-0.1), rng.gen_range(0.1..0.9)),
        Expression::Surprise => (rng.gen_range(-0.3..0.7), rng.gen_range(0.3..0.95)),
        Expression::Disgust => (rng.gen_range(-0.9..-0.1), rng.gen_range(-0.3..0.7)),
    };
    VaPair::new(v, a).expect("region inside [-1,1]")
}
