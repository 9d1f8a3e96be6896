//! Central finite-difference verification of every analytic gradient.
//!
//! Each check draws random instances, perturbs one coordinate at a time and
//! compares the analytic gradient against `(f(x+h) - f(x-h)) / 2h`. The
//! relative error uses a small floor so near-zero coordinate pairs do not
//! blow up the ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{
    au_bce_grad, au_bce_loss, ccc_loss, ccc_loss_grad, distribution_matching_full_bce_grad,
    distribution_matching_grad, distribution_matching_loss, distribution_matching_loss_full_bce,
    expr_ce_grad, soft_co_annotation_grad, softmax_ce_with_logits, AuActivations,
    ExprDistribution, LossWeights, VaPair,
};
use crate::relatedness::{ActionUnit, Expression, RelatednessTable};
use crate::trainer::{backward, tri_batch_loss, FeatureBatch, ToyModel};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Required relative agreement between analytic and numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Floor in the relative-error denominator.
const REL_FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Result of one gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOutcome {
    pub name: String,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

impl GradCheckOutcome {
    fn new(name: &str, instances: usize, coordinates: usize, max_rel_err: f64) -> Self {
        GradCheckOutcome {
            name: name.to_string(),
            instances,
            coordinates,
            max_rel_err,
            pass: max_rel_err < GRAD_TOLERANCE,
        }
    }
}

/// Full gradient-check report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub fd_step: f64,
    pub tolerance: f64,
    pub outcomes: Vec<GradCheckOutcome>,
    pub pass: bool,
}

fn random_simplex(rng: &mut impl Rng) -> ExprDistribution {
    let mut v = [0.0; Expression::COUNT];
    let mut sum = 0.0;
    for x in &mut v {
        *x = rng.gen_range(0.05..1.0);
        sum += *x;
    }
    for x in &mut v {
        *x /= sum;
    }
    ExprDistribution::new(v).expect("normalized")
}

fn random_au_probs(rng: &mut impl Rng) -> AuActivations {
    AuActivations::new(std::array::from_fn(|_| rng.gen_range(0.05..0.95))).expect("in range")
}

/// Check a scalar function of a flat coordinate vector against its analytic
/// gradient. Returns the max relative error over all coordinates.
fn fd_max_err(xs: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(xs.len(), analytic.len());
    let mut buf = xs.to_vec();
    let mut max = 0.0f64;
    for k in 0..xs.len() {
        let saved = buf[k];
        buf[k] = saved + FD_STEP;
        let plus = f(&buf);
        buf[k] = saved - FD_STEP;
        let minus = f(&buf);
        buf[k] = saved;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        max = max.max(rel_err(analytic[k], numeric));
    }
    max
}

pub fn check_expr_ce(seed: u64, instances: usize) -> GradCheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let p = random_simplex(&mut rng);
        let y = Expression::from_index(rng.gen_range(0..Expression::COUNT)).expect("in range");
        let grad = expr_ce_grad(&p, y);
        let err = fd_max_err(p.as_array(), &grad, |xs| {
            // off-simplex evaluation of the same sum
            -xs[y.index()].clamp(crate::coupling::PROB_EPS, 1.0 - crate::coupling::PROB_EPS).ln()
        });
        max = max.max(err);
    }
    GradCheckOutcome::new("expr-ce/probs", instances, Expression::COUNT, max)
}

pub fn check_au_bce(seed: u64, instances: usize) -> GradCheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let p = random_au_probs(&mut rng);
        let y: [bool; ActionUnit::COUNT] = std::array::from_fn(|_| rng.gen_bool(0.5));
        let grad = au_bce_grad(&p, &y);
        let err = fd_max_err(p.as_array(), &grad, |xs| {
            let p = AuActivations::new(xs.try_into().expect("17 coords")).expect("in range");
            au_bce_loss(&p, &y)
        });
        max = max.max(err);
    }
    GradCheckOutcome::new("au-bce/probs", instances, ActionUnit::COUNT, max)
}

pub fn check_ccc_loss(seed: u64, instances: usize) -> GradCheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 8;
    let mut max = 0.0f64;
    for _ in 0..instances {
        let truth: Vec<VaPair> = (0..n)
            .map(|_| VaPair::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)).expect("in range"))
            .collect();
        let preds: Vec<VaPair> = (0..n)
            .map(|_| VaPair::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)).expect("in range"))
            .collect();
        let grad = ccc_loss_grad(&preds, &truth).expect("valid");
        // flatten (valence, arousal) pairs
        let xs: Vec<f64> = preds.iter().flat_map(|p| [p.valence, p.arousal]).collect();
        let flat_grad: Vec<f64> = grad.iter().flat_map(|g| [g.0, g.1]).collect();
        let truth_ref = &truth;
        let err = fd_max_err(&xs, &flat_grad, move |coords| {
            let preds: Vec<VaPair> = coords
                .chunks_exact(2)
                .map(|c| VaPair { valence: c[0], arousal: c[1] })
                .collect();
            ccc_loss(&preds, truth_ref).expect("valid")
        });
        max = max.max(err);
    }
    GradCheckOutcome::new("va-ccc/preds", instances, 2 * n, max)
}

pub fn check_dm(seed: u64, instances: usize, table: &RelatednessTable) -> GradCheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let p = random_au_probs(&mut rng);
        let q = crate::coupling::mixture_au_distribution(&random_simplex(&mut rng), table);
        let grad = distribution_matching_grad(&p, &q);
        let err = fd_max_err(p.as_array(), &grad, |xs| {
            let p = AuActivations::new(xs.try_into().expect("17 coords")).expect("in range");
            distribution_matching_loss(&p, &q)
        });
        max = max.max(err);
    }
    GradCheckOutcome::new("dm/probs", instances, ActionUnit::COUNT, max)
}

pub fn check_dm_full_bce(seed: u64, instances: usize, table: &RelatednessTable) -> GradCheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let p = random_au_probs(&mut rng);
        let q = crate::coupling::mixture_au_distribution(&random_simplex(&mut rng), table);
        let grad = distribution_matching_full_bce_grad(&p, &q);
        let err = fd_max_err(p.as_array(), &grad, |xs| {
            let p = AuActivations::new(xs.try_into().expect("17 coords")).expect("in range");
            distribution_matching_loss_full_bce(&p, &q)
        });
        max = max.max(err);
    }
    GradCheckOutcome::new("dm-full-bce/probs", instances, ActionUnit::COUNT, max)
}

pub fn check_sca_probs(seed: u64, instances: usize) -> GradCheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let p = random_simplex(&mut rng);
        let q = random_simplex(&mut rng);
        let grad = soft_co_annotation_grad(&p, &q);
        let q_arr = *q.as_array();
        let err = fd_max_err(p.as_array(), &grad, move |xs| {
            xs.iter()
                .zip(&q_arr)
                .map(|(&x, &qe)| {
                    -qe * x.clamp(crate::coupling::PROB_EPS, 1.0 - crate::coupling::PROB_EPS).ln()
                })
                .sum()
        });
        max = max.max(err);
    }
    GradCheckOutcome::new("sca/probs", instances, Expression::COUNT, max)
}

pub fn check_sca_logits(seed: u64, instances: usize) -> GradCheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = 0.0f64;
    for _ in 0..instances {
        let logits: [f64; Expression::COUNT] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
        let q = random_simplex(&mut rng);
        let (_, grad) = softmax_ce_with_logits(&logits, &q);
        let q_ref = &q;
        let err = fd_max_err(&logits, &grad, move |xs| {
            let z: [f64; Expression::COUNT] = xs.try_into().expect("7 coords");
            softmax_ce_with_logits(&z, q_ref).0
        });
        max = max.max(err);
    }
    GradCheckOutcome::new("sca/logits", instances, Expression::COUNT, max)
}

/// Named weight configurations for the objective-level check: each term in
/// isolation plus all terms together.
pub const OBJECTIVE_CONFIGS: [(&str, LossWeights); 6] = [
    ("objective/expr", LossWeights { expr: 1.0, au: 0.0, va: 0.0, dm: 0.0, sca: 0.0 }),
    ("objective/au", LossWeights { expr: 0.0, au: 1.0, va: 0.0, dm: 0.0, sca: 0.0 }),
    ("objective/va", LossWeights { expr: 0.0, au: 0.0, va: 1.0, dm: 0.0, sca: 0.0 }),
    ("objective/dm", LossWeights { expr: 0.0, au: 0.0, va: 0.0, dm: 1.0, sca: 0.0 }),
    ("objective/sca", LossWeights { expr: 0.0, au: 0.0, va: 0.0, dm: 0.0, sca: 1.0 }),
    ("objective/all", LossWeights { expr: 1.0, au: 1.0, va: 1.0, dm: 1.0, sca: 1.0 }),
];

/// Finite-difference check of the full objective gradient with respect to
/// every parameter of a tiny model.
pub fn check_objective(
    seed: u64,
    instances: usize,
    weights: &LossWeights,
    name: &str,
    table: &RelatednessTable,
) -> GradCheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feature_dim = 6;
    let hidden = [8usize];
    let per_task = 4;
    let mut max = 0.0f64;
    let mut coords = 0;
    for _ in 0..instances {
        let model = ToyModel::init(&mut rng, feature_dim, &hidden);
        let features: Vec<Vec<f64>> = (0..3 * per_task)
            .map(|_| (0..feature_dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let batch = FeatureBatch {
            va: (0..per_task)
                .map(|i| {
                    let va = VaPair::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9))
                        .expect("in range");
                    (&features[i][..], va)
                })
                .collect(),
            au: (0..per_task)
                .map(|i| {
                    let labels: [bool; ActionUnit::COUNT] =
                        std::array::from_fn(|_| rng.gen_bool(0.5));
                    (&features[per_task + i][..], labels)
                })
                .collect(),
            expr: (0..per_task)
                .map(|i| {
                    let y = Expression::from_index(rng.gen_range(0..Expression::COUNT))
                        .expect("in range");
                    (&features[2 * per_task + i][..], y)
                })
                .collect(),
        };
        let (_, grads) = backward(&model, &batch, weights, table).expect("valid batch");
        let flat_grad = grads.flat();
        coords = flat_grad.len();
        let params = model.params_flat();
        let mut probe = model.clone();
        let err = fd_max_err(&params, &flat_grad, |xs| {
            probe.set_params_flat(xs).expect("same arity");
            tri_batch_loss(&probe, &batch, weights, table).expect("valid batch").total
        });
        max = max.max(err);
    }
    GradCheckOutcome::new(name, instances, coords, max)
}

/// Run every gradient check with the given instance count per loss.
pub fn run_all(seed: u64, instances: usize, objective_instances: usize) -> GradCheckReport {
    let table = RelatednessTable::builtin();
    let mut outcomes = vec![
        check_expr_ce(seed, instances),
        check_au_bce(seed.wrapping_add(1), instances),
        check_ccc_loss(seed.wrapping_add(2), instances),
        check_dm(seed.wrapping_add(3), instances, &table),
        check_dm_full_bce(seed.wrapping_add(4), instances, &table),
        check_sca_probs(seed.wrapping_add(5), instances),
        check_sca_logits(seed.wrapping_add(6), instances),
    ];
    for (i, (name, weights)) in OBJECTIVE_CONFIGS.iter().enumerate() {
        outcomes.push(check_objective(
            seed.wrapping_add(10 + i as u64),
            objective_instances,
            weights,
            name,
            &table,
        ));
    }
    let pass = outcomes.iter().all(|o| o.pass);
    GradCheckReport { seed, fd_step: FD_STEP, tolerance: GRAD_TOLERANCE, outcomes, pass }
}
