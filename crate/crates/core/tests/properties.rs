//! Property tests for the crate-wide invariants.

use proptest::prelude::*;

use affect_core::coupling::{
    au_bce_loss, ccc, ccc_loss, distribution_matching_loss, expr_ce_loss,
    mixture_au_distribution, soft_co_annotation_loss, soft_expression_label, AuActivations,
    ExprDistribution, VaPair, CCC_DEGENERATE_EPS,
};
use affect_core::io::{read_jsonl, write_jsonl};
use affect_core::metrics::{eod, eop, fccc, macro_f1, mean_au_f1, overall_ccc};
use affect_core::prep::filter_va_expr_consistency;
use affect_core::record::{
    Attribute, AuLabelSet, Demographics, ExprId, ExprPrediction, Labels, Predictions,
    SampleRecord,
};
use affect_core::relatedness::{ActionUnit, Expression, RelatednessTable};

fn simplex() -> impl Strategy<Value = ExprDistribution> {
    proptest::array::uniform7(1e-3..1.0f64).prop_map(|raw| {
        let sum: f64 = raw.iter().sum();
        ExprDistribution::new(raw.map(|x| x / sum)).unwrap()
    })
}

fn au_probs() -> impl Strategy<Value = AuActivations> {
    proptest::array::uniform17(0.0..=1.0f64).prop_map(|p| AuActivations::new(p).unwrap())
}

fn au_bits() -> impl Strategy<Value = [bool; 17]> {
    proptest::array::uniform17(any::<bool>())
}

fn va_pair() -> impl Strategy<Value = VaPair> {
    (-1.0..=1.0f64, -1.0..=1.0f64).prop_map(|(v, a)| VaPair::new(v, a).unwrap())
}

proptest! {
    #[test]
    fn mixture_stays_in_unit_interval(p in simplex()) {
        let table = RelatednessTable::builtin();
        let q = mixture_au_distribution(&p, &table);
        for unit in ActionUnit::ALL {
            let v = q.prob(unit);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn soft_label_is_a_simplex(bits in au_bits()) {
        let table = RelatednessTable::builtin();
        let q = soft_expression_label(&bits, &table);
        let sum: f64 = q.as_array().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(q.as_array().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn losses_are_finite_and_nonnegative(
        p_expr in simplex(),
        q_expr in simplex(),
        p_au in au_probs(),
        bits in au_bits(),
        y in 0usize..7,
    ) {
        let table = RelatednessTable::builtin();
        let q_au = mixture_au_distribution(&q_expr, &table);
        for loss in [
            expr_ce_loss(&p_expr, Expression::from_index(y).unwrap()),
            au_bce_loss(&p_au, &bits),
            distribution_matching_loss(&p_au, &q_au),
            soft_co_annotation_loss(&p_expr, &q_expr),
        ] {
            prop_assert!(loss.is_finite() && loss >= 0.0, "loss {loss}");
        }
    }

    #[test]
    fn ccc_loss_bounded_and_nonnegative(
        preds in proptest::collection::vec(va_pair(), 2..20),
        truth in proptest::collection::vec(va_pair(), 2..20),
    ) {
        let n = preds.len().min(truth.len());
        let loss = ccc_loss(&preds[..n], &truth[..n]).unwrap();
        prop_assert!(loss.is_finite());
        prop_assert!((0.0..=2.0).contains(&loss));
    }

    #[test]
    fn ccc_breakdown_is_internally_consistent(
        xs in proptest::collection::vec(-1.0..1.0f64, 2..30),
        ys in proptest::collection::vec(-1.0..1.0f64, 2..30),
    ) {
        let n = xs.len().min(ys.len());
        let b = ccc(&xs[..n], &ys[..n]).unwrap();
        let mean_diff = b.mean_pred - b.mean_true;
        let denom = b.var_pred + b.var_true + mean_diff * mean_diff;
        if denom >= CCC_DEGENERATE_EPS {
            let expected = (2.0 * b.covariance / denom).clamp(-1.0, 1.0);
            prop_assert!((b.ccc - expected).abs() < 1e-12);
        } else {
            prop_assert_eq!(b.ccc, 0.0);
        }
        prop_assert!((-1.0..=1.0).contains(&b.ccc));
    }

    #[test]
    fn dm_loss_is_zero_iff_support_is_saturated(
        q_expr in simplex(),
        p_au in au_probs(),
    ) {
        let table = RelatednessTable::builtin();
        let q = mixture_au_distribution(&q_expr, &table);
        let loss = distribution_matching_loss(&p_au, &q);
        // saturating the support forces the loss to (clamped) zero
        let mut saturated = *p_au.as_array();
        for unit in ActionUnit::ALL {
            if q.prob(unit) > 0.0 {
                saturated[unit.index()] = 1.0;
            }
        }
        let saturated = AuActivations::new(saturated).unwrap();
        prop_assert!(distribution_matching_loss(&saturated, &q) < 1e-5);
        // a visibly unsaturated coordinate with visible mass keeps it away from zero
        let unsaturated = ActionUnit::ALL
            .into_iter()
            .any(|u| q.prob(u) > 0.05 && p_au.prob(u) < 0.95);
        if unsaturated {
            prop_assert!(loss > 1e-4, "loss {loss}");
        }
    }

    #[test]
    fn compound_argmax_is_shift_invariant(
        p_expr in simplex(),
        p_au in au_probs(),
        va in va_pair(),
        shift in -5.0..5.0f64,
    ) {
        let relatedness = RelatednessTable::builtin();
        let table = affect_core::relatedness::CompoundTable::builtin(&relatedness);
        let prediction = affect_core::compound::predict_compound(&p_expr, &p_au, &va, &table).unwrap();
        let totals: Vec<f64> = prediction.scores.iter().map(|s| s.total).collect();
        let argmax = |v: &[f64]| {
            let mut best = 0;
            for (i, x) in v.iter().enumerate() {
                if *x > v[best] { best = i; }
            }
            best
        };
        let shifted: Vec<f64> = totals.iter().map(|t| t + shift).collect();
        prop_assert_eq!(argmax(&totals), prediction.winner_index);
        prop_assert_eq!(argmax(&shifted), prediction.winner_index);
    }
}

// ---------------------------------------------------------------------------
// Record-level properties
// ---------------------------------------------------------------------------

/// VA coordinates on a dyadic grid: exactly representable, so count-scaled
/// sums stay well conditioned and the concordance ratio is stable under
/// record duplication.
fn va_grid() -> impl Strategy<Value = (f64, f64)> {
    (-8i8..=8, -8i8..=8).prop_map(|(v, a)| (v as f64 / 8.0, a as f64 / 8.0))
}

fn arb_record(i: usize) -> impl Strategy<Value = SampleRecord> {
    let expr_label = proptest::option::of(0u8..7);
    let gender = proptest::option::of(prop_oneof!(Just("a".to_string()), Just("b".to_string())));
    let va = proptest::option::of(va_grid());
    let aus = proptest::option::of((au_bits(), any::<bool>()));
    let pred_expr = 0u8..7;
    let pred_aus = au_probs();
    let pred_va = va_grid();
    (expr_label, gender, va, aus, pred_expr, pred_aus, pred_va).prop_map(
        move |(expr, gender, va, aus, p_expr, p_aus, p_va)| {
            let mut r = SampleRecord::new(format!("r{i}"));
            r.demographics = gender.map(|g| Demographics { gender: Some(g), ..Default::default() });
            r.labels = Some(Labels {
                expr: expr.map(|e| ExprId(Expression::from_index(e as usize).unwrap())),
                compound: None,
                aus: aus.map(|(bits, partial)| {
                    if partial {
                        let known: Vec<u8> =
                            ActionUnit::CODES.into_iter().filter(|c| c % 2 == 0).collect();
                        let active: Vec<u8> = known
                            .iter()
                            .copied()
                            .filter(|c| bits[ActionUnit::from_code(*c).unwrap().index()])
                            .collect();
                        AuLabelSet::from_codes(&active, Some(&known)).unwrap()
                    } else {
                        AuLabelSet::full(bits)
                    }
                }),
                va: va.map(|(v, a)| VaPair::new(v, a).unwrap()),
            });
            r.predictions = Some(Predictions {
                expr: Some(ExprPrediction::ClassId(ExprId(
                    Expression::from_index(p_expr as usize).unwrap(),
                ))),
                aus: Some(p_aus),
                va: Some(VaPair::new(p_va.0, p_va.1).unwrap()),
            });
            r
        },
    )
}

fn arb_records(max: usize) -> impl Strategy<Value = Vec<SampleRecord>> {
    proptest::collection::vec(any::<u8>(), 4..max).prop_flat_map(|seeds| {
        seeds
            .into_iter()
            .enumerate()
            .map(|(i, _)| arb_record(i))
            .collect::<Vec<_>>()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jsonl_round_trip_preserves_records(records in arb_records(24)) {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records).unwrap();
        let reread = read_jsonl(std::io::BufReader::new(&buf[..])).unwrap();
        prop_assert_eq!(&reread, &records);
        let mut buf2 = Vec::new();
        write_jsonl(&mut buf2, &reread).unwrap();
        prop_assert_eq!(buf, buf2);
    }

    #[test]
    fn cleaning_partitions_the_input(records in arb_records(24)) {
        let outcome = filter_va_expr_consistency(records.clone());
        prop_assert_eq!(outcome.kept.len() + outcome.removed.len(), records.len());
        // records lacking an expression or VA label always pass through
        for r in &records {
            if r.expr_label().is_none() || r.va_label().is_none() {
                prop_assert!(outcome.kept.contains(r));
            }
        }
    }

    #[test]
    fn eop_is_invariant_under_subgroup_relabeling(records in arb_records(40)) {
        let original = eop(&records, Attribute::Gender);
        let mut renamed = records.clone();
        for r in &mut renamed {
            if let Some(demo) = &mut r.demographics {
                demo.gender = demo.gender.take().map(|g| {
                    // swap the two labels
                    if g == "a" { "b".to_string() } else { "a".to_string() }
                });
            }
        }
        let swapped = eop(&renamed, Attribute::Gender);
        match (original, swapped) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.score, b.score),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "asymmetric outcome: {:?} vs {:?}", a.map(|r| r.score), b.map(|r| r.score)),
        }
    }

    #[test]
    fn duplicating_records_leaves_metrics_unchanged(
        records in arb_records(24),
        k in 2usize..4,
    ) {
        let mut duplicated = Vec::with_capacity(records.len() * k);
        for _ in 0..k {
            duplicated.extend(records.iter().cloned());
        }

        let expr_pairs = |rs: &[SampleRecord]| {
            let mut preds = Vec::new();
            let mut labels = Vec::new();
            for r in rs {
                if let (Some(y), Some(p)) = (r.expr_label(), r.expr_prediction()) {
                    preds.push(p.class().index());
                    labels.push(y.index());
                }
            }
            (preds, labels)
        };
        let (p1, l1) = expr_pairs(&records);
        let (pk, lk) = expr_pairs(&duplicated);
        if !p1.is_empty() {
            let a = macro_f1(&p1, &l1, 7).unwrap().macro_f1;
            let b = macro_f1(&pk, &lk, 7).unwrap().macro_f1;
            prop_assert_eq!(a, b);
        }

        let au_pairs = |rs: &[SampleRecord]| {
            let mut preds = Vec::new();
            let mut labels = Vec::new();
            for r in rs {
                if let (Some(l), Some(p)) = (r.au_labels(), r.au_predictions()) {
                    preds.push(p.thresholded());
                    labels.push(l.clone());
                }
            }
            (preds, labels)
        };
        let (p1, l1) = au_pairs(&records);
        let (pk, lk) = au_pairs(&duplicated);
        if !p1.is_empty() {
            let a = mean_au_f1(&p1, &l1, &ActionUnit::ALL).unwrap().mean;
            let b = mean_au_f1(&pk, &lk, &ActionUnit::ALL).unwrap().mean;
            prop_assert_eq!(a, b);
        }

        if let (Ok(a), Ok(b)) = (overall_ccc(&records), overall_ccc(&duplicated)) {
            prop_assert!((a.ccc - b.ccc).abs() < 1e-10);
        }
        if let (Ok(a), Ok(b)) = (eop(&records, Attribute::Gender), eop(&duplicated, Attribute::Gender)) {
            prop_assert_eq!(a.score, b.score);
        }
        if let (Ok(a), Ok(b)) = (
            eod(&records, Attribute::Gender, &ActionUnit::ALL),
            eod(&duplicated, Attribute::Gender, &ActionUnit::ALL),
        ) {
            prop_assert_eq!(a.score, b.score);
        }
        if let (Ok(a), Ok(b)) = (fccc(&records, Attribute::Gender), fccc(&duplicated, Attribute::Gender)) {
            // a subgroup with one usable record is excluded, but its k-fold
            // copy qualifies; the invariant only holds when the included
            // subgroup sets match
            if a.excluded_subgroups.is_empty() && b.excluded_subgroups.is_empty() {
                prop_assert!((a.score - b.score).abs() < 1e-10);
            }
        }
    }
}
