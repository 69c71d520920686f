use proptest::prelude::*;

use super::*;

fn pairs(scores: &[f64], labels: &[u8]) -> Vec<EvalPair> {
    scores.iter().zip(labels).map(|(&s, &l)| EvalPair::new(s, l)).collect()
}

/// P(score_pos > score_neg) + ½ P(tie) by enumerating every pair.
fn pairwise_auroc(p: &[EvalPair]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for a in p.iter().filter(|x| x.label == 1) {
        for b in p.iter().filter(|x| x.label == 0) {
            total += 1.0;
            if a.score > b.score {
                wins += 1.0;
            } else if a.score == b.score {
                wins += 0.5;
            }
        }
    }
    wins / total
}

/// Confusion-matrix enumeration of weighted P/R/F1.
fn confusion_prf(p: &[EvalPair], threshold: f64) -> (f64, f64, f64) {
    let mut m = [[0usize; 2]; 2]; // m[true][pred]
    for x in p {
        let pred = usize::from(x.score > threshold);
        m[x.label as usize][pred] += 1;
    }
    let n = p.len() as f64;
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for c in 0..2 {
        let support = (m[c][0] + m[c][1]) as f64;
        let predicted = (m[0][c] + m[1][c]) as f64;
        let tp = m[c][c] as f64;
        let prec = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let rec = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        wp += support / n * prec;
        wr += support / n * rec;
        wf += support / n * f1;
    }
    (wp, wr, wf)
}

#[test]
fn accuracy_examples() {
    assert_eq!(accuracy(&pairs(&[0.9, 0.1], &[1, 0]), 0.5).unwrap(), 1.0);
    assert_eq!(accuracy(&pairs(&[0.9, 0.9], &[1, 0]), 0.5).unwrap(), 0.5);
    assert_eq!(accuracy(&pairs(&[0.5, 0.5, 0.5], &[0, 0, 0]), 0.5).unwrap(), 1.0);
    assert!(matches!(accuracy(&[], 0.5), Err(Error::Contract(_))));
}

#[test]
fn auroc_examples() {
    assert_eq!(auroc(&pairs(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
    assert_eq!(auroc(&pairs(&[0.3; 6], &[1, 0, 1, 0, 0, 1])).unwrap(), 0.5);
    assert_eq!(auroc(&pairs(&[0.8, 0.8, 0.1], &[1, 0, 0])).unwrap(), 0.75);
    assert!(matches!(auroc(&pairs(&[0.1, 0.7], &[1, 1])), Err(Error::UndefinedMetric(_))));
    assert!(auroc(&pairs(&[f64::NAN, 0.7], &[1, 0])).is_err());
}

#[test]
fn weighted_prf_examples() {
    let perfect = weighted_prf(&pairs(&[0.9, 0.2, 0.8], &[1, 0, 1]), 0.5).unwrap();
    assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));

    let p = weighted_prf(&pairs(&[0.9, 0.9, 0.1, 0.1], &[1, 0, 0, 0]), 0.5).unwrap();
    let expect = 0.25 * (2.0 / 3.0) + 0.75 * 0.8;
    assert!((p.f1 - expect).abs() < 1e-15);
    assert!((p.f1 - 0.7667).abs() < 1e-4);

    let all_zero = weighted_prf(&pairs(&[0.1, 0.2, 0.3, 0.4], &[1, 1, 0, 0]), 0.5).unwrap();
    assert_eq!(all_zero.recall, 0.5);
    // the never-predicted class contributes precision 0
    assert_eq!(all_zero.precision, 0.25);
}

#[test]
fn report_handles_single_class_splits() {
    let r = MetricsReport::compute(&pairs(&[0.5, 0.5], &[0, 0]), 0.5).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.auroc, None);
    let table = r.to_table();
    assert!(table.contains("undefined") && table.contains("weighted_f1"));
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"auroc\":null"));
}

fn arb_pairs(max: usize) -> impl Strategy<Value = Vec<EvalPair>> {
    // coarse score grid so ties are common
    proptest::collection::vec((0u8..20, 0u8..2), 2..=max).prop_map(|v| {
        v.into_iter()
            .map(|(s, l)| EvalPair::new(f64::from(s) / 19.0, l))
            .collect()
    })
}

fn both_classes(p: &[EvalPair]) -> bool {
    p.iter().any(|x| x.label == 1) && p.iter().any(|x| x.label == 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_matches_pairwise_oracle(p in arb_pairs(50)) {
        prop_assume!(both_classes(&p));
        let got = auroc(&p).unwrap();
        prop_assert!((got - pairwise_auroc(&p)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn auroc_invariant_to_monotone_maps_and_flips(p in arb_pairs(40)) {
        prop_assume!(both_classes(&p));
        let base = auroc(&p).unwrap();
        let mapped: Vec<EvalPair> = p.iter().map(|x| EvalPair::new((3.0 * x.score).exp() - 7.0, x.label)).collect();
        prop_assert!((auroc(&mapped).unwrap() - base).abs() <= 1e-12);
        let flipped: Vec<EvalPair> = p.iter().map(|x| EvalPair::new(-x.score, 1 - x.label)).collect();
        prop_assert!((auroc(&flipped).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn prf_matches_confusion_enumeration(p in arb_pairs(50), t in 0.05f64..0.95) {
        let got = weighted_prf(&p, t).unwrap();
        let (wp, wr, wf) = confusion_prf(&p, t);
        prop_assert_eq!((got.precision, got.recall, got.f1), (wp, wr, wf));
    }

    #[test]
    fn weighted_recall_equals_accuracy(p in arb_pairs(60), t in 0.0f64..1.0) {
        let r = weighted_prf(&p, t).unwrap().recall;
        prop_assert!((r - accuracy(&p, t).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn report_fields_in_unit_interval(p in arb_pairs(30), t in 0.05f64..0.95) {
        let r = MetricsReport::compute(&p, t).unwrap();
        for v in [r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1, r.auroc.unwrap_or(0.5)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(r.n, p.len());
    }
}
