use contraspec_core::classifier::{Prediction, Probs};
use contraspec_core::ensemble::*;
use contraspec_core::taxonomy::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random distribution whose strict argmax is `label`.
fn probs_with_argmax(rng: &mut ChaCha8Rng, label: NliLabel) -> Probs {
    loop {
        let raw: [f64; 3] = [
            rng.gen_range(0.01..1.0),
            rng.gen_range(0.01..1.0),
            rng.gen_range(0.01..1.0),
        ];
        let sum: f64 = raw.iter().sum();
        let p = Probs::from_array(raw.map(|x| x / sum));
        let top = p.get(label);
        if NliLabel::ALL
            .iter()
            .filter(|l| **l != label)
            .all(|l| p.get(*l) < top)
        {
            return p;
        }
    }
}

fn permutations(items: &[Prediction]) -> Vec<Vec<Prediction>> {
    let idx = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    idx.iter()
        .map(|o| o.iter().map(|&i| items[i].clone()).collect())
        .collect()
}

#[test]
fn vote_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let mut combos = 0;
    for a in NliLabel::ALL {
        for b in NliLabel::ALL {
            for c in NliLabel::ALL {
                combos += 1;
                for _ in 0..20 {
                    let labels = [a, b, c];
                    let preds: Vec<Prediction> = labels
                        .iter()
                        .enumerate()
                        .map(|(i, &l)| Prediction {
                            pair_id: "p".into(),
                            probs: probs_with_argmax(&mut rng, l),
                            model_id: format!("m{i}"),
                            phase: 1,
                        })
                        .collect();
                    let decision = majority_vote(&preds).unwrap();
                    for perm in permutations(&preds) {
                        assert_eq!(majority_vote(&perm).unwrap(), decision);
                    }
                    assert!((0.0..=1.0).contains(&decision.confidence));
                    assert!((decision.mean_probs.sum() - 1.0).abs() < 1e-9);

                    let count = |l: NliLabel| labels.iter().filter(|x| **x == l).count();
                    if a == b && b == c {
                        assert_eq!(decision.final_label, a);
                        assert!(!decision.tie_broken);
                        let mean = preds.iter().map(|p| p.probs.get(a)).sum::<f64>() / 3.0;
                        assert!((decision.confidence - mean).abs() < 1e-12);
                    } else if let Some(major) = NliLabel::ALL.into_iter().find(|l| count(*l) == 2) {
                        assert_eq!(decision.final_label, major);
                        assert!(!decision.tie_broken);
                        let mean = preds
                            .iter()
                            .filter(|p| p.label() == major)
                            .map(|p| p.probs.get(major))
                            .sum::<f64>()
                            / 2.0;
                        assert!((decision.confidence - 2.0 / 3.0 * mean).abs() < 1e-12);
                    } else {
                        assert!(decision.tie_broken);
                        let sums = NliLabel::ALL
                            .map(|l| preds.iter().map(|p| p.probs.get(l)).sum::<f64>());
                        let best = NliLabel::ALL
                            .into_iter()
                            .max_by(|x, y| sums[x.index()].total_cmp(&sums[y.index()]))
                            .unwrap();
                        assert_eq!(decision.final_label, best);
                        assert!(decision.confidence <= 1.0 / 3.0 + 1e-12);
                    }
                }
            }
        }
    }
    assert_eq!(combos, 27);
}

#[test]
fn exact_three_way_tie_prefers_contradiction() {
    let preds: Vec<Prediction> = [[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]]
        .iter()
        .enumerate()
        .map(|(i, p)| Prediction {
            pair_id: "x".into(),
            probs: Probs::from_array(*p),
            model_id: format!("m{i}"),
            phase: 0,
        })
        .collect();
    let d = majority_vote(&preds).unwrap();
    assert_eq!(d.final_label, NliLabel::Contradiction);
    assert!(d.tie_broken);
    assert_eq!(TIE_PREFERENCE[0], NliLabel::Contradiction);
}

#[test]
fn taxonomy_partition_is_exhaustive() {
    let expected = [
        (1, NliLabel::Entailment),
        (2, NliLabel::Contradiction),
        (3, NliLabel::Neutral),
        (4, NliLabel::Entailment),
        (5, NliLabel::Entailment),
        (6, NliLabel::Contradiction),
        (7, NliLabel::Contradiction),
    ];
    for (case, nli) in expected {
        let label = CaseLabel::new(case).unwrap();
        assert_eq!(map_case_to_nli(label), nli);
        assert_eq!(label.nli(), nli);
        let verdict = map_nli_to_consistency(nli);
        assert_eq!(
            verdict == ConsistencyVerdict::Inconsistent,
            nli == NliLabel::Contradiction
        );
    }
    for bad in [0u8, 8, 9, 255] {
        assert!(CaseLabel::new(bad).is_err());
    }
    let contradictions: Vec<u8> = (1..=7)
        .filter(|c| CaseLabel::new(*c).unwrap().nli() == NliLabel::Contradiction)
        .collect();
    assert_eq!(contradictions, [2, 6, 7]);
    for label in NliLabel::ALL {
        assert_eq!(label.as_str().parse::<NliLabel>().unwrap(), label);
    }
}
