use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use contraspec_core::classifier::Probs;
use contraspec_core::ensemble::EnsembleDecision;
use contraspec_core::learner::*;
use contraspec_core::pairing::PairStatus;
use contraspec_core::store::*;
use contraspec_core::synthharness::*;
use contraspec_core::taxonomy::{CaseLabel, NliLabel};
use contraspec_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn label(i: usize) -> NliLabel {
    NliLabel::from_index(i).unwrap()
}

#[test]
fn metrics_match_counted_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.gen_range(1..80);
        let pairs: Vec<(NliLabel, NliLabel)> = (0..n)
            .map(|_| (label(rng.gen_range(0..3)), label(rng.gen_range(0..3))))
            .collect();
        let gold: BTreeMap<String, NliLabel> = pairs
            .iter()
            .enumerate()
            .map(|(i, (g, _))| (format!("p{i}"), *g))
            .collect();
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let m = evaluate(
            ids.iter().zip(&pairs).map(|(id, (_, p))| (id.as_str(), *p)),
            &gold,
        )
        .unwrap();

        let mut f1_sum = 0.0;
        for c in NliLabel::ALL {
            let tp = pairs.iter().filter(|(g, p)| *g == c && *p == c).count() as f64;
            let predicted = pairs.iter().filter(|(_, p)| *p == c).count() as f64;
            let actual = pairs.iter().filter(|(g, _)| *g == c).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            let f1 = if tp > 0.0 {
                2.0 * tp / (predicted + actual)
            } else {
                0.0
            };
            let s = &m.per_class[&c];
            assert!((s.precision - precision).abs() < 1e-12);
            assert!((s.recall - recall).abs() < 1e-12);
            assert!((s.f1 - f1).abs() < 1e-12);
            f1_sum += f1;
        }
        assert!((m.macro_f1 - f1_sum / 3.0).abs() < 1e-12);
        let correct = pairs.iter().filter(|(g, p)| g == p).count() as f64;
        assert!((m.accuracy - correct / n as f64).abs() < 1e-12);
    }
    let gold = BTreeMap::from([("a".to_string(), NliLabel::Neutral)]);
    assert!(matches!(
        evaluate([("b", NliLabel::Neutral)], &gold),
        Err(Error::MissingGold(_))
    ));
}

fn decision(id: usize, rng: &mut ChaCha8Rng) -> EnsembleDecision {
    let raw = [
        rng.gen_range(0.01..1.0),
        rng.gen_range(0.01..1.0),
        rng.gen_range(0.01..1.0),
    ];
    let sum: f64 = raw.iter().sum();
    let probs = Probs::from_array(raw.map(|x| x / sum));
    EnsembleDecision {
        pair_id: format!("pair-{id:04}"),
        votes: BTreeMap::new(),
        final_label: probs.argmax(),
        confidence: probs.to_array().into_iter().fold(0.0, f64::max),
        tie_broken: false,
        mean_probs: probs,
    }
}

proptest! {
    #[test]
    fn allocation_fills_without_overflow(sizes in proptest::collection::vec(0usize..60, 3), n in 0usize..200) {
        let alloc = stratum_allocation(&sizes, n);
        let total: usize = sizes.iter().sum();
        prop_assert_eq!(alloc.iter().sum::<usize>(), n.min(total));
        for (a, s) in alloc.iter().zip(&sizes) {
            prop_assert!(a <= s);
        }
    }

    #[test]
    fn sampling_picks_distinct_pairs(seed in 0u64..1000, pool in 1usize..120, frac in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decisions: Vec<EnsembleDecision> = (0..pool).map(|i| decision(i, &mut rng)).collect();
        let n = (pool as f64 * frac) as usize;
        for strategy in [SamplingStrategy::UncertaintyStratified, SamplingStrategy::RandomStratified, SamplingStrategy::Random] {
            let picked = sample_for_annotation(&decisions, n, strategy, seed).unwrap();
            prop_assert_eq!(picked.len(), n);
            prop_assert_eq!(picked.iter().map(|d| &d.pair_id).collect::<BTreeSet<_>>().len(), n);
            let again = sample_for_annotation(&decisions, n, strategy, seed).unwrap();
            prop_assert_eq!(picked, again);
        }
    }
}

#[test]
fn uncertainty_queue_is_entropy_ranked_within_strata() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let decisions: Vec<EnsembleDecision> = (0..90).map(|i| decision(i, &mut rng)).collect();
    let queue =
        sample_for_annotation(&decisions, 30, SamplingStrategy::UncertaintyStratified, 1).unwrap();
    let entropies: Vec<f64> = queue.iter().map(|d| d.mean_probs.entropy()).collect();
    assert!(entropies.windows(2).all(|w| w[0] >= w[1]));
    for c in NliLabel::ALL {
        let stratum: Vec<&EnsembleDecision> =
            decisions.iter().filter(|d| d.final_label == c).collect();
        let chosen: Vec<&&EnsembleDecision> = queue.iter().filter(|d| d.final_label == c).collect();
        // nothing left in the stratum is more uncertain than what was chosen
        let min_chosen = chosen
            .iter()
            .map(|d| d.mean_probs.entropy())
            .fold(f64::INFINITY, f64::min);
        let ids: BTreeSet<&str> = chosen.iter().map(|d| d.pair_id.as_str()).collect();
        for d in stratum.iter().filter(|d| !ids.contains(d.pair_id.as_str())) {
            assert!(d.mean_probs.entropy() <= min_chosen);
        }
    }
    assert!(matches!(
        sample_for_annotation(&decisions, 91, SamplingStrategy::Random, 0),
        Err(Error::InsufficientCandidates {
            needed: 91,
            available: 90
        })
    ));
}

fn small_spec(seed: u64) -> PlantSpec {
    PlantSpec {
        n_twins: 20,
        n_fillers: 120,
        ..PlantSpec::default()
    }
    .with_seed(seed)
}

fn small_project(root: &Path, seed: u64) -> (Project, SyntheticProject) {
    let mut project = Project::init(
        root,
        ProjectManifest::new("flow", chrono::DateTime::UNIX_EPOCH),
    )
    .unwrap()
    .with_clock(Arc::new(SteppingClock::epoch()));
    project
        .update_manifest(|m| {
            m.ensemble = MemberDescriptor::natives(3, seed);
            for member in &mut m.ensemble {
                if let MemberDescriptor::Native { training, .. } = member {
                    training.epochs = 15;
                }
            }
            m.learner.sample_size = 40;
            m.learner.seed = seed;
        })
        .unwrap();
    let setup = SyntheticSetup {
        gold_twin_fraction: 0.5,
        gold_neutral: 20,
        seed_per_class: [10, 10, 20],
    };
    let synthetic = setup_project(&mut project, &small_spec(seed), &setup).unwrap();
    (project, synthetic)
}

#[test]
fn phase_gate_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (mut project, synthetic) = small_project(&dir.path().join("p"), 1);

    assert!(matches!(
        run_phase(&mut project, 1),
        Err(Error::InvalidPhase(_))
    ));
    let PhaseOutcome::Completed { report } = run_phase(&mut project, 0).unwrap() else {
        panic!("phase 0 halts")
    };
    assert_eq!(report.train_size, 0);
    assert_eq!(report.seed_size, synthetic.seed_examples);
    assert_eq!(report.eval_size, synthetic.gold.len());

    assert_eq!(
        run_phase(&mut project, 1).unwrap(),
        PhaseOutcome::AwaitingAnnotation {
            phase: 1,
            pending: 40
        }
    );
    assert!(matches!(
        run_phase(&mut project, 1),
        Err(Error::AnnotationIncomplete {
            phase: 1,
            pending: 40
        })
    ));
    assert!(matches!(
        run_phase(&mut project, 2),
        Err(Error::InvalidPhase(_))
    ));

    let queue = load_queue(&project, 1).unwrap();
    assert_eq!(queue.len(), 40);
    let gold: BTreeSet<&str> = synthetic.gold.iter().map(|g| g.pair_id.as_str()).collect();
    assert!(
        queue.iter().all(|d| !gold.contains(d.pair_id.as_str())),
        "gold pairs are never sampled"
    );
    for d in &queue[..37] {
        project
            .record_annotation(&d.pair_id, CaseLabel::new(3).unwrap(), "t", 1)
            .unwrap();
    }
    assert!(matches!(
        run_phase(&mut project, 1),
        Err(Error::AnnotationIncomplete {
            phase: 1,
            pending: 3
        })
    ));
    assert!(matches!(
        project.record_annotation(&queue[0].pair_id, CaseLabel::new(3).unwrap(), "t", 2),
        Err(Error::WrongPhase {
            expected: 1,
            got: 2,
            ..
        })
    ));
    assert_eq!(
        oracle_annotate(&mut project, 1, &synthetic.truth).unwrap(),
        3
    );

    let PhaseOutcome::Completed { report } = run_phase(&mut project, 1).unwrap() else {
        panic!("phase 1 halts")
    };
    assert_eq!(report.train_size, 40);
    assert!(
        report.synthetic_size >= 4,
        "quota of a tenth of the human examples"
    );
    // repeated requests for a completed phase return the stored report
    assert_eq!(
        run_phase(&mut project, 1).unwrap(),
        PhaseOutcome::Completed {
            report: Box::new(load_report(&project, 1).unwrap())
        }
    );

    let summary = advance(&mut project).unwrap();
    assert!(summary.completed.is_empty());
    assert_eq!(summary.pending, 40);
    assert_eq!(summary.phase_state, "phase_2_awaiting_annotation");

    // phase 2 only samples pairs nobody has seen yet
    let second = load_queue(&project, 2).unwrap();
    let first_ids: BTreeSet<&str> = queue.iter().map(|d| d.pair_id.as_str()).collect();
    assert!(second
        .iter()
        .all(|d| !first_ids.contains(d.pair_id.as_str())));
}

fn run_all(root: &Path, seed: u64) -> Project {
    let (mut project, synthetic) = small_project(root, seed);
    loop {
        let summary = advance(&mut project).unwrap();
        if summary.pending == 0 {
            break;
        }
        let phase = project.phase_state().current_phase;
        oracle_annotate(&mut project, phase, &synthetic.truth).unwrap();
    }
    project
}

#[test]
fn full_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = run_all(&dir.path().join("a"), 4);
    let b = run_all(&dir.path().join("b"), 4);
    assert_eq!(a.phase_state().status, PhaseStatus::Finished);
    assert_eq!(latest_completed_phase(a.state()), Some(3));
    assert_eq!(
        snapshot_files(a.root()).unwrap(),
        snapshot_files(b.root()).unwrap()
    );
    assert!(matches!(advance(&mut a), Err(Error::InvalidPhase(_))));

    let latest = predict_latest(&a).unwrap();
    assert_eq!(latest, load_decisions(&a, 3).unwrap());
    assert_eq!(latest.len(), prediction_pool(a.state()).len());
}

#[test]
fn harness_plants_requested_counts() {
    let spec = PlantSpec::default().with_seed(2);
    let (docs, truth) = generate_corpus(&spec).unwrap();
    let (again, truth_again) = generate_corpus(&spec).unwrap();
    assert_eq!(docs, again);
    assert_eq!(truth, truth_again);
    assert_ne!(
        docs,
        generate_corpus(&PlantSpec::default().with_seed(3))
            .unwrap()
            .0
    );

    let by_class = |l: NliLabel| truth.planted.iter().filter(|p| p.case.nli() == l).count();
    assert_eq!(by_class(NliLabel::Contradiction), 40);
    assert_eq!(by_class(NliLabel::Entailment), 40);
    assert_eq!(docs.len(), 2);
    assert_eq!(GroundTruth::from_jsonl(&truth.to_jsonl()).unwrap(), truth);
}

#[test]
fn planted_twins_land_in_the_band() {
    let dir = tempfile::tempdir().unwrap();
    let mut project = Project::init(
        dir.path().join("p"),
        ProjectManifest::new("h", chrono::DateTime::UNIX_EPOCH),
    )
    .unwrap();
    let synthetic = setup_project(
        &mut project,
        &PlantSpec::default().with_seed(5),
        &SyntheticSetup::default(),
    )
    .unwrap();
    let state = project.state();
    let mut found = 0;
    for p in state.pairs().filter(|p| p.status == PairStatus::Candidate) {
        let (a, b) = (
            state.segment(&p.segment_a).unwrap(),
            state.segment(&p.segment_b).unwrap(),
        );
        if synthetic
            .truth
            .lookup(&SectionRef::of(a), &SectionRef::of(b))
            .is_some()
        {
            found += 1;
        }
    }
    assert_eq!(found, synthetic.truth.planted.len());
    let gold_c = synthetic
        .gold
        .iter()
        .filter(|g| g.case.nli() == NliLabel::Contradiction)
        .count();
    assert_eq!(gold_c, 20);
    assert_eq!(synthetic.seed_examples, 160);
}
