use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use contraspec_core::learner::{run_phase, PhaseOutcome};
use contraspec_core::pairing::PairStatus;
use contraspec_core::store::*;
use contraspec_core::synthharness::*;
use contraspec_core::taxonomy::{Annotation, CaseLabel};
use contraspec_core::Error;

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.path().is_dir() {
            copy_dir(&entry.path(), &target);
        } else if entry.file_name() != ".lock" {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn small_spec(seed: u64) -> PlantSpec {
    PlantSpec {
        n_twins: 20,
        n_fillers: 120,
        ..PlantSpec::default()
    }
    .with_seed(seed)
}

fn small_setup() -> SyntheticSetup {
    SyntheticSetup {
        gold_twin_fraction: 0.5,
        gold_neutral: 20,
        seed_per_class: [10, 10, 20],
    }
}

fn new_project(root: &Path, seed: u64) -> (Project, SyntheticProject) {
    let mut project = Project::init(
        root,
        ProjectManifest::new("persist", chrono::DateTime::UNIX_EPOCH),
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
    let synthetic = setup_project(&mut project, &small_spec(seed), &small_setup()).unwrap();
    (project, synthetic)
}

fn completed(outcome: PhaseOutcome) {
    assert!(
        matches!(outcome, PhaseOutcome::Completed { .. }),
        "{outcome:?}"
    );
}

/// Three annotated phases with supersessions and triage; returns the live
/// state after every top-level action.
fn scripted_session(project: &mut Project, truth: &GroundTruth) -> Vec<ProjectState> {
    let mut checkpoints = vec![project.state().clone()];
    completed(run_phase(project, 0).unwrap());
    checkpoints.push(project.state().clone());
    for phase in 1..=3 {
        assert!(matches!(
            run_phase(project, phase).unwrap(),
            PhaseOutcome::AwaitingAnnotation { .. }
        ));
        checkpoints.push(project.state().clone());
        let queue: Vec<String> = project.state().samples[&phase]
            .iter()
            .map(|p| p.pair_id.clone())
            .collect();
        for (i, id) in queue.iter().enumerate() {
            if i % 2 == 0 {
                // a first, wrong answer that the next one supersedes
                project
                    .record_annotation(id, CaseLabel::new(3).unwrap(), "alice", phase)
                    .unwrap();
                checkpoints.push(project.state().clone());
            }
            let pair = project.state().pair(id).unwrap();
            let a = project.state().segment(&pair.segment_a).unwrap().clone();
            let b = project.state().segment(&pair.segment_b).unwrap().clone();
            project
                .record_annotation(id, oracle_annotator(&a, &b, truth), "oracle", phase)
                .unwrap();
            checkpoints.push(project.state().clone());
        }
        completed(run_phase(project, phase).unwrap());
        checkpoints.push(project.state().clone());
    }
    let ids: Vec<String> = project.state().status.keys().take(12).cloned().collect();
    for (i, id) in ids.iter().enumerate() {
        let status = if i % 2 == 0 {
            PairStatus::TriagedConfirmed
        } else {
            PairStatus::TriagedContextFp
        };
        project.triage(id, status).unwrap();
        checkpoints.push(project.state().clone());
    }
    checkpoints
}

fn write_log_prefix(dir: &Path, log: &[LoggedEvent]) {
    let (annotations, events): (Vec<_>, Vec<_>) = log
        .iter()
        .partition(|e| matches!(e.event, Event::Annotation(_)));
    fs::write(dir.join("annotations.jsonl"), to_jsonl(annotations)).unwrap();
    fs::write(dir.join("events.jsonl"), to_jsonl(events)).unwrap();
}

#[test]
fn kill_and_reload_after_every_event() {
    let tmp = tempfile::tempdir().unwrap();
    let live_root = tmp.path().join("live");
    let (mut live, synthetic) = new_project(&live_root, 3);
    let base = tmp.path().join("base");
    copy_dir(&live_root, &base);

    let checkpoints = scripted_session(&mut live, &synthetic.truth);
    let log = live.state().log.clone();
    assert!(log.len() >= 200, "session produced {} events", log.len());
    assert_eq!(Project::load(&live_root).unwrap().state(), live.state());

    // Replay the log into a fresh writer one event at a time; after each
    // append, a cold load of the matching log prefix must agree.
    let replay_root = tmp.path().join("replay");
    copy_dir(&base, &replay_root);
    let mut replay = Project::open(&replay_root).unwrap();
    let prefix_root = tmp.path().join("prefix");
    copy_dir(&base, &prefix_root);
    let mut matched = 0;
    for (k, event) in log.iter().enumerate() {
        replay.append_event(event.event.clone()).unwrap();
        write_log_prefix(&prefix_root, &log[..=k]);
        let reloaded = Project::load(&prefix_root).unwrap();
        assert_eq!(reloaded.state(), replay.state(), "after event {}", k + 1);
        for live_state in checkpoints.iter().filter(|c| c.log.len() == k + 1) {
            assert_eq!(
                live_state,
                reloaded.state(),
                "live checkpoint after event {}",
                k + 1
            );
            matched += 1;
        }
    }
    assert_eq!(
        matched,
        checkpoints.iter().filter(|c| !c.log.is_empty()).count()
    );
    assert_eq!(replay.state(), live.state());
}

#[test]
fn crash_between_append_and_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("p");
    let (mut project, _) = new_project(&root, 5);
    completed(run_phase(&mut project, 0).unwrap());
    run_phase(&mut project, 1).unwrap();
    let id = project.state().samples[&1][0].pair_id.clone();
    let annotation = Annotation {
        pair_id: id.clone(),
        case: CaseLabel::new(2).unwrap(),
        nli: CaseLabel::new(2).unwrap().nli(),
        annotator: "crash".into(),
        phase: 1,
        timestamp: project.now(),
        replaced_prediction: None,
        superseded: false,
    };
    let before = project.state().clone();
    project
        .append_event_without_apply(Event::Annotation(annotation.clone()))
        .unwrap();
    assert_eq!(project.state(), &before);
    drop(project);
    let reloaded = Project::open(&root).unwrap();
    assert_eq!(reloaded.state().annotations.last(), Some(&annotation));
    assert_eq!(reloaded.state().status[&id], PairStatus::Annotated);
    assert_eq!(reloaded.state().log.len(), before.log.len() + 1);
}

#[test]
fn torn_tail_is_discarded_and_repaired() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("p");
    let (mut project, _) = new_project(&root, 6);
    completed(run_phase(&mut project, 0).unwrap());
    run_phase(&mut project, 1).unwrap();
    let before = project.state().clone();
    drop(project);

    let events = root.join("events.jsonl");
    let intact = fs::read(&events).unwrap();
    fs::OpenOptions::new()
        .append(true)
        .open(&events)
        .unwrap()
        .write_all(br#"{"seq":99,"event":"tri"#)
        .unwrap();
    assert_eq!(Project::load(&root).unwrap().state(), &before);
    let reopened = Project::open(&root).unwrap();
    assert_eq!(reopened.state(), &before);
    assert_eq!(fs::read(&events).unwrap(), intact);
}

#[test]
fn canonical_files_are_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut snapshots = Vec::new();
    for run in 0..2 {
        let root = tmp.path().join(format!("run{run}"));
        let (mut project, synthetic) = new_project(&root, 11);
        scripted_session(&mut project, &synthetic.truth);
        drop(project);
        snapshots.push(snapshot_files(&root).unwrap());
    }
    assert_eq!(
        snapshots[0].keys().collect::<Vec<_>>(),
        snapshots[1].keys().collect::<Vec<_>>()
    );
    for (path, bytes) in &snapshots[0] {
        assert!(snapshots[1][path] == *bytes, "{path} differs between runs");
    }
    assert!(snapshots[0].contains_key("phases/phase-3/report.json"));
    assert!(snapshots[0].contains_key("phases/phase-3/models/baseline-2.json"));

    // save → load → save is the identity on every state file
    let root = tmp.path().join("run0");
    let loaded = Project::load(&root).unwrap();
    let copy = tmp.path().join("rewritten");
    loaded.write_canonical(&copy).unwrap();
    let rewritten = snapshot_files(&copy).unwrap();
    for (path, bytes) in &rewritten {
        assert!(snapshots[0][path] == *bytes, "{path} is not canonical");
    }
    assert_eq!(Project::load(&copy).unwrap().state(), loaded.state());
}

#[test]
fn thousand_pairs_round_trip_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("p");
    let mut project = Project::init(
        &root,
        ProjectManifest::new("big", chrono::DateTime::UNIX_EPOCH),
    )
    .unwrap();
    let spec = PlantSpec {
        n_twins: 40,
        n_fillers: 300,
        ..PlantSpec::default()
    }
    .with_seed(2);
    setup_project(
        &mut project,
        &spec,
        &SyntheticSetup {
            gold_neutral: 30,
            seed_per_class: [5, 5, 10],
            ..SyntheticSetup::default()
        },
    )
    .unwrap();
    let pairs: Vec<_> = project.state().pairs().collect();
    assert!(pairs.len() >= 300, "{}", pairs.len());
    let reloaded = Project::load(&root).unwrap();
    for p in &pairs {
        let q = reloaded.state().pair(&p.pair_id).unwrap();
        assert_eq!(q.psi.to_bits(), p.psi.to_bits());
        assert_eq!(q.status, p.status);
        assert_eq!((&q.segment_a, &q.segment_b), (&p.segment_a, &p.segment_b));
    }
}

#[test]
fn guards() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("p");
    let (project, _) = new_project(&root, 1);

    assert!(matches!(
        Project::open(&root),
        Err(Error::LockHeldElsewhere(_))
    ));
    assert!(matches!(
        Project::init(
            &root,
            ProjectManifest::new("again", chrono::DateTime::UNIX_EPOCH)
        ),
        Err(Error::PathNotEmpty(_))
    ));
    let mut reader = Project::load(&root).unwrap();
    assert!(!reader.is_writer());
    assert!(matches!(
        reader.triage("nope", PairStatus::TriagedConfirmed),
        Err(Error::UnknownPair(_))
    ));
    let known = reader.state().status.keys().next().unwrap().clone();
    assert!(matches!(
        reader.triage(&known, PairStatus::TriagedConfirmed),
        Err(Error::ReadOnly)
    ));
    drop(project);
    assert!(Project::open(&root).is_ok());

    // annotation for a pair that does not exist
    let dangling = tmp.path().join("dangling");
    copy_dir(&root, &dangling);
    let annotation = Annotation {
        pair_id: "ghost:000001~ghost:000002".into(),
        case: CaseLabel::new(1).unwrap(),
        nli: CaseLabel::new(1).unwrap().nli(),
        annotator: "x".into(),
        phase: 1,
        timestamp: chrono::DateTime::UNIX_EPOCH,
        replaced_prediction: None,
        superseded: false,
    };
    let line = to_jsonl([LoggedEvent {
        seq: 1,
        event: Event::Annotation(annotation),
    }]);
    fs::write(dangling.join("annotations.jsonl"), line).unwrap();
    assert!(matches!(
        Project::load(&dangling),
        Err(Error::DanglingReference(_))
    ));

    // unsupported format version
    let future = tmp.path().join("future");
    copy_dir(&root, &future);
    let manifest = fs::read_to_string(future.join("manifest.json")).unwrap();
    fs::write(
        future.join("manifest.json"),
        manifest.replace("\"format_version\": 1", "\"format_version\": 7"),
    )
    .unwrap();
    assert!(matches!(
        Project::load(&future),
        Err(Error::VersionMismatch {
            found: 7,
            supported: 1
        })
    ));

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert!(matches!(
        Project::load(&empty),
        Err(Error::CorruptLayout(_))
    ));
}

#[test]
fn init_layout_and_manifest_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("fresh");
    let manifest = ProjectManifest::new("fresh", chrono::DateTime::UNIX_EPOCH);
    let project = Project::init(&root, manifest.clone()).unwrap();
    for entry in [
        "manifest.json",
        "corpora",
        "pairs",
        "annotations.jsonl",
        "phases",
    ] {
        assert!(root.join(entry).exists(), "{entry}");
    }
    drop(project);
    assert_eq!(Project::load(&root).unwrap().manifest(), &manifest);
}
