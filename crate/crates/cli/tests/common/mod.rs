#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use contraspec_core::store::{
    Event, LoggedEvent, MemberDescriptor, Project, ProjectManifest, SteppingClock,
};
use contraspec_core::synthharness::{setup_project, PlantSpec, SyntheticProject, SyntheticSetup};

pub fn small_spec(seed: u64) -> PlantSpec {
    PlantSpec {
        n_twins: 20,
        n_fillers: 120,
        ..PlantSpec::default()
    }
    .with_seed(seed)
}

pub fn small_setup() -> SyntheticSetup {
    SyntheticSetup {
        gold_twin_fraction: 0.5,
        gold_neutral: 20,
        seed_per_class: [10, 10, 20],
    }
}

/// A small synthetic project with fast members and a queue of 40.
pub fn small_project(root: &Path, seed: u64) -> (Project, SyntheticProject) {
    let mut project = Project::init(
        root,
        ProjectManifest::new("small", chrono::DateTime::UNIX_EPOCH),
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

/// Runs `contraspec` in-process; returns (exit code, stdout, stderr).
pub fn cli(project: &Path, args: &[&str]) -> (i32, String, String) {
    let mut argv = vec![
        "contraspec".to_string(),
        "-C".into(),
        project.display().to_string(),
    ];
    argv.extend(args.iter().map(|a| a.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = contraspec::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

/// Event log with clock-dependent fields blanked.
pub fn events_without_time(project: &Project) -> Vec<Event> {
    project
        .state()
        .log
        .iter()
        .map(|LoggedEvent { event, .. }| match event.clone() {
            Event::Annotation(mut a) => {
                a.timestamp = chrono::DateTime::UNIX_EPOCH;
                Event::Annotation(a)
            }
            Event::PhaseSnapshot { phase, .. } => Event::PhaseSnapshot {
                phase,
                report_digest: String::new(),
            },
            other => other,
        })
        .collect()
}
