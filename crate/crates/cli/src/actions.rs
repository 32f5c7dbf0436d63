//! Operations shared by the command line and the HTTP service, so both
//! produce the same store events for the same request.

use std::collections::BTreeMap;

use contraspec_core::classifier::Probs;
use contraspec_core::ensemble::EnsembleDecision;
use contraspec_core::learner::{
    latest_completed_phase, load_decisions, load_queue, load_report, DetectionScores, Metrics,
};
use contraspec_core::pairing::PairStatus;
use contraspec_core::store::{PhaseState, PhaseStatus, Project};
use contraspec_core::taxonomy::{CaseLabel, ConsistencyVerdict, NliLabel};
use contraspec_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub corpus_id: String,
    pub segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeSummary {
    pub name: String,
    pub corpora: Vec<String>,
    pub psi_min: f64,
    pub psi_max: f64,
    pub survivors: Option<u64>,
    pub reduction_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSummary {
    pub project_id: String,
    pub created_at: String,
    pub format_version: u32,
    pub corpora: Vec<CorpusSummary>,
    pub scopes: Vec<ScopeSummary>,
    pub ensemble: Vec<String>,
    pub phases: u32,
    pub confidence_threshold: f64,
    pub phase_state: PhaseState,
    /// `phase_state` as one string, e.g. `phase_1_awaiting_annotation`.
    pub phase_label: String,
    pub pending: usize,
    pub completed_phases: Vec<u32>,
}

pub fn pending_now(project: &Project) -> usize {
    let state = project.phase_state();
    if state.status == PhaseStatus::AwaitingAnnotation {
        project.state().pending(state.current_phase).len()
    } else {
        0
    }
}

pub fn project_summary(project: &Project) -> ProjectSummary {
    let state = project.state();
    let manifest = project.manifest();
    ProjectSummary {
        project_id: manifest.project_id.clone(),
        created_at: manifest.created_at.to_rfc3339(),
        format_version: manifest.format_version,
        corpora: manifest
            .corpora
            .iter()
            .map(|p| CorpusSummary {
                corpus_id: p.corpus_id.clone(),
                segments: state
                    .corpora
                    .get(&p.corpus_id)
                    .map_or(0, |c| c.segments.len()),
            })
            .collect(),
        scopes: manifest
            .scopes
            .iter()
            .map(|s| {
                let summary = state.summaries.get(&s.scope.name);
                ScopeSummary {
                    name: s.scope.name.clone(),
                    corpora: s
                        .scope
                        .corpus_ids()
                        .into_iter()
                        .map(str::to_string)
                        .collect(),
                    psi_min: s.band.psi_min,
                    psi_max: s.band.psi_max,
                    survivors: summary.map(|f| f.survivors),
                    reduction_factor: summary.and_then(|f| f.reduction_factor),
                }
            })
            .collect(),
        ensemble: manifest
            .ensemble
            .iter()
            .map(|m| m.model_id().to_string())
            .collect(),
        phases: manifest.learner.phases,
        confidence_threshold: manifest.learner.confidence_threshold,
        phase_state: project.phase_state(),
        phase_label: project.phase_state().to_string(),
        pending: pending_now(project),
        completed_phases: state.snapshots.keys().copied().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentView {
    pub segment_id: String,
    pub section_path: String,
    pub text: String,
}

fn segment_view(project: &Project, segment_id: &str) -> Result<SegmentView> {
    let s = project
        .state()
        .segment(segment_id)
        .ok_or_else(|| Error::DanglingReference(format!("segment `{segment_id}` is not stored")))?;
    Ok(SegmentView {
        segment_id: s.segment_id.clone(),
        section_path: s.section_path.clone(),
        text: s.text.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub label: NliLabel,
    pub probs: Probs,
    pub confidence: f64,
}

impl From<&EnsembleDecision> for ModelPrediction {
    fn from(d: &EnsembleDecision) -> Self {
        Self {
            label: d.final_label,
            probs: d.mean_probs,
            confidence: d.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueAnnotation {
    pub case: CaseLabel,
    pub nli: NliLabel,
    pub annotator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub pair_id: String,
    pub segment_a: SegmentView,
    pub segment_b: SegmentView,
    pub psi: f64,
    pub model_prediction: ModelPrediction,
    /// Latest judgment for this pair in the queue's phase.
    pub annotation: Option<QueueAnnotation>,
}

/// Queue of `phase` (the current one by default) in sampling order.
pub fn queue(
    project: &Project,
    phase: Option<u32>,
    offset: usize,
    limit: Option<usize>,
) -> Result<Vec<QueueItem>> {
    let phase = phase.unwrap_or(project.phase_state().current_phase);
    let state = project.state();
    if !state.samples.contains_key(&phase) {
        return Err(Error::WrongPhase {
            pair_id: String::new(),
            expected: project.phase_state().current_phase,
            got: phase,
        });
    }
    let active = state.active_annotations(phase);
    load_queue(project, phase)?
        .iter()
        .skip(offset)
        .take(limit.unwrap_or(usize::MAX))
        .map(|d| {
            let pair = state
                .pair(&d.pair_id)
                .ok_or_else(|| Error::UnknownPair(d.pair_id.clone()))?;
            Ok(QueueItem {
                pair_id: d.pair_id.clone(),
                segment_a: segment_view(project, &pair.segment_a)?,
                segment_b: segment_view(project, &pair.segment_b)?,
                psi: pair.psi,
                model_prediction: d.into(),
                annotation: active.get(d.pair_id.as_str()).map(|a| QueueAnnotation {
                    case: a.case,
                    nli: a.nli,
                    annotator: a.annotator.clone(),
                }),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationAck {
    pub pair_id: String,
    pub case: CaseLabel,
    pub nli: NliLabel,
    pub verdict: ConsistencyVerdict,
    pub superseded: bool,
    pub pending: usize,
}

/// Records a judgment for the current phase. A second submission for the
/// same pair supersedes the first.
pub fn annotate(
    project: &mut Project,
    pair_id: &str,
    case: u8,
    annotator: &str,
) -> Result<AnnotationAck> {
    let case = CaseLabel::new(case)?;
    let phase = project.phase_state().current_phase;
    let a = project.record_annotation(pair_id, case, annotator, phase)?;
    Ok(AnnotationAck {
        pair_id: a.pair_id,
        case: a.case,
        nli: a.nli,
        verdict: a.nli.verdict(),
        superseded: a.superseded,
        pending: pending_now(project),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageStatus {
    Confirmed,
    ContextFp,
}

impl TriageStatus {
    pub fn pair_status(self) -> PairStatus {
        match self {
            TriageStatus::Confirmed => PairStatus::TriagedConfirmed,
            TriageStatus::ContextFp => PairStatus::TriagedContextFp,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "confirmed" => Some(TriageStatus::Confirmed),
            "context_fp" => Some(TriageStatus::ContextFp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageAck {
    pub pair_id: String,
    pub status: TriageStatus,
    /// False when the pair already had this status and nothing was written.
    pub changed: bool,
}

pub fn triage(project: &mut Project, pair_id: &str, status: TriageStatus) -> Result<TriageAck> {
    let current = project
        .state()
        .status
        .get(pair_id)
        .copied()
        .ok_or_else(|| Error::UnknownPair(pair_id.to_string()))?;
    let changed = current != status.pair_status();
    if changed {
        project.triage(pair_id, status.pair_status())?;
    }
    Ok(TriageAck {
        pair_id: pair_id.to_string(),
        status,
        changed,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultFilter {
    pub verdict: Option<ConsistencyVerdict>,
    /// Defaults to the project's confidence threshold.
    pub min_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub pair_id: String,
    pub phase: u32,
    pub verdict: ConsistencyVerdict,
    pub label: NliLabel,
    pub confidence: f64,
    pub probs: Probs,
    pub votes: BTreeMap<String, NliLabel>,
    pub tie_broken: bool,
    pub psi: f64,
    pub status: PairStatus,
    pub segment_a: SegmentView,
    pub segment_b: SegmentView,
}

/// Decisions of the latest completed phase joined with their segments.
pub fn results(project: &Project, filter: &ResultFilter) -> Result<Vec<ResultRow>> {
    let phase = latest_completed_phase(project.state())
        .ok_or_else(|| Error::InvalidPhase("no phase has completed yet".into()))?;
    let min = filter
        .min_confidence
        .unwrap_or(project.manifest().learner.confidence_threshold);
    let state = project.state();
    load_decisions(project, phase)?
        .iter()
        .filter(|d| d.confidence >= min)
        .filter(|d| filter.verdict.is_none_or(|v| d.final_label.verdict() == v))
        .map(|d| {
            let pair = state
                .pair(&d.pair_id)
                .ok_or_else(|| Error::UnknownPair(d.pair_id.clone()))?;
            Ok(ResultRow {
                pair_id: d.pair_id.clone(),
                phase,
                verdict: d.final_label.verdict(),
                label: d.final_label,
                confidence: d.confidence,
                probs: d.mean_probs,
                votes: d.votes.clone(),
                tie_broken: d.tie_broken,
                psi: pair.psi,
                status: pair.status,
                segment_a: segment_view(project, &pair.segment_a)?,
                segment_b: segment_view(project, &pair.segment_b)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub phase: u32,
    /// Absent when the project has no gold labels.
    pub ensemble: Option<Metrics>,
    pub per_model: BTreeMap<String, Metrics>,
    pub detection: Option<DetectionScores>,
}

pub fn metrics(project: &Project, phase: Option<u32>) -> Result<PhaseMetrics> {
    let phase = match phase {
        Some(p) => p,
        None => latest_completed_phase(project.state())
            .ok_or_else(|| Error::InvalidPhase("no phase has completed yet".into()))?,
    };
    if !project.state().snapshots.contains_key(&phase) {
        return Err(Error::InvalidPhase(format!(
            "phase {phase} has not completed"
        )));
    }
    let report = load_report(project, phase)?;
    Ok(PhaseMetrics {
        phase,
        ensemble: report.metrics_ensemble,
        per_model: report.metrics_per_model,
        detection: report.detection,
    })
}
