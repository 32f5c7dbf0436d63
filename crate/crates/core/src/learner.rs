//! The phased active-learning loop and its evaluation metrics.
//!
//! Phase 0 trains native members on the project's seed examples. Every later
//! phase first predicts, votes and samples a queue for annotators, then halts.
//! Once the queue is fully annotated the same phase resumes: it retrains on
//! all human annotations so far plus EDA synthetics, predicts again and
//! evaluates on the gold set.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{mix_seed, synthesize_training_pos, SynonymLexicon};
use crate::classifier::{
    BaselineClassifier, BaselineModel, EntailmentClassifier, LabeledExample, Origin, PairFeatures,
    PairText, Prediction, TrainingConfig,
};
use crate::ensemble::{majority_vote, EnsembleDecision};
use crate::error::{Error, Result};
use crate::pairing::{PairStatus, PoS};
use crate::store::{
    read_jsonl, to_canonical_json, to_jsonl, write_atomic, Event, MemberDescriptor, PhaseState,
    PhaseStatus, Project, ProjectState, RetrainPolicy, SampledPair, SamplingStrategy,
};
use crate::taxonomy::NliLabel;
use crate::vectorspace::Vocabulary;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Confusion rows are gold labels, columns predictions, both in
/// [`NliLabel::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: BTreeMap<NliLabel, ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: [[u64; 3]; 3],
    /// Classes absent from the gold set; they score 0.
    pub unsupported: Vec<NliLabel>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl Metrics {
    pub fn from_confusion(confusion: [[u64; 3]; 3]) -> Self {
        let mut per_class = BTreeMap::new();
        let mut unsupported = Vec::new();
        for label in NliLabel::ALL {
            let c = label.index();
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let (precision, recall) = (ratio(tp, predicted), ratio(tp, support));
            if support == 0 {
                unsupported.push(label);
            }
            per_class.insert(
                label,
                ClassScores {
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    support,
                },
            );
        }
        let mean = |f: fn(&ClassScores) -> f64| per_class.values().map(f).sum::<f64>() / 3.0;
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..3).map(|i| confusion[i][i]).sum();
        Self {
            macro_precision: mean(|s| s.precision),
            macro_recall: mean(|s| s.recall),
            macro_f1: mean(|s| s.f1),
            accuracy: ratio(trace, total),
            per_class,
            confusion,
            unsupported,
        }
    }
}

/// Scores predicted labels against gold. Every predicted pair needs a gold label.
pub fn evaluate<'a, I>(predicted: I, gold: &BTreeMap<String, NliLabel>) -> Result<Metrics>
where
    I: IntoIterator<Item = (&'a str, NliLabel)>,
{
    let mut confusion = [[0u64; 3]; 3];
    for (pair_id, label) in predicted {
        let truth = gold
            .get(pair_id)
            .ok_or_else(|| Error::MissingGold(pair_id.to_string()))?;
        confusion[truth.index()][label.index()] += 1;
    }
    Ok(Metrics::from_confusion(confusion))
}

/// Binary detection quality: a pair is flagged when the ensemble says
/// contradiction with confidence at least `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub threshold: f64,
    pub flagged: u64,
    pub actual: u64,
    pub true_positives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn detection_scores(
    decisions: &[EnsembleDecision],
    gold: &BTreeMap<String, NliLabel>,
    threshold: f64,
) -> Result<DetectionScores> {
    let (mut flagged, mut actual, mut tp) = (0, 0, 0);
    for d in decisions {
        let truth = *gold
            .get(&d.pair_id)
            .ok_or_else(|| Error::MissingGold(d.pair_id.clone()))?;
        let hit = d.is_inconsistent() && d.confidence >= threshold;
        let real = truth == NliLabel::Contradiction;
        flagged += u64::from(hit);
        actual += u64::from(real);
        tp += u64::from(hit && real);
    }
    let (precision, recall) = (ratio(tp, flagged), ratio(tp, actual));
    Ok(DetectionScores {
        threshold,
        flagged,
        actual,
        true_positives: tp,
        precision,
        recall,
        f1: f1(precision, recall),
    })
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Floor-proportional split of `n` over strata, leftovers to the largest
/// strata that still have room.
pub fn stratum_allocation(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let n = n.min(total);
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| n * s / total).collect();
    let mut left = n - alloc.iter().sum::<usize>();
    let mut by_size: Vec<usize> = (0..sizes.len()).collect();
    by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    for i in by_size {
        let take = left.min(sizes[i] - alloc[i]);
        alloc[i] += take;
        left -= take;
    }
    alloc
}

/// Chooses `n` decisions for annotation, returned in queue order.
pub fn sample_for_annotation(
    decisions: &[EnsembleDecision],
    n: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<Vec<&EnsembleDecision>> {
    if n > decisions.len() {
        return Err(Error::InsufficientCandidates {
            needed: n,
            available: decisions.len(),
        });
    }
    let mut pool: Vec<&EnsembleDecision> = decisions.iter().collect();
    pool.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a random key per pair gives seeded tie-breaking and shuffling alike
    let mut keyed: Vec<(u64, &EnsembleDecision)> =
        pool.into_iter().map(|d| (rng.gen(), d)).collect();
    let entropy = |d: &EnsembleDecision| d.mean_probs.entropy();

    let mut chosen: Vec<(u64, &EnsembleDecision)> = match strategy {
        SamplingStrategy::Random => {
            keyed.sort_by_key(|(k, _)| *k);
            keyed.truncate(n);
            keyed
        }
        SamplingStrategy::UncertaintyStratified | SamplingStrategy::RandomStratified => {
            let mut strata: Vec<Vec<(u64, &EnsembleDecision)>> = vec![Vec::new(); 3];
            for item in keyed {
                strata[item.1.final_label.index()].push(item);
            }
            let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
            let alloc = stratum_allocation(&sizes, n);
            let mut out = Vec::with_capacity(n);
            for (mut stratum, take) in strata.into_iter().zip(alloc) {
                if strategy == SamplingStrategy::UncertaintyStratified {
                    stratum
                        .sort_by(|a, b| entropy(b.1).total_cmp(&entropy(a.1)).then(a.0.cmp(&b.0)));
                } else {
                    stratum.sort_by_key(|(k, _)| *k);
                }
                out.extend(stratum.into_iter().take(take));
            }
            out
        }
    };
    if strategy == SamplingStrategy::UncertaintyStratified {
        chosen.sort_by(|a, b| entropy(b.1).total_cmp(&entropy(a.1)).then(a.0.cmp(&b.0)));
    } else {
        chosen.sort_by_key(|(k, _)| *k);
    }
    Ok(chosen.into_iter().map(|(_, d)| d).collect())
}

// ---------------------------------------------------------------------------
// Members
// ---------------------------------------------------------------------------

enum Member {
    Native(BaselineClassifier),
    #[cfg(feature = "backend")]
    Backend(crate::classifier::BackendClient),
}

impl Member {
    fn classifier(&self) -> &dyn EntailmentClassifier {
        match self {
            Member::Native(c) => c,
            #[cfg(feature = "backend")]
            Member::Backend(c) => c,
        }
    }

    fn native(&self) -> Option<&BaselineClassifier> {
        match self {
            Member::Native(c) => Some(c),
            #[cfg(feature = "backend")]
            Member::Backend(_) => None,
        }
    }

    fn train(&mut self, examples: &[LabeledExample]) -> Result<()> {
        match self {
            Member::Native(c) => c.train(examples),
            #[cfg(feature = "backend")]
            Member::Backend(c) => c.train(examples),
        }
    }
}

fn model_path(project: &Project, phase: u32, model_id: &str) -> std::path::PathBuf {
    project
        .phase_dir(phase)
        .join("models")
        .join(format!("{model_id}.json"))
}

fn load_model(path: &Path) -> Result<BaselineModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::CorruptLayout(format!("{}: {e}", path.display())))
}

/// Instantiates members. Natives start from the weights saved at `from_phase`,
/// or from zeros when `from_phase` is `None`.
fn load_members(
    project: &Project,
    vocabulary: &Arc<Vocabulary>,
    from_phase: Option<u32>,
    training_phase: u32,
) -> Result<Vec<Member>> {
    let buckets = project.manifest().learner.buckets;
    project
        .manifest()
        .ensemble
        .iter()
        .map(|descriptor| match descriptor {
            MemberDescriptor::Native { model_id, training } => {
                let mut model = match from_phase {
                    Some(p) => load_model(&model_path(project, p, model_id))?,
                    None => BaselineModel::zeros(PairFeatures::dim(buckets), training.clone()),
                };
                model.config = TrainingConfig {
                    seed: mix_seed(training.seed, u64::from(training_phase)),
                    ..training.clone()
                };
                Ok(Member::Native(BaselineClassifier::new(
                    model_id.clone(),
                    model,
                    vocabulary.clone(),
                )))
            }
            #[cfg(feature = "backend")]
            MemberDescriptor::Backend { endpoint } => {
                let client = crate::classifier::BackendClient::new(endpoint.clone());
                client.health()?;
                Ok(Member::Backend(client))
            }
            #[cfg(not(feature = "backend"))]
            MemberDescriptor::Backend { endpoint } => Err(Error::BackendUnavailable(format!(
                "{}: built without backend support",
                endpoint.base_url
            ))),
        })
        .collect()
}

fn train_members(members: &mut [Member], examples: &[LabeledExample]) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        members
            .par_iter_mut()
            .map(|m| m.train(examples))
            .collect::<Result<Vec<()>>>()?;
    }
    #[cfg(not(feature = "parallel"))]
    for m in members.iter_mut() {
        m.train(examples)?;
    }
    Ok(())
}

/// One prediction list per member, each aligned with `pairs`.
fn predict_members(
    members: &[Member],
    pairs: &[PairText],
    phase: u32,
) -> Result<Vec<Vec<Prediction>>> {
    let run = |m: &Member| -> Result<Vec<Prediction>> {
        let c = m.classifier();
        let probs = c.predict_batch(pairs)?;
        Ok(pairs
            .iter()
            .zip(probs)
            .map(|(p, probs)| Prediction {
                pair_id: p.id.clone(),
                probs,
                model_id: c.model_id().to_string(),
                phase,
            })
            .collect())
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        members.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    members.iter().map(run).collect()
}

fn vote_all(per_member: &[Vec<Prediction>]) -> Result<Vec<EnsembleDecision>> {
    let n = per_member.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let preds: Vec<Prediction> = per_member.iter().map(|m| m[i].clone()).collect();
            majority_vote(&preds)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Phase orchestration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase_index: u32,
    /// Human-annotated examples in the training set.
    pub train_size: usize,
    pub synthetic_size: usize,
    /// Seed examples, used by phase 0 only.
    pub seed_size: usize,
    pub predicted_pairs: usize,
    pub eval_size: usize,
    /// Empty when the project has no gold labels.
    pub metrics_per_model: BTreeMap<String, Metrics>,
    pub metrics_ensemble: Option<Metrics>,
    pub detection: Option<DetectionScores>,
    pub decisions_path: String,
    pub duration_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum PhaseOutcome {
    Completed { report: Box<PhaseReport> },
    AwaitingAnnotation { phase: u32, pending: usize },
}

/// Pairs the ensemble predicts on: every stored pair not filtered out, by id.
pub fn prediction_pool(state: &ProjectState) -> Vec<PoS> {
    let mut pool: Vec<PoS> = state
        .pairs()
        .filter(|p| p.status != PairStatus::FilteredOut)
        .collect();
    pool.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    pool
}

fn pair_texts(state: &ProjectState, pairs: &[PoS]) -> Result<Vec<PairText>> {
    pairs
        .iter()
        .map(|p| {
            let text = |id: &str| {
                state.segment(id).map(|s| s.text.clone()).ok_or_else(|| {
                    Error::DanglingReference(format!("pair `{}` references `{id}`", p.pair_id))
                })
            };
            Ok(PairText {
                id: p.pair_id.clone(),
                premise: text(&p.segment_a)?,
                hypothesis: text(&p.segment_b)?,
            })
        })
        .collect()
}

pub fn gold_labels(state: &ProjectState) -> BTreeMap<String, NliLabel> {
    state
        .gold
        .iter()
        .map(|g| (g.pair_id.clone(), g.case.nli()))
        .collect()
}

/// Active human annotations of phases `1..=phase` as training examples.
pub fn human_examples(state: &ProjectState, phase: u32) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for p in 1..=phase {
        for (pair_id, a) in state.active_annotations(p) {
            let pos = state
                .pair(pair_id)
                .ok_or_else(|| Error::UnknownPair(pair_id.to_string()))?;
            let text = pair_texts(state, std::slice::from_ref(&pos))?.remove(0);
            out.push(LabeledExample {
                pair_id: pair_id.to_string(),
                premise: text.premise,
                hypothesis: text.hypothesis,
                label: a.nli,
                origin: Origin::Human,
            });
        }
    }
    Ok(out)
}

fn lexicon(project: &Project) -> Result<SynonymLexicon> {
    let path = project.root().join("lexicon.txt");
    if path.is_file() {
        SynonymLexicon::parse(&std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)
    } else {
        Ok(SynonymLexicon::starter())
    }
}

pub fn load_report(project: &Project, phase: u32) -> Result<PhaseReport> {
    let path = project.phase_dir(phase).join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::CorruptLayout(format!("{}: {e}", path.display())))
}

pub fn load_decisions(project: &Project, phase: u32) -> Result<Vec<EnsembleDecision>> {
    read_jsonl(&project.phase_dir(phase).join("decisions.jsonl"))
}

/// Decisions shown to annotators for `phase`, in queue order.
pub fn load_queue(project: &Project, phase: u32) -> Result<Vec<EnsembleDecision>> {
    read_jsonl(&project.phase_dir(phase).join("queue.jsonl"))
}

/// Latest phase with a completed report.
pub fn latest_completed_phase(state: &ProjectState) -> Option<u32> {
    state.snapshots.keys().next_back().copied()
}

/// Runs phase `phase`: trains phase 0, samples a queue, or resumes after
/// annotation, depending on where the project stands.
pub fn run_phase(project: &mut Project, phase: u32) -> Result<PhaseOutcome> {
    let k = project.manifest().learner.phases;
    if phase > k {
        return Err(Error::InvalidPhase(format!(
            "phase {phase} exceeds the configured {k} phases"
        )));
    }
    if project.state().snapshots.contains_key(&phase) {
        return Ok(PhaseOutcome::Completed {
            report: Box::new(load_report(project, phase)?),
        });
    }
    let state = project.phase_state();
    match state.status {
        PhaseStatus::Paired if phase == 0 => {
            complete_phase(project, 0).map(|report| PhaseOutcome::Completed {
                report: Box::new(report),
            })
        }
        PhaseStatus::Complete if phase == state.current_phase + 1 => {
            let pending = sample_phase(project, phase)?;
            Ok(PhaseOutcome::AwaitingAnnotation { phase, pending })
        }
        PhaseStatus::AwaitingAnnotation if phase == state.current_phase => {
            let pending = project.state().pending(phase).len();
            if pending > 0 {
                return Err(Error::AnnotationIncomplete { phase, pending });
            }
            complete_phase(project, phase).map(|report| PhaseOutcome::Completed {
                report: Box::new(report),
            })
        }
        _ => Err(Error::InvalidPhase(format!(
            "cannot run phase {phase} while the project is {state}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceSummary {
    pub completed: Vec<PhaseReport>,
    pub phase_state: String,
    pub pending: usize,
}

/// Moves the loop as far as it can go without human input.
pub fn advance(project: &mut Project) -> Result<AdvanceSummary> {
    let k = project.manifest().learner.phases;
    let mut completed = Vec::new();
    loop {
        let state = project.phase_state();
        let next = match state.status {
            PhaseStatus::Configured => {
                return Err(Error::InvalidPhase("pair a scope before advancing".into()))
            }
            PhaseStatus::Paired => 0,
            PhaseStatus::AwaitingAnnotation => state.current_phase,
            PhaseStatus::Complete if state.current_phase < k => state.current_phase + 1,
            PhaseStatus::Complete | PhaseStatus::Finished if completed.is_empty() => {
                return Err(Error::InvalidPhase("all phases are complete".into()))
            }
            PhaseStatus::Complete | PhaseStatus::Finished => break,
        };
        match run_phase(project, next)? {
            PhaseOutcome::Completed { report } => completed.push(*report),
            PhaseOutcome::AwaitingAnnotation { .. } => break,
        }
    }
    let state = project.phase_state();
    let pending = if state.status == PhaseStatus::AwaitingAnnotation {
        project.state().pending(state.current_phase).len()
    } else {
        0
    };
    Ok(AdvanceSummary {
        completed,
        phase_state: state.to_string(),
        pending,
    })
}

fn sample_phase(project: &mut Project, phase: u32) -> Result<usize> {
    let learner = project.manifest().learner.clone();
    let vocabulary = Arc::new(project.state().feature_vocabulary()?);
    let members = load_members(project, &vocabulary, Some(phase - 1), phase)?;
    let state = project.state();
    let gold = gold_labels(state);
    let pool: Vec<PoS> = prediction_pool(state)
        .into_iter()
        .filter(|p| !gold.contains_key(&p.pair_id) && state.sampled_in(&p.pair_id).is_none())
        .collect();
    let texts = pair_texts(state, &pool)?;
    let decisions = vote_all(&predict_members(&members, &texts, phase)?)?;
    let queue: Vec<EnsembleDecision> = sample_for_annotation(
        &decisions,
        learner.sample_size,
        learner.sampling_strategy,
        mix_seed(learner.seed, u64::from(phase)),
    )?
    .into_iter()
    .cloned()
    .collect();

    write_atomic(
        &project.phase_dir(phase).join("queue.jsonl"),
        &to_jsonl(&queue),
    )?;
    let pairs = queue
        .iter()
        .map(|d| SampledPair {
            pair_id: d.pair_id.clone(),
            predicted: d.final_label,
        })
        .collect();
    project.append_event(Event::Sampled { phase, pairs })?;
    project.set_phase_state(PhaseState {
        current_phase: phase,
        status: PhaseStatus::AwaitingAnnotation,
    })?;
    Ok(queue.len())
}

fn complete_phase(project: &mut Project, phase: u32) -> Result<PhaseReport> {
    let started = project.now();
    let learner = project.manifest().learner.clone();
    let vocabulary = Arc::new(project.state().feature_vocabulary()?);

    let human = if phase == 0 {
        Vec::new()
    } else {
        human_examples(project.state(), phase)?
    };
    let seed_examples = if phase == 0 || learner.replay_seed {
        project.state().seed_examples.clone()
    } else {
        Vec::new()
    };
    let synthetic = synthesize_training_pos(
        &human,
        &learner.augment.clone().with_seed(mix_seed(
            learner.augment.seed ^ learner.seed,
            u64::from(phase),
        )),
        &lexicon(project)?,
    )?;
    let trainset: Vec<LabeledExample> = seed_examples
        .iter()
        .chain(&human)
        .chain(&synthetic)
        .cloned()
        .collect();

    let from = match (phase, learner.retrain) {
        (0, _) => None,
        (_, RetrainPolicy::ContinuePrevious) => Some(phase - 1),
        (_, RetrainPolicy::FromPhaseZero) => Some(0),
    };
    let mut members = load_members(project, &vocabulary, from, phase)?;
    // natives without seed data stay at their uniform initialisation
    if !trainset.is_empty() {
        train_members(&mut members, &trainset)?;
    }

    let state = project.state();
    let pool = prediction_pool(state);
    let texts = pair_texts(state, &pool)?;
    let per_member = predict_members(&members, &texts, phase)?;
    let decisions = vote_all(&per_member)?;

    let gold = gold_labels(state);
    let mut metrics_per_model = BTreeMap::new();
    let (mut metrics_ensemble, mut detection) = (None, None);
    if !gold.is_empty() {
        for predictions in &per_member {
            let on_gold = predictions.iter().filter(|p| gold.contains_key(&p.pair_id));
            let m = evaluate(on_gold.map(|p| (p.pair_id.as_str(), p.label())), &gold)?;
            if let Some(first) = predictions.first() {
                metrics_per_model.insert(first.model_id.clone(), m);
            }
        }
        let gold_decisions: Vec<EnsembleDecision> = decisions
            .iter()
            .filter(|d| gold.contains_key(&d.pair_id))
            .cloned()
            .collect();
        if gold_decisions.len() != gold.len() {
            let missing = gold
                .keys()
                .find(|id| !gold_decisions.iter().any(|d| &&d.pair_id == id))
                .expect("a gold pair is missing");
            return Err(Error::DanglingReference(format!(
                "gold pair `{missing}` is not a candidate pair"
            )));
        }
        metrics_ensemble = Some(evaluate(
            gold_decisions
                .iter()
                .map(|d| (d.pair_id.as_str(), d.final_label)),
            &gold,
        )?);
        detection = Some(detection_scores(
            &gold_decisions,
            &gold,
            learner.confidence_threshold,
        )?);
    }

    let dir = project.phase_dir(phase);
    write_atomic(&dir.join("decisions.jsonl"), &to_jsonl(&decisions))?;
    write_atomic(&dir.join("trainset.jsonl"), &to_jsonl(&trainset))?;
    for m in &members {
        if let Some(c) = m.native() {
            write_atomic(
                &model_path(project, phase, &c.model_id),
                &to_canonical_json(&c.model),
            )?;
        }
    }
    let report = PhaseReport {
        phase_index: phase,
        train_size: human.len(),
        synthetic_size: synthetic.len(),
        seed_size: seed_examples.len(),
        predicted_pairs: decisions.len(),
        eval_size: gold.len(),
        metrics_per_model,
        metrics_ensemble,
        detection,
        decisions_path: format!("phases/phase-{phase}/decisions.jsonl"),
        duration_ms: (project.now() - started).num_milliseconds(),
    };
    let report_json = to_canonical_json(&report);
    write_atomic(&dir.join("report.json"), &report_json)?;

    project.append_event(Event::PhaseSnapshot {
        phase,
        report_digest: crate::store::digest(&report_json),
    })?;
    project.set_phase_state(PhaseState {
        current_phase: phase,
        status: PhaseStatus::Complete,
    })?;
    if phase == learner.phases {
        project.set_phase_state(PhaseState {
            current_phase: phase,
            status: PhaseStatus::Finished,
        })?;
    }
    Ok(report)
}

/// Re-runs the latest completed models over every candidate pair.
pub fn predict_latest(project: &Project) -> Result<Vec<EnsembleDecision>> {
    let phase = latest_completed_phase(project.state())
        .ok_or_else(|| Error::InvalidPhase("no phase has completed yet".into()))?;
    let vocabulary = Arc::new(project.state().feature_vocabulary()?);
    let members = load_members(project, &vocabulary, Some(phase), phase)?;
    let pool = prediction_pool(project.state());
    let texts = pair_texts(project.state(), &pool)?;
    vote_all(&predict_members(&members, &texts, phase)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Probs;

    fn decision(id: &str, label: NliLabel, probs: [f64; 3]) -> EnsembleDecision {
        EnsembleDecision {
            pair_id: id.into(),
            votes: BTreeMap::new(),
            final_label: label,
            confidence: probs[label.index()],
            tie_broken: false,
            mean_probs: Probs::from_array(probs),
        }
    }

    #[test]
    fn hand_built_confusion() {
        let m = Metrics::from_confusion([[5, 1, 0], [2, 6, 1], [0, 1, 4]]);
        let e = &m.per_class[&NliLabel::Entailment];
        let c = &m.per_class[&NliLabel::Contradiction];
        let n = &m.per_class[&NliLabel::Neutral];
        assert!((e.precision - 5.0 / 7.0).abs() < 1e-9 && (e.recall - 5.0 / 6.0).abs() < 1e-9);
        assert!((c.precision - 6.0 / 8.0).abs() < 1e-9 && (c.recall - 6.0 / 9.0).abs() < 1e-9);
        assert!((n.precision - 4.0 / 5.0).abs() < 1e-9 && (n.recall - 4.0 / 5.0).abs() < 1e-9);
        let f = |p: f64, r: f64| 2.0 * p * r / (p + r);
        assert!((c.f1 - f(0.75, 2.0 / 3.0)).abs() < 1e-9);
        assert!((m.accuracy - 15.0 / 20.0).abs() < 1e-12);
        let macro_f1 = (f(5.0 / 7.0, 5.0 / 6.0) + f(0.75, 2.0 / 3.0) + 0.8) / 3.0;
        assert!((m.macro_f1 - macro_f1).abs() < 1e-9);
    }

    #[test]
    fn perfect_and_degenerate_predictors() {
        let gold: BTreeMap<String, NliLabel> = NliLabel::ALL
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("p{i}"), *l))
            .collect();
        let perfect = evaluate(gold.iter().map(|(k, v)| (k.as_str(), *v)), &gold).unwrap();
        assert_eq!((perfect.accuracy, perfect.macro_f1), (1.0, 1.0));
        assert_eq!(perfect.confusion, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);

        let all_c = evaluate(
            gold.keys().map(|k| (k.as_str(), NliLabel::Contradiction)),
            &gold,
        )
        .unwrap();
        assert!((all_c.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(all_c.per_class[&NliLabel::Contradiction].recall, 1.0);
        assert_eq!(all_c.per_class[&NliLabel::Entailment].recall, 0.0);

        assert!(matches!(
            evaluate([("zz", NliLabel::Neutral)], &gold),
            Err(Error::MissingGold(_))
        ));
    }

    #[test]
    fn unsupported_classes_are_flagged() {
        let m = Metrics::from_confusion([[3, 0, 0], [0, 0, 0], [1, 0, 2]]);
        assert_eq!(m.unsupported, [NliLabel::Contradiction]);
        assert_eq!(m.per_class[&NliLabel::Contradiction].f1, 0.0);
    }

    #[test]
    fn allocation_example() {
        assert_eq!(stratum_allocation(&[600, 300, 100], 100), [60, 30, 10]);
        assert_eq!(stratum_allocation(&[5, 3, 2], 10), [5, 3, 2]);
        assert_eq!(stratum_allocation(&[7, 7, 1], 5), [3, 2, 0]);
        assert_eq!(stratum_allocation(&[0, 4, 0], 4), [0, 4, 0]);
    }

    #[test]
    fn sampling_takes_most_uncertain_per_stratum() {
        let mut ds = Vec::new();
        for i in 0..10 {
            let p = 0.4 + i as f64 * 0.05;
            ds.push(decision(
                &format!("e{i}"),
                NliLabel::Entailment,
                [p, (1.0 - p) / 2.0, (1.0 - p) / 2.0],
            ));
        }
        for i in 0..10 {
            let p = 0.4 + i as f64 * 0.05;
            ds.push(decision(
                &format!("c{i}"),
                NliLabel::Contradiction,
                [(1.0 - p) / 2.0, p, (1.0 - p) / 2.0],
            ));
        }
        let s = sample_for_annotation(&ds, 4, SamplingStrategy::UncertaintyStratified, 1).unwrap();
        let mut ids: Vec<&str> = s.iter().map(|d| d.pair_id.as_str()).collect();
        ids.sort();
        assert_eq!(ids, ["c0", "c1", "e0", "e1"]);
        let ent: Vec<f64> = s.iter().map(|d| d.mean_probs.entropy()).collect();
        assert!(ent.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn exhaustive_and_insufficient_samples() {
        let ds: Vec<_> = (0..7)
            .map(|i| decision(&format!("x{i}"), NliLabel::ALL[i % 3], [0.5, 0.3, 0.2]))
            .collect();
        for strategy in [
            SamplingStrategy::UncertaintyStratified,
            SamplingStrategy::RandomStratified,
            SamplingStrategy::Random,
        ] {
            assert_eq!(sample_for_annotation(&ds, 7, strategy, 3).unwrap().len(), 7);
            let a = sample_for_annotation(&ds, 4, strategy, 3).unwrap();
            assert_eq!(a, sample_for_annotation(&ds, 4, strategy, 3).unwrap());
        }
        assert!(matches!(
            sample_for_annotation(&ds, 8, SamplingStrategy::Random, 0),
            Err(Error::InsufficientCandidates {
                needed: 8,
                available: 7
            })
        ));
    }
}
