//! Directory-backed project persistence.
//!
//! ```text
//! <root>/
//!   manifest.json            root of discovery
//!   corpora/<id>.clean.txt   cleaned document text
//!   corpora/<id>.segments.jsonl
//!   pairs/<scope>.jsonl      pairs as produced by filtration
//!   pairs/<scope>.summary.json
//!   gold.jsonl, seed.jsonl   evaluation gold and phase-0 examples (optional)
//!   annotations.jsonl        annotation events
//!   events.jsonl             every other mutation event
//!   phases/phase-N/          per-phase snapshots
//!   .lock                    single-writer lock
//! ```
//!
//! Annotations and status changes are events, appended and synced before the
//! in-memory state changes. Loading replays both logs in sequence order; a
//! torn last line is dropped with a warning.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::augment::EdaParams;
use crate::classifier::{BackendEndpoint, LabeledExample, TrainingConfig, DEFAULT_BUCKETS};
use crate::corpus::{ingest_document, Corpus, CorpusProfile, Segment};
use crate::ensemble::DEFAULT_CONFIDENCE_THRESHOLD;
use crate::error::{Error, Result};
use crate::pairing::{pair_scope, Band, FilterSummary, PairScope, PairStatus, PoS, ScopeSpace};
use crate::taxonomy::{Annotation, CaseLabel, NliLabel};
use crate::vectorspace::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const ANNOTATIONS: &str = "annotations.jsonl";
const EVENTS: &str = "events.jsonl";
const LOCK: &str = ".lock";
const GOLD: &str = "gold.jsonl";
const SEED: &str = "seed.jsonl";

// ---------------------------------------------------------------------------
// Clock
// ---------------------------------------------------------------------------

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Starts at `start` and advances a fixed step on every reading.
pub struct SteppingClock {
    start: DateTime<Utc>,
    step_ms: i64,
    ticks: AtomicI64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step_ms: i64) -> Self {
        Self {
            start,
            step_ms,
            ticks: AtomicI64::new(0),
        }
    }

    pub fn epoch() -> Self {
        Self::new(DateTime::<Utc>::UNIX_EPOCH, 1000)
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let tick = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + Duration::milliseconds(tick * self.step_ms)
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseStatus {
    Configured,
    Paired,
    AwaitingAnnotation,
    Complete,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseState {
    pub current_phase: u32,
    pub status: PhaseStatus,
}

impl PhaseState {
    pub const CONFIGURED: PhaseState = PhaseState {
        current_phase: 0,
        status: PhaseStatus::Configured,
    };

    /// Whether `next` is a legal successor of `self`.
    pub fn allows(self, next: PhaseState) -> bool {
        use PhaseStatus::*;
        let (p, q) = (self.current_phase, next.current_phase);
        match (self.status, next.status) {
            (Configured | Paired, Paired) => q == 0,
            (Complete, AwaitingAnnotation) => q == p + 1,
            (AwaitingAnnotation, Complete) => q == p,
            (Paired, Complete) => p == 0 && q == 0,
            (Complete, Finished) => q == p,
            _ => false,
        }
    }
}

impl std::fmt::Display for PhaseState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.status {
            PhaseStatus::Configured => f.write_str("configured"),
            PhaseStatus::Paired => f.write_str("paired"),
            PhaseStatus::AwaitingAnnotation => {
                write!(f, "phase_{}_awaiting_annotation", self.current_phase)
            }
            PhaseStatus::Complete => write!(f, "phase_{}_complete", self.current_phase),
            PhaseStatus::Finished => f.write_str("finished"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeConfig {
    #[serde(flatten)]
    pub scope: PairScope,
    pub band: Band,
    pub max_pattern_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemberDescriptor {
    Native {
        model_id: String,
        training: TrainingConfig,
    },
    Backend {
        endpoint: BackendEndpoint,
    },
}

impl MemberDescriptor {
    pub fn model_id(&self) -> &str {
        match self {
            MemberDescriptor::Native { model_id, .. } => model_id,
            MemberDescriptor::Backend { endpoint } => &endpoint.model_id,
        }
    }

    /// `n` native members with distinct seeds derived from `seed`.
    pub fn natives(n: usize, seed: u64) -> Vec<Self> {
        (0..n)
            .map(|i| MemberDescriptor::Native {
                model_id: format!("baseline-{}", i + 1),
                training: TrainingConfig::with_seed(seed.wrapping_add(i as u64 * 7919)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    UncertaintyStratified,
    RandomStratified,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainPolicy {
    ContinuePrevious,
    FromPhaseZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub phases: u32,
    pub sample_size: usize,
    pub confidence_threshold: f64,
    pub sampling_strategy: SamplingStrategy,
    pub augment: EdaParams,
    pub retrain: RetrainPolicy,
    /// Keep the seed-origin examples in every later train set.
    #[serde(default = "default_true")]
    pub replay_seed: bool,
    pub buckets: usize,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            phases: 3,
            sample_size: 150,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            sampling_strategy: SamplingStrategy::UncertaintyStratified,
            augment: EdaParams::default(),
            retrain: RetrainPolicy::ContinuePrevious,
            replay_seed: true,
            buckets: DEFAULT_BUCKETS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub project_id: String,
    pub created_at: DateTime<Utc>,
    pub corpora: Vec<CorpusProfile>,
    pub scopes: Vec<ScopeConfig>,
    pub ensemble: Vec<MemberDescriptor>,
    pub learner: LearnerConfig,
    pub phase_state: PhaseState,
    pub format_version: u32,
}

impl ProjectManifest {
    pub fn new(project_id: impl Into<String>, created_at: DateTime<Utc>) -> Self {
        Self {
            project_id: project_id.into(),
            created_at,
            corpora: Vec::new(),
            scopes: Vec::new(),
            ensemble: MemberDescriptor::natives(3, 0),
            learner: LearnerConfig::default(),
            phase_state: PhaseState::CONFIGURED,
            format_version: FORMAT_VERSION,
        }
    }

    pub fn scope(&self, name: &str) -> Option<&ScopeConfig> {
        self.scopes.iter().find(|s| s.scope.name == name)
    }
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPair {
    pub pair_id: String,
    pub predicted: NliLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Annotation(Annotation),
    Sampled {
        phase: u32,
        pairs: Vec<SampledPair>,
    },
    Status {
        pair_ids: Vec<String>,
        status: PairStatus,
    },
    Triage {
        pair_id: String,
        status: PairStatus,
    },
    PhaseSnapshot {
        phase: u32,
        report_digest: String,
    },
    PhaseState(PhaseState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

impl LoggedEvent {
    fn file(&self) -> &'static str {
        match self.event {
            Event::Annotation(_) => ANNOTATIONS,
            _ => EVENTS,
        }
    }
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub pair_id: String,
    pub case: CaseLabel,
}

/// Everything a project holds in memory; two loads of the same directory
/// compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectState {
    pub manifest: ProjectManifest,
    pub clean_texts: BTreeMap<String, String>,
    pub corpora: BTreeMap<String, Corpus>,
    /// Pairs as filtered, per scope, in file order.
    pub scope_pairs: BTreeMap<String, Vec<PoS>>,
    pub summaries: BTreeMap<String, FilterSummary>,
    /// Current status of every stored pair.
    pub status: BTreeMap<String, PairStatus>,
    pub annotations: Vec<Annotation>,
    pub samples: BTreeMap<u32, Vec<SampledPair>>,
    pub snapshots: BTreeMap<u32, String>,
    pub gold: Vec<GoldLabel>,
    pub seed_examples: Vec<LabeledExample>,
    pub log: Vec<LoggedEvent>,
}

impl ProjectState {
    fn new(manifest: ProjectManifest) -> Self {
        Self {
            manifest,
            clean_texts: BTreeMap::new(),
            corpora: BTreeMap::new(),
            scope_pairs: BTreeMap::new(),
            summaries: BTreeMap::new(),
            status: BTreeMap::new(),
            annotations: Vec::new(),
            samples: BTreeMap::new(),
            snapshots: BTreeMap::new(),
            gold: Vec::new(),
            seed_examples: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn pair(&self, pair_id: &str) -> Option<PoS> {
        let status = *self.status.get(pair_id)?;
        self.scope_pairs
            .values()
            .flat_map(|v| v.iter())
            .find(|p| p.pair_id == pair_id)
            .map(|p| PoS {
                status,
                ..p.clone()
            })
    }

    pub fn pairs(&self) -> impl Iterator<Item = PoS> + '_ {
        self.scope_pairs.values().flatten().map(|p| PoS {
            status: self.status[&p.pair_id],
            ..p.clone()
        })
    }

    pub fn segment(&self, segment_id: &str) -> Option<&Segment> {
        let (corpus, _) = segment_id.rsplit_once(':')?;
        let segments = &self.corpora.get(corpus)?.segments;
        segments
            .binary_search_by(|s| s.segment_id.as_str().cmp(segment_id))
            .ok()
            .map(|i| &segments[i])
    }

    /// Active (latest) annotation per pair for `phase`.
    pub fn active_annotations(&self, phase: u32) -> BTreeMap<&str, &Annotation> {
        let mut active = BTreeMap::new();
        for a in self.annotations.iter().filter(|a| a.phase == phase) {
            active.insert(a.pair_id.as_str(), a);
        }
        active
    }

    pub fn pending(&self, phase: u32) -> Vec<&str> {
        let active = self.active_annotations(phase);
        self.samples
            .get(&phase)
            .map(|s| {
                s.iter()
                    .map(|p| p.pair_id.as_str())
                    .filter(|id| !active.contains_key(id))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Phase in which `pair_id` was sampled, if any.
    pub fn sampled_in(&self, pair_id: &str) -> Option<u32> {
        self.samples
            .iter()
            .find(|(_, s)| s.iter().any(|p| p.pair_id == pair_id))
            .map(|(phase, _)| *phase)
    }

    fn apply(&mut self, logged: &LoggedEvent) -> Result<()> {
        let dangling = |id: &str| {
            Error::DanglingReference(format!(
                "event {} references unknown pair `{id}`",
                logged.seq
            ))
        };
        match &logged.event {
            Event::Annotation(a) => {
                let status = self
                    .status
                    .get_mut(&a.pair_id)
                    .ok_or_else(|| dangling(&a.pair_id))?;
                *status = PairStatus::Annotated;
                self.annotations.push(a.clone());
            }
            Event::Sampled { phase, pairs } => {
                for p in pairs {
                    *self
                        .status
                        .get_mut(&p.pair_id)
                        .ok_or_else(|| dangling(&p.pair_id))? = PairStatus::PendingAnnotation;
                }
                self.samples.insert(*phase, pairs.clone());
            }
            Event::Status { pair_ids, status } => {
                for id in pair_ids {
                    *self.status.get_mut(id).ok_or_else(|| dangling(id))? = *status;
                }
            }
            Event::Triage { pair_id, status } => {
                *self
                    .status
                    .get_mut(pair_id)
                    .ok_or_else(|| dangling(pair_id))? = *status;
            }
            Event::PhaseSnapshot {
                phase,
                report_digest,
            } => {
                self.snapshots.insert(*phase, report_digest.clone());
            }
            Event::PhaseState(state) => self.manifest.phase_state = *state,
        }
        self.log.push(logged.clone());
        Ok(())
    }

    /// Vocabulary over every segment of every corpus, in manifest order.
    pub fn feature_vocabulary(&self) -> Result<Vocabulary> {
        let segments: Vec<Segment> = self
            .manifest
            .corpora
            .iter()
            .filter_map(|p| self.corpora.get(&p.corpus_id))
            .flat_map(|c| c.segments.iter().cloned())
            .collect();
        Vocabulary::build(&segments)
    }
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("state serializes");
    s.push('\n');
    s
}

pub fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Writes through a temporary file and rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(contents.as_bytes())
            .map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::CorruptLayout(format!("{}: {e}", path.display())))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::CorruptLayout(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Reads an append-only log. Returns the records and the byte length of the
/// valid prefix; a torn or unparsable final line is excluded.
fn read_log(path: &Path) -> Result<(Vec<LoggedEvent>, u64)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut valid = 0u64;
    while offset < bytes.len() {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| offset + p);
        let line_end = end.unwrap_or(bytes.len());
        let line = &bytes[offset..line_end];
        let is_last = end.is_none() || line_end + 1 >= bytes.len();
        let parsed = std::str::from_utf8(line)
            .ok()
            .and_then(|l| serde_json::from_str::<LoggedEvent>(l).ok());
        match (parsed, end) {
            (Some(record), Some(_)) => {
                records.push(record);
                offset = line_end + 1;
                valid = offset as u64;
            }
            _ if is_last => {
                log::warn!("discarding torn final record in {}", path.display());
                break;
            }
            _ => {
                return Err(Error::CorruptLayout(format!(
                    "{}: unreadable record at byte {offset}",
                    path.display()
                )))
            }
        }
    }
    Ok((records, valid))
}

struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::LockHeldElsewhere(path))
            }
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// Project
// ---------------------------------------------------------------------------

pub struct Project {
    root: PathBuf,
    state: ProjectState,
    next_seq: u64,
    lock: Option<LockGuard>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Project {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Project")
            .field("root", &self.root)
            .field("writer", &self.lock.is_some())
            .finish()
    }
}

impl Project {
    /// Creates the layout in an empty or absent directory and returns a writer.
    pub fn init(path: impl AsRef<Path>, manifest: ProjectManifest) -> Result<Self> {
        let root = path.as_ref().to_path_buf();
        if root.exists() {
            let mut entries = fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
            if entries.next().is_some() {
                return Err(Error::PathNotEmpty(root));
            }
        }
        for dir in ["corpora", "pairs", "phases"] {
            fs::create_dir_all(root.join(dir)).map_err(|e| Error::io(root.join(dir), e))?;
        }
        for log in [ANNOTATIONS, EVENTS] {
            File::create(root.join(log)).map_err(|e| Error::io(root.join(log), e))?;
        }
        write_atomic(&root.join(MANIFEST), &to_canonical_json(&manifest))?;
        let lock = LockGuard::acquire(&root)?;
        Ok(Self {
            root,
            state: ProjectState::new(manifest),
            next_seq: 1,
            lock: Some(lock),
            clock: Arc::new(SystemClock),
        })
    }

    /// Opens the project for writing, taking the lock and repairing a torn log tail.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let root = path.as_ref().to_path_buf();
        let lock = LockGuard::acquire(&root)?;
        let mut project = Self::read(root)?;
        for log in [ANNOTATIONS, EVENTS] {
            let path = project.root.join(log);
            let (_, valid) = read_log(&path)?;
            let len = fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
            if len > valid {
                let f = OpenOptions::new()
                    .write(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                f.set_len(valid).map_err(|e| Error::io(&path, e))?;
            }
        }
        project.lock = Some(lock);
        Ok(project)
    }

    /// Read-only load; no lock is taken.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(path.as_ref().to_path_buf())
    }

    fn read(root: PathBuf) -> Result<Self> {
        let manifest_path = root.join(MANIFEST);
        if !manifest_path.is_file() {
            return Err(Error::CorruptLayout(format!(
                "missing {}",
                manifest_path.display()
            )));
        }
        let raw: serde_json::Value = read_json(&manifest_path)?;
        let found = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if found != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                supported: FORMAT_VERSION,
            });
        }
        let manifest: ProjectManifest = serde_json::from_value(raw)
            .map_err(|e| Error::CorruptLayout(format!("manifest: {e}")))?;
        let mut state = ProjectState::new(manifest.clone());

        for profile in &manifest.corpora {
            let clean = root
                .join("corpora")
                .join(format!("{}.clean.txt", profile.corpus_id));
            let text = fs::read_to_string(&clean)
                .map_err(|_| Error::CorruptLayout(format!("missing {}", clean.display())))?;
            let segments_path = root
                .join("corpora")
                .join(format!("{}.segments.jsonl", profile.corpus_id));
            if segments_path.is_file() {
                let segments: Vec<Segment> = read_jsonl(&segments_path)?;
                let corpus = Corpus {
                    profile: profile.clone(),
                    segments,
                    source_digest: digest(&text),
                };
                state.corpora.insert(profile.corpus_id.clone(), corpus);
            }
            state.clean_texts.insert(profile.corpus_id.clone(), text);
        }

        for scope in &manifest.scopes {
            let name = &scope.scope.name;
            let pairs_path = root.join("pairs").join(format!("{name}.jsonl"));
            let pairs: Vec<PoS> = read_jsonl(&pairs_path)?;
            for p in &pairs {
                for seg in [&p.segment_a, &p.segment_b] {
                    if state.segment(seg).is_none() {
                        return Err(Error::DanglingReference(format!(
                            "pair `{}` references unknown segment `{seg}`",
                            p.pair_id
                        )));
                    }
                }
                if state.status.insert(p.pair_id.clone(), p.status).is_some() {
                    return Err(Error::CorruptLayout(format!(
                        "pair `{}` stored twice",
                        p.pair_id
                    )));
                }
            }
            state.summaries.insert(
                name.clone(),
                read_json(&root.join("pairs").join(format!("{name}.summary.json")))?,
            );
            state.scope_pairs.insert(name.clone(), pairs);
        }

        if root.join(GOLD).is_file() {
            state.gold = read_jsonl(&root.join(GOLD))?;
            if let Some(g) = state
                .gold
                .iter()
                .find(|g| !state.status.contains_key(&g.pair_id))
            {
                return Err(Error::DanglingReference(format!(
                    "gold label for unknown pair `{}`",
                    g.pair_id
                )));
            }
        }
        if root.join(SEED).is_file() {
            state.seed_examples = read_jsonl(&root.join(SEED))?;
        }

        let (mut log, _) = read_log(&root.join(EVENTS))?;
        let (annotations, _) = read_log(&root.join(ANNOTATIONS))?;
        log.extend(annotations);
        log.sort_by_key(|e| e.seq);
        // phase state in the manifest is a snapshot; replay from the start
        state.manifest.phase_state = PhaseState::CONFIGURED;
        if !state.scope_pairs.is_empty() {
            state.manifest.phase_state = PhaseState {
                current_phase: 0,
                status: PhaseStatus::Paired,
            };
        }
        for event in &log {
            state.apply(event)?;
        }
        let next_seq = log.last().map_or(1, |e| e.seq + 1);
        Ok(Self {
            root,
            state,
            next_seq,
            lock: None,
            clock: Arc::new(SystemClock),
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.clock.clone()
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn state(&self) -> &ProjectState {
        &self.state
    }

    pub fn manifest(&self) -> &ProjectManifest {
        &self.state.manifest
    }

    pub fn phase_state(&self) -> PhaseState {
        self.state.manifest.phase_state
    }

    pub fn is_writer(&self) -> bool {
        self.lock.is_some()
    }

    fn require_writer(&self) -> Result<()> {
        if self.lock.is_some() {
            Ok(())
        } else {
            Err(Error::ReadOnly)
        }
    }

    pub fn phase_dir(&self, phase: u32) -> PathBuf {
        self.root.join("phases").join(format!("phase-{phase}"))
    }

    fn write_manifest(&self) -> Result<()> {
        write_atomic(
            &self.root.join(MANIFEST),
            &to_canonical_json(&self.state.manifest),
        )
    }

    /// Edits configuration (ensemble, learner, bands) before pairing.
    pub fn update_manifest(&mut self, edit: impl FnOnce(&mut ProjectManifest)) -> Result<()> {
        self.require_writer()?;
        let mut manifest = self.state.manifest.clone();
        edit(&mut manifest);
        manifest.phase_state = self.state.manifest.phase_state;
        manifest.format_version = FORMAT_VERSION;
        self.state.manifest = manifest;
        self.write_manifest()
    }

    // -- events ------------------------------------------------------------

    /// Durably appends `event`, then applies it.
    pub fn append_event(&mut self, event: Event) -> Result<()> {
        let logged = self.write_event(event)?;
        self.state.apply(&logged)?;
        if matches!(logged.event, Event::PhaseState(_)) {
            self.write_manifest()?;
        }
        Ok(())
    }

    /// Appends without touching in-memory state, as a crash between the two
    /// steps would. Only for recovery tests.
    #[doc(hidden)]
    pub fn append_event_without_apply(&mut self, event: Event) -> Result<()> {
        self.write_event(event).map(|_| ())
    }

    fn write_event(&mut self, event: Event) -> Result<LoggedEvent> {
        self.require_writer()?;
        let logged = LoggedEvent {
            seq: self.next_seq,
            event,
        };
        let path = self.root.join(logged.file());
        let mut line = serde_json::to_string(&logged).map_err(|e| Error::json("event", e))?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(line.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        f.sync_data().map_err(|e| Error::io(&path, e))?;
        self.next_seq += 1;
        Ok(logged)
    }

    pub fn set_phase_state(&mut self, next: PhaseState) -> Result<()> {
        let current = self.phase_state();
        if current == next {
            return Ok(());
        }
        if !current.allows(next) {
            return Err(Error::InvalidPhase(format!(
                "cannot move from {current} to {next}"
            )));
        }
        self.append_event(Event::PhaseState(next))
    }

    // -- corpora and pairs ---------------------------------------------------

    fn ensure_unpaired(&self, what: &str) -> Result<()> {
        match self.phase_state().status {
            PhaseStatus::Configured | PhaseStatus::Paired if self.state.samples.is_empty() => {
                Ok(())
            }
            _ => Err(Error::InvalidPhase(format!(
                "cannot {what} after the active-learning loop has started"
            ))),
        }
    }

    /// Cleans a raw document and stores its text; replaces an earlier corpus of the same id.
    pub fn ingest(&mut self, profile: CorpusProfile, raw_text: &str) -> Result<()> {
        self.require_writer()?;
        self.ensure_unpaired("ingest")?;
        let tree = ingest_document(raw_text, &profile)?;
        let clean = tree.render();
        write_atomic(
            &self
                .root
                .join("corpora")
                .join(format!("{}.clean.txt", profile.corpus_id)),
            &clean,
        )?;
        let _ = fs::remove_file(
            self.root
                .join("corpora")
                .join(format!("{}.segments.jsonl", profile.corpus_id)),
        );
        self.state.corpora.remove(&profile.corpus_id);
        self.state
            .clean_texts
            .insert(profile.corpus_id.clone(), clean);
        let corpora = &mut self.state.manifest.corpora;
        match corpora
            .iter_mut()
            .find(|p| p.corpus_id == profile.corpus_id)
        {
            Some(existing) => *existing = profile,
            None => corpora.push(profile),
        }
        self.write_manifest()
    }

    /// Quantizes every ingested corpus into segments.
    pub fn segment_all(&mut self) -> Result<Vec<(String, usize)>> {
        self.require_writer()?;
        self.ensure_unpaired("segment")?;
        let mut counts = Vec::new();
        for profile in self.state.manifest.corpora.clone() {
            let clean = &self.state.clean_texts[&profile.corpus_id];
            let corpus = Corpus::build(clean, profile.clone())?;
            write_atomic(
                &self
                    .root
                    .join("corpora")
                    .join(format!("{}.segments.jsonl", profile.corpus_id)),
                &to_jsonl(&corpus.segments),
            )?;
            counts.push((profile.corpus_id.clone(), corpus.segments.len()));
            self.state.corpora.insert(profile.corpus_id.clone(), corpus);
        }
        Ok(counts)
    }

    /// Generates and filters the pair space of a scope and stores it.
    pub fn pair(&mut self, config: ScopeConfig) -> Result<FilterSummary> {
        self.require_writer()?;
        self.ensure_unpaired("pair")?;
        let name = config.scope.name.clone();
        if name.is_empty()
            || !name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::UnknownScope(name));
        }
        for other in self
            .state
            .manifest
            .scopes
            .iter()
            .filter(|s| s.scope.name != name)
        {
            let theirs = other.scope.corpus_ids();
            if let Some(shared) = config
                .scope
                .corpus_ids()
                .into_iter()
                .find(|c| theirs.contains(c))
            {
                return Err(Error::InvalidProfile(format!(
                    "corpus `{shared}` already belongs to scope `{}`",
                    other.scope.name
                )));
            }
        }
        let space = ScopeSpace::build(&config.scope, &self.state.corpora)?;
        let outcome = pair_scope(&space, config.band, config.max_pattern_count)?;

        let pairs_dir = self.root.join("pairs");
        write_atomic(
            &pairs_dir.join(format!("{name}.jsonl")),
            &to_jsonl(&outcome.pairs),
        )?;
        write_atomic(
            &pairs_dir.join(format!("{name}.summary.json")),
            &to_canonical_json(&outcome.summary),
        )?;

        if let Some(old) = self.state.scope_pairs.remove(&name) {
            for p in old {
                self.state.status.remove(&p.pair_id);
            }
        }
        for p in &outcome.pairs {
            self.state.status.insert(p.pair_id.clone(), p.status);
        }
        self.state.scope_pairs.insert(name.clone(), outcome.pairs);
        self.state
            .summaries
            .insert(name.clone(), outcome.summary.clone());
        let scopes = &mut self.state.manifest.scopes;
        match scopes.iter_mut().find(|s| s.scope.name == name) {
            Some(existing) => *existing = config,
            None => scopes.push(config),
        }
        self.state.manifest.phase_state = PhaseState {
            current_phase: 0,
            status: PhaseStatus::Paired,
        };
        self.write_manifest()?;
        Ok(outcome.summary)
    }

    pub fn scope_space(&self, name: &str) -> Result<ScopeSpace> {
        let config = self
            .manifest()
            .scope(name)
            .ok_or_else(|| Error::UnknownScope(name.to_string()))?;
        ScopeSpace::build(&config.scope, &self.state.corpora)
    }

    pub fn set_gold(&mut self, gold: Vec<GoldLabel>) -> Result<()> {
        self.require_writer()?;
        self.ensure_unpaired("replace gold labels")?;
        if let Some(g) = gold
            .iter()
            .find(|g| !self.state.status.contains_key(&g.pair_id))
        {
            return Err(Error::UnknownPair(g.pair_id.clone()));
        }
        write_atomic(&self.root.join(GOLD), &to_jsonl(&gold))?;
        self.state.gold = gold;
        Ok(())
    }

    pub fn set_seed_examples(&mut self, examples: Vec<LabeledExample>) -> Result<()> {
        self.require_writer()?;
        self.ensure_unpaired("replace seed examples")?;
        write_atomic(&self.root.join(SEED), &to_jsonl(&examples))?;
        self.state.seed_examples = examples;
        Ok(())
    }

    // -- annotation --------------------------------------------------------

    pub fn record_annotation(
        &mut self,
        pair_id: &str,
        case: CaseLabel,
        annotator: &str,
        phase: u32,
    ) -> Result<Annotation> {
        self.require_writer()?;
        if !self.state.status.contains_key(pair_id) {
            return Err(Error::UnknownPair(pair_id.to_string()));
        }
        let sampled = self
            .state
            .sampled_in(pair_id)
            .ok_or_else(|| Error::PairNotSampled(pair_id.to_string()))?;
        if sampled != phase {
            return Err(Error::WrongPhase {
                pair_id: pair_id.to_string(),
                expected: sampled,
                got: phase,
            });
        }
        let state = self.phase_state();
        if state.status != PhaseStatus::AwaitingAnnotation || state.current_phase != phase {
            return Err(Error::WrongPhase {
                pair_id: pair_id.to_string(),
                expected: state.current_phase,
                got: phase,
            });
        }
        let predicted = self.state.samples[&phase]
            .iter()
            .find(|p| p.pair_id == pair_id)
            .map(|p| p.predicted);
        let superseded = self.state.active_annotations(phase).contains_key(pair_id);
        let annotation = Annotation {
            pair_id: pair_id.to_string(),
            case,
            nli: case.nli(),
            annotator: annotator.to_string(),
            phase,
            timestamp: self.now(),
            replaced_prediction: predicted,
            superseded,
        };
        self.append_event(Event::Annotation(annotation.clone()))?;
        Ok(annotation)
    }

    pub fn triage(&mut self, pair_id: &str, status: PairStatus) -> Result<()> {
        if !matches!(
            status,
            PairStatus::TriagedConfirmed | PairStatus::TriagedContextFp
        ) {
            return Err(Error::InvalidPhase(format!(
                "`{status:?}` is not a triage status"
            )));
        }
        if !self.state.status.contains_key(pair_id) {
            return Err(Error::UnknownPair(pair_id.to_string()));
        }
        self.append_event(Event::Triage {
            pair_id: pair_id.to_string(),
            status,
        })
    }

    /// Rewrites every state file from memory. Loading the result and
    /// rewriting again yields identical bytes.
    pub fn write_canonical(&self, root: &Path) -> Result<()> {
        let s = &self.state;
        write_atomic(&root.join(MANIFEST), &to_canonical_json(&s.manifest))?;
        for (id, text) in &s.clean_texts {
            write_atomic(&root.join("corpora").join(format!("{id}.clean.txt")), text)?;
        }
        for (id, corpus) in &s.corpora {
            write_atomic(
                &root.join("corpora").join(format!("{id}.segments.jsonl")),
                &to_jsonl(&corpus.segments),
            )?;
        }
        for (name, pairs) in &s.scope_pairs {
            write_atomic(
                &root.join("pairs").join(format!("{name}.jsonl")),
                &to_jsonl(pairs),
            )?;
            write_atomic(
                &root.join("pairs").join(format!("{name}.summary.json")),
                &to_canonical_json(&s.summaries[name]),
            )?;
        }
        if !s.gold.is_empty() {
            write_atomic(&root.join(GOLD), &to_jsonl(&s.gold))?;
        }
        if !s.seed_examples.is_empty() {
            write_atomic(&root.join(SEED), &to_jsonl(&s.seed_examples))?;
        }
        for file in [ANNOTATIONS, EVENTS] {
            write_atomic(
                &root.join(file),
                &to_jsonl(s.log.iter().filter(|e| e.file() == file)),
            )?;
        }
        fs::create_dir_all(root.join("phases")).map_err(|e| Error::io(root.join("phases"), e))?;
        Ok(())
    }
}

pub fn digest(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Relative paths and contents of every regular file under `root`, sorted.
pub fn snapshot_files(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else if path.file_name().is_some_and(|n| n != LOCK) {
                let rel = path
                    .strip_prefix(base)
                    .expect("walk stays under base")
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, fs::read(&path).map_err(|e| Error::io(&path, e))?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

/// Ids of pairs that exist in the project, for quick membership tests.
pub fn pair_ids(state: &ProjectState) -> BTreeSet<&str> {
    state.status.keys().map(String::as_str).collect()
}
