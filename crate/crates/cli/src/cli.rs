use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use contraspec_core::classifier::{BackendEndpoint, LabeledExample};
use contraspec_core::corpus::CorpusProfile;
use contraspec_core::learner::{self, PhaseOutcome, PhaseReport};
use contraspec_core::pairing::{
    Band, PairScope, DEFAULT_MAX_PATTERN_COUNT, DEFAULT_PSI_MAX, PSI_MIN_4G,
};
use contraspec_core::store::{
    read_jsonl, to_jsonl, GoldLabel, MemberDescriptor, Project, ProjectManifest, ScopeConfig,
};
use contraspec_core::synthharness::{self, GroundTruth, PlantSpec, SyntheticSetup};
use contraspec_core::taxonomy::ConsistencyVerdict;
use contraspec_core::Error;

use crate::actions::{self, ResultFilter, TriageStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_AWAITING: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "contraspec",
    version,
    about = "Find conflicting statements across protocol specifications"
)]
pub struct Cli {
    /// Project directory.
    #[arg(short = 'C', long = "project", global = true, default_value = ".")]
    pub project: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create an empty project.
    Init(InitArgs),
    /// Add a specification document as a corpus.
    Ingest {
        corpus_id: String,
        file: PathBuf,
        /// Top-level sections to keep, e.g. `4-8` or `4,5,9`.
        #[arg(long)]
        sections: Option<String>,
        #[arg(long)]
        min_tokens: Option<usize>,
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// Split every ingested corpus into segments.
    Segment,
    /// Build candidate pairs for a scope.
    Pair {
        scope: String,
        #[arg(long, default_value_t = PSI_MIN_4G)]
        psi_min: f64,
        #[arg(long, default_value_t = DEFAULT_PSI_MAX)]
        psi_max: f64,
        /// Corpora in the scope; all ingested corpora by default.
        #[arg(long, value_delimiter = ',')]
        corpora: Vec<String>,
        /// Keep every pair sharing a boilerplate pattern.
        #[arg(long)]
        keep_boilerplate: bool,
    },
    /// Run, advance or inspect active-learning phases.
    #[command(subcommand)]
    Phase(PhaseCommand),
    /// Re-run the latest models over every candidate pair (JSON lines).
    Predict,
    /// Print a phase report.
    Report {
        #[arg(long)]
        phase: Option<u32>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Write decisions of the latest phase as JSON lines.
    Export {
        #[arg(long)]
        verdict: Option<String>,
        #[arg(long)]
        min_confidence: Option<f64>,
    },
    /// Record the manual review of a flagged pair.
    Triage { pair_id: String, status: String },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Annotate a sampled pair of the current phase with a case 1..7.
    Annotate {
        pair_id: String,
        case: u8,
        #[arg(long, default_value = "cli")]
        annotator: String,
    },
    /// Generate a synthetic corpus with planted conflicts into an empty project.
    Synth(SynthArgs),
    /// Answer the current queue from the project's ground_truth.jsonl.
    OracleAnnotate,
    /// Load held-out gold labels (JSON lines of {pair_id, case}).
    Gold { file: PathBuf },
    /// Load seed training examples (JSON lines).
    Seed { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum PhaseCommand {
    /// Run phase n: train, sample a queue, or resume after annotation.
    Run { n: u32 },
    /// Advance as far as possible without human input.
    Advance,
    /// Show the phase state and pending annotations.
    Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub project_id: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Native baseline members.
    #[arg(long, default_value_t = 3)]
    pub members: usize,
    /// Remote members as `model_id=url`.
    #[arg(long = "backend")]
    pub backends: Vec<String>,
    #[arg(long)]
    pub phases: Option<u32>,
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub twins: Option<usize>,
    #[arg(long)]
    pub fillers: Option<usize>,
    #[arg(long)]
    pub gold_neutral: Option<usize>,
    /// Seed examples per class as `entailment,contradiction,neutral`.
    #[arg(long, value_delimiter = ',')]
    pub seed_per_class: Vec<usize>,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Usage(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

enum Done {
    Ok,
    Awaiting { phase: u32, pending: usize },
}

type Outcome = Result<Done, Failure>;

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let stream: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(stream, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = execute(cli, out);
    let _ = out.flush();
    match result {
        Ok(Done::Ok) => EXIT_OK,
        Ok(Done::Awaiting { phase, pending })
        | Err(Failure::Core(Error::AnnotationIncomplete { phase, pending })) => {
            let _ = writeln!(out, "phase {phase} awaiting annotation: {pending} pending");
            EXIT_AWAITING
        }
        Err(Failure::Core(e)) => {
            let _ = writeln!(err, "error[{}]: {e}", e.code());
            EXIT_DOMAIN
        }
        Err(Failure::Usage(message)) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_USAGE
        }
        Err(Failure::Io(message)) => {
            let _ = writeln!(err, "error[io]: {message}");
            EXIT_DOMAIN
        }
    }
}

fn parse_sections(spec: &str) -> Result<Vec<u32>, Failure> {
    let bad = || Failure::Usage(format!("cannot read section list `{spec}`"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (
                    a.trim().parse().map_err(|_| bad())?,
                    b.trim().parse().map_err(|_| bad())?,
                );
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Outcome {
    let root = cli.project;
    match cli.command {
        Command::Init(args) => init(&root, args, out),
        Command::Ingest {
            corpus_id,
            file,
            sections,
            min_tokens,
            max_tokens,
        } => {
            let mut profile = CorpusProfile::new(&corpus_id);
            if let Some(s) = sections {
                profile = profile.with_sections(parse_sections(&s)?);
            }
            let (min, max) = (
                min_tokens.unwrap_or(profile.min_segment_tokens),
                max_tokens.unwrap_or(profile.max_segment_tokens),
            );
            profile = profile.with_token_bounds(min, max);
            let text = read_text(&file)?;
            let mut project = Project::open(&root)?;
            project.ingest(profile, &text)?;
            writeln!(out, "ingested `{corpus_id}` from {}", file.display())?;
            Ok(Done::Ok)
        }
        Command::Segment => {
            let mut project = Project::open(&root)?;
            for (corpus, count) in project.segment_all()? {
                writeln!(out, "{corpus}\t{count} segments")?;
            }
            Ok(Done::Ok)
        }
        Command::Pair {
            scope,
            psi_min,
            psi_max,
            corpora,
            keep_boilerplate,
        } => {
            let band = Band::new(psi_min, psi_max)?;
            let mut project = Project::open(&root)?;
            let ids: Vec<String> = if corpora.is_empty() {
                project
                    .manifest()
                    .corpora
                    .iter()
                    .map(|c| c.corpus_id.clone())
                    .collect()
            } else {
                corpora
            };
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let summary = project.pair(ScopeConfig {
                scope: PairScope::all_unions(&scope, &refs),
                band,
                max_pattern_count: (!keep_boilerplate).then_some(DEFAULT_MAX_PATTERN_COUNT),
            })?;
            writeln!(out, "scope            {scope}")?;
            writeln!(
                out,
                "band             [{}, {}]",
                summary.band[0], summary.band[1]
            )?;
            writeln!(out, "segments         {}", summary.segments)?;
            writeln!(out, "all_possible     {}", summary.all_possible_count)?;
            writeln!(out, "distinct_pairs   {}", summary.distinct_pairs)?;
            writeln!(out, "survivors        {}", summary.survivors)?;
            match summary.reduction_factor {
                Some(r) => writeln!(out, "reduction_factor {r:.1}")?,
                None => writeln!(out, "reduction_factor n/a")?,
            }
            Ok(Done::Ok)
        }
        Command::Phase(PhaseCommand::Run { n }) => {
            let mut project = Project::open(&root)?;
            match learner::run_phase(&mut project, n)? {
                PhaseOutcome::Completed { report } => {
                    write_report_text(out, &report)?;
                    Ok(Done::Ok)
                }
                PhaseOutcome::AwaitingAnnotation { phase, pending } => {
                    Ok(Done::Awaiting { phase, pending })
                }
            }
        }
        Command::Phase(PhaseCommand::Advance) => {
            let mut project = Project::open(&root)?;
            let summary = learner::advance(&mut project)?;
            for report in &summary.completed {
                write_report_text(out, report)?;
            }
            writeln!(out, "state {}", summary.phase_state)?;
            if summary.pending > 0 {
                let phase = project.phase_state().current_phase;
                return Ok(Done::Awaiting {
                    phase,
                    pending: summary.pending,
                });
            }
            Ok(Done::Ok)
        }
        Command::Phase(PhaseCommand::Status) => {
            let project = Project::load(&root)?;
            let summary = actions::project_summary(&project);
            writeln!(out, "state     {}", summary.phase_label)?;
            writeln!(out, "phases    {}", summary.phases)?;
            writeln!(out, "completed {:?}", summary.completed_phases)?;
            writeln!(out, "pending   {}", summary.pending)?;
            Ok(Done::Ok)
        }
        Command::Predict => {
            let project = Project::load(&root)?;
            write!(out, "{}", to_jsonl(learner::predict_latest(&project)?))?;
            Ok(Done::Ok)
        }
        Command::Report { phase, format } => {
            let project = Project::load(&root)?;
            let phase = match phase {
                Some(p) => p,
                None => learner::latest_completed_phase(project.state())
                    .ok_or_else(|| Error::InvalidPhase("no phase has completed yet".into()))?,
            };
            if !project.state().snapshots.contains_key(&phase) {
                return Err(Error::InvalidPhase(format!("phase {phase} has not completed")).into());
            }
            match format {
                // the stored file, unchanged
                Format::Json => out.write_all(
                    read_text(&project.phase_dir(phase).join("report.json"))?.as_bytes(),
                )?,
                Format::Text => write_report_text(out, &learner::load_report(&project, phase)?)?,
            }
            Ok(Done::Ok)
        }
        Command::Export {
            verdict,
            min_confidence,
        } => {
            let verdict = verdict
                .as_deref()
                .map(str::parse::<ConsistencyVerdict>)
                .transpose()
                .map_err(Failure::Usage)?;
            let project = Project::load(&root)?;
            write!(
                out,
                "{}",
                to_jsonl(actions::results(
                    &project,
                    &ResultFilter {
                        verdict,
                        min_confidence
                    }
                )?)
            )?;
            Ok(Done::Ok)
        }
        Command::Triage { pair_id, status } => {
            let status = TriageStatus::parse(&status).ok_or_else(|| {
                Failure::Usage(format!(
                    "status must be confirmed or context_fp, got `{status}`"
                ))
            })?;
            let mut project = Project::open(&root)?;
            let ack = actions::triage(&mut project, &pair_id, status)?;
            writeln!(
                out,
                "{pair_id}\t{}",
                if ack.changed { "recorded" } else { "unchanged" }
            )?;
            Ok(Done::Ok)
        }
        Command::Serve { port, host } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|_| Failure::Usage(format!("bad address {host}:{port}")))?;
            let project = Project::open(&root)?;
            writeln!(out, "serving on http://{addr}")?;
            out.flush()?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime
                .block_on(crate::server::serve(project, addr))
                .map_err(|e| match e.kind() {
                    std::io::ErrorKind::AddrInUse => Failure::Io(format!("port {port} is in use")),
                    _ => Failure::Io(e.to_string()),
                })?;
            Ok(Done::Ok)
        }
        Command::Annotate {
            pair_id,
            case,
            annotator,
        } => {
            let mut project = Project::open(&root)?;
            let ack = actions::annotate(&mut project, &pair_id, case, &annotator)?;
            writeln!(
                out,
                "{}\t{}\t{}\t{} pending",
                ack.pair_id,
                ack.nli,
                ack.verdict.as_str(),
                ack.pending
            )?;
            Ok(Done::Ok)
        }
        Command::Synth(args) => {
            let mut spec = PlantSpec::default().with_seed(args.seed);
            spec.n_twins = args.twins.unwrap_or(spec.n_twins);
            spec.n_fillers = args.fillers.unwrap_or(spec.n_fillers);
            let mut setup = SyntheticSetup::default();
            setup.gold_neutral = args.gold_neutral.unwrap_or(setup.gold_neutral);
            match args.seed_per_class[..] {
                [] => {}
                [e, c, n] => setup.seed_per_class = [e, c, n],
                _ => return Err(Failure::Usage("--seed-per-class takes three counts".into())),
            }
            let mut project = Project::open(&root)?;
            if !project.manifest().corpora.is_empty() {
                return Err(
                    Error::InvalidConfig("synth needs a project without corpora".into()).into(),
                );
            }
            let made = synthharness::setup_project(&mut project, &spec, &setup)?;
            writeln!(out, "planted {} pairs", made.truth.planted.len())?;
            writeln!(out, "gold    {} pairs", made.gold.len())?;
            writeln!(out, "seed    {} examples", made.seed_examples)?;
            Ok(Done::Ok)
        }
        Command::OracleAnnotate => {
            let mut project = Project::open(&root)?;
            let truth = GroundTruth::read(&project.root().join("ground_truth.jsonl"))?;
            let phase = project.phase_state().current_phase;
            let n = synthharness::oracle_annotate(&mut project, phase, &truth)?;
            writeln!(out, "annotated {n} pairs of phase {phase}")?;
            Ok(Done::Ok)
        }
        Command::Gold { file } => {
            let gold: Vec<GoldLabel> = read_jsonl(&file)?;
            let mut project = Project::open(&root)?;
            let n = gold.len();
            project.set_gold(gold)?;
            writeln!(out, "{n} gold labels")?;
            Ok(Done::Ok)
        }
        Command::Seed { file } => {
            let examples: Vec<LabeledExample> = read_jsonl(&file)?;
            let mut project = Project::open(&root)?;
            let n = examples.len();
            project.set_seed_examples(examples)?;
            writeln!(out, "{n} seed examples")?;
            Ok(Done::Ok)
        }
    }
}

fn init(root: &Path, args: InitArgs, out: &mut dyn Write) -> Outcome {
    let id = args.project_id.unwrap_or_else(|| {
        root.file_name()
            .and_then(|n| n.to_str())
            .filter(|n| !n.is_empty() && *n != ".")
            .unwrap_or("project")
            .to_string()
    });
    let mut manifest = ProjectManifest::new(id, chrono::Utc::now());
    manifest.ensemble = MemberDescriptor::natives(args.members, args.seed);
    if let Some(epochs) = args.epochs {
        for m in &mut manifest.ensemble {
            if let MemberDescriptor::Native { training, .. } = m {
                training.epochs = epochs;
            }
        }
    }
    for spec in &args.backends {
        let (model_id, url) = spec.split_once('=').ok_or_else(|| {
            Failure::Usage(format!("--backend expects model_id=url, got `{spec}`"))
        })?;
        manifest.ensemble.push(MemberDescriptor::Backend {
            endpoint: BackendEndpoint::new(url, model_id),
        });
    }
    if manifest.ensemble.is_empty() {
        return Err(Failure::Usage(
            "the ensemble needs at least one member".into(),
        ));
    }
    let learner = &mut manifest.learner;
    learner.seed = args.seed;
    learner.phases = args.phases.unwrap_or(learner.phases);
    learner.sample_size = args.sample_size.unwrap_or(learner.sample_size);
    learner.confidence_threshold = args
        .confidence_threshold
        .unwrap_or(learner.confidence_threshold);
    Project::init(root, manifest)?;
    writeln!(out, "initialised {}", root.display())?;
    Ok(Done::Ok)
}

fn write_report_text(out: &mut dyn Write, r: &PhaseReport) -> std::io::Result<()> {
    writeln!(out, "phase {}", r.phase_index)?;
    writeln!(
        out,
        "  train {} human, {} synthetic, {} seed",
        r.train_size, r.synthetic_size, r.seed_size
    )?;
    writeln!(
        out,
        "  predicted {} pairs, evaluated on {}",
        r.predicted_pairs, r.eval_size
    )?;
    for (model, m) in &r.metrics_per_model {
        writeln!(
            out,
            "  {model:<14} macro_f1 {:.4}  accuracy {:.4}",
            m.macro_f1, m.accuracy
        )?;
    }
    if let Some(m) = &r.metrics_ensemble {
        writeln!(
            out,
            "  {:<14} macro_f1 {:.4}  accuracy {:.4}",
            "ensemble", m.macro_f1, m.accuracy
        )?;
    }
    if let Some(d) = &r.detection {
        writeln!(
            out,
            "  detection at {}: {} flagged, precision {:.3}, recall {:.3}",
            d.threshold, d.flagged, d.precision, d.recall
        )?;
    }
    Ok(())
}
