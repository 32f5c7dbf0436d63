//! Synthetic specification corpora with planted twin directives, plus an
//! oracle annotator that answers from the generator's ground truth.
//!
//! Each generated item (one half of a twin, or a filler) sits in its own
//! subsection and therefore becomes exactly one segment. Contradictory twins
//! share the precondition and differ in the action: another target state, a
//! negated step, or an omitted step. Consistent twins are paraphrases.
//! Fillers come in small clusters that differ in one slot, so they pair up
//! inside the similarity band as unrelated (case 3) candidates.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::mix_seed;
use crate::classifier::{LabeledExample, Origin};
use crate::corpus::{Corpus, CorpusProfile, Segment};
use crate::error::{Error, Result};
use crate::pairing::{
    pair_scope, Band, PairScope, PairStatus, ScopeSpace, DEFAULT_MAX_PATTERN_COUNT,
};
use crate::store::{to_jsonl, GoldLabel, Project, ScopeConfig};
use crate::taxonomy::CaseLabel;

pub const NAS_CORPUS: &str = "nas";
pub const SEC_CORPUS: &str = "sec";
pub const SCOPE: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    /// Top-level sections per document.
    pub n_sections: usize,
    pub n_twins: usize,
    /// Fraction of twins planted as contradictions.
    pub plant_rate: f64,
    /// Fraction of twins planted as consistent paraphrases.
    pub decoy_rate: f64,
    pub n_fillers: usize,
    pub cluster_size: usize,
    pub seed: u64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            n_sections: 5,
            n_twins: 80,
            plant_rate: 0.5,
            decoy_rate: 0.5,
            n_fillers: 400,
            cluster_size: 5,
            seed: 0,
        }
    }
}

impl PlantSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.plant_rate)
            || !unit(self.decoy_rate)
            || self.n_sections == 0
            || self.cluster_size < 2
        {
            return Err(Error::InvalidConfig(format!(
                "invalid plant spec: {self:?}"
            )));
        }
        if self.n_twins > CODES {
            return Err(Error::InvalidConfig(format!(
                "at most {CODES} twins are supported"
            )));
        }
        Ok(())
    }

    fn planted_counts(&self) -> (usize, usize) {
        let contradictions = (self.n_twins as f64 * self.plant_rate).round() as usize;
        let consistent = ((self.n_twins as f64 * self.decoy_rate).round() as usize)
            .min(self.n_twins - contradictions);
        (contradictions, consistent)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SectionRef {
    pub corpus_id: String,
    pub section_path: String,
}

impl SectionRef {
    pub fn of(segment: &Segment) -> Self {
        Self {
            corpus_id: segment.corpus_id().to_string(),
            section_path: segment.section_path.clone(),
        }
    }
}

/// A planted pair; `case` reads with `first` as the premise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub first: SectionRef,
    pub second: SectionRef,
    pub case: CaseLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDocument {
    pub corpus_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub planted: Vec<PlantedPair>,
    index: HashMap<(SectionRef, SectionRef), CaseLabel>,
}

/// Case seen from the other side of the pair.
fn reversed(case: CaseLabel) -> CaseLabel {
    let flipped = match case.get() {
        4 => 5,
        5 => 4,
        6 => 7,
        7 => 6,
        c => c,
    };
    CaseLabel::new(flipped).expect("flipped case stays in range")
}

impl GroundTruth {
    pub fn new(planted: Vec<PlantedPair>) -> Self {
        let mut index = HashMap::new();
        for p in &planted {
            index.insert((p.first.clone(), p.second.clone()), p.case);
            index.insert((p.second.clone(), p.first.clone()), reversed(p.case));
        }
        Self { planted, index }
    }

    /// Planted case of the ordered pair, if it was planted.
    pub fn lookup(&self, premise: &SectionRef, hypothesis: &SectionRef) -> Option<CaseLabel> {
        self.index
            .get(&(premise.clone(), hypothesis.clone()))
            .copied()
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.planted)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let planted = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::json("ground truth", e)))
            .collect::<Result<Vec<PlantedPair>>>()?;
        Ok(Self::new(planted))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// The scripted annotator: planted case, or 3 for anything else.
pub fn oracle_annotator(premise: &Segment, hypothesis: &Segment, truth: &GroundTruth) -> CaseLabel {
    truth
        .lookup(&SectionRef::of(premise), &SectionRef::of(hypothesis))
        .unwrap_or(CaseLabel::new(3).expect("3 is valid"))
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

const CODES: usize = 199;

const MESSAGES: &[&str] = &[
    "ATTACH REJECT",
    "TRACKING AREA UPDATE REJECT",
    "SERVICE REJECT",
    "DETACH REQUEST",
    "AUTHENTICATION REJECT",
    "ROUTING AREA UPDATE REJECT",
    "EXTENDED SERVICE REJECT",
    "IDENTITY REQUEST",
    "GUTI REALLOCATION COMMAND",
    "EMM INFORMATION",
];

const STATES: &[&str] = &[
    "EMM-DEREGISTERED",
    "EMM-REGISTERED",
    "EMM-DEREGISTERED.PLMN-SEARCH",
    "EMM-DEREGISTERED.LIMITED-SERVICE",
    "EMM-DEREGISTERED.ATTEMPTING-TO-ATTACH",
    "EMM-DEREGISTERED.NO-IMSI",
    "EMM-REGISTERED.NORMAL-SERVICE",
    "EMM-REGISTERED.ATTEMPTING-TO-UPDATE",
    "EMM-REGISTERED.LIMITED-SERVICE",
    "EMM-REGISTERED.UPDATE-NEEDED",
    "EMM-TRACKING-AREA-UPDATING-INITIATED",
    "EMM-SERVICE-REQUEST-INITIATED",
    "EMM-COMMON-PROCEDURE-INITIATED",
    "EMM-DEREGISTERED-INITIATED",
];

/// Action phrases and a paraphrase of each.
const ACTIONS: &[(&str, &str)] = &[
    ("delete the stored GUTI", "remove the stored GUTI"),
    ("delete the TAI list", "erase the TAI list"),
    (
        "reset the attach attempt counter",
        "clear the attach attempt counter",
    ),
    (
        "delete the list of equivalent PLMNs",
        "remove the list of equivalent PLMNs",
    ),
    ("consider the USIM as invalid", "regard the USIM as invalid"),
    (
        "start the PLMN selection process",
        "initiate the PLMN selection process",
    ),
    (
        "abort the ongoing procedure",
        "terminate the ongoing procedure",
    ),
    (
        "release the NAS signalling connection",
        "free the NAS signalling connection",
    ),
    (
        "discard the current security context",
        "drop the current security context",
    ),
    ("store the received KSI", "save the received KSI"),
    (
        "set the update status to NOT UPDATED",
        "change the update status to NOT UPDATED",
    ),
    (
        "delete the last visited registered TAI",
        "remove the last visited registered TAI",
    ),
    (
        "disable the E-UTRA capability",
        "deactivate the E-UTRA capability",
    ),
    (
        "stop the periodic update timer",
        "halt the periodic update timer",
    ),
    (
        "indicate the failure to upper layers",
        "report the failure to upper layers",
    ),
];

const ENTITIES: &[&str] = &[
    "AMF",
    "SMF",
    "MME",
    "SEAF",
    "AUSF",
    "UDM",
    "eNB",
    "gNB",
    "relay node",
    "home network",
];
const ELEMENTS: &[&str] = &[
    "NSSAI",
    "SUCI",
    "nonce",
    "MAC",
    "sequence number",
    "ABBA parameter",
    "anchor key",
    "replay counter",
    "freshness parameter",
    "session identifier",
    "slice differentiator",
    "access category",
    "backoff value",
    "paging identity",
    "service area list",
    "DRX parameter",
    "eDRX parameter",
    "ciphering indicator",
    "integrity algorithm",
    "header type",
    "payload container",
    "truncated identity",
    "hash value",
    "selected algorithm",
    "location report",
    "emergency number list",
    "protocol discriminator",
    "allowed area",
    "rejected slice",
    "network name",
];
const PEER_MESSAGES: &[&str] = &[
    "REGISTRATION REQUEST",
    "SECURITY MODE COMMAND",
    "AUTHENTICATION RESPONSE",
    "SESSION ESTABLISHMENT",
    "UPLINK TRANSPORT",
    "DOWNLINK TRANSPORT",
    "SERVICE ACCEPT",
    "CONFIGURATION ACKNOWLEDGEMENT",
];
const FEATURES: &[&str] = &[
    "network slicing",
    "edge computing",
    "ciphering",
    "user plane integrity",
    "steering of roaming",
    "multi-access",
    "proximity services",
    "network sharing",
    "positioning",
    "mission critical",
];
const PEERS: &[&str] = &[
    "serving network",
    "visited network",
    "peer entity",
    "target cell",
    "source cell",
    "neighbour node",
    "core network",
    "access network",
];
const CONDITIONS: &[&str] = &[
    "emergency",
    "roaming",
    "handover",
    "idle mode",
    "overload",
    "fallback",
    "restriction",
    "priority",
];
const SCOPES: &[&str] = &[
    "subscription",
    "session",
    "slice",
    "tracking area",
    "access type",
    "data network",
    "registration area",
    "cell group",
];
const MODES: &[&str] = &[
    "initial",
    "periodic",
    "mobility",
    "recovery",
    "inter-system",
    "standalone",
    "dual connectivity",
    "test",
];
const KEYS: &[&str] = &[
    "intermediate key",
    "session key",
    "derived key",
    "integrity key",
    "ciphering key",
    "routing key",
    "transport key",
    "master key",
];

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

// ---------------------------------------------------------------------------
// Directives and twins
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Directive {
    message: &'static str,
    code: usize,
    pre_state: &'static str,
    actions: [usize; 3],
    post_state: usize,
}

impl Directive {
    fn draw(rng: &mut ChaCha8Rng, code: usize) -> Self {
        let mut idx: Vec<usize> = (0..ACTIONS.len()).collect();
        idx.shuffle(rng);
        Self {
            message: pick(rng, MESSAGES),
            code,
            pre_state: pick(rng, STATES),
            actions: [idx[0], idx[1], idx[2]],
            post_state: rng.gen_range(0..STATES.len()),
        }
    }

    fn opening(&self, paraphrase: bool) -> String {
        if paraphrase {
            format!(
                "Upon receipt of the {} message with cause value #{} while the UE is in state {}",
                self.message, self.code, self.pre_state
            )
        } else {
            format!(
                "If the {} message is received with cause value #{} while the UE is in state {}",
                self.message, self.code, self.pre_state
            )
        }
    }

    fn sentence(&self, opening_paraphrase: bool, steps: &[String], post_state: usize) -> String {
        let (last, rest) = steps.split_last().expect("at least one step");
        let list = if rest.is_empty() {
            last.clone()
        } else {
            format!("{}, {last}", rest.join(", "))
        };
        format!(
            "{}, the UE shall {list} and enter state {}.",
            self.opening(opening_paraphrase),
            STATES[post_state]
        )
    }

    fn action(&self, i: usize, paraphrase: bool) -> String {
        let (plain, alt) = ACTIONS[self.actions[i]];
        (if paraphrase { alt } else { plain }).to_string()
    }

    fn base(&self) -> String {
        self.sentence(
            false,
            &[self.action(0, false), self.action(1, false)],
            self.post_state,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TwinKind {
    Contradiction,
    Consistent,
}

/// Builds the two halves of a twin and the case read first→second.
fn realize_twin(
    d: &Directive,
    kind: TwinKind,
    rng: &mut ChaCha8Rng,
) -> (String, String, CaseLabel) {
    let case = |c| CaseLabel::new(c).expect("valid case");
    match kind {
        TwinKind::Contradiction => match rng.gen_range(0..3) {
            0 => {
                let mut other = rng.gen_range(0..STATES.len() - 1);
                if other >= d.post_state {
                    other += 1;
                }
                let b = d.sentence(false, &[d.action(0, false), d.action(1, false)], other);
                (d.base(), b, case(2))
            }
            1 => {
                let negated = format!(
                    "not {} but shall {}",
                    d.action(0, false),
                    d.action(1, false)
                );
                let b = d.sentence(false, &[negated], d.post_state);
                (d.base(), b, case(2))
            }
            _ => {
                let detailed = d.sentence(
                    false,
                    &[d.action(0, false), d.action(2, false), d.action(1, false)],
                    d.post_state,
                );
                if rng.gen_bool(0.5) {
                    (detailed, d.base(), case(6))
                } else {
                    (d.base(), detailed, case(7))
                }
            }
        },
        TwinKind::Consistent => match rng.gen_range(0..3) {
            0 | 1 => {
                let b = d.sentence(true, &[d.action(0, true), d.action(1, false)], d.post_state);
                (d.base(), b, case(1))
            }
            _ => {
                let b = d.sentence(
                    true,
                    &[d.action(1, false), d.action(0, false)],
                    d.post_state,
                );
                if rng.gen_bool(0.5) {
                    (d.base(), b, case(4))
                } else {
                    (b, d.base(), case(5))
                }
            }
        },
    }
}

// ---------------------------------------------------------------------------
// Fillers
// ---------------------------------------------------------------------------

struct FillerCluster {
    template: usize,
    slots: [&'static str; 6],
}

impl FillerCluster {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let scopes = if rng.gen_bool(0.5) { SCOPES } else { MODES };
        Self {
            template: rng.gen_range(0..3),
            slots: [
                pick(rng, ENTITIES),
                pick(rng, PEER_MESSAGES),
                pick(rng, FEATURES),
                pick(rng, PEERS),
                pick(rng, CONDITIONS),
                pick(rng, scopes),
            ],
        }
    }

    fn realize(&self, element: &str, key: &str) -> String {
        let [entity, message, feature, peer, condition, scope] = self.slots;
        match self.template {
            0 => format!(
                "The {entity} shall include the {element} in the {message} message when the {feature} feature is supported by the {peer} and the {condition} indication is set."
            ),
            1 => format!(
                "The {entity} should maintain the {element} for each {scope} and shall provide it to the {peer} upon request during {condition} operation with {feature}."
            ),
            _ => format!(
                "A {entity} that supports {feature} may use the {element} to derive the {key} for the {peer} when {condition} handling is activated for the {scope}."
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct Item {
    corpus: &'static str,
    text: String,
}

struct Twin {
    directive: Directive,
    kind: TwinKind,
    first: usize,
    second: usize,
    case: CaseLabel,
}

fn layout(
    items: &[Item],
    n_sections: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<SyntheticDocument>, Vec<SectionRef>) {
    let mut refs = vec![None; items.len()];
    let mut documents = Vec::new();
    for (corpus, title) in [
        (NAS_CORPUS, "Mobility management"),
        (SEC_CORPUS, "Security procedures"),
    ] {
        let mut members: Vec<usize> = (0..items.len())
            .filter(|&i| items[i].corpus == corpus)
            .collect();
        members.shuffle(rng);
        let per_section = members.len().div_ceil(n_sections).max(1);
        let mut text = String::new();
        for (s, chunk) in members.chunks(per_section).enumerate() {
            let top = s + 4;
            text.push_str(&format!("{top} {title} part {}\n\n", s + 1));
            for (j, &i) in chunk.iter().enumerate() {
                let path = format!("{top}.{}", j + 1);
                text.push_str(&format!(
                    "{path} Clause {} of part {}\n\n{}\n\n",
                    j + 1,
                    s + 1,
                    items[i].text
                ));
                refs[i] = Some(SectionRef {
                    corpus_id: corpus.to_string(),
                    section_path: path,
                });
            }
        }
        documents.push(SyntheticDocument {
            corpus_id: corpus.to_string(),
            text,
        });
    }
    (
        documents,
        refs.into_iter()
            .map(|r| r.expect("every item placed"))
            .collect(),
    )
}

/// Builds the corpora of `documents` and returns ψ for each planted pair.
fn planted_psi(documents: &[SyntheticDocument], planted: &[PlantedPair]) -> Result<Vec<f64>> {
    let corpora = build_corpora(documents)?;
    let space = ScopeSpace::build(
        &PairScope::all_unions(SCOPE, &[NAS_CORPUS, SEC_CORPUS]),
        &corpora,
    )?;
    let by_ref: HashMap<SectionRef, &str> = space
        .segments()
        .iter()
        .map(|s| (SectionRef::of(s), s.segment_id.as_str()))
        .collect();
    planted
        .iter()
        .map(|p| {
            let (a, b) = (by_ref.get(&p.first), by_ref.get(&p.second));
            match (a, b) {
                (Some(a), Some(b)) => Ok(space.psi(a, b).unwrap_or(0.0)),
                _ => Ok(-1.0),
            }
        })
        .collect()
}

/// Segments each generated document under its default profile.
pub fn build_corpora(documents: &[SyntheticDocument]) -> Result<BTreeMap<String, Corpus>> {
    documents
        .iter()
        .map(|d| {
            Ok((
                d.corpus_id.clone(),
                Corpus::build(&d.text, CorpusProfile::new(&d.corpus_id))?,
            ))
        })
        .collect()
}

const TUNING_ROUNDS: usize = 40;

/// Two documents and the planted ground truth. Twins whose ψ falls outside
/// the default band are redrawn until every twin lands inside it.
pub fn generate_corpus(spec: &PlantSpec) -> Result<(Vec<SyntheticDocument>, GroundTruth)> {
    generate_with_codes(spec, 1)
}

fn generate_with_codes(
    spec: &PlantSpec,
    first_code: usize,
) -> Result<(Vec<SyntheticDocument>, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x5eed));
    let (n_contra, n_consistent) = spec.planted_counts();
    let mut codes: Vec<usize> = (first_code..first_code + CODES).collect();
    codes.shuffle(&mut rng);

    let mut items = Vec::new();
    let mut twins = Vec::new();
    for (t, kind) in std::iter::repeat_n(TwinKind::Contradiction, n_contra)
        .chain(std::iter::repeat_n(TwinKind::Consistent, n_consistent))
        .enumerate()
    {
        let directive = Directive::draw(&mut rng, codes[t]);
        let (a, b, case) = realize_twin(&directive, kind, &mut rng);
        let second_corpus = if rng.gen_bool(0.5) {
            NAS_CORPUS
        } else {
            SEC_CORPUS
        };
        items.push(Item {
            corpus: NAS_CORPUS,
            text: a,
        });
        items.push(Item {
            corpus: second_corpus,
            text: b,
        });
        twins.push(Twin {
            directive,
            kind,
            first: items.len() - 2,
            second: items.len() - 1,
            case,
        });
    }

    let mut remaining = spec.n_fillers;
    while remaining > 0 {
        let cluster = FillerCluster::draw(&mut rng);
        let size = remaining.min(spec.cluster_size);
        let mut elements: Vec<&str> = ELEMENTS.to_vec();
        elements.shuffle(&mut rng);
        for element in elements.into_iter().take(size) {
            let corpus = if rng.gen_bool(0.5) {
                NAS_CORPUS
            } else {
                SEC_CORPUS
            };
            items.push(Item {
                corpus,
                text: cluster.realize(element, pick(&mut rng, KEYS)),
            });
        }
        remaining -= size;
    }

    let layout_seed = rng.gen::<u64>();
    let band = Band::lte_4g();
    for _ in 0..TUNING_ROUNDS {
        let (documents, refs) = layout(
            &items,
            spec.n_sections,
            &mut ChaCha8Rng::seed_from_u64(layout_seed),
        );
        let planted: Vec<PlantedPair> = twins
            .iter()
            .map(|t| PlantedPair {
                first: refs[t.first].clone(),
                second: refs[t.second].clone(),
                case: t.case,
            })
            .collect();
        let psi = planted_psi(&documents, &planted)?;
        let outside: Vec<usize> = (0..twins.len())
            .filter(|&i| !band.contains(psi[i]))
            .collect();
        if outside.is_empty() {
            return Ok((documents, GroundTruth::new(planted)));
        }
        for i in outside {
            let t = &mut twins[i];
            let code = t.directive.code;
            t.directive = Directive::draw(&mut rng, code);
            let (a, b, case) = realize_twin(&t.directive, t.kind, &mut rng);
            items[t.first].text = a;
            items[t.second].text = b;
            t.case = case;
        }
    }
    Err(Error::InvalidConfig(format!(
        "could not place every twin inside the band after {TUNING_ROUNDS} rounds"
    )))
}

// ---------------------------------------------------------------------------
// Project setup
// ---------------------------------------------------------------------------

/// How a synthetic project splits its labelled data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSetup {
    /// Fraction of each planted kind held out as gold.
    pub gold_twin_fraction: f64,
    pub gold_neutral: usize,
    /// Seed examples per class, in [`NliLabel::ALL`] order.
    pub seed_per_class: [usize; 3],
}

impl Default for SyntheticSetup {
    fn default() -> Self {
        Self {
            gold_twin_fraction: 0.5,
            gold_neutral: 100,
            seed_per_class: [40, 40, 80],
        }
    }
}

/// Labelled pair texts from an independent corpus drawn with disjoint cause codes.
pub fn seed_examples(spec: &PlantSpec, per_class: [usize; 3]) -> Result<Vec<LabeledExample>> {
    let seed_spec = PlantSpec {
        seed: mix_seed(spec.seed, 0xa11ce),
        n_twins: (per_class[0] + per_class[1]).clamp(2, CODES),
        plant_rate: per_class[1] as f64 / (per_class[0] + per_class[1]).max(1) as f64,
        decoy_rate: per_class[0] as f64 / (per_class[0] + per_class[1]).max(1) as f64,
        ..spec.clone()
    };
    let (documents, truth) = generate_with_codes(&seed_spec, 1 + CODES)?;
    let corpora = build_corpora(&documents)?;
    let space = ScopeSpace::build(
        &PairScope::all_unions(SCOPE, &[NAS_CORPUS, SEC_CORPUS]),
        &corpora,
    )?;
    let outcome = pair_scope(&space, Band::lte_4g(), Some(DEFAULT_MAX_PATTERN_COUNT))?;

    let mut by_class: [Vec<LabeledExample>; 3] = Default::default();
    for p in outcome
        .pairs
        .iter()
        .filter(|p| p.status == PairStatus::Candidate)
    {
        let (a, b) = (
            space.segment(&p.segment_a).expect("pair segment"),
            space.segment(&p.segment_b).expect("pair segment"),
        );
        let label = oracle_annotator(a, b, &truth).nli();
        by_class[label.index()].push(LabeledExample {
            pair_id: format!("seed:{}", p.pair_id),
            premise: a.text.clone(),
            hypothesis: b.text.clone(),
            label,
            origin: Origin::Seed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x5eed5));
    let mut out = Vec::new();
    for (class, want) in by_class.iter_mut().zip(per_class) {
        class.shuffle(&mut rng);
        out.extend(class.drain(..).take(want));
    }
    out.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProject {
    pub truth: GroundTruth,
    pub gold: Vec<GoldLabel>,
    pub seed_examples: usize,
}

/// Ingests, segments and pairs a generated corpus into `project`, and stores
/// gold labels and seed examples. Writes `ground_truth.jsonl` to the project root.
pub fn setup_project(
    project: &mut Project,
    spec: &PlantSpec,
    setup: &SyntheticSetup,
) -> Result<SyntheticProject> {
    let (documents, truth) = generate_corpus(spec)?;
    for d in &documents {
        project.ingest(CorpusProfile::new(&d.corpus_id), &d.text)?;
    }
    project.segment_all()?;
    project.pair(ScopeConfig {
        scope: PairScope::all_unions(SCOPE, &[NAS_CORPUS, SEC_CORPUS]),
        band: Band::lte_4g(),
        max_pattern_count: Some(DEFAULT_MAX_PATTERN_COUNT),
    })?;
    crate::store::write_atomic(
        &project.root().join("ground_truth.jsonl"),
        &truth.to_jsonl(),
    )?;

    let state = project.state();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x901d));
    let mut planted: [Vec<GoldLabel>; 3] = Default::default();
    let mut neutral = Vec::new();
    for p in state.pairs().filter(|p| p.status == PairStatus::Candidate) {
        let (a, b) = (
            state.segment(&p.segment_a).expect("pair segment"),
            state.segment(&p.segment_b).expect("pair segment"),
        );
        match truth.lookup(&SectionRef::of(a), &SectionRef::of(b)) {
            Some(case) => planted[case.nli().index()].push(GoldLabel {
                pair_id: p.pair_id.clone(),
                case,
            }),
            None => neutral.push(GoldLabel {
                pair_id: p.pair_id,
                case: CaseLabel::new(3).expect("3 is valid"),
            }),
        }
    }
    let mut gold = Vec::new();
    for group in planted.iter_mut() {
        group.shuffle(&mut rng);
        let take = (group.len() as f64 * setup.gold_twin_fraction).round() as usize;
        gold.extend(group.drain(..take));
    }
    neutral.shuffle(&mut rng);
    gold.extend(neutral.into_iter().take(setup.gold_neutral));
    gold.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));

    let seeds = seed_examples(spec, setup.seed_per_class)?;
    let seed_count = seeds.len();
    project.set_gold(gold.clone())?;
    project.set_seed_examples(seeds)?;
    Ok(SyntheticProject {
        truth,
        gold,
        seed_examples: seed_count,
    })
}

/// Answers every pending queue item of `phase` with the oracle. Returns the
/// number of annotations recorded.
pub fn oracle_annotate(project: &mut Project, phase: u32, truth: &GroundTruth) -> Result<usize> {
    let pending: Vec<String> = project
        .state()
        .pending(phase)
        .into_iter()
        .map(str::to_string)
        .collect();
    for pair_id in &pending {
        let state = project.state();
        let pair = state
            .pair(pair_id)
            .ok_or_else(|| Error::UnknownPair(pair_id.clone()))?;
        let seg = |id: &str| {
            state
                .segment(id)
                .ok_or_else(|| Error::DanglingReference(id.to_string()))
        };
        let case = oracle_annotator(seg(&pair.segment_a)?, seg(&pair.segment_b)?, truth);
        project.record_annotation(pair_id, case, "oracle", phase)?;
    }
    Ok(pending.len())
}
