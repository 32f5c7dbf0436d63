//! Pair-space generation and filtration.
//!
//! A scope unions corpus pairs: `(A, A)` pairs segments inside `A` (lower
//! triangle), `(A, B)` takes the full cross product. All corpora of a scope
//! share one vocabulary so that scores are comparable across unions.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{split_sentences, Corpus, Segment};
use crate::error::{Error, Result};
use crate::vectorspace::{cosine, similarity_matrix, SegmentVector, Vocabulary};

pub const DEFAULT_PSI_MAX: f64 = 0.99;
pub const PSI_MIN_4G: f64 = 0.65;
pub const PSI_MIN_5G: f64 = 0.70;
pub const DEFAULT_MAX_PATTERN_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairScope {
    pub name: String,
    pub corpus_pairs: Vec<(String, String)>,
}

impl PairScope {
    /// Scope over every intra- and inter-corpus union of the given corpora.
    pub fn all_unions(name: impl Into<String>, corpus_ids: &[&str]) -> Self {
        let mut corpus_pairs = Vec::new();
        for (i, a) in corpus_ids.iter().enumerate() {
            for b in &corpus_ids[i..] {
                corpus_pairs.push((a.to_string(), b.to_string()));
            }
        }
        Self {
            name: name.into(),
            corpus_pairs,
        }
    }

    /// Distinct corpora in order of first mention.
    pub fn corpus_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for (a, b) in &self.corpus_pairs {
            for id in [a.as_str(), b.as_str()] {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Candidate,
    FilteredOut,
    PendingAnnotation,
    Annotated,
    Predicted,
    TriagedConfirmed,
    TriagedContextFp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoS {
    pub pair_id: String,
    pub segment_a: String,
    pub segment_b: String,
    pub psi: f64,
    pub status: PairStatus,
}

pub fn pair_id(segment_a: &str, segment_b: &str) -> String {
    format!("{segment_a}~{segment_b}")
}

impl PoS {
    /// Builds a candidate with the two segment ids in canonical order.
    pub fn new(x: &str, y: &str, psi: f64) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        Self {
            pair_id: pair_id(a, b),
            segment_a: a.to_string(),
            segment_b: b.to_string(),
            psi,
            status: PairStatus::Candidate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub psi_min: f64,
    pub psi_max: f64,
}

impl Band {
    pub fn new(psi_min: f64, psi_max: f64) -> Result<Self> {
        if !(0.0 <= psi_min && psi_min < psi_max && psi_max <= 1.0) {
            return Err(Error::BadThresholds {
                min: psi_min,
                max: psi_max,
            });
        }
        Ok(Self { psi_min, psi_max })
    }

    pub fn lte_4g() -> Self {
        Self {
            psi_min: PSI_MIN_4G,
            psi_max: DEFAULT_PSI_MAX,
        }
    }

    pub fn nr_5g() -> Self {
        Self {
            psi_min: PSI_MIN_5G,
            psi_max: DEFAULT_PSI_MAX,
        }
    }

    pub fn contains(&self, psi: f64) -> bool {
        self.psi_min <= psi && psi <= self.psi_max
    }
}

/// Union of a scope's segments, vectorized under one shared vocabulary.
pub struct ScopeSpace {
    segments: Vec<Segment>,
    vocabulary: Vocabulary,
    vectors: Vec<SegmentVector>,
    ranges: HashMap<String, std::ops::Range<usize>>,
    unions: Vec<(String, String)>,
}

impl ScopeSpace {
    pub fn build(scope: &PairScope, corpora: &BTreeMap<String, Corpus>) -> Result<Self> {
        let mut segments = Vec::new();
        let mut ranges = HashMap::new();
        for id in scope.corpus_ids() {
            let corpus = corpora
                .get(id)
                .ok_or_else(|| Error::UnknownCorpus(id.to_string()))?;
            let start = segments.len();
            segments.extend(corpus.segments.iter().cloned());
            ranges.insert(id.to_string(), start..segments.len());
        }
        let vocabulary = Vocabulary::build(&segments)?;
        let vectors = segments.iter().map(|s| vocabulary.vectorize(s)).collect();

        let mut unions: Vec<(String, String)> = scope
            .corpus_pairs
            .iter()
            .map(|(a, b)| {
                if a <= b {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                }
            })
            .collect();
        unions.sort();
        unions.dedup();
        Ok(Self {
            segments,
            vocabulary,
            vectors,
            ranges,
            unions,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn vectors(&self) -> &[SegmentVector] {
        &self.vectors
    }

    pub fn segment(&self, segment_id: &str) -> Option<&Segment> {
        self.index_of(segment_id).map(|i| &self.segments[i])
    }

    pub fn index_of(&self, segment_id: &str) -> Option<usize> {
        let corpus = segment_id.rsplit_once(':')?.0;
        let range = self.ranges.get(corpus)?.clone();
        self.segments[range.clone()]
            .binary_search_by(|s| s.segment_id.as_str().cmp(segment_id))
            .ok()
            .map(|i| range.start + i)
    }

    /// Recomputes psi for two stored segments.
    pub fn psi(&self, segment_a: &str, segment_b: &str) -> Option<f64> {
        let a = self.index_of(segment_a)?;
        let b = self.index_of(segment_b)?;
        Some(cosine(&self.vectors[a], &self.vectors[b]))
    }

    /// `(Σ n_c)²` over the scope's segment union: ordered pairs including self-pairs.
    pub fn all_possible_count(&self) -> u64 {
        let n = self.segments.len() as u64;
        n * n
    }

    pub fn distinct_pair_count(&self) -> u64 {
        self.unions
            .iter()
            .map(|(a, b)| {
                let na = self.ranges[a].len() as u64;
                if a == b {
                    na * na.saturating_sub(1) / 2
                } else {
                    na * self.ranges[b].len() as u64
                }
            })
            .sum()
    }

    /// Every unordered pair of the scope exactly once, with its score.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        self.unions
            .iter()
            .flat_map(move |(a, b)| -> Box<dyn Iterator<Item = _> + '_> {
                let ra = self.ranges[a].clone();
                if a == b {
                    let base = ra.start;
                    Box::new(
                        similarity_matrix(&self.vectors[ra])
                            .map(move |(i, j, psi)| (self.id(base + i), self.id(base + j), psi)),
                    )
                } else {
                    let rb = self.ranges[b].clone();
                    Box::new(ra.flat_map(move |i| {
                        rb.clone().map(move |j| {
                            (
                                self.id(i),
                                self.id(j),
                                cosine(&self.vectors[i], &self.vectors[j]),
                            )
                        })
                    }))
                }
            })
    }

    fn id(&self, index: usize) -> &str {
        &self.segments[index].segment_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub segments: u64,
    pub all_possible_count: u64,
    pub distinct_pairs: u64,
    pub band: [f64; 2],
    pub survivors: u64,
    pub reduction_factor: Option<f64>,
}

impl FilterSummary {
    pub fn new(space: &ScopeSpace, band: Band, survivors: usize) -> Self {
        let all = space.all_possible_count();
        Self {
            segments: space.segments.len() as u64,
            all_possible_count: all,
            distinct_pairs: space.distinct_pair_count(),
            band: [band.psi_min, band.psi_max],
            survivors: survivors as u64,
            reduction_factor: reduction_factor(all, survivors as u64),
        }
    }
}

pub fn reduction_factor(all_possible_count: u64, survivors: u64) -> Option<f64> {
    (survivors > 0).then(|| all_possible_count as f64 / survivors as f64)
}

/// Keeps pairs with `psi_min <= psi <= psi_max` as candidates.
pub fn filter_by_similarity<'a, I>(pairs: I, band: Band) -> Result<Vec<PoS>>
where
    I: IntoIterator<Item = (&'a str, &'a str, f64)>,
{
    let band = Band::new(band.psi_min, band.psi_max)?;
    Ok(pairs
        .into_iter()
        .filter(|&(_, _, psi)| band.contains(psi))
        .map(|(a, b, psi)| PoS::new(a, b, psi))
        .collect())
}

/// First sentence, lowercased, digits masked.
pub fn fingerprint(text: &str) -> String {
    let first = split_sentences(text).into_iter().next().unwrap_or_default();
    first
        .iter()
        .map(|t| {
            t.to_lowercase()
                .chars()
                .map(|c| if c.is_ascii_digit() { '0' } else { c })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Marks candidates beyond the first `max_pattern_count` sharing one
/// unordered fingerprint pair as filtered out. `None` disables the filter.
/// Returns the number of pairs filtered.
pub fn filter_boilerplate<'t, F>(
    pos_list: &mut [PoS],
    text_of: F,
    max_pattern_count: Option<usize>,
) -> usize
where
    F: Fn(&str) -> Option<&'t str>,
{
    let Some(limit) = max_pattern_count else {
        return 0;
    };
    let mut cache: HashMap<String, String> = HashMap::new();
    let mut fp = |id: &str| -> String {
        cache
            .entry(id.to_string())
            .or_insert_with(|| fingerprint(text_of(id).unwrap_or("")))
            .clone()
    };
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let mut removed = 0;
    for pos in pos_list
        .iter_mut()
        .filter(|p| p.status == PairStatus::Candidate)
    {
        let (x, y) = (fp(&pos.segment_a), fp(&pos.segment_b));
        let key = if x <= y { (x, y) } else { (y, x) };
        let count = seen.entry(key).or_default();
        *count += 1;
        if *count > limit {
            pos.status = PairStatus::FilteredOut;
            removed += 1;
        }
    }
    removed
}

/// Result of pairing one scope: all stored pairs (candidates and
/// boilerplate-filtered) plus the summary.
pub struct PairingOutcome {
    pub pairs: Vec<PoS>,
    pub summary: FilterSummary,
}

pub fn pair_scope(
    space: &ScopeSpace,
    band: Band,
    max_pattern_count: Option<usize>,
) -> Result<PairingOutcome> {
    let mut pairs = filter_by_similarity(space.pairs(), band)?;
    filter_boilerplate(
        &mut pairs,
        |id| space.segment(id).map(|s| s.text.as_str()),
        max_pattern_count,
    );
    pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let survivors = pairs
        .iter()
        .filter(|p| p.status == PairStatus::Candidate)
        .count();
    let summary = FilterSummary::new(space, band, survivors);
    Ok(PairingOutcome { pairs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{segment_id, CorpusProfile};
    use std::collections::BTreeSet;

    fn corpus(id: &str, texts: &[&str]) -> Corpus {
        Corpus {
            profile: CorpusProfile::new(id),
            segments: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Segment {
                    segment_id: segment_id(id, i),
                    section_path: format!("4.{i}"),
                    paragraph_index: 0,
                    text: t.to_string(),
                    token_count: t.split_whitespace().count(),
                })
                .collect(),
            source_digest: String::new(),
        }
    }

    #[test]
    fn counts_match_reported_totals() {
        let sq = |n: u64| n * n;
        assert_eq!(sq(2599), 6_754_801);
        assert_eq!(sq(3529), 12_453_841);
        assert_eq!(reduction_factor(6_754_801, 1881).unwrap().round(), 3591.0);
        assert_eq!(reduction_factor(12_453_841, 2541).unwrap().round(), 4901.0);
        assert_eq!(reduction_factor(10, 0), None);
    }

    #[test]
    fn two_corpora_enumeration() {
        let mut corpora = BTreeMap::new();
        corpora.insert("a".to_string(), corpus("a", &["x one", "y two", "z three"]));
        corpora.insert("b".to_string(), corpus("b", &["u four", "v five"]));
        let scope = PairScope::all_unions("s", &["a", "b"]);
        let space = ScopeSpace::build(&scope, &corpora).unwrap();
        let got: BTreeSet<(String, String)> = space
            .pairs()
            .map(|(x, y, _)| {
                if x < y {
                    (x.into(), y.into())
                } else {
                    (y.into(), x.into())
                }
            })
            .collect();
        let ids: Vec<String> = space
            .segments()
            .iter()
            .map(|s| s.segment_id.clone())
            .collect();
        let mut expected = BTreeSet::new();
        for i in 0..ids.len() {
            for j in 0..i {
                expected.insert((ids[j].clone(), ids[i].clone()));
            }
        }
        assert_eq!(got, expected);
        assert_eq!(space.pairs().count(), 10);
        assert_eq!(space.distinct_pair_count(), 10);
        assert_eq!(space.all_possible_count(), 25);
    }

    #[test]
    fn duplicate_unions_are_paired_once() {
        let mut corpora = BTreeMap::new();
        corpora.insert("a".to_string(), corpus("a", &["x one", "y two"]));
        corpora.insert("b".to_string(), corpus("b", &["u four"]));
        let scope = PairScope {
            name: "s".into(),
            corpus_pairs: vec![("a".into(), "b".into()), ("b".into(), "a".into())],
        };
        let space = ScopeSpace::build(&scope, &corpora).unwrap();
        assert_eq!(space.pairs().count(), 2);
    }

    #[test]
    fn unknown_corpus() {
        let scope = PairScope::all_unions("s", &["nope"]);
        assert!(matches!(
            ScopeSpace::build(&scope, &BTreeMap::new()),
            Err(Error::UnknownCorpus(_))
        ));
    }

    #[test]
    fn band_validation_and_edges() {
        assert!(Band::new(0.7, 0.7).is_err());
        assert!(Band::new(-0.1, 0.5).is_err());
        assert!(Band::new(0.2, 1.1).is_err());
        let band = Band::lte_4g();
        assert_eq!((band.psi_min, band.psi_max), (0.65, 0.99));
        assert_eq!(Band::nr_5g().psi_min, 0.70);
        let pairs = vec![
            ("a:1", "a:0", 0.65),
            ("a:2", "a:0", 0.99),
            ("a:3", "a:0", 1.0),
            ("a:4", "a:0", 0.6499),
        ];
        let kept = filter_by_similarity(pairs, band).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].segment_a, "a:0");
        assert!(matches!(
            filter_by_similarity(
                Vec::<(&str, &str, f64)>::new(),
                Band {
                    psi_min: 0.9,
                    psi_max: 0.1
                }
            ),
            Err(Error::BadThresholds { .. })
        ));
    }

    #[test]
    fn boilerplate_caps_repeated_templates() {
        let texts: Vec<String> = (0..10)
            .map(|i| format!("The timer T34{i} shall be stopped. Extra clause {i} is here."))
            .collect();
        let mut pairs: Vec<PoS> = (0..10)
            .map(|i| PoS::new(&format!("c:{i}a"), &format!("c:{i}b"), 0.8))
            .collect();
        let text_of = |id: &str| {
            let i: usize = id[2..3].parse().unwrap();
            Some(texts[i].as_str())
        };
        assert_eq!(filter_boilerplate(&mut pairs.clone(), text_of, None), 0);
        let removed = filter_boilerplate(&mut pairs, text_of, Some(2));
        assert_eq!(removed, 8);
        assert_eq!(
            pairs
                .iter()
                .filter(|p| p.status == PairStatus::Candidate)
                .count(),
            2
        );
        assert_eq!(pairs[0].status, PairStatus::Candidate);
        assert_eq!(pairs[1].status, PairStatus::Candidate);
    }

    #[test]
    fn distinct_fingerprints_untouched() {
        let texts = [
            "Alpha shall go.",
            "Beta shall go.",
            "Gamma is here.",
            "Delta may be.",
        ];
        let mut pairs = vec![PoS::new("c:0", "c:1", 0.7), PoS::new("c:2", "c:3", 0.7)];
        let before = pairs.clone();
        let text_of = |id: &str| Some(texts[id[2..].parse::<usize>().unwrap()]);
        assert_eq!(filter_boilerplate(&mut pairs, text_of, Some(1)), 0);
        assert_eq!(pairs, before);
    }

    #[test]
    fn fingerprint_masks_digits() {
        assert_eq!(
            fingerprint("Timer T3410 SHALL stop. Then more."),
            "timer t0000 shall stop."
        );
    }
}
