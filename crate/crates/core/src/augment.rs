//! Easy Data Augmentation for padding each phase's training set.
//!
//! Four perturbations per variant, applied in order: synonym replacement,
//! random insertion, random swap, random deletion. Everything is driven by
//! seeded ChaCha streams so a given `(text, params, variant)` always yields
//! the same output.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{LabeledExample, Origin};
use crate::error::{Error, Result};
use crate::taxonomy::NliLabel;

pub const STARTER_LEXICON: &str = include_str!("../data/lexicon.txt");

/// Words never replaced by synonyms: directive modals and negations.
const PROTECTED: &[&str] = &[
    "shall", "should", "may", "must", "is", "are", "not", "no", "except", "without", "never",
    "cannot",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaParams {
    pub alpha_sr: f64,
    pub alpha_ri: f64,
    pub alpha_rs: f64,
    pub p_rd: f64,
    pub n_aug: usize,
    pub seed: u64,
}

impl Default for EdaParams {
    fn default() -> Self {
        Self {
            alpha_sr: 0.1,
            alpha_ri: 0.1,
            alpha_rs: 0.1,
            p_rd: 0.1,
            n_aug: 1,
            seed: 0,
        }
    }
}

impl EdaParams {
    pub fn identity() -> Self {
        Self {
            alpha_sr: 0.0,
            alpha_ri: 0.0,
            alpha_rs: 0.0,
            p_rd: 0.0,
            n_aug: 1,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if ![self.alpha_sr, self.alpha_ri, self.alpha_rs, self.p_rd]
            .into_iter()
            .all(unit)
            || self.n_aug == 0
        {
            return Err(Error::InvalidConfig(format!(
                "EDA intensities must lie in [0, 1] and n_aug >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    /// Parses `term: syn1, syn2` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, rest) = line.split_once(':').ok_or_else(|| Error::Lexicon {
                line: n + 1,
                reason: "expected `term: synonym, ...`".into(),
            })?;
            let term = term.trim().to_lowercase();
            if term.is_empty() {
                return Err(Error::Lexicon {
                    line: n + 1,
                    reason: "empty term".into(),
                });
            }
            let synonyms = entries.entry(term.clone()).or_default();
            for syn in rest.split(',').map(|s| s.trim().to_lowercase()) {
                if !syn.is_empty() && syn != term && !synonyms.contains(&syn) {
                    synonyms.push(syn);
                }
            }
        }
        entries.retain(|_, s| !s.is_empty());
        Ok(Self { entries })
    }

    pub fn starter() -> Self {
        Self::parse(STARTER_LEXICON).expect("bundled lexicon parses")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        let key = word
            .trim_matches(|c: char| !c.is_alphanumeric() && c != '-')
            .to_lowercase();
        self.entries.get(&key).map_or(&[], Vec::as_slice)
    }
}

fn is_protected(word: &str) -> bool {
    let w = word
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    PROTECTED.contains(&w.as_str())
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn op_count(alpha: f64, len: usize) -> usize {
    (alpha * len as f64).ceil() as usize
}

fn one_variant(
    words: &[String],
    params: &EdaParams,
    lexicon: &SynonymLexicon,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let len = words.len();
    let mut out = words.to_vec();

    // synonym replacement
    let mut candidates: Vec<usize> = (0..out.len())
        .filter(|&i| !is_protected(&out[i]) && !lexicon.synonyms(&out[i]).is_empty())
        .collect();
    candidates.shuffle(rng);
    for &i in candidates.iter().take(op_count(params.alpha_sr, len)) {
        let synonyms = lexicon.synonyms(&out[i]);
        out[i] = synonyms[rng.gen_range(0..synonyms.len())].clone();
    }

    // random insertion
    for _ in 0..op_count(params.alpha_ri, len) {
        let sources: Vec<usize> = (0..out.len())
            .filter(|&i| !is_protected(&out[i]) && !lexicon.synonyms(&out[i]).is_empty())
            .collect();
        let Some(&src) = sources.choose(rng) else {
            break;
        };
        let synonyms = lexicon.synonyms(&out[src]);
        let word = synonyms[rng.gen_range(0..synonyms.len())].clone();
        let at = rng.gen_range(0..=out.len());
        out.insert(at, word);
    }

    // random swap
    if out.len() > 1 {
        for _ in 0..op_count(params.alpha_rs, len) {
            let a = rng.gen_range(0..out.len());
            let b = rng.gen_range(0..out.len());
            out.swap(a, b);
        }
    }

    // random deletion, at least one word survives
    if params.p_rd > 0.0 {
        let survivor = rng.gen_range(0..out.len());
        let kept: Vec<String> = out
            .iter()
            .enumerate()
            .filter(|_| !rng.gen_bool(params.p_rd))
            .map(|(_, w)| w.clone())
            .collect();
        out = if kept.is_empty() {
            vec![out[survivor].clone()]
        } else {
            kept
        };
    }
    out
}

pub fn eda_variants(
    text: &str,
    params: &EdaParams,
    lexicon: &SynonymLexicon,
) -> Result<Vec<String>> {
    params.validate()?;
    let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if words.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok((0..params.n_aug)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, v as u64));
            one_variant(&words, params, lexicon, &mut rng).join(" ")
        })
        .collect())
}

/// Largest-remainder split of `total` proportional to `sizes`.
pub fn proportional_allocation(sizes: &[usize], total: usize) -> Vec<usize> {
    let all: usize = sizes.iter().sum();
    if all == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| total * s / all).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // larger remainder first, then larger stratum, then position
    order.sort_by(|&a, &b| {
        let ra = total * sizes[a] % all;
        let rb = total * sizes[b] % all;
        rb.cmp(&ra).then(sizes[b].cmp(&sizes[a])).then(a.cmp(&b))
    });
    let mut left = total - alloc.iter().sum::<usize>();
    for &i in order.iter().cycle().take(sizes.len() * 2) {
        if left == 0 {
            break;
        }
        if sizes[i] > 0 {
            alloc[i] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Emits exactly `⌈N/10⌉` synthetic examples, class-proportional, each with
/// one side perturbed (premise and hypothesis alternate).
pub fn synthesize_training_pos(
    train_set: &[LabeledExample],
    params: &EdaParams,
    lexicon: &SynonymLexicon,
) -> Result<Vec<LabeledExample>> {
    if train_set.is_empty() {
        return Ok(Vec::new());
    }
    let quota = train_set.len().div_ceil(10);
    let groups: Vec<Vec<usize>> = NliLabel::ALL
        .iter()
        .map(|&label| {
            (0..train_set.len())
                .filter(|&i| train_set[i].label == label)
                .collect()
        })
        .collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let allocation = proportional_allocation(&sizes, quota);

    let mut out = Vec::with_capacity(quota);
    for (group, &count) in groups.iter().zip(&allocation) {
        for k in 0..count {
            let source_index = group[k % group.len()];
            let source = &train_set[source_index];
            let serial = out.len();
            let variant_params = EdaParams {
                n_aug: 1,
                seed: mix_seed(params.seed ^ source_index as u64, (k / group.len()) as u64),
                ..params.clone()
            };
            let perturb_premise = serial % 2 == 0;
            let target = if perturb_premise {
                &source.premise
            } else {
                &source.hypothesis
            };
            let variant = eda_variants(target, &variant_params, lexicon)?.remove(0);
            let (premise, hypothesis) = if perturb_premise {
                (variant, source.hypothesis.clone())
            } else {
                (source.premise.clone(), variant)
            };
            out.push(LabeledExample {
                pair_id: format!("{}+eda{serial}", source.pair_id),
                premise,
                hypothesis,
                label: source.label,
                origin: Origin::SyntheticEda,
            });
        }
    }
    Ok(out)
}
