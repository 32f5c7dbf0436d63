//! TF-IDF vector space over segments and cosine similarity.
//!
//! Every segment is one document. `tf` is the raw count normalised by the
//! segment's token total, `idf = ln(n / df)` without smoothing, so a term found
//! in every document weighs exactly zero.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Segment;
use crate::error::{Error, Result};

fn is_term_char(c: char) -> bool {
    c.is_alphanumeric() || c == '#' || c == '_' || c == '-'
}

/// Lowercased terms. `#14`, `EMM-DEREGISTERED` and `T3410` stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !is_term_char(c))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.starts_with('#') || t.chars().count() >= 2)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermStats {
    pub index: u32,
    pub document_frequency: u32,
    pub idf: f64,
}

/// Term statistics over one document collection. Rebuilt from segments, never persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: BTreeMap<String, TermStats>,
    n_documents: usize,
    by_index: Vec<String>,
}

impl Vocabulary {
    /// Builds the vocabulary over raw document texts.
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut df: BTreeMap<String, u32> = BTreeMap::new();
        for text in texts {
            let mut terms = tokenize(text.as_ref());
            terms.sort_unstable();
            terms.dedup();
            for term in terms {
                *df.entry(term).or_default() += 1;
            }
        }
        let n = texts.len();
        let terms: BTreeMap<String, TermStats> = df
            .into_iter()
            .enumerate()
            .map(|(index, (term, df))| {
                let stats = TermStats {
                    index: index as u32,
                    document_frequency: df,
                    idf: (n as f64 / df as f64).ln(),
                };
                (term, stats)
            })
            .collect();
        let by_index = terms.keys().cloned().collect();
        Ok(Self {
            terms,
            n_documents: n,
            by_index,
        })
    }

    pub fn build(segments: &[Segment]) -> Result<Self> {
        let texts: Vec<&str> = segments.iter().map(|s| s.text.as_str()).collect();
        Self::from_texts(&texts)
    }

    pub fn n_documents(&self) -> usize {
        self.n_documents
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, term: &str) -> Option<&TermStats> {
        self.terms.get(term)
    }

    pub fn term(&self, index: u32) -> Option<&str> {
        self.by_index.get(index as usize).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TermStats)> {
        self.terms.iter().map(|(t, s)| (t.as_str(), s))
    }

    /// TF-IDF vector of arbitrary text under this vocabulary.
    pub fn vectorize_text(&self, id: impl Into<String>, text: &str) -> SegmentVector {
        let terms = tokenize(text);
        let total = terms.len();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for term in &terms {
            *counts.entry(term.as_str()).or_default() += 1;
        }
        let mut weights: Vec<(u32, f64)> = counts
            .into_iter()
            .filter_map(|(term, count)| {
                let stats = self.terms.get(term)?;
                let weight = count as f64 / total as f64 * stats.idf;
                (weight > 0.0).then_some((stats.index, weight))
            })
            .collect();
        weights.sort_unstable_by_key(|&(i, _)| i);
        SegmentVector::new(id.into(), weights)
    }

    pub fn vectorize(&self, segment: &Segment) -> SegmentVector {
        self.vectorize_text(segment.segment_id.clone(), &segment.text)
    }
}

/// Sparse TF-IDF vector, entries sorted by term index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentVector {
    pub segment_id: String,
    pub weights: Vec<(u32, f64)>,
    pub l2_norm: f64,
}

impl SegmentVector {
    pub fn new(segment_id: String, weights: Vec<(u32, f64)>) -> Self {
        debug_assert!(weights.windows(2).all(|w| w[0].0 < w[1].0));
        let l2_norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        Self {
            segment_id,
            weights,
            l2_norm,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.l2_norm == 0.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let weights = self.weights.iter().map(|&(i, w)| (i, w * factor)).collect();
        Self::new(self.segment_id.clone(), weights)
    }
}

pub fn dot(a: &SegmentVector, b: &SegmentVector) -> f64 {
    let (mut i, mut j, mut sum) = (0, 0, 0.0);
    while i < a.weights.len() && j < b.weights.len() {
        let (ia, wa) = a.weights[i];
        let (ib, wb) = b.weights[j];
        match ia.cmp(&ib) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += wa * wb;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

/// Cosine similarity in `[0, 1]`; zero when either vector is zero.
pub fn cosine(a: &SegmentVector, b: &SegmentVector) -> f64 {
    if a.is_zero() || b.is_zero() {
        return 0.0;
    }
    (dot(a, b) / (a.l2_norm * b.l2_norm)).clamp(0.0, 1.0)
}

const ROW_BLOCK: usize = 64;

/// Lower-triangle similarity entries `(i, j, psi)` with `j < i`, row-major.
///
/// Rows are computed a block at a time (in parallel with the `parallel`
/// feature) and yielded in order, so the full matrix is never held.
pub struct SimilarityMatrix<'a> {
    vectors: &'a [SegmentVector],
    next_row: usize,
    buffer: std::vec::IntoIter<(usize, usize, f64)>,
}

pub fn similarity_matrix(vectors: &[SegmentVector]) -> SimilarityMatrix<'_> {
    SimilarityMatrix {
        vectors,
        next_row: 1,
        buffer: Vec::new().into_iter(),
    }
}

fn similarity_row(vectors: &[SegmentVector], i: usize) -> Vec<(usize, usize, f64)> {
    (0..i)
        .map(|j| (i, j, cosine(&vectors[i], &vectors[j])))
        .collect()
}

impl Iterator for SimilarityMatrix<'_> {
    type Item = (usize, usize, f64);

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(entry) = self.buffer.next() {
                return Some(entry);
            }
            if self.next_row >= self.vectors.len() {
                return None;
            }
            let end = (self.next_row + ROW_BLOCK).min(self.vectors.len());
            let rows = self.next_row..end;
            self.next_row = end;
            #[cfg(feature = "parallel")]
            let block: Vec<_> = {
                use rayon::prelude::*;
                rows.into_par_iter()
                    .flat_map_iter(|i| similarity_row(self.vectors, i))
                    .collect()
            };
            #[cfg(not(feature = "parallel"))]
            let block: Vec<_> = rows.flat_map(|i| similarity_row(self.vectors, i)).collect();
            self.buffer = block.into_iter();
        }
    }
}

#[derive(Serialize)]
struct VectorRecord<'a> {
    segment_id: &'a str,
    weights: &'a [(u32, f64)],
    l2_norm: f64,
}

/// One JSON line per vector: `{segment_id, weights: [[term_index, weight]...], l2_norm}`.
pub fn vectors_to_jsonl(vectors: &[SegmentVector]) -> String {
    let mut out = String::new();
    for v in vectors {
        let record = VectorRecord {
            segment_id: &v.segment_id,
            weights: &v.weights,
            l2_norm: v.l2_norm,
        };
        out.push_str(&serde_json::to_string(&record).expect("vector record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("EMM cause #14 \"EPS services\""),
            ["emm", "cause", "#14", "eps", "services"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("EMM-DEREGISTERED.PLMN-SEARCH"),
            ["emm-deregistered", "plmn-search"]
        );
        assert_eq!(tokenize("a UE_ID x"), ["ue_id"]);
    }

    /// Reference tokenizer written as a per-character state machine.
    fn tokenize_reference(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for c in text.chars().chain(std::iter::once(' ')) {
            let keep = c.is_alphanumeric() || matches!(c, '#' | '_' | '-');
            if keep {
                cur.extend(c.to_lowercase());
            } else if !cur.is_empty() {
                if cur.starts_with('#') || cur.chars().count() > 1 {
                    out.push(cur.clone());
                }
                cur.clear();
            }
        }
        out
    }

    proptest! {
        #[test]
        fn tokenize_matches_character_class_reference(text in "[a-zA-Z0-9#_\\-. ,;:\"()]{0,60}") {
            prop_assert_eq!(tokenize(&text), tokenize_reference(&text));
        }
    }

    #[test]
    fn idf_values() {
        let v = Vocabulary::from_texts(&["alpha beta", "alpha gamma"]).unwrap();
        assert_eq!(v.get("alpha").unwrap().idf, 0.0);
        assert!((v.get("beta").unwrap().idf - 2f64.ln()).abs() < 1e-15);
        assert_eq!(v.n_documents(), 2);
        assert!(matches!(
            Vocabulary::from_texts::<&str>(&[]),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn single_term_weight() {
        let v = Vocabulary::from_texts(&["beta", "alpha"]).unwrap();
        let x = v.vectorize_text("d", "beta");
        assert_eq!(x.weights.len(), 1);
        assert!((x.weights[0].1 - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ubiquitous_terms_give_zero_vector() {
        let v = Vocabulary::from_texts(&["ue shall", "shall ue stop"]).unwrap();
        let x = v.vectorize_text("d", "ue shall");
        assert!(x.is_zero());
        assert_eq!(cosine(&x, &x), 0.0);
    }

    #[test]
    fn cosine_basics() {
        let a = SegmentVector::new("a".into(), vec![(0, 1.0), (3, 2.0)]);
        let b = SegmentVector::new("b".into(), vec![(1, 1.0), (2, 2.0)]);
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&a, &b), 0.0);
    }

    #[test]
    fn similarity_matrix_order() {
        let vs: Vec<_> = (0..4)
            .map(|i| SegmentVector::new(format!("{i}"), vec![(0, 1.0 + i as f64)]))
            .collect();
        let idx: Vec<_> = similarity_matrix(&vs).map(|(i, j, _)| (i, j)).collect();
        assert_eq!(idx, [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)]);
        assert_eq!(similarity_matrix(&vs[..1]).count(), 0);
        assert_eq!(similarity_matrix(&[]).count(), 0);
    }

    #[test]
    fn similarity_matrix_crosses_block_boundaries() {
        let vs: Vec<_> = (0..150)
            .map(|i| SegmentVector::new(format!("{i}"), vec![(i % 7, 1.0)]))
            .collect();
        let entries: Vec<_> = similarity_matrix(&vs).collect();
        assert_eq!(entries.len(), 150 * 149 / 2);
        let mut expected = Vec::new();
        for i in 1..150 {
            for j in 0..i {
                expected.push((i, j));
            }
        }
        assert_eq!(
            entries.iter().map(|&(i, j, _)| (i, j)).collect::<Vec<_>>(),
            expected
        );
    }

    fn sparse_vector() -> impl Strategy<Value = SegmentVector> {
        proptest::collection::btree_map(0u32..40, 0.0f64..5.0, 0..12)
            .prop_map(|m| SegmentVector::new("v".into(), m.into_iter().collect()))
    }

    proptest! {
        #[test]
        fn cosine_symmetric_bounded_scale_invariant(a in sparse_vector(), b in sparse_vector(), c in 0.01f64..100.0) {
            let ab = cosine(&a, &b);
            prop_assert_eq!(ab, cosine(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((cosine(&a.scaled(c), &b) - ab).abs() <= 1e-12);
        }
    }

    #[test]
    fn vectors_jsonl_shape() {
        let line = vectors_to_jsonl(&[SegmentVector::new("c:000001".into(), vec![(2, 0.5)])]);
        assert_eq!(
            line,
            "{\"segment_id\":\"c:000001\",\"weights\":[[2,0.5]],\"l2_norm\":0.5}\n"
        );
    }
}
