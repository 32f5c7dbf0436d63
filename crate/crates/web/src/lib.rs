//! WebAssembly bindings behind the static page in `www/`.
//!
//! Each export returns a JSON string. The plain Rust functions carry the
//! logic so they run under native tests as well.

use contraspec_core::augment::{eda_variants, EdaParams, SynonymLexicon};
use contraspec_core::classifier::{class_weights, Prediction, Probs};
use contraspec_core::corpus::{Corpus, CorpusProfile};
use contraspec_core::ensemble::{majority_vote, EnsembleDecision};
use contraspec_core::pairing::{
    pair_scope, Band, FilterSummary, PairScope, PairStatus, ScopeSpace,
};
use contraspec_core::synthharness::{generate_corpus, PlantSpec};
use serde::Serialize;
use std::collections::BTreeMap;
use wasm_bindgen::prelude::*;

pub const HISTOGRAM_BINS: usize = 20;
const SHOWN_PAIRS: usize = 25;

#[derive(Debug, Serialize)]
pub struct SampleDocuments {
    pub doc_a: String,
    pub doc_b: String,
}

/// Two small generated documents with planted twins, for the band explorer.
pub fn sample_documents(seed: u64) -> Result<SampleDocuments, String> {
    let spec = PlantSpec {
        n_twins: 12,
        n_fillers: 40,
        ..PlantSpec::default()
    }
    .with_seed(seed);
    let (mut docs, _) = generate_corpus(&spec).map_err(|e| e.to_string())?;
    if docs.len() != 2 {
        return Err(format!("expected two documents, got {}", docs.len()));
    }
    let doc_b = docs.pop().unwrap().text;
    let doc_a = docs.pop().unwrap().text;
    Ok(SampleDocuments { doc_a, doc_b })
}

#[derive(Debug, Serialize)]
pub struct PairView {
    pub pair_id: String,
    pub psi: f64,
    pub text_a: String,
    pub text_b: String,
}

#[derive(Debug, Serialize)]
pub struct BandView {
    pub summary: FilterSummary,
    pub boilerplate_removed: usize,
    /// Counts of all distinct pairs by ψ, bins of width 1/20.
    pub histogram: Vec<u64>,
    /// Highest-ψ survivors.
    pub pairs: Vec<PairView>,
}

pub fn explore_band(
    doc_a: &str,
    doc_b: &str,
    psi_min: f64,
    psi_max: f64,
    keep_boilerplate: bool,
) -> Result<BandView, String> {
    let band = Band::new(psi_min, psi_max).map_err(|e| e.to_string())?;
    let mut corpora = BTreeMap::new();
    for (id, text) in [("a", doc_a), ("b", doc_b)] {
        let corpus = Corpus::build(text, CorpusProfile::new(id))
            .map_err(|e| format!("document {id}: {e}"))?;
        corpora.insert(id.to_string(), corpus);
    }
    let space = ScopeSpace::build(&PairScope::all_unions("demo", &["a", "b"]), &corpora)
        .map_err(|e| e.to_string())?;

    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    for (_, _, psi) in space.pairs() {
        histogram[((psi * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)] += 1;
    }

    let cap = (!keep_boilerplate).then_some(contraspec_core::pairing::DEFAULT_MAX_PATTERN_COUNT);
    let outcome = pair_scope(&space, band, cap).map_err(|e| e.to_string())?;
    let boilerplate_removed = outcome
        .pairs
        .iter()
        .filter(|p| p.status != PairStatus::Candidate)
        .count();
    let mut survivors: Vec<_> = outcome
        .pairs
        .iter()
        .filter(|p| p.status == PairStatus::Candidate)
        .collect();
    survivors.sort_by(|x, y| {
        y.psi
            .total_cmp(&x.psi)
            .then_with(|| x.pair_id.cmp(&y.pair_id))
    });
    let text = |id: &str| {
        space
            .segment(id)
            .map(|s| s.text.clone())
            .unwrap_or_default()
    };
    let pairs = survivors
        .into_iter()
        .take(SHOWN_PAIRS)
        .map(|p| PairView {
            pair_id: p.pair_id.clone(),
            psi: p.psi,
            text_a: text(&p.segment_a),
            text_b: text(&p.segment_b),
        })
        .collect();
    Ok(BandView {
        summary: outcome.summary,
        boilerplate_removed,
        histogram,
        pairs,
    })
}

#[derive(Debug, Serialize)]
pub struct VoteView {
    pub decision: EnsembleDecision,
    pub high_confidence: bool,
    pub inconsistent: bool,
}

/// Votes over member rows of (entailment, contradiction, neutral) scores.
/// Rows are normalized to sum to one.
pub fn vote(rows: &[[f64; 3]], threshold: f64) -> Result<VoteView, String> {
    let predictions = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|x| !x.is_finite() || *x < 0.0) || sum <= 0.0 {
                return Err(format!(
                    "member {} needs non-negative scores with a positive sum",
                    i + 1
                ));
            }
            Ok(Prediction {
                pair_id: "demo".into(),
                probs: Probs::from_array(row.map(|x| x / sum)),
                model_id: format!("member-{}", i + 1),
                phase: 0,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let decision = majority_vote(&predictions).map_err(|e| e.to_string())?;
    Ok(VoteView {
        high_confidence: decision.confidence >= threshold,
        inconsistent: decision.is_inconsistent(),
        decision,
    })
}

pub fn weights(
    entailment: usize,
    contradiction: usize,
    neutral: usize,
) -> Result<[f64; 3], String> {
    class_weights([entailment, contradiction, neutral]).map_err(|e| e.to_string())
}

pub fn eda(text: &str, params: &EdaParams) -> Result<Vec<String>, String> {
    eda_variants(text, params, &SynonymLexicon::starter()).map_err(|e| e.to_string())
}

fn to_js<T: Serialize>(value: Result<T, String>) -> Result<String, JsError> {
    value
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleDocuments)]
pub fn sample_documents_js(seed: u32) -> Result<String, JsError> {
    to_js(sample_documents(seed as u64))
}

#[wasm_bindgen(js_name = exploreBand)]
pub fn explore_band_js(
    doc_a: &str,
    doc_b: &str,
    psi_min: f64,
    psi_max: f64,
    keep_boilerplate: bool,
) -> Result<String, JsError> {
    to_js(explore_band(
        doc_a,
        doc_b,
        psi_min,
        psi_max,
        keep_boilerplate,
    ))
}

/// `flat` holds three scores per member, row after row.
#[wasm_bindgen(js_name = vote)]
pub fn vote_js(flat: Vec<f64>, threshold: f64) -> Result<String, JsError> {
    if flat.is_empty() || !flat.len().is_multiple_of(3) {
        return Err(JsError::new("scores must come in rows of three"));
    }
    let rows: Vec<[f64; 3]> = flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    to_js(vote(&rows, threshold))
}

#[wasm_bindgen(js_name = classWeights)]
pub fn class_weights_js(
    entailment: u32,
    contradiction: u32,
    neutral: u32,
) -> Result<String, JsError> {
    to_js(weights(
        entailment as usize,
        contradiction as usize,
        neutral as usize,
    ))
}

#[wasm_bindgen(js_name = edaVariants)]
pub fn eda_js(
    text: &str,
    alpha_sr: f64,
    alpha_ri: f64,
    alpha_rs: f64,
    p_rd: f64,
    n_aug: u32,
    seed: u32,
) -> Result<String, JsError> {
    let params = EdaParams {
        alpha_sr,
        alpha_ri,
        alpha_rs,
        p_rd,
        n_aug: n_aug as usize,
        seed: seed as u64,
    };
    to_js(eda(text, &params))
}
