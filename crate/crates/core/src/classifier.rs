//! Three-way entailment classifiers.
//!
//! The native baseline is a soft-max layer over deterministic pair features,
//! trained with the class-weighted cross-entropy and Adam. External model
//! servers plug in through the same [`EntailmentClassifier`] trait using the
//! HTTP wire protocol in [`wire`].

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::NliLabel;
use crate::vectorspace::{cosine, tokenize, SegmentVector, Vocabulary};

pub const DEFAULT_BUCKETS: usize = 512;
pub const SCALAR_FEATURES: usize = 4;
pub const PROB_FLOOR: f64 = 1e-12;
pub const BACKEND_PROB_TOLERANCE: f64 = 1e-3;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

const NEGATION_CUES: &[&str] = &["not", "no", "except", "without", "shall-not"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Human,
    SyntheticEda,
    Seed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub pair_id: String,
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
    pub origin: Origin,
}

/// Probabilities over the three NLI classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probs {
    pub entailment: f64,
    pub contradiction: f64,
    pub neutral: f64,
}

impl Probs {
    pub const UNIFORM: Probs = Probs {
        entailment: 1.0 / 3.0,
        contradiction: 1.0 / 3.0,
        neutral: 1.0 / 3.0,
    };

    pub fn from_array(p: [f64; 3]) -> Self {
        Self {
            entailment: p[0],
            contradiction: p[1],
            neutral: p[2],
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.entailment, self.contradiction, self.neutral]
    }

    pub fn get(self, label: NliLabel) -> f64 {
        self.to_array()[label.index()]
    }

    pub fn sum(self) -> f64 {
        self.entailment + self.contradiction + self.neutral
    }

    /// Most probable label; exact ties resolve contradiction, entailment, neutral.
    pub fn argmax(self) -> NliLabel {
        let mut best = NliLabel::Contradiction;
        for label in [NliLabel::Entailment, NliLabel::Neutral] {
            if self.get(label) > self.get(best) {
                best = label;
            }
        }
        best
    }

    /// Shannon entropy in nats.
    pub fn entropy(self) -> f64 {
        -self
            .to_array()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pair_id: String,
    pub probs: Probs,
    pub model_id: String,
    pub phase: u32,
}

impl Prediction {
    pub fn label(&self) -> NliLabel {
        self.probs.argmax()
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// `ŵ_i = (N / n_i) / Σ_j (N / n_j)` over per-class counts in label order.
pub fn class_weights(counts: [usize; 3]) -> Result<[f64; 3]> {
    for label in NliLabel::ALL {
        if counts[label.index()] == 0 {
            return Err(Error::EmptyClass(label.as_str()));
        }
    }
    let total: usize = counts.iter().sum();
    let raw = counts.map(|n| total as f64 / n as f64);
    let norm: f64 = raw.iter().sum();
    Ok(raw.map(|w| w / norm))
}

pub fn softmax(logits: [f64; 3]) -> [f64; 3] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.map(|z| (z - max).exp());
    let sum: f64 = exp.iter().sum();
    exp.map(|e| e / sum)
}

/// Weighted negative log-likelihood of `target` and its gradient with respect
/// to the logits that produced `probs`.
pub fn wce_loss(probs: &[f64; 3], target: NliLabel, class_weights: &[f64; 3]) -> (f64, [f64; 3]) {
    let t = target.index();
    let weight = class_weights[t];
    let loss = -weight * probs[t].max(PROB_FLOOR).ln();
    let mut grad = probs.map(|p| weight * p);
    grad[t] -= weight;
    (loss, grad)
}

/// Loss and gradients of `wce ∘ softmax ∘ (W x + b)` for one example.
/// `weights` is row-major `[3 × x.len()]`. Returns `(loss, dW, db)`.
pub fn affine_wce(
    weights: &[f64],
    bias: &[f64; 3],
    x: &[f64],
    target: NliLabel,
    class_weights: &[f64; 3],
) -> (f64, Vec<f64>, [f64; 3]) {
    let dim = x.len();
    let mut logits = *bias;
    for (k, logit) in logits.iter_mut().enumerate() {
        *logit += weights[k * dim..(k + 1) * dim]
            .iter()
            .zip(x)
            .map(|(w, v)| w * v)
            .sum::<f64>();
    }
    let (loss, g) = wce_loss(&softmax(logits), target, class_weights);
    let mut dw = vec![0.0; 3 * dim];
    for k in 0..3 {
        for (f, &v) in x.iter().enumerate() {
            dw[k * dim + f] = g[k] * v;
        }
    }
    (loss, dw, g)
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    pub vector: Vec<f64>,
}

impl PairFeatures {
    pub fn dim(buckets: usize) -> usize {
        2 * buckets + SCALAR_FEATURES
    }

    fn sparse(&self) -> Vec<(usize, f64)> {
        self.vector
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn negation_count(terms: &[String]) -> usize {
    terms
        .iter()
        .filter(|t| NEGATION_CUES.contains(&t.as_str()))
        .count()
}

fn numeric_terms(terms: &[String]) -> HashSet<&str> {
    terms
        .iter()
        .filter(|t| t.chars().any(|c| c.is_ascii_digit()))
        .map(String::as_str)
        .collect()
}

fn merged_weights<'v>(
    a: &'v SegmentVector,
    b: &'v SegmentVector,
) -> impl Iterator<Item = (u32, f64, f64)> + 'v {
    let (mut i, mut j) = (0, 0);
    std::iter::from_fn(move || {
        let next = match (a.weights.get(i), b.weights.get(j)) {
            (Some(&(ia, wa)), Some(&(ib, wb))) => match ia.cmp(&ib) {
                std::cmp::Ordering::Less => {
                    i += 1;
                    (ia, wa, 0.0)
                }
                std::cmp::Ordering::Greater => {
                    j += 1;
                    (ib, 0.0, wb)
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                    (ia, wa, wb)
                }
            },
            (Some(&(ia, wa)), None) => {
                i += 1;
                (ia, wa, 0.0)
            }
            (None, Some(&(ib, wb))) => {
                j += 1;
                (ib, 0.0, wb)
            }
            (None, None) => return None,
        };
        Some(next)
    })
}

/// Hashed `|v_p − v_h|` and `v_p ⊙ v_h` buckets, then cosine, length ratio,
/// negation-cue count difference and numeric-token overlap.
pub fn featurize_pair(
    premise: &str,
    hypothesis: &str,
    vocab: &Vocabulary,
    buckets: usize,
) -> PairFeatures {
    let vp = vocab.vectorize_text("p", premise);
    let vh = vocab.vectorize_text("h", hypothesis);
    let mut vector = vec![0.0; PairFeatures::dim(buckets)];
    for (index, wp, wh) in merged_weights(&vp, &vh) {
        let term = vocab
            .term(index)
            .expect("vector index comes from this vocabulary");
        let bucket = (fnv1a(term.as_bytes()) % buckets as u64) as usize;
        vector[bucket] += (wp - wh).abs();
        vector[buckets + bucket] += wp * wh;
    }

    let tp = tokenize(premise);
    let th = tokenize(hypothesis);
    let (lp, lh) = (tp.len() as f64, th.len() as f64);
    let length_ratio = if lp.max(lh) == 0.0 {
        1.0
    } else {
        lp.min(lh) / lp.max(lh)
    };
    let negation = negation_count(&tp).abs_diff(negation_count(&th)) as f64;
    let (np, nh) = (numeric_terms(&tp), numeric_terms(&th));
    let numeric_overlap = if np.is_empty() && nh.is_empty() {
        1.0
    } else {
        np.intersection(&nh).count() as f64 / np.union(&nh).count() as f64
    };

    let base = 2 * buckets;
    vector[base] = cosine(&vp, &vh);
    vector[base + 1] = length_ratio;
    vector[base + 2] = negation;
    vector[base + 3] = numeric_overlap;
    PairFeatures { vector }
}

// ---------------------------------------------------------------------------
// Baseline model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub reduction: LossReduction,
}

impl TrainingConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 300,
            dropout_rate: 0.1,
            seed,
            reduction: LossReduction::Mean,
        }
    }
}

/// Soft-max layer `softmax(W x + b)` over [`PairFeatures`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    #[serde(rename = "W")]
    pub weights: Vec<Vec<f64>>,
    pub b: [f64; 3],
    pub class_weights: [f64; 3],
    pub config: TrainingConfig,
    pub feature_dim: usize,
}

impl BaselineModel {
    pub fn zeros(feature_dim: usize, config: TrainingConfig) -> Self {
        Self {
            weights: vec![vec![0.0; feature_dim]; 3],
            b: [0.0; 3],
            class_weights: [1.0 / 3.0; 3],
            config,
            feature_dim,
        }
    }

    pub fn buckets(&self) -> usize {
        (self.feature_dim - SCALAR_FEATURES) / 2
    }

    pub fn predict_features(&self, features: &PairFeatures) -> [f64; 3] {
        let mut logits = self.b;
        for (k, logit) in logits.iter_mut().enumerate() {
            *logit += self.weights[k]
                .iter()
                .zip(&features.vector)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        }
        softmax(logits)
    }

    /// Continues training from the current weights on `examples`.
    pub fn fit(&mut self, examples: &[LabeledExample], vocab: &Vocabulary) -> Result<()> {
        let mut counts = [0usize; 3];
        for e in examples {
            counts[e.label.index()] += 1;
        }
        self.class_weights = class_weights(counts)?;
        let buckets = self.buckets();
        let data: Vec<(Vec<(usize, f64)>, usize)> = examples
            .iter()
            .map(|e| {
                (
                    featurize_pair(&e.premise, &e.hypothesis, vocab, buckets).sparse(),
                    e.label.index(),
                )
            })
            .collect();
        self.fit_sparse(&data)
    }

    fn fit_sparse(&mut self, data: &[(Vec<(usize, f64)>, usize)]) -> Result<()> {
        let cfg = self.config.clone();
        let dim = self.feature_dim;
        let n_params = 3 * dim + 3;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut m = vec![0.0; n_params];
        let mut v = vec![0.0; n_params];
        let mut grad = vec![0.0; n_params];
        let mut step = 0i32;
        let keep = 1.0 - cfg.dropout_rate;
        let mut order: Vec<usize> = (0..data.len()).collect();

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for (batch_index, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut batch_loss = 0.0;
                for &i in batch {
                    let (features, target) = &data[i];
                    let x: Vec<(usize, f64)> = if cfg.dropout_rate > 0.0 {
                        features
                            .iter()
                            .filter_map(|&(f, val)| rng.gen_bool(keep).then_some((f, val / keep)))
                            .collect()
                    } else {
                        features.clone()
                    };
                    let mut logits = self.b;
                    for (k, logit) in logits.iter_mut().enumerate() {
                        *logit += x
                            .iter()
                            .map(|&(f, val)| self.weights[k][f] * val)
                            .sum::<f64>();
                    }
                    let label = NliLabel::from_index(*target).expect("label index");
                    let (loss, g) = wce_loss(&softmax(logits), label, &self.class_weights);
                    batch_loss += loss;
                    for k in 0..3 {
                        for &(f, val) in &x {
                            grad[k * dim + f] += g[k] * val;
                        }
                        grad[3 * dim + k] += g[k];
                    }
                }
                if !batch_loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                    });
                }
                if cfg.reduction == LossReduction::Mean {
                    let scale = 1.0 / batch.len() as f64;
                    grad.iter_mut().for_each(|g| *g *= scale);
                }
                step += 1;
                let bias1 = 1.0 - ADAM_BETA1.powi(step);
                let bias2 = 1.0 - ADAM_BETA2.powi(step);
                for p in 0..n_params {
                    m[p] = ADAM_BETA1 * m[p] + (1.0 - ADAM_BETA1) * grad[p];
                    v[p] = ADAM_BETA2 * v[p] + (1.0 - ADAM_BETA2) * grad[p] * grad[p];
                    let update =
                        cfg.learning_rate * (m[p] / bias1) / ((v[p] / bias2).sqrt() + ADAM_EPSILON);
                    if p < 3 * dim {
                        self.weights[p / dim][p % dim] -= update;
                    } else {
                        self.b[p - 3 * dim] -= update;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Trains a fresh zero-initialised baseline.
pub fn train_baseline(
    examples: &[LabeledExample],
    vocab: &Vocabulary,
    buckets: usize,
    config: TrainingConfig,
) -> Result<BaselineModel> {
    let mut model = BaselineModel::zeros(PairFeatures::dim(buckets), config);
    model.fit(examples, vocab)?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Classifier contract
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairText {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
}

pub trait EntailmentClassifier: Send {
    fn model_id(&self) -> &str;

    fn predict_batch(&self, pairs: &[PairText]) -> Result<Vec<Probs>>;

    fn train(&mut self, examples: &[LabeledExample]) -> Result<()>;

    fn predict(&self, pair: &PairText, phase: u32) -> Result<Prediction> {
        let probs = self
            .predict_batch(std::slice::from_ref(pair))?
            .pop()
            .ok_or_else(|| Error::MalformedBackendResponse("empty prediction batch".into()))?;
        Ok(Prediction {
            pair_id: pair.id.clone(),
            probs,
            model_id: self.model_id().to_string(),
            phase,
        })
    }
}

pub struct BaselineClassifier {
    pub model_id: String,
    pub model: BaselineModel,
    pub vocabulary: Arc<Vocabulary>,
}

impl BaselineClassifier {
    pub fn new(
        model_id: impl Into<String>,
        model: BaselineModel,
        vocabulary: Arc<Vocabulary>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            model,
            vocabulary,
        }
    }
}

impl EntailmentClassifier for BaselineClassifier {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn predict_batch(&self, pairs: &[PairText]) -> Result<Vec<Probs>> {
        let buckets = self.model.buckets();
        Ok(pairs
            .iter()
            .map(|p| {
                let x = featurize_pair(&p.premise, &p.hypothesis, &self.vocabulary, buckets);
                Probs::from_array(self.model.predict_features(&x))
            })
            .collect())
    }

    fn train(&mut self, examples: &[LabeledExample]) -> Result<()> {
        self.model.fit(examples, &self.vocabulary)
    }
}

/// Accepts backend probabilities within [`BACKEND_PROB_TOLERANCE`] of a
/// distribution and renormalises them.
pub fn normalize_backend_probs(probs: Probs) -> Result<Probs> {
    let p = probs.to_array();
    if p.iter()
        .any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0 + BACKEND_PROB_TOLERANCE)
    {
        return Err(Error::MalformedBackendResponse(format!(
            "probabilities out of range: {p:?}"
        )));
    }
    let sum = probs.sum();
    if (sum - 1.0).abs() > BACKEND_PROB_TOLERANCE {
        return Err(Error::MalformedBackendResponse(format!(
            "probabilities sum to {sum}"
        )));
    }
    Ok(Probs::from_array(p.map(|x| x / sum)))
}

/// JSON bodies of the model-server protocol.
pub mod wire {
    use serde::{Deserialize, Serialize};

    use super::Probs;
    use crate::taxonomy::NliLabel;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct HealthResponse {
        pub status: String,
        pub model_id: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct PredictRequest {
        pub pairs: Vec<super::PairText>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct WirePrediction {
        pub id: String,
        pub probs: Probs,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct PredictResponse {
        pub predictions: Vec<WirePrediction>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct WireExample {
        pub premise: String,
        pub hypothesis: String,
        pub label: NliLabel,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct WireTrainConfig {
        pub learning_rate: f64,
        pub batch_size: usize,
        pub epochs: usize,
        pub seed: u64,
    }

    impl Default for WireTrainConfig {
        fn default() -> Self {
            Self {
                learning_rate: 2e-5,
                batch_size: 32,
                epochs: 3,
                seed: 0,
            }
        }
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TrainRequest {
        pub examples: Vec<WireExample>,
        pub config: WireTrainConfig,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TrainResponse {
        pub model_version: u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub base_url: String,
    pub model_id: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl BackendEndpoint {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_id: model_id.into(),
            timeout_ms: 30_000,
            retries: 2,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

#[cfg(feature = "backend")]
pub use backend::BackendClient;

#[cfg(feature = "backend")]
mod backend {
    use std::time::Duration;

    use serde::de::DeserializeOwned;
    use serde::Serialize;

    use super::wire::*;
    use super::{
        normalize_backend_probs, BackendEndpoint, EntailmentClassifier, LabeledExample, PairText,
        Probs,
    };
    use crate::error::{Error, Result};

    pub const BATCH_SIZE: usize = 32;

    pub struct BackendClient {
        endpoint: BackendEndpoint,
        agent: ureq::Agent,
        pub train_config: WireTrainConfig,
    }

    impl BackendClient {
        pub fn new(endpoint: BackendEndpoint) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
                .build()
                .into();
            Self {
                endpoint,
                agent,
                train_config: WireTrainConfig::default(),
            }
        }

        pub fn endpoint(&self) -> &BackendEndpoint {
            &self.endpoint
        }

        fn with_retries<T>(
            &self,
            mut call: impl FnMut() -> std::result::Result<T, ureq::Error>,
        ) -> Result<T> {
            let mut attempt = 0;
            loop {
                match call() {
                    Ok(v) => return Ok(v),
                    Err(ureq::Error::Json(e)) => {
                        return Err(Error::MalformedBackendResponse(e.to_string()))
                    }
                    Err(e) if attempt >= self.endpoint.retries => {
                        return Err(Error::BackendUnavailable(format!(
                            "{}: {e}",
                            self.endpoint.base_url
                        )))
                    }
                    Err(_) => attempt += 1,
                }
            }
        }

        fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
            let url = self.endpoint.url(path);
            self.with_retries(|| self.agent.get(&url).call()?.body_mut().read_json::<T>())
        }

        fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
            let url = self.endpoint.url(path);
            self.with_retries(|| {
                self.agent
                    .post(&url)
                    .send_json(body)?
                    .body_mut()
                    .read_json::<T>()
            })
        }

        pub fn health(&self) -> Result<HealthResponse> {
            let health: HealthResponse = self.get("/v1/health")?;
            if health.status != "ok" {
                return Err(Error::BackendUnavailable(format!(
                    "health status `{}`",
                    health.status
                )));
            }
            Ok(health)
        }

        pub fn train_remote(&self, examples: &[LabeledExample]) -> Result<u64> {
            let request = TrainRequest {
                examples: examples
                    .iter()
                    .map(|e| WireExample {
                        premise: e.premise.clone(),
                        hypothesis: e.hypothesis.clone(),
                        label: e.label,
                    })
                    .collect(),
                config: self.train_config.clone(),
            };
            let response: TrainResponse = self.post("/v1/train", &request)?;
            Ok(response.model_version)
        }
    }

    impl EntailmentClassifier for BackendClient {
        fn model_id(&self) -> &str {
            &self.endpoint.model_id
        }

        fn predict_batch(&self, pairs: &[PairText]) -> Result<Vec<Probs>> {
            let mut out = Vec::with_capacity(pairs.len());
            for chunk in pairs.chunks(BATCH_SIZE) {
                let response: PredictResponse = self.post(
                    "/v1/predict",
                    &PredictRequest {
                        pairs: chunk.to_vec(),
                    },
                )?;
                if response.predictions.len() != chunk.len() {
                    return Err(Error::MalformedBackendResponse(format!(
                        "expected {} predictions, got {}",
                        chunk.len(),
                        response.predictions.len()
                    )));
                }
                for (pair, prediction) in chunk.iter().zip(response.predictions) {
                    if prediction.id != pair.id {
                        return Err(Error::MalformedBackendResponse(format!(
                            "prediction for `{}` where `{}` was expected",
                            prediction.id, pair.id
                        )));
                    }
                    out.push(normalize_backend_probs(prediction.probs)?);
                }
            }
            Ok(out)
        }

        fn train(&mut self, examples: &[LabeledExample]) -> Result<()> {
            self.train_remote(examples).map(|_| ())
        }
    }
}
