//! Models, per-record gradients and the two-level clipped local update.
//!
//! Each selected client samples records independently with probability
//! `p_i`, clips each record gradient to `R`, sums the negated gradients and
//! clips the sum to `C`. There is no local learning rate; the server's global
//! rate is the only step size.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ffield::{FieldError, FixedPointCodec, PrimeField};
use crate::sharing::{split, ShareVector};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("empty evaluation set")]
    EmptyTestSet,
    #[error("record has {got} features, model expects {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("trigger index {index} out of range for {num_features} features")]
    TriggerOutOfRange { index: usize, num_features: usize },
    #[error("dataset file: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset file: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset file row {row}: {reason}")]
    Parse { row: usize, reason: String },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Self {
        Dataset { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn label_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for r in &self.records {
            h[r.label] += 1;
        }
        h
    }

    /// Reads one record per row: feature columns, then the integer label.
    pub fn from_csv(path: &Path, num_classes: usize) -> Result<Self, LearnError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut records = Vec::new();
        let mut width = None;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse_err = |reason: String| LearnError::Parse { row, reason };
            if rec.len() < 2 {
                return Err(parse_err("need at least one feature and a label".into()));
            }
            if *width.get_or_insert(rec.len()) != rec.len() {
                return Err(parse_err("ragged row".into()));
            }
            let features = rec
                .iter()
                .take(rec.len() - 1)
                .map(|s| s.trim().parse::<f64>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let label: usize = rec[rec.len() - 1]
                .trim()
                .parse()
                .map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
            if label >= num_classes {
                return Err(LearnError::LabelOutOfRange { label, num_classes });
            }
            records.push(Record { features, label });
        }
        Ok(Dataset { records })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Arch {
    /// Multinomial logistic regression.
    Logistic,
    /// One tanh hidden layer.
    Mlp { hidden: usize },
}

impl Arch {
    pub fn dimension(self, num_features: usize, num_classes: usize) -> usize {
        match self {
            Arch::Logistic => num_classes * (num_features + 1),
            Arch::Mlp { hidden } => hidden * (num_features + 1) + num_classes * (hidden + 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub arch: Arch,
    pub num_features: usize,
    pub num_classes: usize,
    pub theta: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Model {
    /// Logistic models start at zero; MLP weights are drawn with scale
    /// `1/sqrt(fan_in)` to break symmetry.
    pub fn init<R: Rng + ?Sized>(arch: Arch, num_features: usize, num_classes: usize, rng: &mut R) -> Self {
        let d = arch.dimension(num_features, num_classes);
        let mut theta = vec![0.0; d];
        if let Arch::Mlp { hidden } = arch {
            let s1 = 1.0 / (num_features as f64).sqrt();
            for w in theta.iter_mut().take(hidden * num_features) {
                let e: f64 = StandardNormal.sample(rng);
                *w = s1 * e;
            }
            let w2_start = hidden * (num_features + 1);
            let s2 = 1.0 / (hidden as f64).sqrt();
            for w in theta.iter_mut().skip(w2_start).take(num_classes * hidden) {
                let e: f64 = StandardNormal.sample(rng);
                *w = s2 * e;
            }
        }
        Model {
            arch,
            num_features,
            num_classes,
            theta,
        }
    }

    pub fn dimension(&self) -> usize {
        self.theta.len()
    }

    fn hidden(&self, x: &[f64], hidden: usize) -> Vec<f64> {
        let m = self.num_features;
        let (w1, rest) = self.theta.split_at(hidden * m);
        let b1 = &rest[..hidden];
        (0..hidden)
            .map(|j| (dot(&w1[j * m..(j + 1) * m], x) + b1[j]).tanh())
            .collect()
    }

    fn output_layer(&self, input: &[f64], offset: usize) -> Vec<f64> {
        let width = input.len();
        let k = self.num_classes;
        let w = &self.theta[offset..offset + k * width];
        let b = &self.theta[offset + k * width..offset + k * (width + 1)];
        (0..k)
            .map(|c| dot(&w[c * width..(c + 1) * width], input) + b[c])
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        match self.arch {
            Arch::Logistic => self.output_layer(x, 0),
            Arch::Mlp { hidden } => {
                let h = self.hidden(x, hidden);
                self.output_layer(&h, hidden * (self.num_features + 1))
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best
    }

    /// Unclamped cross-entropy.
    pub fn loss(&self, z: &Record) -> f64 {
        let logits = self.logits(&z.features);
        log_sum_exp(&logits) - logits[z.label]
    }

    pub fn check_record(&self, z: &Record) -> Result<(), LearnError> {
        if z.features.len() != self.num_features {
            return Err(LearnError::FeatureMismatch {
                expected: self.num_features,
                got: z.features.len(),
            });
        }
        if z.label >= self.num_classes {
            return Err(LearnError::LabelOutOfRange {
                label: z.label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }
}

/// Cross-entropy clamped to `[0, bound]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub bound: f64,
}

impl LossSpec {
    pub fn bounded_loss(&self, model: &Model, z: &Record) -> f64 {
        model.loss(z).clamp(0.0, self.bound)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient of the unclamped cross-entropy with respect to `theta`.
pub fn per_record_gradient(model: &Model, z: &Record) -> Vec<f64> {
    let m = model.num_features;
    let k = model.num_classes;
    let x = &z.features;
    let mut grad = vec![0.0; model.dimension()];
    let write_output = |grad: &mut [f64], input: &[f64], delta: &[f64], offset: usize| {
        let width = input.len();
        for c in 0..k {
            for j in 0..width {
                grad[offset + c * width + j] = delta[c] * input[j];
            }
            grad[offset + k * width + c] = delta[c];
        }
    };
    match model.arch {
        Arch::Logistic => {
            let mut p = model.logits(x);
            softmax_in_place(&mut p);
            p[z.label] -= 1.0;
            write_output(&mut grad, x, &p, 0);
        }
        Arch::Mlp { hidden } => {
            let h = model.hidden(x, hidden);
            let w2_off = hidden * (m + 1);
            let mut p = model.output_layer(&h, w2_off);
            softmax_in_place(&mut p);
            p[z.label] -= 1.0;
            write_output(&mut grad, &h, &p, w2_off);
            let w2 = &model.theta[w2_off..w2_off + k * hidden];
            for j in 0..hidden {
                let back: f64 = (0..k).map(|c| w2[c * hidden + j] * p[c]).sum();
                let d1 = back * (1.0 - h[j] * h[j]);
                for i in 0..m {
                    grad[j * m + i] = d1 * x[i];
                }
                grad[hidden * m + j] = d1;
            }
        }
    }
    grad
}

/// `g * min(1, bound / ||g||)`; the zero vector is returned unchanged.
pub fn clip_to_norm(g: &[f64], bound: f64) -> Vec<f64> {
    let n = l2_norm(g);
    if n <= bound || n == 0.0 {
        return g.to_vec();
    }
    let s = bound / n;
    g.iter().map(|v| v * s).collect()
}

/// Per-client knobs of the local update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub sampling_prob: f64,
    pub record_clip: f64,
    /// `None` disables client-level clipping.
    pub client_clip: Option<f64>,
}

/// Independent (Poisson) inclusion of each index with probability `p`.
pub fn sample_records<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<usize> {
    (0..n).filter(|_| rng.random::<f64>() < p).collect()
}

/// Two-level clipped update over a fixed sample of records.
pub fn clipped_update<'a>(
    model: &Model,
    records: impl IntoIterator<Item = &'a Record>,
    record_clip: f64,
    client_clip: Option<f64>,
) -> Vec<f64> {
    let mut sum = vec![0.0; model.dimension()];
    for z in records {
        let g = clip_to_norm(&per_record_gradient(model, z), record_clip);
        for (s, v) in sum.iter_mut().zip(&g) {
            *s -= v;
        }
    }
    match client_clip {
        Some(c) => clip_to_norm(&sum, c),
        None => sum,
    }
}

/// Negated gradient sum with no clipping at all.
pub fn raw_update<'a>(model: &Model, records: impl IntoIterator<Item = &'a Record>) -> Vec<f64> {
    let mut sum = vec![0.0; model.dimension()];
    for z in records {
        for (s, v) in sum.iter_mut().zip(per_record_gradient(model, z)) {
            *s -= v;
        }
    }
    sum
}

/// Sample, clip per record, sum, clip the sum.
pub fn local_update<R: Rng + ?Sized>(model: &Model, dataset: &Dataset, cfg: &ClientConfig, rng: &mut R) -> Vec<f64> {
    let idx = sample_records(dataset.len(), cfg.sampling_prob, rng);
    clipped_update(
        model,
        idx.iter().map(|&i| &dataset.records[i]),
        cfg.record_clip,
        cfg.client_clip,
    )
}

/// Fixed-point encode then split into one share per server.
pub fn encode_and_split<R: Rng + ?Sized>(
    delta: &[f64],
    field: &PrimeField,
    codec: &FixedPointCodec,
    rng: &mut R,
) -> Result<(ShareVector, ShareVector), FieldError> {
    let enc = codec.encode_vec(field, delta)?;
    Ok(split(field, &enc, rng))
}

/// Plain SGD: `epochs` passes over `data` in a shuffled order.
pub fn sgd_epochs<R: Rng + ?Sized>(model: &mut Model, data: &Dataset, epochs: usize, lr: f64, rng: &mut R) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            let g = per_record_gradient(model, &data.records[i]);
            for (t, v) in model.theta.iter_mut().zip(&g) {
                *t -= lr * v;
            }
        }
    }
}

/// Synthetic Gaussian-mixture task. The first `num_features - trigger_dims`
/// features carry class signal; the last `trigger_dims` are quiet background
/// features (like the corner pixels of an image) that a backdoor trigger
/// overwrites.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub num_features: usize,
    pub num_classes: usize,
    pub trigger_dims: usize,
    /// Standard deviation of the class means.
    pub class_separation: f64,
    pub noise_std: f64,
    pub background_std: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            num_features: 20,
            num_classes: 10,
            trigger_dims: 4,
            class_separation: 1.0,
            noise_std: 1.0,
            background_std: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub clients: Vec<Dataset>,
    pub test: Dataset,
    pub class_means: Vec<Vec<f64>>,
}

fn draw_record<R: Rng + ?Sized>(spec: &DataSpec, means: &[Vec<f64>], label: usize, rng: &mut R) -> Record {
    let informative = spec.num_features - spec.trigger_dims;
    let mut features = Vec::with_capacity(spec.num_features);
    for j in 0..informative {
        let e: f64 = StandardNormal.sample(rng);
        features.push(means[label][j] + spec.noise_std * e);
    }
    for _ in 0..spec.trigger_dims {
        let e: f64 = StandardNormal.sample(rng);
        features.push(spec.background_std * e);
    }
    Record { features, label }
}

/// Non-IID population: labels balanced overall, records sorted by label and
/// cut into `n * shards_per_client` contiguous shards, each client receiving
/// `shards_per_client` randomly chosen shards.
pub fn make_population<R: Rng + ?Sized>(
    spec: &DataSpec,
    n: usize,
    per_client: usize,
    shards_per_client: usize,
    test_size: usize,
    rng: &mut R,
) -> Population {
    let informative = spec.num_features - spec.trigger_dims;
    let class_means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..informative)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(rng);
                    spec.class_separation * e
                })
                .collect()
        })
        .collect();

    let total = n * per_client;
    let mut pool: Vec<Record> = (0..total)
        .map(|i| draw_record(spec, &class_means, i % spec.num_classes, rng))
        .collect();
    pool.sort_by_key(|r| r.label);

    let shards = (n * shards_per_client).max(1);
    let bounds: Vec<usize> = (0..=shards).map(|s| s * total / shards).collect();
    let mut shard_ids: Vec<usize> = (0..shards).collect();
    shard_ids.shuffle(rng);

    let mut pool: Vec<Option<Record>> = pool.into_iter().map(Some).collect();
    let clients = (0..n)
        .map(|c| {
            let mine = &shard_ids[c * shards_per_client..(c + 1) * shards_per_client];
            let mut records = Vec::with_capacity(per_client);
            for &s in mine {
                for slot in &mut pool[bounds[s]..bounds[s + 1]] {
                    records.push(slot.take().expect("shard assigned twice"));
                }
            }
            Dataset { records }
        })
        .collect();

    let test = Dataset {
        records: (0..test_size)
            .map(|i| draw_record(spec, &class_means, i % spec.num_classes, rng))
            .collect(),
    };
    Population {
        clients,
        test,
        class_means,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub indices: Vec<usize>,
    pub value: f64,
}

impl Trigger {
    fn check(&self, num_features: usize) -> Result<(), LearnError> {
        match self.indices.iter().find(|&&i| i >= num_features) {
            Some(&index) => Err(LearnError::TriggerOutOfRange { index, num_features }),
            None => Ok(()),
        }
    }

    pub fn stamp(&self, features: &mut [f64]) {
        for &i in &self.indices {
            features[i] = self.value;
        }
    }
}

/// Benign records plus backdoor copies: a `fraction` of the records (chosen
/// at random) are stamped with the trigger and relabelled as `target`.
pub fn poison_backdoor<R: Rng + ?Sized>(
    dataset: &Dataset,
    trigger: &Trigger,
    target: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<Dataset, LearnError> {
    if let Some(r) = dataset.records.first() {
        trigger.check(r.features.len())?;
    }
    let count = (fraction.clamp(0.0, 1.0) * dataset.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let mut out = dataset.clone();
    for &i in &order[..count] {
        let r = &mut out.records[i];
        trigger.stamp(&mut r.features);
        r.label = target;
    }
    Ok(out)
}

/// Every test record not already labelled `target`, stamped and relabelled.
pub fn triggered_test_set(test: &Dataset, trigger: &Trigger, target: usize) -> Result<Dataset, LearnError> {
    let mut records = Vec::new();
    for r in &test.records {
        trigger.check(r.features.len())?;
        if r.label == target {
            continue;
        }
        let mut features = r.features.clone();
        trigger.stamp(&mut features);
        records.push(Record { features, label: target });
    }
    Ok(Dataset { records })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub main_acc: f64,
    /// `None` when no triggered set was supplied.
    pub backdoor_acc: Option<f64>,
}

pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64, LearnError> {
    if data.is_empty() {
        return Err(LearnError::EmptyTestSet);
    }
    let hits = data
        .records
        .iter()
        .filter(|r| model.predict(&r.features) == r.label)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Main-task accuracy and the fraction of triggered inputs sent to `target`.
pub fn eval_metrics(
    model: &Model,
    clean_test: &Dataset,
    triggered_test: Option<&Dataset>,
    target: usize,
) -> Result<EvalMetrics, LearnError> {
    let main_acc = accuracy(model, clean_test)?;
    let backdoor_acc = match triggered_test {
        Some(t) if t.is_empty() => return Err(LearnError::EmptyTestSet),
        Some(t) => Some(
            t.records
                .iter()
                .filter(|r| model.predict(&r.features) == target)
                .count() as f64
                / t.len() as f64,
        ),
        None => None,
    };
    Ok(EvalMetrics {
        main_acc,
        backdoor_acc,
    })
}
