//! Deep belief network: a stack of RBMs used as sigmoid layers, topped by a
//! 24-way softmax translation layer.
//!
//! Training runs in three stages:
//! 1. greedy CD-1 pretraining, each RBM fed the hidden probabilities of the
//!    one below ([`pretrain`]);
//! 2. backprop on the translation layer alone, with noisy inputs
//!    ([`train_translation_layer`]);
//! 3. backprop through the whole network at a lower rate ([`fine_tune`]).
//!
//! Both supervised stages keep the parameters with the best validation
//! cross-entropy and stop after `early_stopping_patience` epochs without
//! improvement.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::letter::{Letter, NUM_CLASSES};
use crate::rbm::{train_rbm_logged, Rbm, RbmEpoch, RbmTrainConfig};

pub const DEFAULT_LAYER_SIZES: [usize; 3] = [1500, 700, 400];

#[derive(Debug, Clone, PartialEq)]
pub struct Dbn {
    pub rbm_layers: Vec<Rbm>,
    /// `last_hidden x 24`
    pub translation_weights: Array2<f64>,
    pub translation_bias: Array1<f64>,
    pub class_labels: Vec<Letter>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub label: Letter,
}

impl Prediction {
    /// Letters with their scores, best first.
    pub fn ranked(&self) -> Vec<(Letter, f64)> {
        let mut ranked: Vec<(Letter, f64)> = Letter::all().zip(self.scores.iter().copied()).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

/// Row-wise softmax with the max subtracted for stability.
pub fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Features with class indices in `0..24`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::dims(format!("{} labels", features.nrows()), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange(bad));
        }
        Ok(LabeledSet { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn one_hot(&self, idx: &[usize]) -> Array2<f64> {
        let mut y = Array2::zeros((idx.len(), NUM_CLASSES));
        for (r, &i) in idx.iter().enumerate() {
            y[[r, self.labels[i]]] = 1.0;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_coeff: f64,
    pub momentum: f64,
    /// Standard deviation of the Gaussian noise added to each presented
    /// input (clamped back to `[0, 1]`). Zero disables it.
    pub input_noise_sigma: f64,
    pub early_stopping_patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedTrainConfig {
    /// Translation-layer-only stage.
    pub stage2: StageConfig,
    /// Whole-network fine-tuning stage. Fields missing from a config file
    /// take the fine-tuning defaults, not the stage-2 ones.
    #[serde(deserialize_with = "fine_tune_stage")]
    pub stage3: StageConfig,
    pub init_std: f64,
    pub rng_seed: u64,
}

impl Default for SupervisedTrainConfig {
    fn default() -> Self {
        let stage2 = StageConfig {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 100,
            l2_coeff: 1e-4,
            momentum: 0.9,
            input_noise_sigma: 0.1,
            early_stopping_patience: 10,
        };
        let stage3 = StageConfig {
            learning_rate: stage2.learning_rate * 0.1,
            epochs: 200,
            l2_coeff: stage2.l2_coeff / 2.0,
            input_noise_sigma: 0.0,
            ..stage2.clone()
        };
        SupervisedTrainConfig {
            stage2,
            stage3,
            init_std: 0.01,
            rng_seed: 1,
        }
    }
}

fn fine_tune_stage<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<StageConfig, D::Error> {
    use serde::de::Error as _;
    let given = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
    let mut merged = serde_json::to_value(SupervisedTrainConfig::default().stage3).map_err(D::Error::custom)?;
    merged.as_object_mut().expect("struct serializes to an object").extend(given);
    serde_json::from_value(merged).map_err(D::Error::custom)
}

impl Default for StageConfig {
    fn default() -> Self {
        SupervisedTrainConfig::default().stage2
    }
}

impl StageConfig {
    fn validate(&self, name: &str) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("{name} learning_rate must be finite and non-negative")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{name} batch_size must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("{name} momentum must lie in [0, 1)")));
        }
        if !(self.l2_coeff >= 0.0 && self.input_noise_sigma >= 0.0) {
            return Err(Error::Config(format!("{name} l2_coeff and input_noise_sigma must be non-negative")));
        }
        Ok(())
    }
}

impl SupervisedTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.stage2.validate("stage2")?;
        self.stage3.validate("stage3")?;
        if !(self.stage3.learning_rate < self.stage2.learning_rate) {
            return Err(Error::Config(format!(
                "stage3 learning rate {} must be below stage2 learning rate {}",
                self.stage3.learning_rate, self.stage2.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Translation,
    FineTune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Translation => "translation",
            Stage::FineTune => "finetune",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedEpoch {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

/// Summed cross-entropy of probability rows against one-hot targets.
fn cross_entropy(probs: ArrayView2<f64>, one_hot: ArrayView2<f64>) -> f64 {
    -Zip::from(probs)
        .and(one_hot)
        .fold(0.0, |acc, &p, &t| acc + if t > 0.0 { t * p.max(f64::MIN_POSITIVE).ln() } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationGradients {
    pub loss: f64,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// `(softmax - one_hot) / batch`
    pub logits_delta: Array2<f64>,
}

/// Gradients of the mean cross-entropy, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Per RBM layer: weights and hidden bias.
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    pub translation_weights: Array2<f64>,
    pub translation_bias: Array1<f64>,
}

fn check_chain(rbms: &[Rbm]) -> Result<()> {
    for (k, pair) in rbms.windows(2).enumerate() {
        if pair[0].n_hidden() != pair[1].n_visible() {
            return Err(Error::dims(
                format!("layer {} visible {}", k + 1, pair[0].n_hidden()),
                pair[1].n_visible(),
            ));
        }
    }
    Ok(())
}

impl Dbn {
    /// Stacks `rbms` and adds a randomly initialized translation layer.
    pub fn new<R: Rng + ?Sized>(rbms: Vec<Rbm>, init_std: f64, rng: &mut R) -> Result<Self> {
        if rbms.is_empty() {
            return Err(Error::EmptyData);
        }
        check_chain(&rbms)?;
        let top = rbms.last().map(Rbm::n_hidden).unwrap_or(0);
        let mut translation_weights = Array2::zeros((top, NUM_CLASSES));
        if init_std > 0.0 {
            let normal = Normal::new(0.0, init_std).expect("positive std");
            translation_weights.iter_mut().for_each(|w| *w = normal.sample(rng));
        }
        Ok(Dbn {
            rbm_layers: rbms,
            translation_weights,
            translation_bias: Array1::zeros(NUM_CLASSES),
            class_labels: Letter::all().collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.rbm_layers[0].n_visible()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.rbm_layers.iter().map(Rbm::n_hidden).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.rbm_layers.iter().all(Rbm::is_finite)
            && self.translation_weights.iter().chain(&self.translation_bias).all(|v| v.is_finite())
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dims(format!("input width {}", self.input_dim()), x.ncols()));
        }
        Ok(())
    }

    /// Sigmoid activations of every hidden layer, bottom first.
    pub fn hidden_activations(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(x)?;
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.rbm_layers.len());
        for rbm in &self.rbm_layers {
            let input = acts.last().map(|a| a.view()).unwrap_or(x);
            acts.push(rbm.hidden_probabilities(input)?);
        }
        Ok(acts)
    }

    fn top_activations(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.hidden_activations(x)?.pop().expect("at least one layer"))
    }

    fn translate(&self, top: ArrayView2<f64>) -> Array2<f64> {
        let mut logits = top.dot(&self.translation_weights) + &self.translation_bias;
        softmax_rows(&mut logits);
        logits
    }

    /// Softmax class probabilities for every row of `x`.
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let top = self.top_activations(x)?;
        Ok(self.translate(top.view()))
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Prediction> {
        let scores = self.scores(x.insert_axis(Axis(0)))?;
        let row = scores.row(0);
        Ok(Prediction {
            label: self.class_labels[argmax(row)],
            scores: row.to_vec(),
        })
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(x.nrows());
        for chunk in x.axis_chunks_iter(Axis(0), 256) {
            let scores = self.scores(chunk)?;
            out.extend(scores.rows().into_iter().map(|row| Prediction {
                label: self.class_labels[argmax(row)],
                scores: row.to_vec(),
            }));
        }
        Ok(out)
    }

    /// Mean cross-entropy of `x` against class indices `y`.
    pub fn loss(&self, x: ArrayView2<f64>, y: &[usize]) -> Result<f64> {
        if x.nrows() != y.len() {
            return Err(Error::dims(format!("{} labels", x.nrows()), y.len()));
        }
        if y.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (chunk, labels) in x.axis_chunks_iter(Axis(0), 256).zip(y.chunks(256)) {
            let p = self.scores(chunk)?;
            total += labels
                .iter()
                .enumerate()
                .map(|(r, &c)| -p[[r, c]].max(f64::MIN_POSITIVE).ln())
                .sum::<f64>();
        }
        Ok(total / y.len() as f64)
    }

    /// Mean cross-entropy and translation-layer gradients from top-layer
    /// activations, using `dL/dlogits = (softmax - one_hot) / batch`.
    pub fn translation_gradients(&self, top: ArrayView2<f64>, one_hot: ArrayView2<f64>) -> TranslationGradients {
        let b = top.nrows() as f64;
        let mut delta = self.translate(top);
        let loss = cross_entropy(delta.view(), one_hot) / b;
        delta -= &one_hot;
        delta /= b;
        TranslationGradients {
            loss,
            weights: top.t().dot(&delta),
            bias: delta.sum_axis(Axis(0)),
            logits_delta: delta,
        }
    }

    /// Backpropagates the mean cross-entropy through every layer.
    pub fn gradients(&self, x: ArrayView2<f64>, one_hot: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        let acts = self.hidden_activations(x)?;
        let top = acts.last().expect("at least one layer");
        let tg = self.translation_gradients(top.view(), one_hot);

        let mut layers = Vec::with_capacity(self.rbm_layers.len());
        let mut upstream = tg.logits_delta.dot(&self.translation_weights.t());
        for k in (0..self.rbm_layers.len()).rev() {
            let a = &acts[k];
            Zip::from(&mut upstream).and(a).for_each(|d, &a| *d *= a * (1.0 - a));
            let input = if k == 0 { x } else { acts[k - 1].view() };
            let grad_w = input.t().dot(&upstream);
            let grad_b = upstream.sum_axis(Axis(0));
            if k > 0 {
                upstream = upstream.dot(&self.rbm_layers[k].weights.t());
            }
            layers.push((grad_w, grad_b));
        }
        layers.reverse();
        Ok((
            tg.loss,
            Gradients {
                layers,
                translation_weights: tg.weights,
                translation_bias: tg.bias,
            },
        ))
    }

    /// Writes the model file: `HSDBN1`, a u64 little-endian length, a UTF-8
    /// JSON header, then every tensor as little-endian f64 in row-major
    /// order (per RBM: weights, visible bias, hidden bias; then the
    /// translation weights and bias).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let header = ModelHeader {
            layers: self
                .rbm_layers
                .iter()
                .map(|r| LayerShape {
                    visible: r.n_visible(),
                    hidden: r.n_hidden(),
                })
                .collect(),
            classes: self.class_labels.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for t in self.tensors() {
            for v in t.1 {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn tensors(&self) -> Vec<(String, Box<dyn Iterator<Item = f64> + '_>)> {
        let mut out: Vec<(String, Box<dyn Iterator<Item = f64> + '_>)> = Vec::new();
        for (k, r) in self.rbm_layers.iter().enumerate() {
            out.push((format!("rbm[{k}].weights"), Box::new(r.weights.iter().copied())));
            out.push((format!("rbm[{k}].visible_bias"), Box::new(r.visible_bias.iter().copied())));
            out.push((format!("rbm[{k}].hidden_bias"), Box::new(r.hidden_bias.iter().copied())));
        }
        out.push(("translation.weights".into(), Box::new(self.translation_weights.iter().copied())));
        out.push(("translation.bias".into(), Box::new(self.translation_bias.iter().copied())));
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut magic = [0u8; 6];
        cursor
            .read_exact(&mut magic)
            .map_err(|_| Error::Format("model file shorter than its magic".into()))?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format(format!("bad model magic {magic:?}")));
        }
        let mut len = [0u8; 8];
        cursor
            .read_exact(&mut len)
            .map_err(|_| Error::Format("truncated model header length".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if len > cursor.len() {
            return Err(Error::Format("truncated model header".into()));
        }
        let header: ModelHeader =
            serde_json::from_slice(&cursor[..len]).map_err(|e| Error::Format(format!("model header: {e}")))?;
        cursor = &cursor[len..];

        if header.layers.is_empty() {
            return Err(Error::Format("model has no layers".into()));
        }
        if header.classes.len() != NUM_CLASSES {
            return Err(Error::Format(format!("model has {} classes, expected {NUM_CLASSES}", header.classes.len())));
        }
        for (k, pair) in header.layers.windows(2).enumerate() {
            if pair[0].hidden != pair[1].visible {
                return Err(Error::Format(format!(
                    "layer {} has {} visible units but layer {k} has {} hidden",
                    k + 1,
                    pair[1].visible,
                    pair[0].hidden
                )));
            }
        }

        let mut take = |name: &str, n: usize| -> Result<Vec<f64>> {
            let need = n * 8;
            if cursor.len() < need {
                return Err(Error::Format(format!(
                    "tensor {name} truncated: need {need} bytes, {} left",
                    cursor.len()
                )));
            }
            let (head, rest) = cursor.split_at(need);
            cursor = rest;
            Ok(head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };

        let mut rbms = Vec::with_capacity(header.layers.len());
        for (k, shape) in header.layers.iter().enumerate() {
            let (v, h) = (shape.visible, shape.hidden);
            let w = take(&format!("rbm[{k}].weights"), v * h)?;
            let vb = take(&format!("rbm[{k}].visible_bias"), v)?;
            let hb = take(&format!("rbm[{k}].hidden_bias"), h)?;
            rbms.push(Rbm {
                weights: Array2::from_shape_vec((v, h), w).expect("shape checked"),
                visible_bias: Array1::from(vb),
                hidden_bias: Array1::from(hb),
            });
        }
        let top = header.layers.last().expect("non-empty").hidden;
        let tw = take("translation.weights", top * NUM_CLASSES)?;
        let tb = take("translation.bias", NUM_CLASSES)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after last tensor", cursor.len())));
        }
        Ok(Dbn {
            rbm_layers: rbms,
            translation_weights: Array2::from_shape_vec((top, NUM_CLASSES), tw).expect("shape checked"),
            translation_bias: Array1::from(tb),
            class_labels: header.classes,
        })
    }
}

pub const MODEL_MAGIC: &[u8; 6] = b"HSDBN1";

#[derive(Debug, Serialize, Deserialize)]
struct LayerShape {
    visible: usize,
    hidden: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    layers: Vec<LayerShape>,
    classes: Vec<Letter>,
}

/// Greedy layer-wise pretraining. RBM `k + 1` trains on the hidden
/// probabilities of RBM `k` over the whole dataset. `configs` holds one
/// entry per layer, or a single entry shared by all.
pub fn pretrain(
    features: ArrayView2<f64>,
    layer_sizes: &[usize],
    configs: &[RbmTrainConfig],
    mut log: impl FnMut(usize, RbmEpoch),
) -> Result<Vec<Rbm>> {
    if features.nrows() == 0 || layer_sizes.is_empty() {
        return Err(Error::EmptyData);
    }
    if configs.len() != 1 && configs.len() != layer_sizes.len() {
        return Err(Error::Config(format!(
            "{} rbm configs for {} layers",
            configs.len(),
            layer_sizes.len()
        )));
    }
    let mut rbms: Vec<Rbm> = Vec::with_capacity(layer_sizes.len());
    let mut data: Option<Array2<f64>> = None;
    for (k, &size) in layer_sizes.iter().enumerate() {
        let cfg = &configs[k.min(configs.len() - 1)];
        let input = data.as_ref().map(|d| d.view()).unwrap_or(features);
        let rbm = train_rbm_logged(input, size, cfg, |e| log(k, e))?;
        if k + 1 < layer_sizes.len() {
            data = Some(rbm.hidden_probabilities(input)?);
        }
        rbms.push(rbm);
    }
    Ok(rbms)
}

fn noisy<R: Rng + ?Sized>(x: ArrayView2<f64>, sigma: f64, rng: &mut R) -> Array2<f64> {
    if sigma == 0.0 {
        return x.to_owned();
    }
    let normal = Normal::new(0.0, sigma).expect("non-negative sigma");
    x.mapv(|v| (v + normal.sample(rng)).clamp(0.0, 1.0))
}

fn momentum_step(param: &mut Array2<f64>, velocity: &mut Array2<f64>, grad: &Array2<f64>, cfg: &StageConfig, decay: bool) {
    let (lr, m, l2) = (cfg.learning_rate, cfg.momentum, if decay { cfg.l2_coeff } else { 0.0 });
    Zip::from(param).and(velocity).and(grad).for_each(|p, v, &g| {
        *v = m * *v - lr * (g + l2 * *p);
        *p += *v;
    });
}

fn momentum_step_1d(param: &mut Array1<f64>, velocity: &mut Array1<f64>, grad: &Array1<f64>, cfg: &StageConfig) {
    let (lr, m) = (cfg.learning_rate, cfg.momentum);
    Zip::from(param).and(velocity).and(grad).for_each(|p, v, &g| {
        *v = m * *v - lr * g;
        *p += *v;
    });
}

struct EarlyStopping<T> {
    best_loss: f64,
    best: T,
    patience: usize,
    stale: usize,
}

impl<T: Clone> EarlyStopping<T> {
    fn new(initial_loss: f64, initial: T, patience: usize) -> Self {
        EarlyStopping {
            best_loss: initial_loss,
            best: initial,
            patience,
            stale: 0,
        }
    }

    /// Records a validation loss; returns true when training should stop.
    fn observe(&mut self, loss: f64, current: &T) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best = current.clone();
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.patience > 0 && self.stale >= self.patience
    }
}

fn check_sets(dbn: &Dbn, train: &LabeledSet, valid: &LabeledSet) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyData);
    }
    dbn.check_input(train.features.view())?;
    if !valid.is_empty() {
        dbn.check_input(valid.features.view())?;
    }
    Ok(())
}

/// Trains only the translation layer; every RBM parameter stays untouched.
pub fn train_translation_layer(
    dbn: &Dbn,
    train: &LabeledSet,
    valid: &LabeledSet,
    cfg: &SupervisedTrainConfig,
    mut log: impl FnMut(SupervisedEpoch),
) -> Result<Dbn> {
    cfg.validate()?;
    check_sets(dbn, train, valid)?;
    let stage = &cfg.stage2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut model = dbn.clone();
    let valid_top = if valid.is_empty() {
        None
    } else {
        Some(model.top_activations(valid.features.view())?)
    };
    let valid_loss = |m: &Dbn| -> Option<f64> {
        valid_top.as_ref().map(|top| {
            let p = m.translate(top.view());
            valid
                .labels
                .iter()
                .enumerate()
                .map(|(r, &c)| -p[[r, c]].max(f64::MIN_POSITIVE).ln())
                .sum::<f64>()
                / valid.len() as f64
        })
    };
    let params = |m: &Dbn| (m.translation_weights.clone(), m.translation_bias.clone());
    let mut stopper = EarlyStopping::new(valid_loss(&model).unwrap_or(f64::INFINITY), params(&model), stage.early_stopping_patience);

    let mut vw = Array2::zeros(model.translation_weights.raw_dim());
    let mut vb = Array1::zeros(NUM_CLASSES);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..stage.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(stage.batch_size) {
            let x = noisy(train.features.select(Axis(0), idx).view(), stage.input_noise_sigma, &mut rng);
            let y = train.one_hot(idx);
            let top = model.top_activations(x.view())?;
            let g = model.translation_gradients(top.view(), y.view());
            total += g.loss * idx.len() as f64;
            momentum_step(&mut model.translation_weights, &mut vw, &g.weights, stage, true);
            momentum_step_1d(&mut model.translation_bias, &mut vb, &g.bias, stage);
        }
        if !model.is_finite() {
            return Err(Error::NonFinite(format!("translation layer at epoch {epoch}")));
        }
        let vl = valid_loss(&model);
        log(SupervisedEpoch {
            stage: Stage::Translation,
            epoch,
            train_loss: total / train.len() as f64,
            valid_loss: vl,
        });
        if let Some(vl) = vl {
            if stopper.observe(vl, &params(&model)) {
                break;
            }
        }
    }
    if valid_top.is_some() {
        let (w, b) = stopper.best;
        model.translation_weights = w;
        model.translation_bias = b;
    }
    Ok(model)
}

/// Backprop through the whole network with the stage-3 settings.
pub fn fine_tune(
    dbn: &Dbn,
    train: &LabeledSet,
    valid: &LabeledSet,
    cfg: &SupervisedTrainConfig,
    mut log: impl FnMut(SupervisedEpoch),
) -> Result<Dbn> {
    cfg.validate()?;
    check_sets(dbn, train, valid)?;
    let stage = &cfg.stage3;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(1));
    let mut model = dbn.clone();
    let valid_loss = |m: &Dbn| -> Result<Option<f64>> {
        if valid.is_empty() {
            Ok(None)
        } else {
            m.loss(valid.features.view(), &valid.labels).map(Some)
        }
    };
    let mut stopper = EarlyStopping::new(
        valid_loss(&model)?.unwrap_or(f64::INFINITY),
        model.clone(),
        stage.early_stopping_patience,
    );

    let mut v_layers: Vec<(Array2<f64>, Array1<f64>)> = model
        .rbm_layers
        .iter()
        .map(|r| (Array2::zeros(r.weights.raw_dim()), Array1::zeros(r.n_hidden())))
        .collect();
    let mut vw = Array2::zeros(model.translation_weights.raw_dim());
    let mut vb = Array1::zeros(NUM_CLASSES);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..stage.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(stage.batch_size) {
            let x = noisy(train.features.select(Axis(0), idx).view(), stage.input_noise_sigma, &mut rng);
            let y = train.one_hot(idx);
            let (loss, g) = model.gradients(x.view(), y.view())?;
            total += loss * idx.len() as f64;
            for ((rbm, (vw_k, vb_k)), (gw_k, gb_k)) in model.rbm_layers.iter_mut().zip(&mut v_layers).zip(&g.layers) {
                momentum_step(&mut rbm.weights, vw_k, gw_k, stage, true);
                momentum_step_1d(&mut rbm.hidden_bias, vb_k, gb_k, stage);
            }
            momentum_step(&mut model.translation_weights, &mut vw, &g.translation_weights, stage, true);
            momentum_step_1d(&mut model.translation_bias, &mut vb, &g.translation_bias, stage);
        }
        if !model.is_finite() {
            return Err(Error::NonFinite(format!("fine-tuned network at epoch {epoch}")));
        }
        let vl = valid_loss(&model)?;
        log(SupervisedEpoch {
            stage: Stage::FineTune,
            epoch,
            train_loss: total / train.len() as f64,
            valid_loss: vl,
        });
        if let Some(vl) = vl {
            if stopper.observe(vl, &model) {
                break;
            }
        }
    }
    if valid.is_empty() {
        Ok(model)
    } else {
        Ok(stopper.best)
    }
}
