//! Binary restricted Boltzmann machine trained with one-step contrastive
//! divergence.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rbm {
    /// `n_visible x n_hidden`
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbmTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Momentum for the first `momentum_switch_epoch` epochs.
    pub initial_momentum: f64,
    pub momentum: f64,
    pub momentum_switch_epoch: usize,
    pub l1_coeff: f64,
    pub l2_coeff: f64,
    /// Stop once the relative reconstruction-error improvement stays below
    /// this for `convergence_window` consecutive epochs.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub init_std: f64,
    pub rng_seed: u64,
}

impl Default for RbmTrainConfig {
    fn default() -> Self {
        RbmTrainConfig {
            learning_rate: 0.1,
            epochs: 60,
            batch_size: 100,
            initial_momentum: 0.5,
            momentum: 0.9,
            momentum_switch_epoch: 5,
            l1_coeff: 1e-5,
            l2_coeff: 2e-4,
            convergence_tol: 1e-4,
            convergence_window: 5,
            init_std: 0.01,
            rng_seed: 1,
        }
    }
}

impl RbmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("rbm learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("rbm batch_size must be at least 1".into()));
        }
        for (name, m) in [("initial_momentum", self.initial_momentum), ("momentum", self.momentum)] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Config(format!("rbm {name} must lie in [0, 1), got {m}")));
            }
        }
        if !(self.l1_coeff >= 0.0 && self.l2_coeff >= 0.0 && self.convergence_tol >= 0.0 && self.init_std >= 0.0) {
            return Err(Error::Config("rbm decay, tolerance and init_std must be non-negative".into()));
        }
        Ok(())
    }

    pub fn step(&self, epoch: usize) -> CdStep {
        CdStep {
            learning_rate: self.learning_rate,
            momentum: if epoch < self.momentum_switch_epoch {
                self.initial_momentum
            } else {
                self.momentum
            },
            l1_coeff: self.l1_coeff,
            l2_coeff: self.l2_coeff,
        }
    }
}

/// Hyperparameters of a single CD-1 update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdStep {
    pub learning_rate: f64,
    pub momentum: f64,
    pub l1_coeff: f64,
    pub l2_coeff: f64,
}

/// Previous parameter updates, for momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

impl Velocity {
    pub fn zeros(rbm: &Rbm) -> Self {
        Velocity {
            weights: Array2::zeros(rbm.weights.raw_dim()),
            visible_bias: Array1::zeros(rbm.n_visible()),
            hidden_bias: Array1::zeros(rbm.n_hidden()),
        }
    }
}

/// Independent Bernoulli draws, one uniform per element in row-major order.
pub fn sample_bernoulli<R: Rng + ?Sized>(p: ArrayView2<f64>, rng: &mut R) -> Array2<f64> {
    p.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

fn check_width(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::dims(format!("{what} width {expected}"), actual));
    }
    Ok(())
}

impl Rbm {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Rbm {
            weights: Array2::zeros((n_visible, n_hidden)),
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
        }
    }

    /// Gaussian weights with standard deviation `std`, zero biases.
    pub fn random<R: Rng + ?Sized>(n_visible: usize, n_hidden: usize, std: f64, rng: &mut R) -> Self {
        let mut rbm = Rbm::zeros(n_visible, n_hidden);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("positive std");
            rbm.weights.iter_mut().for_each(|w| *w = normal.sample(rng));
        }
        rbm
    }

    pub fn n_visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.visible_bias).chain(&self.hidden_bias).all(|v| v.is_finite())
    }

    /// `sigma(hidden_bias + v W)` for every row of `v`.
    pub fn hidden_probabilities(&self, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width("visible", self.n_visible(), v.ncols())?;
        let mut h = v.dot(&self.weights) + &self.hidden_bias;
        h.mapv_inplace(sigmoid);
        Ok(h)
    }

    /// `sigma(visible_bias + h W^T)` for every row of `h`.
    pub fn visible_probabilities(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width("hidden", self.n_hidden(), h.ncols())?;
        let mut v = h.dot(&self.weights.t()) + &self.visible_bias;
        v.mapv_inplace(sigmoid);
        Ok(v)
    }

    pub fn hidden_probabilities_one(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        let h = self.hidden_probabilities(v.insert_axis(Axis(0)))?;
        Ok(h.index_axis_move(Axis(0), 0))
    }

    pub fn visible_probabilities_one(&self, h: ArrayView1<f64>) -> Result<Array1<f64>> {
        let v = self.visible_probabilities(h.insert_axis(Axis(0)))?;
        Ok(v.index_axis_move(Axis(0), 0))
    }

    /// One CD-1 step on a mini-batch.
    ///
    /// Positive phase uses sampled hidden states; the reconstruction and the
    /// negative hidden phase use probabilities. Weights decay with
    /// `l2 * W + l1 * sign(W)`; biases do not decay.
    pub fn cd1_batch_update<R: Rng + ?Sized>(
        &mut self,
        batch: ArrayView2<f64>,
        step: &CdStep,
        velocity: &mut Velocity,
        rng: &mut R,
    ) -> Result<()> {
        check_width("visible", self.n_visible(), batch.ncols())?;
        if batch.nrows() == 0 {
            return Ok(());
        }
        let b = batch.nrows() as f64;
        let h0 = self.hidden_probabilities(batch)?;
        let h0_sample = sample_bernoulli(h0.view(), rng);
        let v1 = self.visible_probabilities(h0_sample.view())?;
        let h1 = self.hidden_probabilities(v1.view())?;

        let mut grad_w = batch.t().dot(&h0);
        grad_w -= &v1.t().dot(&h1);
        let grad_v = (&batch.sum_axis(Axis(0)) - &v1.sum_axis(Axis(0))) / b;
        let grad_h = (&h0.sum_axis(Axis(0)) - &h1.sum_axis(Axis(0))) / b;

        let CdStep {
            learning_rate: lr,
            momentum: m,
            l1_coeff: l1,
            l2_coeff: l2,
        } = *step;
        Zip::from(&mut velocity.weights)
            .and(&mut self.weights)
            .and(&grad_w)
            .for_each(|vel, w, &g| {
                let sign = if *w > 0.0 {
                    1.0
                } else if *w < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *vel = m * *vel + lr * (g / b - l2 * *w - l1 * sign);
                *w += *vel;
            });
        Zip::from(&mut velocity.visible_bias)
            .and(&mut self.visible_bias)
            .and(&grad_v)
            .for_each(|vel, p, &g| {
                *vel = m * *vel + lr * g;
                *p += *vel;
            });
        Zip::from(&mut velocity.hidden_bias)
            .and(&mut self.hidden_bias)
            .and(&grad_h)
            .for_each(|vel, p, &g| {
                *vel = m * *vel + lr * g;
                *p += *vel;
            });

        if !self.is_finite() {
            return Err(Error::NonFinite("rbm parameters after cd-1 update".into()));
        }
        Ok(())
    }

    /// Mean squared difference between the data and its mean-field
    /// reconstruction `sigma(sigma(v W + c) W^T + b)`.
    pub fn reconstruction_error(&self, data: ArrayView2<f64>) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        // chunked to bound memory on large datasets
        for chunk in data.axis_chunks_iter(Axis(0), 512) {
            let h = self.hidden_probabilities(chunk)?;
            let v1 = self.visible_probabilities(h.view())?;
            total += Zip::from(&chunk).and(&v1).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
        }
        Ok(total / data.len() as f64)
    }
}

/// Per-epoch progress reported by [`train_rbm_logged`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbmEpoch {
    pub epoch: usize,
    pub reconstruction_error: f64,
}

pub fn train_rbm(data: ArrayView2<f64>, n_hidden: usize, cfg: &RbmTrainConfig) -> Result<Rbm> {
    train_rbm_logged(data, n_hidden, cfg, |_| {})
}

/// Trains an RBM from a Gaussian initialization. Rows are reshuffled every
/// epoch; training stops after `cfg.epochs` or on convergence.
pub fn train_rbm_logged(
    data: ArrayView2<f64>,
    n_hidden: usize,
    cfg: &RbmTrainConfig,
    mut log: impl FnMut(RbmEpoch),
) -> Result<Rbm> {
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(Error::EmptyData);
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut rbm = Rbm::random(data.ncols(), n_hidden, cfg.init_std, &mut rng);
    let mut velocity = Velocity::zeros(&rbm);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut previous: Option<f64> = None;
    let mut stalled = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let step = cfg.step(epoch);
        for idx in order.chunks(cfg.batch_size) {
            let batch = data.select(Axis(0), idx);
            rbm.cd1_batch_update(batch.view(), &step, &mut velocity, &mut rng)?;
        }
        let err = rbm.reconstruction_error(data)?;
        log(RbmEpoch {
            epoch,
            reconstruction_error: err,
        });
        if let Some(prev) = previous {
            let improvement = if prev > 0.0 { (prev - err) / prev } else { 0.0 };
            stalled = if improvement < cfg.convergence_tol { stalled + 1 } else { 0 };
            if cfg.convergence_window > 0 && stalled >= cfg.convergence_window {
                break;
            }
        }
        previous = Some(err);
    }
    Ok(rbm)
}
