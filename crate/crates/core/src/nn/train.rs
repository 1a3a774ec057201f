use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::graph::{loss_and_gradients, Batch, Mode};
use super::io::save_weights;
use super::spec::ModelSpec;
use super::tensor::normalize_into;
use super::weights::Weights;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// When set, the learning rate follows a cosine from `lr` down to this
    /// value over all steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_final: Option<f64>,
    /// Weights are written here after every epoch when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 64,
            epochs: 10,
            seed: 0,
            lr_final: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(f) = self.lr_final {
            if !(f >= 0.0 && f <= self.lr) {
                return Err(Error::invalid(format!("final learning rate {f} must lie in [0, {}]", self.lr)));
            }
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::invalid("adam parameters out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub config: TrainConfig,
    pub seed: u64,
    pub samples: usize,
    pub steps: u64,
    pub model: ModelSpec,
}

/// Region-of-interest crops (8-bit, `66 x 200 x 3`), car state and labels.
#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    rois: Vec<u8>,
    states: Vec<f32>,
    labels: Vec<f32>,
    keys: Vec<u64>,
}

const ROI_LEN: usize = 66 * 200 * 3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl TrainSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, roi: &[u8], state: [f32; 4], label: f32) -> Result<()> {
        if roi.len() != ROI_LEN {
            return Err(Error::Shape {
                layer: "input".into(),
                expected: format!("{ROI_LEN} bytes"),
                got: roi.len().to_string(),
            });
        }
        if !(0.0..=1.0).contains(&label) {
            return Err(Error::invalid(format!("label {label} outside [0, 1]")));
        }
        let key = fnv1a(
            label
                .to_le_bytes()
                .into_iter()
                .chain(state.iter().flat_map(|s| s.to_le_bytes()))
                .chain(roi.iter().copied()),
        );
        self.rois.extend_from_slice(roi);
        self.states.extend_from_slice(&state);
        self.labels.push(label);
        self.keys.push(key);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn roi(&self, i: usize) -> &[u8] {
        &self.rois[i * ROI_LEN..(i + 1) * ROI_LEN]
    }

    pub fn label(&self, i: usize) -> f32 {
        self.labels[i]
    }

    pub fn state(&self, i: usize) -> [f32; 4] {
        self.states[i * 4..i * 4 + 4].try_into().unwrap()
    }

    /// Index order that depends only on sample content.
    fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by_key(|&i| (self.keys[i], self.labels[i].to_bits()));
        idx
    }

    /// Normalized images, optional state and labels for `idx`.
    pub fn gather(&self, idx: &[usize], with_state: bool) -> (Vec<f32>, Option<Vec<f32>>, Vec<f32>) {
        let mut images = vec![0.0f32; idx.len() * ROI_LEN];
        for (k, &i) in idx.iter().enumerate() {
            normalize_into(self.roi(i), &mut images[k * ROI_LEN..(k + 1) * ROI_LEN]);
        }
        let states = with_state.then(|| idx.iter().flat_map(|&i| self.state(i)).collect());
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (images, states, labels)
    }
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed.rotate_left(29) ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5eed
}

/// Trains from a fresh seeded initialization.
pub fn train(spec: &ModelSpec, set: &TrainSet, cfg: &TrainConfig) -> Result<(Weights<f32>, TrainReport)> {
    let init = Weights::init(spec, cfg.seed)?;
    train_from(spec, init, set, cfg)
}

/// Continues training `weights` on `set`.
pub fn train_from(spec: &ModelSpec, mut weights: Weights<f32>, set: &TrainSet, cfg: &TrainConfig) -> Result<(Weights<f32>, TrainReport)> {
    cfg.validate()?;
    weights.check(spec)?;
    if set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut adam = Adam::new(cfg.lr);
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.eps;
    let canonical = set.canonical_order();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    let total_steps = (cfg.epochs * set.len().div_ceil(cfg.batch)) as f64;
    for epoch in 0..cfg.epochs {
        let mut order = canonical.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0xa076_1d64_78bd_642f)));
        let mut total = 0.0f64;
        for (k, chunk) in order.chunks(cfg.batch).enumerate() {
            let (images, states, labels) = set.gather(chunk, spec.use_car_state);
            let batch = Batch::new(&images, states.as_deref(), chunk.len());
            let (loss, grads) = loss_and_gradients(spec, &weights, &batch, &labels, Mode::Train { seed: step_seed(cfg.seed, step) })?;
            if !loss.is_finite() || !grads.all_finite() {
                log::error!("non-finite loss at epoch {epoch} step {k}");
                return Err(Error::Diverged { epoch, step: k });
            }
            if let Some(lr_final) = cfg.lr_final {
                let progress = step as f64 / total_steps;
                adam.lr = lr_final + 0.5 * (cfg.lr - lr_final) * (1.0 + (std::f64::consts::PI * progress).cos());
            }
            adam.update(&mut weights, &grads);
            total += loss as f64 * chunk.len() as f64;
            step += 1;
        }
        let mean = total / set.len() as f64;
        log::info!("epoch {} loss {:.6}", epoch + 1, mean);
        epoch_loss.push(mean);
        if let Some(dir) = &cfg.checkpoint_dir {
            save_weights(&weights, &dir.join(format!("epoch_{:03}.pnet", epoch + 1)))?;
            save_weights(&weights, &dir.join("latest.pnet"))?;
        }
    }
    Ok((
        weights,
        TrainReport {
            epoch_loss,
            config: cfg.clone(),
            seed: cfg.seed,
            samples: set.len(),
            steps: step,
            model: spec.clone(),
        },
    ))
}
