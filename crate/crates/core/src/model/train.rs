use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Schedule;
use super::network::Model;
use super::objective::{compute_loss, prepare_targets};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Sgd};
use crate::tensor::Tensor;

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub cls: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub mask: f64,
    pub semantic: f64,
    pub total: f64,
    pub lr: f64,
    pub positives: usize,
    pub sample: usize,
    pub flipped: bool,
}

/// Where a run stands, as stored in checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub iter: usize,
    pub schedule: Schedule,
}

const MOMENTUM_PREFIX: &str = "momentum/";

/// Single-image SGD. Sample order and flips are pure functions of
/// `(seed, iteration)`, so a resumed run repeats an uninterrupted one exactly.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model<f64>,
    optim: Sgd<f64>,
    schedule: Schedule,
    iter: usize,
    last_checkpoint: Option<PathBuf>,
}

fn stream_rng(seed: u64, salt: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(model: Model<f64>, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            optim: Sgd::new(schedule.momentum, schedule.weight_decay),
            model,
            schedule,
            iter: 0,
            last_checkpoint: None,
        })
    }

    pub fn model(&self) -> &Model<f64> {
        &self.model
    }

    pub fn into_model(self) -> Model<f64> {
        self.model
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Number of completed iterations.
    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.last_checkpoint.as_deref()
    }

    /// Which sample iteration `iter` uses and whether it is flipped.
    pub fn plan(&self, iter: usize, n_samples: usize) -> (usize, bool) {
        let seed = self.schedule.seed;
        let epoch = iter / n_samples;
        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut stream_rng(seed, 0x5eed_0f_5a_3b1e, epoch as u64));
        let flip = stream_rng(seed, 0xf11b, iter as u64).gen_bool(self.schedule.flip_prob);
        (order[iter % n_samples], flip)
    }

    /// One forward, backward and update.
    pub fn step(&mut self, samples: &[Sample]) -> Result<IterationLog> {
        if samples.is_empty() {
            return Err(Error::Validation("training set is empty".into()));
        }
        let iter = self.iter;
        let lr = self.schedule.lr_at(iter);
        let (idx, flipped) = self.plan(iter, samples.len());
        let flipped_sample;
        let sample = if flipped {
            flipped_sample = samples[idx].flipped_horizontally();
            &flipped_sample
        } else {
            &samples[idx]
        };
        let cfg = self.model.config().clone();
        let targets = prepare_targets(&cfg, self.model.anchors(), sample)?;
        let (out, cache) = self.model.forward_with_cache(&sample.image, true)?;
        let (loss, grads) = compute_loss(&cfg, self.model.anchors(), &out, &targets)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                iter,
                checkpoint: self.last_checkpoint.clone(),
            });
        }
        self.model.zero_grad();
        self.model.backward(&cache, &grads)?;
        let mut params = self.model.params_mut();
        for p in params.iter_mut() {
            p.grad_mut();
        }
        if self.schedule.grad_clip > 0.0 {
            clip_grad_norm(&mut params, self.schedule.grad_clip);
        }
        self.optim.step(&mut params, lr)?;
        self.iter += 1;
        Ok(IterationLog {
            iter,
            cls: loss.cls,
            bbox: loss.bbox,
            mask: loss.mask,
            semantic: loss.semantic,
            total: loss.total,
            lr,
            positives: loss.positives,
            sample: idx,
            flipped,
        })
    }

    /// Runs until the schedule's iteration count, checkpointing into
    /// `checkpoint_dir` every `checkpoint_every` iterations and at the end.
    pub fn run(
        &mut self,
        samples: &[Sample],
        checkpoint_dir: Option<&Path>,
        mut on_iter: impl FnMut(&IterationLog) -> Result<()>,
    ) -> Result<Vec<IterationLog>> {
        let mut logs = Vec::with_capacity(self.schedule.iterations.saturating_sub(self.iter));
        while self.iter < self.schedule.iterations {
            let log = self.step(samples)?;
            on_iter(&log)?;
            logs.push(log);
            let every = self.schedule.checkpoint_every;
            let due = (every > 0 && self.iter % every == 0) || self.iter == self.schedule.iterations;
            if let (Some(dir), true) = (checkpoint_dir, due) {
                self.save_checkpoint(dir)?;
            }
        }
        Ok(logs)
    }

    pub fn save_checkpoint(&mut self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("checkpoint_{:06}.ckpt", self.iter));
        self.to_checkpoint().save(&path)?;
        self.last_checkpoint = Some(path.clone());
        Ok(path)
    }

    /// Weights, momentum buffers, schedule and iteration count.
    pub fn to_checkpoint(&self) -> Checkpoint<f64> {
        let state = TrainState {
            iter: self.iter,
            schedule: self.schedule.clone(),
        };
        let mut ck = self
            .model
            .to_checkpoint(serde_json::json!({ "train": state }));
        let params = self.model.named_parameters();
        for ((name, p), v) in params.iter().zip(self.optim.velocities()) {
            ck.push(
                format!("{MOMENTUM_PREFIX}{name}"),
                Tensor::from_vec(p.shape(), v.clone()).expect("velocity matches parameter"),
            );
        }
        ck
    }

    /// Resumes from [`Self::to_checkpoint`] output. A checkpoint without
    /// training state starts a fresh run from its weights.
    pub fn from_checkpoint(ck: &Checkpoint<f64>, schedule: Option<Schedule>) -> Result<Self> {
        let model = Model::from_checkpoint(ck)?;
        let state: Option<TrainState> = match ck.meta.get("train") {
            Some(v) => Some(
                serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("checkpoint training state: {e}")))?,
            ),
            None => None,
        };
        let schedule = schedule
            .or_else(|| state.as_ref().map(|s| s.schedule.clone()))
            .unwrap_or_default();
        let mut t = Trainer::new(model, schedule)?;
        if let Some(state) = state {
            t.iter = state.iter;
            let names: Vec<String> = t.model.named_parameters().into_iter().map(|(n, _)| n).collect();
            let vel: Option<Vec<Vec<f64>>> = names
                .iter()
                .map(|n| ck.get(&format!("{MOMENTUM_PREFIX}{n}")).map(|v| v.data().to_vec()))
                .collect();
            if let Some(v) = vel {
                t.optim.set_velocities(v);
            }
        }
        Ok(t)
    }
}

fn clip_grad_norm(params: &mut [&mut Tensor<f64>], max_norm: f64) {
    let norm = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            for g in p.grad_mut() {
                *g *= s;
            }
        }
    }
}
