use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{generate_anchors, AnchorGrid, Variances};
use crate::loss::LossWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub num_classes: usize,
    /// Prototype count `k`.
    pub num_prototypes: usize,
    /// Widths of the stride-2 stem convs in front of the first stage.
    pub stem_channels: Vec<usize>,
    /// One stage per pyramid level: a stride-2 conv then a stride-1 conv.
    pub stage_channels: Vec<usize>,
    pub fpn_channels: usize,
    pub proto_channels: usize,
    pub strides: Vec<usize>,
    /// Side length in input pixels of the ratio-1 anchor, per level.
    pub anchor_scales: Vec<f64>,
    pub aspect_ratios: Vec<f64>,
    pub variances: Variances,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub ohem_ratio: f64,
    pub nms_iou: f64,
    /// Candidates per class entering NMS.
    pub nms_top_n: usize,
    pub max_detections: usize,
    pub score_threshold: f64,
    pub mask_threshold: f64,
    /// Crop padding at inference, in prototype pixels.
    pub crop_pad: usize,
    pub loss_weights: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            num_classes: 3,
            num_prototypes: 32,
            stem_channels: vec![16, 32],
            stage_channels: vec![32, 64, 128],
            fpn_channels: 64,
            proto_channels: 64,
            strides: vec![8, 16, 32],
            anchor_scales: vec![24.0, 48.0, 96.0],
            aspect_ratios: vec![1.0, 0.5, 2.0],
            variances: Variances::default(),
            pos_iou: 0.5,
            neg_iou: 0.4,
            ohem_ratio: 3.0,
            nms_iou: 0.5,
            nms_top_n: 200,
            max_detections: 100,
            score_threshold: 0.05,
            mask_threshold: 0.5,
            crop_pad: 1,
            loss_weights: LossWeights::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_size == 0 {
            return bad("input size must be positive".into());
        }
        if self.num_prototypes == 0 {
            return bad("prototype count must be at least 1".into());
        }
        if self.num_classes == 0 {
            return bad("class count must be at least 1".into());
        }
        if self.stage_channels.is_empty() {
            return bad("at least one backbone stage is required".into());
        }
        let widths = self.stem_channels.iter().chain(&self.stage_channels);
        if widths.chain([&self.fpn_channels, &self.proto_channels]).any(|&c| c == 0) {
            return bad("channel widths must be positive".into());
        }
        let expected: Vec<usize> = (0..self.stage_channels.len())
            .map(|i| 1usize << (self.stem_channels.len() + 1 + i))
            .collect();
        if self.strides != expected {
            return bad(format!(
                "strides {:?} do not match the backbone, which yields {expected:?}",
                self.strides
            ));
        }
        if self.anchor_scales.len() != self.strides.len() {
            return bad("one anchor scale per level is required".into());
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.neg_iou) && unit(self.pos_iou) && self.neg_iou <= self.pos_iou) {
            return bad(format!("matching thresholds pos {} / neg {}", self.pos_iou, self.neg_iou));
        }
        if !unit(self.nms_iou) || !unit(self.score_threshold) {
            return bad("NMS and score thresholds must lie in [0, 1]".into());
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return bad(format!("mask threshold {} outside (0, 1)", self.mask_threshold));
        }
        if !(self.ohem_ratio > 0.0) {
            return bad("OHEM ratio must be positive".into());
        }
        Ok(())
    }

    pub fn anchors(&self) -> Result<AnchorGrid> {
        generate_anchors(self.input_size, &self.strides, &self.anchor_scales, &self.aspect_ratios)
    }

    pub fn num_anchor_ratios(&self) -> usize {
        self.aspect_ratios.len()
    }

    /// Width of one anchor's output row: box, classes plus background, coefficients.
    pub fn per_anchor_outputs(&self) -> usize {
        4 + self.num_classes + 1 + self.num_prototypes
    }

    /// Side of the stride-8 map.
    pub fn p3_size(&self) -> usize {
        self.input_size.div_ceil(self.strides[0])
    }

    /// Side of the prototype grid: the stride-8 map upsampled by 2.
    pub fn prototype_size(&self) -> usize {
        2 * self.p3_size()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub iterations: usize,
    pub lr: f64,
    /// Fractions of `iterations` at which the rate is multiplied by `gamma`.
    pub milestones: Vec<f64>,
    pub gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Linear ramp from `warmup_factor · lr` over these many iterations.
    pub warmup_iters: usize,
    pub warmup_factor: f64,
    /// Global L2 gradient-norm cap; 0 disables it.
    pub grad_clip: f64,
    pub flip_prob: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            lr: 1e-3,
            milestones: vec![0.6, 0.85],
            gamma: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_iters: 0,
            warmup_factor: 0.1,
            grad_clip: 0.0,
            flip_prob: 0.5,
            checkpoint_every: 1000,
            seed: 0,
        }
    }
}

impl Schedule {
    /// Short run used to overfit a handful of samples.
    pub fn sanity() -> Self {
        Self {
            iterations: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.lr)));
        }
        if self.milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Config("milestones are fractions of the run in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip probability outside [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Config("momentum, weight decay or clip out of range".into()));
        }
        Ok(())
    }

    pub fn milestone_iters(&self) -> Vec<usize> {
        self.milestones
            .iter()
            .map(|m| (m * self.iterations as f64).round() as usize)
            .collect()
    }

    /// Learning rate for 0-based iteration `iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let decays = self.milestone_iters().iter().filter(|&&m| iter >= m).count();
        let mut lr = self.lr * self.gamma.powi(decays as i32);
        if iter < self.warmup_iters {
            let t = iter as f64 / self.warmup_iters as f64;
            lr *= self.warmup_factor + (1.0 - self.warmup_factor) * t;
        }
        lr
    }
}
