//! Timing and divergence of the two suppression variants on clustered
//! random detections.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::model::NmsVariant;
use crate::nms::{fast_nms_indices, sequential_nms_indices, truncate_per_class, ScoredDetections};

/// `n` detections over `c` classes, gathered around a few cluster centres
/// so that suppression chains actually form.
pub fn clustered_detections(rng: &mut impl Rng, n: usize, c: usize) -> ScoredDetections {
    let clusters = (n / 6).max(1);
    let centres: Vec<(f64, f64, f64, f64)> = (0..clusters)
        .map(|_| {
            let w = rng.gen_range(0.05..0.4);
            let h = rng.gen_range(0.05..0.4);
            (rng.gen_range(0.0..1.0 - w), rng.gen_range(0.0..1.0 - h), w, h)
        })
        .collect();
    let mut boxes = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y, w, h) = centres[rng.gen_range(0..clusters)];
        let j = |r: &mut dyn rand::RngCore, s: f64| r.gen_range(-0.25..0.25) * s;
        let x1 = (x + j(rng, w)).clamp(0.0, 1.0);
        let y1 = (y + j(rng, h)).clamp(0.0, 1.0);
        let x2 = (x + w + j(rng, w)).clamp(x1, 1.0);
        let y2 = (y + h + j(rng, h)).clamp(y1, 1.0);
        boxes.push(BBox::new(x1, y1, x2, y2));
        scores.push(rng.gen_range(0.0..1.0));
        classes.push(rng.gen_range(0..c.max(1)));
    }
    ScoredDetections::new(boxes, scores, classes).expect("equal lengths")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n: usize,
    pub c: usize,
    pub trials: usize,
    /// `None` times both variants.
    pub variant: Option<NmsVariant>,
    pub iou: f64,
    pub top_n: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            c: 80,
            trials: 100,
            variant: None,
            iou: 0.5,
            top_n: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: NmsVariant,
    pub n: usize,
    pub c: usize,
    pub trials: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub kept_mean: f64,
    pub divergence_rate: f64,
}

/// Kept row indices (into the truncated input) of both variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub fast: Vec<usize>,
    pub sequential: Vec<usize>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub variants: Vec<VariantReport>,
    pub divergence_rate: f64,
    pub trials: Vec<TrialRecord>,
}

impl BenchReport {
    /// Recomputes the divergence rate from the stored kept sets.
    pub fn audit(&self) -> bool {
        if self.trials.len() != self.config.trials {
            return false;
        }
        let differ = self
            .trials
            .iter()
            .filter(|t| {
                let mut a = t.fast.clone();
                let mut b = t.sequential.clone();
                a.sort_unstable();
                b.sort_unstable();
                a != b
            })
            .count();
        let rate = if self.trials.is_empty() { 0.0 } else { differ as f64 / self.trials.len() as f64 };
        rate == self.divergence_rate
            && self.variants.iter().all(|v| v.divergence_rate == rate)
            && self.trials.iter().all(|t| t.diverged == (sorted(&t.fast) != sorted(&t.sequential)))
    }
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

fn percentile(sorted_ms: &[f64], p: f64) -> f64 {
    if sorted_ms.is_empty() {
        return 0.0;
    }
    let rank = ((p * sorted_ms.len() as f64).ceil() as usize).clamp(1, sorted_ms.len());
    sorted_ms[rank - 1]
}

fn summarise(variant: NmsVariant, cfg: &BenchConfig, times: &mut [f64], kept: &[usize], rate: f64) -> VariantReport {
    times.sort_by(f64::total_cmp);
    let t = times.len().max(1) as f64;
    VariantReport {
        variant,
        n: cfg.n,
        c: cfg.c,
        trials: cfg.trials,
        mean_ms: times.iter().sum::<f64>() / t,
        p50_ms: percentile(times, 0.5),
        p95_ms: percentile(times, 0.95),
        kept_mean: kept.iter().sum::<usize>() as f64 / t,
        divergence_rate: rate,
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.n == 0 || cfg.c == 0 {
        return Err(Error::Config("benchmark needs n ≥ 1 and c ≥ 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.iou) {
        return Err(Error::Config(format!("IoU threshold {} outside [0, 1]", cfg.iou)));
    }
    let mut trials = Vec::with_capacity(cfg.trials);
    let (mut fast_ms, mut seq_ms) = (Vec::new(), Vec::new());
    let (mut fast_kept, mut seq_kept) = (Vec::new(), Vec::new());
    for trial in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dets = truncate_per_class(&clustered_detections(&mut rng, cfg.n, cfg.c), cfg.top_n);

        let t = Instant::now();
        let fast = fast_nms_indices(&dets, cfg.iou, cfg.top_n);
        fast_ms.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        let sequential = sequential_nms_indices(&dets, cfg.iou);
        seq_ms.push(t.elapsed().as_secs_f64() * 1e3);

        fast_kept.push(fast.len());
        seq_kept.push(sequential.len());
        let diverged = sorted(&fast) != sorted(&sequential);
        trials.push(TrialRecord {
            trial,
            seed,
            fast,
            sequential,
            diverged,
        });
    }
    let differ = trials.iter().filter(|t| t.diverged).count();
    let rate = if trials.is_empty() { 0.0 } else { differ as f64 / trials.len() as f64 };
    let mut variants = Vec::new();
    if cfg.variant != Some(NmsVariant::Sequential) {
        variants.push(summarise(NmsVariant::Fast, cfg, &mut fast_ms, &fast_kept, rate));
    }
    if cfg.variant != Some(NmsVariant::Fast) {
        variants.push(summarise(NmsVariant::Sequential, cfg, &mut seq_ms, &seq_kept, rate));
    }
    Ok(BenchReport {
        config: cfg.clone(),
        variants,
        divergence_rate: rate,
        trials,
    })
}
