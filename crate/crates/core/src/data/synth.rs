//! Deterministic synthetic shapes: circles, triangles and rectangles painted
//! back to front over a shaded background, with occlusion-aware masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{image_from_rgb8, Instance, Sample};
use crate::mask::Mask;

pub const CLASS_NAMES: [&str; 3] = ["circle", "triangle", "rectangle"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub size: usize,
    pub max_instances: usize,
    /// Shape extent range in pixels.
    pub min_extent: f64,
    pub max_extent: f64,
    /// A shape occluded beyond this visible fraction is re-rolled.
    pub min_visible_fraction: f64,
    pub min_visible_pixels: usize,
    /// Amplitude of per-pixel background noise, in 8-bit levels.
    pub noise: u8,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 128,
            max_instances: 4,
            min_extent: 24.0,
            max_extent: 64.0,
            min_visible_fraction: 0.35,
            min_visible_pixels: 24,
            noise: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleStats {
    pub instances: usize,
    pub rerolls: usize,
    /// Two instances of one class whose boxes overlap.
    pub same_class_overlap: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub seed: u64,
    pub samples: usize,
    pub instances: usize,
    pub rerolls: usize,
    pub same_class_overlap_samples: usize,
    pub overlap_frequency: f64,
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Circle { cx: f64, cy: f64, r: f64 },
    Triangle { v: [(f64, f64); 3] },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn class(&self) -> usize {
        match self {
            Shape::Circle { .. } => 0,
            Shape::Triangle { .. } => 1,
            Shape::Rect { .. } => 2,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Circle { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Triangle { v } => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let d = [edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0])];
                d.iter().all(|&e| e >= 0.0) || d.iter().all(|&e| e <= 0.0)
            }
        }
    }

    fn random(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Shape {
        let s = cfg.size as f64;
        let extent = rng.gen_range(cfg.min_extent..=cfg.max_extent);
        let half = extent / 2.0;
        let cx = rng.gen_range(half * 0.6..s - half * 0.6);
        let cy = rng.gen_range(half * 0.6..s - half * 0.6);
        match rng.gen_range(0..3) {
            0 => Shape::Circle { cx, cy, r: half },
            1 => {
                let rot: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let v = std::array::from_fn(|i| {
                    let a = rot + i as f64 * std::f64::consts::TAU / 3.0;
                    (cx + half * a.cos(), cy + half * a.sin())
                });
                Shape::Triangle { v }
            }
            _ => {
                let aspect: f64 = rng.gen_range(0.5f64..2.0).sqrt();
                let (hw, hh) = (half * aspect * 0.85, half / aspect * 0.85);
                Shape::Rect {
                    x0: cx - hw,
                    y0: cy - hh,
                    x1: cx + hw,
                    y1: cy + hh,
                }
            }
        }
    }
}

fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
}

/// One sample, a pure function of `(seed, index, cfg)`.
pub fn generate_sample(seed: u64, index: u64, cfg: &SynthConfig) -> (Sample, SampleStats) {
    let mut rng = rng_for(seed, index);
    let n = cfg.size;

    let bg0 = random_color(&mut rng);
    let bg1 = random_color(&mut rng);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let bg_mean = [0, 1, 2].map(|c| (bg0[c] + bg1[c]) / 2.0);

    let target = rng.gen_range(1..=cfg.max_instances.max(1));
    let mut shapes: Vec<(Shape, [f64; 3])> = Vec::new();
    let mut stats = SampleStats::default();
    let mut labels = vec![u8::MAX; n * n];

    let paint = |shapes: &[(Shape, [f64; 3])], labels: &mut Vec<u8>| {
        labels.fill(u8::MAX);
        for (id, (shape, _)) in shapes.iter().enumerate() {
            for y in 0..n {
                for x in 0..n {
                    if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        labels[y * n + x] = id as u8;
                    }
                }
            }
        }
    };
    let full_area = |shape: &Shape| -> usize {
        (0..n * n)
            .filter(|p| shape.contains((p % n) as f64 + 0.5, (p / n) as f64 + 0.5))
            .count()
    };

    for _ in 0..target {
        for _attempt in 0..50 {
            let shape = Shape::random(&mut rng, cfg);
            let mut color = random_color(&mut rng);
            while color_distance(color, bg_mean) < 0.6 {
                color = random_color(&mut rng);
            }
            shapes.push((shape, color));
            paint(&shapes, &mut labels);
            let ok = shapes.iter().enumerate().all(|(id, (s, _))| {
                let visible = labels.iter().filter(|&&l| l == id as u8).count();
                visible >= cfg.min_visible_pixels
                    && visible as f64 >= cfg.min_visible_fraction * full_area(s) as f64
            });
            if ok {
                break;
            }
            shapes.pop();
            stats.rerolls += 1;
        }
    }
    paint(&shapes, &mut labels);

    let amp = cfg.noise as i32;
    let mut rgb = vec![0u8; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let p = y * n + x;
            let color = match labels[p] {
                u8::MAX => {
                    let t = ((x as f64 / n as f64 - 0.5) * dx + (y as f64 / n as f64 - 0.5) * dy + 0.75) / 1.5;
                    let t = t.clamp(0.0, 1.0);
                    [0, 1, 2].map(|c| bg0[c] * (1.0 - t) + bg1[c] * t)
                }
                id => shapes[id as usize].1,
            };
            for c in 0..3 {
                let jitter = if amp > 0 { rng.gen_range(-amp..=amp) } else { 0 };
                rgb[p * 3 + c] = ((color[c] * 255.0).round() as i32 + jitter).clamp(0, 255) as u8;
            }
        }
    }

    let instances: Vec<Instance> = shapes
        .iter()
        .enumerate()
        .filter_map(|(id, (shape, _))| {
            let data = labels.iter().map(|&l| (l == id as u8) as u8).collect();
            let mask = Mask::from_vec(n, n, data).expect("binary");
            mask.bounding_box().map(|bbox| Instance {
                class: shape.class(),
                bbox,
                mask,
            })
        })
        .collect();

    stats.instances = instances.len();
    stats.same_class_overlap = instances.iter().enumerate().any(|(i, a)| {
        instances[i + 1..]
            .iter()
            .any(|b| a.class == b.class && a.bbox.intersection(&b.bbox) > 0.0)
    });

    let sample = Sample {
        image: image_from_rgb8(n, n, &rgb),
        instances,
    };
    (sample, stats)
}

/// `count` samples for indices `0..count`; parallel generation gives the
/// same output as sequential.
pub fn generate_dataset(seed: u64, count: usize, cfg: &SynthConfig) -> (Vec<Sample>, GeneratorReport) {
    let out: Vec<(Sample, SampleStats)> = (0..count as u64)
        .into_par_iter()
        .map(|i| generate_sample(seed, i, cfg))
        .collect();
    let mut report = GeneratorReport {
        seed,
        samples: count,
        class_counts: vec![0; CLASS_NAMES.len()],
        ..Default::default()
    };
    for (s, st) in &out {
        report.instances += st.instances;
        report.rerolls += st.rerolls;
        report.same_class_overlap_samples += st.same_class_overlap as usize;
        for i in &s.instances {
            report.class_counts[i.class] += 1;
        }
    }
    report.overlap_frequency = if count == 0 {
        0.0
    } else {
        report.same_class_overlap_samples as f64 / count as f64
    };
    (out.into_iter().map(|(s, _)| s).collect(), report)
}
