//! Boxes in normalised corner form, IoU, the multi-scale anchor layout,
//! SSD-style offset coding, anchor matching and prototype-grid crop regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned box with corners normalised to the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x1, y1, x2, y2]: [f64; 4]) -> Self {
        BBox { x1, y1, x2, y2 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const FULL: BBox = BBox {
        x1: 0.0,
        y1: 0.0,
        x2: 1.0,
        y2: 1.0,
    };

    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Ordered corners, all finite and inside `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        let c = [self.x1, self.y1, self.x2, self.y2];
        c.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }

    pub fn clamped(&self) -> BBox {
        let c = |v: f64| v.clamp(0.0, 1.0);
        BBox::new(c(self.x1), c(self.y1), c(self.x2), c(self.y2))
    }

    pub fn flipped_horizontally(&self) -> BBox {
        BBox::new(1.0 - self.x2, self.y1, 1.0 - self.x1, self.y2)
    }

    pub fn intersection(&self, o: &BBox) -> f64 {
        let w = (self.x2.min(o.x2) - self.x1.max(o.x1)).max(0.0);
        let h = (self.y2.min(o.y2) - self.y1.max(o.y1)).max(0.0);
        w * h
    }

    /// Intersection over union; 0 when the union has no area.
    pub fn iou(&self, o: &BBox) -> f64 {
        let inter = self.intersection(o);
        let union = self.area() + o.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

/// Pairwise IoU, entry `(i, j)` = `iou(a[i], b[j])`.
pub fn iou_matrix(a: &[BBox], b: &[BBox]) -> Tensor<f64> {
    let data = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| x.iou(y)))
        .collect();
    Tensor::from_vec(&[a.len(), b.len()], data).expect("n*m values")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorLevel {
    pub stride: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Side length in input pixels of the ratio-1 anchor.
    pub scale: f64,
}

/// Fixed anchor layout, flattened level-major, then row-major over cells,
/// then over aspect ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub input_size: usize,
    pub levels: Vec<AnchorLevel>,
    pub aspect_ratios: Vec<f64>,
    pub anchors: Vec<BBox>,
}

/// Position of one anchor inside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorIndex {
    pub level: usize,
    pub row: usize,
    pub col: usize,
    pub ratio: usize,
}

pub fn generate_anchors(
    input_size: usize,
    strides: &[usize],
    scales: &[f64],
    aspect_ratios: &[f64],
) -> Result<AnchorGrid> {
    if scales.is_empty() || aspect_ratios.is_empty() {
        return Err(Error::Config("anchor scales and aspect ratios must be non-empty".into()));
    }
    if strides.len() != scales.len() {
        return Err(Error::Config(format!(
            "{} strides but {} scales",
            strides.len(),
            scales.len()
        )));
    }
    if input_size == 0 || strides.contains(&0) {
        return Err(Error::Config("input size and strides must be positive".into()));
    }
    if scales.iter().chain(aspect_ratios).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Config("anchor scales and ratios must be positive".into()));
    }
    let size = input_size as f64;
    let mut levels = Vec::with_capacity(strides.len());
    let mut anchors = Vec::new();
    for (&stride, &scale) in strides.iter().zip(scales) {
        let grid = input_size.div_ceil(stride);
        levels.push(AnchorLevel {
            stride,
            grid_h: grid,
            grid_w: grid,
            scale,
        });
        for i in 0..grid {
            for j in 0..grid {
                let cx = (j as f64 + 0.5) * stride as f64 / size;
                let cy = (i as f64 + 0.5) * stride as f64 / size;
                for &r in aspect_ratios {
                    let w = scale * r.sqrt() / size;
                    let h = scale / r.sqrt() / size;
                    anchors.push(BBox::from_center(cx, cy, w, h));
                }
            }
        }
    }
    Ok(AnchorGrid {
        input_size,
        levels,
        aspect_ratios: aspect_ratios.to_vec(),
        anchors,
    })
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// First flat index of each level.
    pub fn level_offsets(&self) -> Vec<usize> {
        let a = self.aspect_ratios.len();
        let mut acc = 0;
        self.levels
            .iter()
            .map(|l| {
                let start = acc;
                acc += l.grid_h * l.grid_w * a;
                start
            })
            .collect()
    }

    pub fn flat_index(&self, at: AnchorIndex) -> usize {
        let a = self.aspect_ratios.len();
        let l = &self.levels[at.level];
        self.level_offsets()[at.level] + (at.row * l.grid_w + at.col) * a + at.ratio
    }

    pub fn locate(&self, mut index: usize) -> Option<AnchorIndex> {
        let a = self.aspect_ratios.len();
        for (level, l) in self.levels.iter().enumerate() {
            let n = l.grid_h * l.grid_w * a;
            if index < n {
                let cell = index / a;
                return Some(AnchorIndex {
                    level,
                    row: cell / l.grid_w,
                    col: cell % l.grid_w,
                    ratio: index % a,
                });
            }
            index -= n;
        }
        None
    }
}

/// SSD variances; `(0.1, 0.2)` by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variances(pub f64, pub f64);

impl Default for Variances {
    fn default() -> Self {
        Variances(0.1, 0.2)
    }
}

pub fn encode_box(gt: &BBox, anchor: &BBox, v: Variances) -> Result<[f64; 4]> {
    if !(anchor.width() > 0.0 && anchor.height() > 0.0) {
        return Err(Error::DegenerateBox(format!("anchor {anchor:?}")));
    }
    if !(gt.width() > 0.0 && gt.height() > 0.0) {
        return Err(Error::DegenerateBox(format!("ground truth {gt:?}")));
    }
    let (gx, gy) = gt.center();
    let (ax, ay) = anchor.center();
    Ok([
        (gx - ax) / anchor.width() / v.0,
        (gy - ay) / anchor.height() / v.0,
        (gt.width() / anchor.width()).ln() / v.1,
        (gt.height() / anchor.height()).ln() / v.1,
    ])
}

/// Inverse of [`encode_box`] without clamping.
pub fn decode_box_unclamped(t: &[f64; 4], anchor: &BBox, v: Variances) -> BBox {
    let (ax, ay) = anchor.center();
    let cx = ax + t[0] * v.0 * anchor.width();
    let cy = ay + t[1] * v.0 * anchor.height();
    // Cap the exponent so absurd regressions stay finite.
    let w = anchor.width() * (t[2] * v.1).min(20.0).exp();
    let h = anchor.height() * (t[3] * v.1).min(20.0).exp();
    BBox::from_center(cx, cy, w, h)
}

pub fn decode_box(t: &[f64; 4], anchor: &BBox, v: Variances) -> BBox {
    decode_box_unclamped(t, anchor, v).clamped()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Positive(usize),
    Negative,
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub assignments: Vec<Assignment>,
}

impl MatchResult {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignments.iter().enumerate().filter_map(|(i, a)| match a {
            Assignment::Positive(g) => Some((i, *g)),
            _ => None,
        })
    }

    pub fn num_positive(&self) -> usize {
        self.positives().count()
    }

    pub fn num_negative(&self) -> usize {
        self.assignments
            .iter()
            .filter(|a| matches!(a, Assignment::Negative))
            .count()
    }
}

/// Max-IoU assignment with thresholds, then each ground truth claims its best
/// anchor (lowest index on ties; the next best if an earlier ground truth
/// already claimed it).
pub fn match_anchors(anchors: &[BBox], gts: &[BBox], pos_t: f64, neg_t: f64) -> Result<MatchResult> {
    if pos_t < neg_t {
        return Err(Error::Config(format!(
            "positive threshold {pos_t} below negative threshold {neg_t}"
        )));
    }
    if gts.is_empty() {
        return Ok(MatchResult {
            assignments: vec![Assignment::Negative; anchors.len()],
        });
    }
    let iou = iou_matrix(anchors, gts);
    let g = gts.len();
    let mut assignments: Vec<Assignment> = iou
        .data()
        .chunks_exact(g)
        .map(|row| {
            let (best_gt, best) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            if best >= pos_t {
                Assignment::Positive(best_gt)
            } else if best < neg_t {
                Assignment::Negative
            } else {
                Assignment::Ignored
            }
        })
        .collect();

    let mut forced = vec![false; anchors.len()];
    for j in 0..g {
        let mut best: Option<(usize, f64)> = None;
        for (i, &taken) in forced.iter().enumerate() {
            let v = iou.at2(i, j);
            if !taken && v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        if let Some((i, _)) = best {
            forced[i] = true;
            assignments[i] = Assignment::Positive(j);
        }
    }
    Ok(MatchResult { assignments })
}

/// Half-open pixel rectangle `[y0, y1) × [x0, x1)` on a prototype grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CropRect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }

    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

// Absorbs float noise such as 0.3 * 10 = 3.0000000000000004.
const GRID_EPS: f64 = 1e-9;

/// Box scaled to the grid, expanded outward to whole pixels, padded, clamped.
pub fn crop_region(b: &BBox, grid_h: usize, grid_w: usize, pad: usize) -> CropRect {
    let lo = |v: f64, n: usize| ((v * n as f64 + GRID_EPS).floor().max(0.0) as usize).min(n);
    let hi = |v: f64, n: usize| ((v * n as f64 - GRID_EPS).ceil().max(0.0) as usize).min(n);
    let (x0, x1) = (lo(b.x1, grid_w), hi(b.x2, grid_w).max(lo(b.x1, grid_w)));
    let (y0, y1) = (lo(b.y1, grid_h), hi(b.y2, grid_h).max(lo(b.y1, grid_h)));
    CropRect {
        y0: y0.saturating_sub(pad),
        y1: (y1 + pad).min(grid_h),
        x0: x0.saturating_sub(pad),
        x1: (x1 + pad).min(grid_w),
    }
}
