//! Duplicate suppression: the classic greedy per-class NMS and the batched
//! "Fast NMS" relaxation that lets already-suppressed detections suppress
//! others, which turns the whole decision into one triangular IoU matrix and
//! a column-wise max.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{iou_matrix, BBox};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredDetections {
    pub boxes: Vec<BBox>,
    pub scores: Vec<f64>,
    pub classes: Vec<usize>,
    /// Optional `n×k` mask coefficients, one row per detection.
    pub coeffs: Option<Tensor<f64>>,
}

impl ScoredDetections {
    pub fn new(boxes: Vec<BBox>, scores: Vec<f64>, classes: Vec<usize>) -> Result<Self> {
        let d = Self {
            boxes,
            scores,
            classes,
            coeffs: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_coeffs(mut self, coeffs: Tensor<f64>) -> Result<Self> {
        self.coeffs = Some(coeffs);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.boxes.len();
        if self.scores.len() != n || self.classes.len() != n {
            return Err(Error::dim(
                "detections",
                format!(
                    "{} boxes, {} scores, {} classes",
                    n,
                    self.scores.len(),
                    self.classes.len()
                ),
            ));
        }
        if let Some(c) = &self.coeffs {
            if c.shape().len() != 2 || c.shape()[0] != n {
                return Err(Error::dim(
                    "detections",
                    format!("coefficients {:?} for {n} rows", c.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Rows in the given order; coefficient rows follow their detections.
    pub fn select(&self, rows: &[usize]) -> Self {
        let coeffs = self.coeffs.as_ref().map(|c| {
            let k = c.shape()[1];
            let data: Vec<f64> = rows
                .iter()
                .flat_map(|&r| c.data()[r * k..(r + 1) * k].iter().copied())
                .collect();
            Tensor::from_vec(&[rows.len(), k], data).expect("row gather")
        });
        Self {
            boxes: rows.iter().map(|&r| self.boxes[r]).collect(),
            scores: rows.iter().map(|&r| self.scores[r]).collect(),
            classes: rows.iter().map(|&r| self.classes[r]).collect(),
            coeffs,
        }
    }
}

/// Indices by class (ascending), each list sorted by descending score with
/// ties broken by input index.
fn by_class(d: &ScoredDetections) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in d.classes.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    for idx in groups.values_mut() {
        idx.sort_by(|&a, &b| d.scores[b].total_cmp(&d.scores[a]).then(a.cmp(&b)));
    }
    groups
}

/// Keeps at most `top_n` highest-scoring rows per class.
pub fn truncate_per_class(d: &ScoredDetections, top_n: usize) -> ScoredDetections {
    let rows: Vec<usize> = by_class(d)
        .into_values()
        .flat_map(|idx| idx.into_iter().take(top_n))
        .collect();
    d.select(&rows)
}

/// Rows kept by greedy NMS: a detection is dropped only when a kept,
/// higher-ranked detection of its class overlaps it with IoU > `iou_t`.
pub fn sequential_nms_indices(d: &ScoredDetections, iou_t: f64) -> Vec<usize> {
    let mut kept_all = Vec::new();
    for idx in by_class(d).into_values() {
        let mut kept: Vec<usize> = Vec::new();
        for &i in &idx {
            if kept.iter().all(|&k| d.boxes[k].iou(&d.boxes[i]) <= iou_t) {
                kept.push(i);
            }
        }
        kept_all.extend(kept);
    }
    kept_all
}

pub fn sequential_nms(d: &ScoredDetections, iou_t: f64) -> ScoredDetections {
    d.select(&sequential_nms_indices(d, iou_t))
}

/// Fast NMS decision for one class whose rows are already in descending
/// score order: zero the diagonal and lower triangle of the pairwise IoU
/// matrix, take each column's max, and keep columns whose max is ≤ `iou_t`.
pub fn fast_nms_keep_mask(boxes: &[BBox], iou_t: f64) -> Vec<bool> {
    let n = boxes.len();
    if n == 0 {
        return Vec::new();
    }
    let mut x = iou_matrix(boxes, boxes);
    for (i, row) in x.data_mut().chunks_exact_mut(n).enumerate() {
        for v in &mut row[..=i] {
            *v = 0.0;
        }
    }
    let mut col_max = vec![0.0f64; n];
    for row in x.data().chunks_exact(n) {
        for (m, &v) in col_max.iter_mut().zip(row) {
            *m = m.max(v);
        }
    }
    col_max.into_iter().map(|k| k <= iou_t).collect()
}

pub fn fast_nms_indices(d: &ScoredDetections, iou_t: f64, top_n: usize) -> Vec<usize> {
    let mut kept_all = Vec::new();
    for mut idx in by_class(d).into_values() {
        idx.truncate(top_n);
        let boxes: Vec<BBox> = idx.iter().map(|&i| d.boxes[i]).collect();
        let keep = fast_nms_keep_mask(&boxes, iou_t);
        kept_all.extend(idx.into_iter().zip(keep).filter(|(_, k)| *k).map(|(i, _)| i));
    }
    kept_all
}

pub fn fast_nms(d: &ScoredDetections, iou_t: f64, top_n: usize) -> ScoredDetections {
    d.select(&fast_nms_indices(d, iou_t, top_n))
}

/// Drops rows scoring at or below `min_score` and keeps the best
/// `max_per_image`, highest score first.
pub fn score_filter(d: &ScoredDetections, min_score: f64, max_per_image: usize) -> ScoredDetections {
    let mut rows: Vec<usize> = (0..d.len()).filter(|&i| d.scores[i] > min_score).collect();
    rows.sort_by(|&a, &b| d.scores[b].total_cmp(&d.scores[a]).then(a.cmp(&b)));
    rows.truncate(max_per_image);
    d.select(&rows)
}
