//! Training losses. Each function returns its value together with the
//! gradient with respect to its input logits so the network backward can
//! start from there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{crop_region, Assignment, BBox, MatchResult};
use crate::mask::Mask;
use crate::tensor::Tensor;

/// Probabilities are clamped this far from 0 and 1 inside every BCE.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub mask: f64,
    pub semantic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            bbox: 1.5,
            mask: 6.125,
            semantic: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub mask: f64,
    pub semantic: f64,
    pub total: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn total_loss(cls: f64, bbox: f64, mask: f64, semantic: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        cls,
        bbox,
        mask,
        semantic,
        total: w.cls * cls + w.bbox * bbox + w.mask * mask + w.semantic * semantic,
        positives: 0,
        negatives: 0,
    }
}

/// Clamped binary cross entropy and its derivative with respect to the
/// logit that produced `p = σ(z)`; the derivative is 0 where the clamp is active.
pub fn bce_with_grad(p: f64, target: f64) -> (f64, f64) {
    let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let loss = -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln());
    let grad = if pc == p { p - target } else { 0.0 };
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationLoss {
    pub value: f64,
    /// `∂value/∂logits`, `n_anchors × (c+1)`.
    pub grad: Tensor<f64>,
    pub positives: usize,
    /// Selected negatives, hardest first.
    pub negatives: Vec<usize>,
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Softmax cross entropy over positives plus the hardest negatives, with
/// `ceil(ratio · #pos)` negatives (or `ceil(ratio)` when an image has no
/// positives). Class 0 is background; `gt_classes` are 0-based object
/// classes, so a positive matched to gt `g` has label `gt_classes[g] + 1`.
pub fn classification_loss_ohem(
    logits: &Tensor<f64>,
    matches: &MatchResult,
    gt_classes: &[usize],
    ratio: f64,
) -> Result<ClassificationLoss> {
    if !(ratio > 0.0) {
        return Err(Error::Config(format!("OHEM ratio {ratio} must be positive")));
    }
    let (n, c1) = logits.dims2()?;
    if matches.assignments.len() != n {
        return Err(Error::dim(
            "classification_loss",
            format!("{n} logit rows, {} assignments", matches.assignments.len()),
        ));
    }
    let label = |a: &Assignment| -> Result<Option<usize>> {
        Ok(match a {
            Assignment::Positive(g) => {
                let l = gt_classes
                    .get(*g)
                    .ok_or_else(|| Error::Validation(format!("assignment to missing gt {g}")))?
                    + 1;
                if l >= c1 {
                    return Err(Error::Validation(format!("class label {l} needs {} logits", l + 1)));
                }
                Some(l)
            }
            Assignment::Negative => Some(0),
            Assignment::Ignored => None,
        })
    };

    let rows: Vec<&[f64]> = logits.data().chunks_exact(c1).collect();
    let mut selected: Vec<(usize, usize)> = Vec::new();
    let mut neg_losses: Vec<(usize, f64)> = Vec::new();
    for (i, a) in matches.assignments.iter().enumerate() {
        match (a, label(a)?) {
            (Assignment::Positive(_), Some(l)) => selected.push((i, l)),
            (Assignment::Negative, _) => neg_losses.push((i, -log_softmax_row(rows[i])[0])),
            _ => {}
        }
    }
    let positives = selected.len();
    let want = if positives == 0 {
        ratio.ceil() as usize
    } else {
        (ratio * positives as f64).ceil() as usize
    };
    neg_losses.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let negatives: Vec<usize> = neg_losses.iter().take(want).map(|&(i, _)| i).collect();
    selected.extend(negatives.iter().map(|&i| (i, 0)));

    let mut grad = Tensor::zeros(&[n, c1]);
    if selected.is_empty() {
        return Ok(ClassificationLoss {
            value: 0.0,
            grad,
            positives,
            negatives,
        });
    }
    let scale = 1.0 / selected.len() as f64;
    let mut value = 0.0;
    let g = grad.data_mut();
    for &(i, l) in &selected {
        let ls = log_softmax_row(rows[i]);
        value -= ls[l];
        for (j, lj) in ls.iter().enumerate() {
            g[i * c1 + j] = (lj.exp() - (j == l) as u8 as f64) * scale;
        }
    }
    Ok(ClassificationLoss {
        value: value * scale,
        grad,
        positives,
        negatives,
    })
}

/// Smooth-L1 summed over the four offsets, averaged over positives.
/// Returns the value and `∂/∂pred`.
pub fn box_loss(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("box_loss", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = pred.shape().first().copied().unwrap_or(0);
    let mut grad = Tensor::zeros(pred.shape());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        if d.abs() < 1.0 {
            value += 0.5 * d * d;
            *g = d * scale;
        } else {
            value += d.abs() - 0.5;
            *g = d.signum() * scale;
        }
    }
    Ok((value * scale, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskLoss {
    pub value: f64,
    /// `∂value/∂z` for the mask logits `z` behind `soft = σ(z)`, `n×h×w`.
    pub d_logits: Tensor<f64>,
    /// Instances dropped because their gt box has no area.
    pub skipped: usize,
}

/// Per instance: BCE summed inside the (unpadded) gt crop, divided by the
/// gt box area in prototype pixels; averaged over instances.
pub fn mask_loss(soft: &Tensor<f64>, targets: &Tensor<f64>, gt_boxes: &[BBox]) -> Result<MaskLoss> {
    let (n, h, w) = soft.dims3()?;
    if targets.shape() != soft.shape() || gt_boxes.len() != n {
        return Err(Error::dim(
            "mask_loss",
            format!("{:?} masks, {:?} targets, {} boxes", soft.shape(), targets.shape(), gt_boxes.len()),
        ));
    }
    let mut d_logits = Tensor::zeros(&[n, h, w]);
    let mut per_instance = Vec::with_capacity(n);
    let mut skipped = 0;
    let mut used = Vec::with_capacity(n);
    for (i, b) in gt_boxes.iter().enumerate() {
        let area = b.width() * w as f64 * b.height() * h as f64;
        if !(area > 0.0) {
            skipped += 1;
            continue;
        }
        let r = crop_region(b, h, w, 0);
        let mut sum = 0.0;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let at = (i * h + y) * w + x;
                let (l, g) = bce_with_grad(soft.data()[at], targets.data()[at]);
                sum += l;
                d_logits.data_mut()[at] = g / area;
            }
        }
        per_instance.push(sum / area);
        used.push(i);
    }
    if skipped > 0 {
        log::warn!("mask loss skipped {skipped} zero-area ground truth boxes");
    }
    if per_instance.is_empty() {
        return Ok(MaskLoss {
            value: 0.0,
            d_logits: Tensor::zeros(&[n, h, w]),
            skipped,
        });
    }
    let m = per_instance.len() as f64;
    for i in used {
        for v in &mut d_logits.data_mut()[i * h * w..(i + 1) * h * w] {
            *v /= m;
        }
    }
    Ok(MaskLoss {
        value: per_instance.iter().sum::<f64>() / m,
        d_logits,
        skipped,
    })
}

/// Mean per-pixel, per-class sigmoid BCE. Returns the value and `∂/∂logits`.
pub fn semantic_loss(seg_logits: &Tensor<f64>, targets: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
    if seg_logits.shape() != targets.shape() {
        return Err(Error::dim(
            "semantic_loss",
            format!("{:?} vs {:?}", seg_logits.shape(), targets.shape()),
        ));
    }
    let n = seg_logits.len().max(1) as f64;
    let mut grad = Tensor::zeros(seg_logits.shape());
    let mut value = 0.0;
    for ((g, &z), &t) in grad.data_mut().iter_mut().zip(seg_logits.data()).zip(targets.data()) {
        let p = 1.0 / (1.0 + (-z).exp());
        let (l, dz) = bce_with_grad(p, t);
        value += l;
        *g = dz / n;
    }
    Ok((value / n, grad))
}

/// Mask target at prototype resolution: area-average then `≥ 0.5`.
pub fn mask_target(mask: &Mask, ph: usize, pw: usize) -> Vec<f64> {
    mask.area_fractions(ph, pw)
        .into_iter()
        .map(|f| if f >= 0.5 { 1.0 } else { 0.0 })
        .collect()
}

/// Multi-label semantic target `c×h×w`: per class, the max-pooled union of
/// that class's instance masks.
pub fn semantic_target(instances: &[(usize, &Mask)], num_classes: usize, h: usize, w: usize) -> Result<Tensor<f64>> {
    let mut t = Tensor::zeros(&[num_classes, h, w]);
    for &(class, m) in instances {
        if class >= num_classes {
            return Err(Error::Validation(format!("class {class} out of range")));
        }
        let frac = m.area_fractions(h, w);
        let plane = &mut t.data_mut()[class * h * w..(class + 1) * h * w];
        for (p, f) in plane.iter_mut().zip(frac) {
            if f > 0.0 {
                *p = 1.0;
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[[f64; 3]]) -> Tensor<f64> {
        Tensor::from_vec(&[rows.len(), 3], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn weighted_total() {
        let w = LossWeights::default();
        assert_eq!(total_loss(1., 0., 0., 0., &w).total, 1.0);
        assert_eq!(total_loss(0., 2., 0., 0., &w).total, 3.0);
        assert_eq!(total_loss(1., 1., 1., 1., &w).total, 9.625);
    }

    #[test]
    fn ohem_selects_three_hardest() {
        let mut rows = vec![[0.0, 2.0, 0.0]];
        let mut a = vec![Assignment::Positive(0)];
        // negatives with increasing foreground confidence, i.e. increasing loss
        for i in 0..10 {
            rows.push([0.0, i as f64 * 0.3, 0.0]);
            a.push(Assignment::Negative);
        }
        rows.push([0.0, 100.0, 0.0]);
        a.push(Assignment::Ignored);
        let m = MatchResult { assignments: a };
        let l = classification_loss_ohem(&logits(&rows), &m, &[0], 3.0).unwrap();
        assert_eq!(l.positives, 1);
        assert_eq!(l.negatives, vec![10, 9, 8]);
        // ignored row gets no gradient
        assert!(l.grad.data()[11 * 3..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ohem_without_positives_takes_three() {
        let rows = vec![[0.0, 1.0, 0.0]; 5];
        let m = MatchResult {
            assignments: vec![Assignment::Negative; 5],
        };
        let l = classification_loss_ohem(&logits(&rows), &m, &[], 3.0).unwrap();
        assert_eq!(l.negatives.len(), 3);
        assert!(l.value > 0.0);
    }

    #[test]
    fn uniform_logits_cost_ln_c() {
        let rows = vec![[0.5, 0.5, 0.5]; 2];
        let m = MatchResult {
            assignments: vec![Assignment::Positive(0), Assignment::Negative],
        };
        let l = classification_loss_ohem(&logits(&rows), &m, &[1], 3.0).unwrap();
        assert!((l.value - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_cost_nothing() {
        let rows = vec![[0.0, 60.0, 0.0], [60.0, 0.0, 0.0]];
        let m = MatchResult {
            assignments: vec![Assignment::Positive(0), Assignment::Negative],
        };
        let l = classification_loss_ohem(&logits(&rows), &m, &[0], 3.0).unwrap();
        assert!(l.value < 1e-20);
    }

    #[test]
    fn smooth_l1_values() {
        let t = Tensor::zeros(&[1, 4]);
        let (v, _) = box_loss(&t, &t).unwrap();
        assert_eq!(v, 0.0);
        let p = Tensor::from_f64(&[1, 4], &[0.5, 0., 0., 0.]).unwrap();
        assert_eq!(box_loss(&p, &t).unwrap().0, 0.125);
        let p = Tensor::from_f64(&[1, 4], &[0., -2., 0., 0.]).unwrap();
        assert_eq!(box_loss(&p, &t).unwrap().0, 1.5);
        let empty = Tensor::zeros(&[0, 4]);
        assert_eq!(box_loss(&empty, &empty).unwrap().0, 0.0);
    }

    #[test]
    fn mask_loss_half_everywhere_is_ln2() {
        for side in [2usize, 4, 8] {
            let soft = Tensor::full(&[1, 16, 16], 0.5);
            let mut target = Tensor::zeros(&[1, 16, 16]);
            let b = BBox::new(0.0, 0.0, side as f64 / 16.0, side as f64 / 16.0);
            for y in 0..side {
                for x in 0..side {
                    target.data_mut()[y * 16 + x] = 1.0;
                }
            }
            let l = mask_loss(&soft, &target, &[b]).unwrap();
            assert!((l.value - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_loss_near_perfect_and_skips() {
        let soft = Tensor::from_f64(&[2, 1, 2], &[1.0 - 1e-9, 1e-9, 0.3, 0.3]).unwrap();
        let target = Tensor::from_f64(&[2, 1, 2], &[1.0, 0.0, 1.0, 1.0]).unwrap();
        let boxes = [BBox::FULL, BBox::new(0.5, 0.0, 0.5, 1.0)];
        let l = mask_loss(&soft, &target, &boxes).unwrap();
        assert_eq!(l.skipped, 1);
        assert!(l.value < 1e-6);
        assert!(l.d_logits.data()[2..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn semantic_examples() {
        let z = Tensor::zeros(&[2, 3, 3]);
        let t = Tensor::full(&[2, 3, 3], 1.0);
        assert!((semantic_loss(&z, &t).unwrap().0 - 2f64.ln()).abs() < 1e-12);
        let z = Tensor::from_f64(&[1, 1, 2], &[10.0, -10.0]).unwrap();
        let t = Tensor::from_f64(&[1, 1, 2], &[1.0, 0.0]).unwrap();
        assert!(semantic_loss(&z, &t).unwrap().0 < 1e-4);
    }

    #[test]
    fn semantic_target_is_multi_label() {
        let mut a = Mask::zeros(8, 8);
        let mut b = Mask::zeros(8, 8);
        a.set(0, 0, true);
        b.set(1, 1, true);
        let t = semantic_target(&[(0, &a), (2, &b)], 3, 2, 2).unwrap();
        // both pixels fall in the top-left cell; classes 0 and 2 are both on there
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[8], 1.0);
        assert_eq!(t.sum(), 2.0);
        assert!(semantic_target(&[(3, &a)], 3, 2, 2).is_err());
    }

    #[test]
    fn mask_target_thresholds_area() {
        let mut m = Mask::zeros(4, 4);
        for (y, x) in [(0, 0), (0, 1), (1, 0), (2, 2)] {
            m.set(y, x, true);
        }
        assert_eq!(mask_target(&m, 2, 2), vec![1.0, 0.0, 0.0, 0.0]);
    }
}
