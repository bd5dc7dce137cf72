use super::config::ModelConfig;
use super::network::{NetworkOutputs, OutputGrads};
use crate::assembly::{assemble, assemble_backward};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::geometry::{encode_box, match_anchors, AnchorGrid, BBox, MatchResult};
use crate::loss::{box_loss, classification_loss_ohem, mask_loss, mask_target, semantic_loss, semantic_target, total_loss, LossBreakdown};
use crate::tensor::Tensor;

/// Per-image training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTargets {
    pub matches: MatchResult,
    pub gt_classes: Vec<usize>,
    pub gt_boxes: Vec<BBox>,
    /// One prototype-resolution `{0,1}` map per ground truth.
    pub mask_targets: Vec<Vec<f64>>,
    /// `c × h₃ × w₃`
    pub semantic: Tensor<f64>,
}

pub fn prepare_targets(cfg: &ModelConfig, anchors: &AnchorGrid, sample: &Sample) -> Result<ImageTargets> {
    if sample.size() != cfg.input_size {
        return Err(Error::Validation(format!(
            "sample is {}px, model expects {}px",
            sample.size(),
            cfg.input_size
        )));
    }
    let gt_boxes: Vec<BBox> = sample.instances.iter().map(|i| i.bbox).collect();
    let gt_classes: Vec<usize> = sample.instances.iter().map(|i| i.class).collect();
    let matches = match_anchors(&anchors.anchors, &gt_boxes, cfg.pos_iou, cfg.neg_iou)?;
    let ps = cfg.prototype_size();
    let mask_targets = sample.instances.iter().map(|i| mask_target(&i.mask, ps, ps)).collect();
    let p3 = cfg.p3_size();
    let pairs: Vec<_> = sample.instances.iter().map(|i| (i.class, &i.mask)).collect();
    let semantic = semantic_target(&pairs, cfg.num_classes, p3, p3)?;
    Ok(ImageTargets {
        matches,
        gt_classes,
        gt_boxes,
        mask_targets,
        semantic,
    })
}

/// Weighted total loss of one image and its gradient with respect to every
/// network output (weights already applied).
pub fn compute_loss(
    cfg: &ModelConfig,
    anchors: &AnchorGrid,
    out: &NetworkOutputs<f64>,
    t: &ImageTargets,
) -> Result<(LossBreakdown, OutputGrads<f64>)> {
    let w = &cfg.loss_weights;
    let mut grads = OutputGrads::zeros_like(out);
    let k = cfg.num_prototypes;

    let cls = classification_loss_ohem(&out.class_logits, &t.matches, &t.gt_classes, cfg.ohem_ratio)?;
    for (g, &d) in grads.class_logits.data_mut().iter_mut().zip(cls.grad.data()) {
        *g = w.cls * d;
    }

    let positives: Vec<(usize, usize)> = t.matches.positives().collect();
    let npos = positives.len();
    let mut pred = Vec::with_capacity(npos * 4);
    let mut target = Vec::with_capacity(npos * 4);
    for &(a, g) in &positives {
        pred.extend_from_slice(&out.box_t.data()[a * 4..a * 4 + 4]);
        target.extend(encode_box(&t.gt_boxes[g], &anchors.anchors[a], cfg.variances)?);
    }
    let (box_value, box_grad) = box_loss(&Tensor::from_vec(&[npos, 4], pred)?, &Tensor::from_vec(&[npos, 4], target)?)?;
    for (row, &(a, _)) in positives.iter().enumerate() {
        for e in 0..4 {
            grads.box_t.data_mut()[a * 4 + e] = w.bbox * box_grad.data()[row * 4 + e];
        }
    }

    let mut mask_value = 0.0;
    if npos > 0 {
        let (ph, pw, _) = out.prototypes.dims();
        let mut coeffs = Vec::with_capacity(npos * k);
        let mut targets = Vec::with_capacity(npos * ph * pw);
        let mut boxes = Vec::with_capacity(npos);
        for &(a, g) in &positives {
            coeffs.extend_from_slice(&out.coeffs.data()[a * k..(a + 1) * k]);
            targets.extend_from_slice(&t.mask_targets[g]);
            boxes.push(t.gt_boxes[g]);
        }
        let coeffs = Tensor::from_vec(&[npos, k], coeffs)?;
        let soft = assemble(&out.prototypes, &coeffs)?;
        let ml = mask_loss(&soft, &Tensor::from_vec(&[npos, ph, pw], targets)?, &boxes)?;
        mask_value = ml.value;
        let (dp, dc) = assemble_backward(&out.prototypes, &coeffs, &ml.d_logits)?;
        for (g, &d) in grads.prototypes.data_mut().iter_mut().zip(dp.data()) {
            *g = w.mask * d;
        }
        for (row, &(a, _)) in positives.iter().enumerate() {
            for e in 0..k {
                grads.coeffs.data_mut()[a * k + e] += w.mask * dc.data()[row * k + e];
            }
        }
    }

    let mut sem_value = 0.0;
    if let (Some(seg), Some(gs)) = (&out.seg_logits, grads.seg_logits.as_mut()) {
        let (v, g) = semantic_loss(seg, &t.semantic)?;
        sem_value = v;
        for (a, &d) in gs.data_mut().iter_mut().zip(g.data()) {
            *a = w.semantic * d;
        }
    }

    let mut breakdown = total_loss(cls.value, box_value, mask_value, sem_value, w);
    breakdown.positives = cls.positives;
    breakdown.negatives = cls.negatives.len();
    Ok((breakdown, grads))
}
