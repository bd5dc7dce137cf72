use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::network::Model;
use crate::assembly::{assemble, crop_and_threshold, upscale_mask};
use crate::error::{Error, Result};
use crate::geometry::{decode_box, BBox};
use crate::mask::Mask;
use crate::nms::{fast_nms, score_filter, sequential_nms, truncate_per_class, ScoredDetections};
use crate::nn::softmax_rows;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmsVariant {
    #[default]
    Fast,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InferOptions {
    /// Overrides the configured score threshold.
    pub score_threshold: Option<f64>,
    /// Stop after NMS: no prototypes are combined and no masks returned.
    pub boxes_only: bool,
    pub nms: NmsVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    /// 0-based object class.
    pub class: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Image-resolution binary mask, absent in boxes-only mode.
    #[serde(skip)]
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inference {
    pub detections: Vec<Detection>,
    pub forward_ms: f64,
    pub nms_ms: f64,
    /// Assembly, crop, threshold and upscale.
    pub mask_ms: f64,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn infer<T: Real>(model: &Model<T>, image: &Tensor<f64>) -> Result<Inference> {
    infer_with(model, image, &InferOptions::default())
}

/// Full detection pipeline for one `3×S×S` image.
pub fn infer_with<T: Real>(model: &Model<T>, image: &Tensor<f64>, opts: &InferOptions) -> Result<Inference> {
    let cfg = model.config();
    let min_score = opts.score_threshold.unwrap_or(cfg.score_threshold);
    if !(0.0..=1.0).contains(&min_score) {
        return Err(Error::Config(format!("score threshold {min_score} outside [0, 1]")));
    }
    let t0 = Instant::now();
    let out = model.forward(&image.cast(), false)?;
    let forward_ms = ms(t0);

    let t1 = Instant::now();
    let probs = softmax_rows(&out.class_logits.cast::<f64>())?;
    let box_t = out.box_t.to_f64_vec();
    let coeffs = out.coeffs.to_f64_vec();
    let k = cfg.num_prototypes;
    let c1 = cfg.num_classes + 1;
    let anchors = &model.anchors().anchors;

    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    let mut classes = Vec::new();
    let mut rows = Vec::new();
    for (a, p) in probs.data().chunks_exact(c1).enumerate() {
        let mut decoded = None;
        for (c, &s) in p.iter().enumerate().skip(1) {
            if s > min_score {
                let t: [f64; 4] = box_t[a * 4..a * 4 + 4].try_into().expect("four offsets");
                boxes.push(*decoded.get_or_insert_with(|| decode_box(&t, &anchors[a], cfg.variances)));
                scores.push(s);
                classes.push(c - 1);
                rows.extend_from_slice(&coeffs[a * k..(a + 1) * k]);
            }
        }
    }
    let n = boxes.len();
    let cands = ScoredDetections::new(boxes, scores, classes)?.with_coeffs(Tensor::from_vec(&[n, k], rows)?)?;
    let cands = score_filter(&cands, min_score, usize::MAX);
    let kept = match opts.nms {
        NmsVariant::Fast => fast_nms(&cands, cfg.nms_iou, cfg.nms_top_n),
        NmsVariant::Sequential => sequential_nms(&truncate_per_class(&cands, cfg.nms_top_n), cfg.nms_iou),
    };
    let kept = score_filter(&kept, -1.0, cfg.max_detections);
    let nms_ms = ms(t1);

    let mut detections: Vec<Detection> = (0..kept.len())
        .map(|i| Detection {
            class: kept.classes[i],
            score: kept.scores[i],
            bbox: kept.boxes[i],
            mask: None,
        })
        .collect();

    let mut mask_ms = 0.0;
    if !opts.boxes_only && !kept.is_empty() {
        let t2 = Instant::now();
        let protos = out.prototypes.cast::<f64>();
        let soft = assemble(&protos, kept.coeffs.as_ref().expect("coefficients attached"))?;
        let set = crop_and_threshold(&soft, &kept.boxes, cfg.mask_threshold, cfg.crop_pad)?;
        let s = cfg.input_size;
        for (d, m) in detections.iter_mut().zip(&set.binary) {
            d.mask = Some(upscale_mask(m, s, s)?);
        }
        mask_ms = ms(t2);
    }
    Ok(Inference {
        detections,
        forward_ms,
        nms_ms,
        mask_ms,
    })
}
