//! Mask and box average precision with greedy per-image matching and
//! 101-point interpolation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::model::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    Mask,
    Box,
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(MatchMode::Mask),
            "box" => Ok(MatchMode::Box),
            other => Err(Error::Config(format!("unknown match mode {other:?} (mask or box)"))),
        }
    }
}

/// `0.50, 0.55, …, 0.95`
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

pub fn overlap(det: &Detection, gt: &Instance, mode: MatchMode) -> Result<f64> {
    match mode {
        MatchMode::Box => Ok(det.bbox.iou(&gt.bbox)),
        MatchMode::Mask => {
            let m = det
                .mask
                .as_ref()
                .ok_or_else(|| Error::Validation("mask evaluation needs detection masks".into()))?;
            if (m.height(), m.width()) != (gt.mask.height(), gt.mask.width()) {
                return Err(Error::dim("mask_iou", "detection and ground truth masks differ in size"));
            }
            Ok(m.iou(&gt.mask))
        }
    }
}

/// Greedy matching of score-sorted detections against ground truths of one
/// class in one image, from a `dets × gts` overlap table. Each detection
/// takes the unmatched ground truth of highest overlap `≥ iou_t`.
pub fn match_by_overlap(overlaps: &[Vec<f64>], n_gt: usize, iou_t: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; n_gt];
    overlaps
        .iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &v) in row.iter().enumerate() {
                if !taken[g] && v >= iou_t && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            best.map(|(g, _)| {
                taken[g] = true;
                g
            })
        })
        .collect()
}

/// Matched ground-truth index (or `None` for a false positive) per detection.
pub fn match_detections(dets: &[&Detection], gts: &[&Instance], iou_t: f64, mode: MatchMode) -> Result<Vec<Option<usize>>> {
    let table = dets
        .iter()
        .map(|d| gts.iter().map(|g| overlap(d, g, mode)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(match_by_overlap(&table, gts.len(), iou_t))
}

/// AP of a score-ordered TP/FP sequence: precision envelope sampled at
/// recall `0, 0.01, …, 1`. `None` when there is nothing to score.
pub fn average_precision(tp: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if tp.is_empty() { None } else { Some(0.0) };
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let target = r as f64 / 100.0;
        let at = recall.partition_point(|&v| v < target - 1e-12);
        if at < recall.len() {
            sum += precision[at];
        }
    }
    Some(sum / 101.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    /// AP per threshold of [`iou_thresholds`].
    pub ap: Vec<f64>,
    #[serde(rename = "AP")]
    pub mean_ap: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    pub n_gt: usize,
    pub n_det: usize,
}

/// One detection's outcome at IoU 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub image: usize,
    pub detection: usize,
    pub class: usize,
    pub score: f64,
    pub gt: Option<usize>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub classes: BTreeMap<String, ClassResult>,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    pub n_images: usize,
    pub mode: MatchMode,
    pub thresholds: Vec<f64>,
    pub matches: Vec<MatchRecord>,
}

/// Per-image detections paired with that image's ground truth.
pub struct EvalImage<'a> {
    pub detections: &'a [Detection],
    pub ground_truth: &'a [Instance],
}

pub fn evaluate(images: &[EvalImage<'_>], class_names: &[&str], mode: MatchMode) -> Result<EvalResult> {
    let thresholds = iou_thresholds();
    let mut classes = BTreeMap::new();
    let mut matches = Vec::new();
    let (mut sum_map, mut sum50, mut sum75, mut counted) = (0.0, 0.0, 0.0, 0usize);

    for (class, name) in class_names.iter().enumerate() {
        // (score, image, rank within the image), best first
        let mut order: Vec<(f64, usize, usize)> = Vec::new();
        let mut n_gt = 0;
        // per image: class detections by score, matches per threshold, overlap table
        let mut per_image: Vec<(Vec<usize>, Vec<Vec<Option<usize>>>, Vec<Vec<f64>>)> = Vec::new();
        for (ii, img) in images.iter().enumerate() {
            let mut dets: Vec<usize> = (0..img.detections.len()).filter(|&d| img.detections[d].class == class).collect();
            dets.sort_by(|&a, &b| img.detections[b].score.total_cmp(&img.detections[a].score).then(a.cmp(&b)));
            let gts: Vec<&Instance> = img.ground_truth.iter().filter(|g| g.class == class).collect();
            n_gt += gts.len();
            let table = dets
                .iter()
                .map(|&d| gts.iter().map(|g| overlap(&img.detections[d], g, mode)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            let per_t: Vec<Vec<Option<usize>>> = thresholds.iter().map(|&t| match_by_overlap(&table, gts.len(), t)).collect();
            for (rank, &d) in dets.iter().enumerate() {
                order.push((img.detections[d].score, ii, rank));
            }
            per_image.push((dets, per_t, table));
        }
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        // gt indices in records refer to the image's full ground-truth list
        let gt_global: Vec<Vec<usize>> = images
            .iter()
            .map(|img| (0..img.ground_truth.len()).filter(|&g| img.ground_truth[g].class == class).collect())
            .collect();
        for (ii, (dets, per_t, table)) in per_image.iter().enumerate() {
            for (rank, &d) in dets.iter().enumerate() {
                let gt = per_t[0][rank];
                matches.push(MatchRecord {
                    image: ii,
                    detection: d,
                    class,
                    score: images[ii].detections[d].score,
                    gt: gt.map(|g| gt_global[ii][g]),
                    iou: gt.map_or(0.0, |g| table[rank][g]),
                });
            }
        }

        let aps: Vec<Option<f64>> = (0..thresholds.len())
            .map(|t| {
                let flags: Vec<bool> = order
                    .iter()
                    .map(|&(_, ii, rank)| per_image[ii].1[t][rank].is_some())
                    .collect();
                average_precision(&flags, n_gt)
            })
            .collect();
        if aps[0].is_none() {
            continue;
        }
        let ap: Vec<f64> = aps.into_iter().map(|a| a.unwrap_or(0.0)).collect();
        let r = ClassResult {
            mean_ap: ap.iter().sum::<f64>() / ap.len() as f64,
            ap50: ap[0],
            ap75: ap[5],
            ap,
            n_gt,
            n_det: order.len(),
        };
        sum_map += r.mean_ap;
        sum50 += r.ap50;
        sum75 += r.ap75;
        counted += 1;
        classes.insert(name.to_string(), r);
    }
    let mean = |s: f64| if counted == 0 { 0.0 } else { s / counted as f64 };
    Ok(EvalResult {
        classes,
        map: mean(sum_map),
        ap50: mean(sum50),
        ap75: mean(sum75),
        n_images: images.len(),
        mode,
        thresholds,
        matches,
    })
}

/// Images in which two overlapping ground truths of one class are both
/// matched at IoU 0.5 with overlap `≥ min_iou`.
pub fn separated_same_class_pairs(result: &EvalResult, images: &[EvalImage<'_>], min_iou: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for (ii, img) in images.iter().enumerate() {
        let matched: Vec<usize> = result
            .matches
            .iter()
            .filter(|m| m.image == ii && m.iou >= min_iou)
            .filter_map(|m| m.gt)
            .collect();
        let gts = img.ground_truth;
        let found = (0..gts.len()).any(|a| {
            (a + 1..gts.len()).any(|b| {
                gts[a].class == gts[b].class
                    && gts[a].bbox.intersection(&gts[b].bbox) > 0.0
                    && matched.contains(&a)
                    && matched.contains(&b)
            })
        });
        if found {
            out.push(ii);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SynthConfig, CLASS_NAMES};
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn oracle_detections(gts: &[Instance], score: f64) -> Vec<Detection> {
        gts.iter()
            .map(|g| Detection {
                class: g.class,
                score,
                bbox: g.bbox,
                mask: Some(g.mask.clone()),
            })
            .collect()
    }

    #[test]
    fn single_cases() {
        assert_eq!(average_precision(&[true], 1), Some(1.0));
        assert_eq!(average_precision(&[false], 1), Some(0.0));
        assert_eq!(average_precision(&[], 0), None);
        assert_eq!(average_precision(&[false], 0), Some(0.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        // recall 0.5 at precision 1, then nothing: 51 of 101 grid points
        let ap = average_precision(&[true, false], 2).unwrap();
        assert!((ap - 51.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_rule() {
        assert_eq!(match_by_overlap(&[vec![1.0]], 1, 0.5), vec![Some(0)]);
        assert_eq!(match_by_overlap(&[vec![0.3]], 1, 0.5), vec![None]);
        assert_eq!(match_by_overlap(&[vec![0.8], vec![0.9]], 1, 0.5), vec![Some(0), None]);
        // higher-scored detection takes its best gt, the next falls back
        assert_eq!(match_by_overlap(&[vec![0.6, 0.9], vec![0.7, 0.95]], 2, 0.5), vec![Some(1), Some(0)]);
    }

    #[test]
    fn perfect_oracle_scores_one() {
        let (samples, _) = generate_dataset(3, 10, &SynthConfig::default());
        let dets: Vec<Vec<Detection>> = samples.iter().map(|s| oracle_detections(&s.instances, 0.9)).collect();
        let images: Vec<EvalImage> = samples
            .iter()
            .zip(&dets)
            .map(|(s, d)| EvalImage {
                detections: d,
                ground_truth: &s.instances,
            })
            .collect();
        let mask = evaluate(&images, &CLASS_NAMES, MatchMode::Mask).unwrap();
        let bx = evaluate(&images, &CLASS_NAMES, MatchMode::Box).unwrap();
        assert_eq!((mask.map, mask.ap50, mask.ap75), (1.0, 1.0, 1.0));
        assert_eq!(mask.classes, bx.classes);
        let json = serde_json::to_value(&mask).unwrap();
        assert_eq!(json["mAP"], 1.0);
        assert_eq!(json["mode"], "mask");
    }

    #[test]
    fn missing_masks_fail_in_mask_mode() {
        let (samples, _) = generate_dataset(1, 1, &SynthConfig::default());
        let mut d = oracle_detections(&samples[0].instances, 0.5);
        d[0].mask = None;
        let images = [EvalImage {
            detections: &d,
            ground_truth: &samples[0].instances,
        }];
        assert!(evaluate(&images, &CLASS_NAMES, MatchMode::Mask).is_err());
        assert!(evaluate(&images, &CLASS_NAMES, MatchMode::Box).is_ok());
    }

    fn scenario() -> impl Strategy<Value = (Vec<(f64, [f64; 4], usize)>, Vec<([f64; 4], usize)>)> {
        let b = || (0.0..0.6f64, 0.0..0.6f64, 0.05..0.4f64, 0.05..0.4f64).prop_map(|(x, y, w, h)| [x, y, x + w, y + h]);
        (
            prop::collection::vec((0.0..1.0f64, b(), 0..2usize), 0..8),
            prop::collection::vec((b(), 0..2usize), 0..5),
        )
    }

    fn build(s: &(Vec<(f64, [f64; 4], usize)>, Vec<([f64; 4], usize)>)) -> (Vec<Detection>, Vec<Instance>) {
        let dets = s
            .0
            .iter()
            .map(|&(score, b, class)| Detection {
                class,
                score,
                bbox: BBox::new(b[0], b[1], b[2], b[3]),
                mask: None,
            })
            .collect();
        let gts = s
            .1
            .iter()
            .map(|&(b, class)| Instance {
                class,
                bbox: BBox::new(b[0], b[1], b[2], b[3]),
                mask: crate::mask::Mask::zeros(1, 1),
            })
            .collect();
        (dets, gts)
    }

    proptest! {
        #[test]
        fn ap_bounded_and_monotone_in_threshold(s in scenario()) {
            let (dets, gts) = build(&s);
            let r = evaluate(&[EvalImage { detections: &dets, ground_truth: &gts }], &["a", "b"], MatchMode::Box).unwrap();
            for c in r.classes.values() {
                for w in c.ap.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-12);
                }
                prop_assert!(c.ap.iter().all(|&a| (0.0..=1.0).contains(&a)));
            }
        }

        #[test]
        fn ap_invariant_to_monotone_rescaling(s in scenario()) {
            let (dets, gts) = build(&s);
            let scaled: Vec<Detection> = dets.iter().map(|d| Detection { score: d.score.powi(3) * 0.5 + 0.1, ..d.clone() }).collect();
            let a = evaluate(&[EvalImage { detections: &dets, ground_truth: &gts }], &["a", "b"], MatchMode::Box).unwrap();
            let b = evaluate(&[EvalImage { detections: &scaled, ground_truth: &gts }], &["a", "b"], MatchMode::Box).unwrap();
            prop_assert_eq!(a.classes, b.classes);
        }

        #[test]
        fn duplicate_of_matched_detection_never_helps(s in scenario()) {
            let (mut dets, gts) = build(&s);
            let before = evaluate(&[EvalImage { detections: &dets, ground_truth: &gts }], &["a", "b"], MatchMode::Box).unwrap();
            if let Some(m) = before.matches.iter().find(|m| m.gt.is_some()) {
                let g = m.gt.unwrap();
                let crowded = gts.iter().enumerate().any(|(j, o)| j != g && o.class == gts[g].class && o.bbox.iou(&gts[g].bbox) >= 0.5);
                if !crowded {
                    let lowest = dets.iter().map(|d| d.score).fold(f64::INFINITY, f64::min);
                    dets.push(Detection { class: gts[g].class, score: lowest - 1.0, bbox: gts[g].bbox, mask: None });
                    let after = evaluate(&[EvalImage { detections: &dets, ground_truth: &gts }], &["a", "b"], MatchMode::Box).unwrap();
                    for (name, r) in &after.classes {
                        prop_assert!(r.ap50 <= before.classes[name].ap50 + 1e-12);
                    }
                }
            }
        }
    }
}
