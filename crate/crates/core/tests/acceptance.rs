//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 4 7`.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Instant;

use protomask::assembly::{assemble, assemble_backward, assemble_logits, PrototypeStack};
use protomask::bench::{clustered_detections, BenchReport};
use protomask::cli::{cmd_bench, evaluate_model, BenchArgs, BenchVariant};
use protomask::data::{generate_dataset, Sample, SynthConfig};
use protomask::eval::{average_precision, separated_same_class_pairs, EvalImage, MatchMode};
use protomask::geometry::{generate_anchors, match_anchors};
use protomask::loss::{box_loss, classification_loss_ohem, mask_loss, semantic_loss};
use protomask::model::{infer_with, InferOptions, Model, ModelConfig, NmsVariant, Schedule, Trainer};
use protomask::nms::{fast_nms_indices, sequential_nms_indices};
use protomask::nn::{
    grad_check, grad_check_at, resize_bilinear, resize_bilinear_backward, softmax_rows, softmax_rows_backward,
    upsample_bilinear_x2, Activation, Conv2d, GradCheckReport,
};
use protomask::tensor::{matmul, matmul_backward};
use protomask::{BBox, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn main() {
    let selected: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "fast NMS keeps a subset of sequential NMS", c1_fast_nms_subset),
        (2, "fast vs sequential NMS AP50 on the held-out set", c2_fast_nms_accuracy),
        (3, "finite-difference gradient suite", c3_gradients),
        (4, "assembly matches the per-instance loop", c4_assembly_oracle),
        (5, "overfit sanity run", c5_overfit),
        (6, "desk-scale generalisation", c6_desk),
        (7, "average precision matches brute-force PR enumeration", c7_eval_oracle),
        (8, "mask loss invariant to gt box area", c8_mask_loss_normalisation),
        (9, "NMS benchmark reports", c9_bench_reports),
        (10, "anchor and prototype-grid constants", c10_geometry),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS criterion {n}: {name} [{detail}] ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n}: {name} [{detail}] ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

fn c1_fast_nms_subset() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut strict, mut trials) = (0, 0);
    for t in [0.3, 0.5, 0.7] {
        for _ in 0..400 {
            let n = rng.gen_range(1..=256);
            let c = rng.gen_range(1..=8);
            let d = clustered_detections(&mut rng, n, c);
            let fast: BTreeSet<usize> = fast_nms_indices(&d, t, n).into_iter().collect();
            let seq: BTreeSet<usize> = sequential_nms_indices(&d, t).into_iter().collect();
            ensure(fast.is_subset(&seq), || format!("trial {trials}: fast kept a row sequential dropped"))?;
            strict += usize::from(fast.len() < seq.len());
            trials += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(strict > 0, || "no trial showed strict inclusion".into())?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{trials} trials, {strict} strict inclusions"))
}

// ---------------------------------------------------------------- 5, 6, 2

/// Sample count and seed of the desk-scale split: the first 500 train, the
/// remaining 100 are held out.
const DESK_SEED: u64 = 2024;
const DESK_TRAIN: usize = 500;
const DESK_TEST: usize = 100;

struct DeskRun {
    model: Model<f64>,
    test: Vec<Sample>,
    train_secs: f64,
    iterations: usize,
}

fn desk_run() -> Result<&'static DeskRun, String> {
    static RUN: OnceLock<Result<DeskRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let (mut all, _) = generate_dataset(DESK_SEED, DESK_TRAIN + DESK_TEST, &SynthConfig::default());
        let test = all.split_off(DESK_TRAIN);
        let schedule = Schedule::default();
        let iterations = schedule.iterations;
        let start = Instant::now();
        let mut trainer = Trainer::new(Model::new(ModelConfig::default(), DESK_SEED).map_err(err)?, schedule).map_err(err)?;
        trainer.run(&all, None, |_| Ok(())).map_err(err)?;
        Ok(DeskRun {
            model: trainer.into_model(),
            test,
            train_secs: start.elapsed().as_secs_f64(),
            iterations,
        })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn c2_fast_nms_accuracy() -> Outcome {
    let run = desk_run()?;
    let fast = evaluate_model(&run.model, &run.test, MatchMode::Mask, NmsVariant::Fast).map_err(err)?;
    let seq = evaluate_model(&run.model, &run.test, MatchMode::Mask, NmsVariant::Sequential).map_err(err)?;
    let gap = (fast.ap50 - seq.ap50).abs();
    let detail = format!("mask AP50 fast {:.4}, sequential {:.4}, gap {gap:.4}", fast.ap50, seq.ap50);
    ensure(gap <= 0.01, || detail.clone())?;
    Ok(detail)
}

fn c5_overfit() -> Outcome {
    let start = Instant::now();
    let (samples, _) = generate_dataset(5, 8, &SynthConfig::default());
    let schedule = Schedule::sanity();
    ensure(schedule.iterations <= 2000, || "sanity schedule exceeds 2000 iterations".into())?;
    let mut trainer = Trainer::new(Model::new(ModelConfig::default(), 5).map_err(err)?, schedule).map_err(err)?;
    let logs = trainer.run(&samples, None, |_| Ok(())).map_err(err)?;
    let first = logs[0].total;
    // one pass over the eight samples, so no single easy image decides it
    let tail = &logs[logs.len() - samples.len()..];
    let last = tail.iter().map(|l| l.total).sum::<f64>() / tail.len() as f64;
    let drop = 1.0 - last / first;
    let r = evaluate_model(trainer.model(), &samples, MatchMode::Mask, NmsVariant::Fast).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{} iterations, loss {first:.3} -> {last:.3} (drop {:.1}%), mask AP50 {:.3}, {secs:.0}s",
        logs.len(),
        100.0 * drop,
        r.ap50
    );
    ensure(drop >= 0.8 && r.ap50 >= 0.9 && secs <= 15.0 * 60.0, || detail.clone())?;
    Ok(detail)
}

fn c6_desk() -> Outcome {
    let start = Instant::now();
    let run = desk_run()?;
    let mask = evaluate_model(&run.model, &run.test, MatchMode::Mask, NmsVariant::Fast).map_err(err)?;
    let boxes = evaluate_model(&run.model, &run.test, MatchMode::Box, NmsVariant::Fast).map_err(err)?;
    let opts = InferOptions::default();
    let dets = run
        .test
        .iter()
        .map(|s| infer_with(&run.model, &s.image, &opts).map(|r| r.detections))
        .collect::<protomask::Result<Vec<_>>>()
        .map_err(err)?;
    let images: Vec<EvalImage> = run
        .test
        .iter()
        .zip(&dets)
        .map(|(s, d)| EvalImage {
            detections: d,
            ground_truth: &s.instances,
        })
        .collect();
    let separated = separated_same_class_pairs(&mask, &images, 0.5);
    let secs = run.train_secs + start.elapsed().as_secs_f64();
    let detail = format!(
        "{} iterations, mask AP50 {:.3}, box AP50 {:.3}, {} held-out images with separated same-class pairs, {:.0}s",
        run.iterations,
        mask.ap50,
        boxes.ap50,
        separated.len(),
        secs
    );
    ensure(
        mask.ap50 >= 0.5 && boxes.ap50 >= mask.ap50 - 0.05 && !separated.is_empty() && secs <= 2.0 * 3600.0,
        || detail.clone(),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------- 3

fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

struct Suite {
    worst: f64,
    worst_op: String,
    checks: usize,
    failures: Vec<String>,
}

impl Suite {
    fn record(&mut self, op: &str, r: protomask::Result<GradCheckReport>) {
        match r {
            Ok(r) => {
                self.checks += 1;
                if r.max_rel_error > self.worst {
                    self.worst = r.max_rel_error;
                    self.worst_op = op.into();
                }
                if !r.passes(1e-4) {
                    self.failures.push(format!("{op}: {:.2e}", r.max_rel_error));
                }
            }
            Err(e) => self.failures.push(format!("{op}: {e}")),
        }
    }
}

const EPS: f64 = 1e-5;

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let mut s = Suite {
        worst: 0.0,
        worst_op: String::new(),
        checks: 0,
        failures: Vec::new(),
    };
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        grad_conv(&mut s, &mut rng);
        grad_activations(&mut s, &mut rng);
        grad_softmax(&mut s, &mut rng);
        grad_resize(&mut s, &mut rng);
        grad_matmul(&mut s, &mut rng);
        grad_assembly(&mut s, &mut rng);
        grad_losses(&mut s, &mut rng);
        grad_total_loss(&mut s, seed);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    ensure(s.failures.is_empty(), || s.failures.join("; "))?;
    Ok(format!(
        "{} checks over 5 instances, worst relative error {:.2e} ({})",
        s.checks, s.worst, s.worst_op
    ))
}

fn grad_conv(s: &mut Suite, rng: &mut ChaCha8Rng) {
    for (cin, cout, k, stride) in [(2, 3, 3, 1), (3, 2, 3, 2), (3, 4, 1, 1)] {
        let mut conv = Conv2d::<f64>::new(rng, cin, cout, k, stride).unwrap();
        conv.bias = rand_tensor(rng, &[cout], -0.5, 0.5);
        let x = rand_tensor(rng, &[cin, 5, 6], -1.0, 1.0);
        let (y, cache) = conv.forward(&x).unwrap();
        let r = rand_tensor(rng, y.shape(), -1.0, 1.0);
        let dx = conv.backward(&cache, &r).unwrap();
        let dw = conv.weight.grad().unwrap().to_vec();
        let db = conv.bias.grad().unwrap().to_vec();
        let op = format!("conv{k}x{k}/s{stride}");
        let base = conv.clone();
        s.record(&format!("{op} input"), grad_check(&x, dx.data(), EPS, |t| Ok(dot(&base.infer(t)?, &r))));
        s.record(
            &format!("{op} weight"),
            grad_check(&base.weight.clone(), &dw, EPS, |w| {
                let mut c = base.clone();
                c.weight = w.clone();
                Ok(dot(&c.infer(&x)?, &r))
            }),
        );
        s.record(
            &format!("{op} bias"),
            grad_check(&base.bias.clone(), &db, EPS, |b| {
                let mut c = base.clone();
                c.bias = b.clone();
                Ok(dot(&c.infer(&x)?, &r))
            }),
        );
    }
}

fn grad_activations(s: &mut Suite, rng: &mut ChaCha8Rng) {
    for (name, act) in [("relu", Activation::Relu), ("tanh", Activation::Tanh), ("sigmoid", Activation::Sigmoid)] {
        // keep clear of the ReLU kink, where central differences are biased
        let x = rand_tensor(rng, &[24], -2.0, 2.0).map(|v| if v.abs() < 1e-2 { v + 0.05 } else { v });
        let r = rand_tensor(rng, &[24], -1.0, 1.0);
        let y = act.forward(&x);
        let dx = act.backward(&y, &r).unwrap();
        s.record(name, grad_check(&x, dx.data(), EPS, |t| Ok(dot(&act.forward(t), &r))));
    }
}

fn grad_softmax(s: &mut Suite, rng: &mut ChaCha8Rng) {
    let x = rand_tensor(rng, &[4, 5], -3.0, 3.0);
    let r = rand_tensor(rng, &[4, 5], -1.0, 1.0);
    let y = softmax_rows(&x).unwrap();
    let dx = softmax_rows_backward(&y, &r).unwrap();
    s.record("softmax", grad_check(&x, dx.data(), EPS, |t| Ok(dot(&softmax_rows(t)?, &r))));
}

fn grad_resize(s: &mut Suite, rng: &mut ChaCha8Rng) {
    let x = rand_tensor(rng, &[2, 3, 4], -1.0, 1.0);
    for (oh, ow) in [(5, 7), (2, 3), (6, 8)] {
        let r = rand_tensor(rng, &[2, oh, ow], -1.0, 1.0);
        let dx = resize_bilinear_backward((2, 3, 4), &r).unwrap();
        s.record(
            "bilinear resize",
            grad_check(&x, dx.data(), EPS, |t| Ok(dot(&resize_bilinear(t, oh, ow)?, &r))),
        );
    }
    let r = rand_tensor(rng, &[2, 6, 8], -1.0, 1.0);
    let dx = resize_bilinear_backward((2, 3, 4), &r).unwrap();
    s.record("upsample x2", grad_check(&x, dx.data(), EPS, |t| Ok(dot(&upsample_bilinear_x2(t)?, &r))));
}

fn grad_matmul(s: &mut Suite, rng: &mut ChaCha8Rng) {
    let a = rand_tensor(rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(rng, &[4, 5], -1.0, 1.0);
    let r = rand_tensor(rng, &[3, 5], -1.0, 1.0);
    let (da, db) = matmul_backward(&a, &b, &r).unwrap();
    s.record("matmul lhs", grad_check(&a, da.data(), EPS, |t| Ok(dot(&matmul(t, &b)?, &r))));
    s.record("matmul rhs", grad_check(&b, db.data(), EPS, |t| Ok(dot(&matmul(&a, t)?, &r))));
}

fn grad_assembly(s: &mut Suite, rng: &mut ChaCha8Rng) {
    let (h, w, k, n) = (6, 5, 4, 3);
    let p = rand_tensor(rng, &[h, w, k], 0.0, 2.0);
    let c = rand_tensor(rng, &[n, k], -0.99, 0.99);
    let r = rand_tensor(rng, &[n, h, w], -1.0, 1.0);
    let stack = PrototypeStack::new(p.clone()).unwrap();
    let (dp, dc) = assemble_backward(&stack, &c, &r).unwrap();
    s.record(
        "assembly prototypes",
        grad_check(&p, dp.data(), EPS, |t| Ok(dot(&assemble_logits(&PrototypeStack::new(t.clone())?, &c)?, &r))),
    );
    s.record(
        "assembly coefficients",
        grad_check(&c, dc.data(), EPS, |t| Ok(dot(&assemble_logits(&stack, t)?, &r))),
    );

    // the sigmoid and cropped BCE on top of assembly, as in training
    let boxes: Vec<BBox> = (0..n)
        .map(|_| {
            let (x1, y1) = (rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5));
            BBox::new(x1, y1, x1 + rng.gen_range(0.2..0.5), y1 + rng.gen_range(0.2..0.5))
        })
        .collect();
    let targets = rand_tensor(rng, &[n, h, w], 0.0, 1.0).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let loss = |stack: &PrototypeStack<f64>, c: &Tensor<f64>| -> protomask::Result<f64> {
        Ok(mask_loss(&assemble(stack, c)?, &targets, &boxes)?.value)
    };
    let d = mask_loss(&assemble(&stack, &c).unwrap(), &targets, &boxes).unwrap().d_logits;
    let (dp, dc) = assemble_backward(&stack, &c, &d).unwrap();
    s.record(
        "mask loss wrt prototypes",
        grad_check(&p, dp.data(), EPS, |t| loss(&PrototypeStack::new(t.clone())?, &c)),
    );
    s.record("mask loss wrt coefficients", grad_check(&c, dc.data(), EPS, |t| loss(&stack, t)));
}

fn grad_losses(s: &mut Suite, rng: &mut ChaCha8Rng) {
    // smooth L1: keep residuals away from the |d| = 1 seam
    let pred = rand_tensor(rng, &[5, 4], -2.0, 2.0);
    let target = Tensor::from_vec(
        &[5, 4],
        pred.data()
            .iter()
            .map(|&p| {
                let d: f64 = rng.gen_range(-2.5..2.5);
                p - if (d.abs() - 1.0).abs() < 0.05 { d * 1.2 } else { d }
            })
            .collect(),
    )
    .unwrap();
    let (_, g) = box_loss(&pred, &target).unwrap();
    s.record("smooth L1", grad_check(&pred, g.data(), EPS, |t| Ok(box_loss(t, &target)?.0)));

    let logits = rand_tensor(rng, &[3, 6, 5], -4.0, 4.0);
    let targets = rand_tensor(rng, &[3, 6, 5], 0.0, 1.0).map(|v| if v > 0.7 { 1.0 } else { 0.0 });
    let (_, g) = semantic_loss(&logits, &targets).unwrap();
    s.record("semantic BCE", grad_check(&logits, g.data(), EPS, |t| Ok(semantic_loss(t, &targets)?.0)));

    let anchors = generate_anchors(64, &[16, 32], &[20.0, 40.0], &[1.0, 0.5, 2.0]).unwrap();
    let gts = [BBox::new(0.1, 0.1, 0.45, 0.4), BBox::new(0.5, 0.45, 0.95, 0.9)];
    let matches = match_anchors(&anchors.anchors, &gts, 0.5, 0.4).unwrap();
    let classes = [0usize, 2];
    let logits = rand_tensor(rng, &[anchors.len(), 4], -3.0, 3.0);
    let l = classification_loss_ohem(&logits, &matches, &classes, 3.0).unwrap();
    // OHEM picks negatives by loss; the selection is fixed under tiny probes
    s.record(
        "OHEM cross entropy",
        grad_check(&logits, l.grad.data(), EPS, |t| {
            Ok(classification_loss_ohem(t, &matches, &classes, 3.0)?.value)
        }),
    );
}

fn grad_total_loss(s: &mut Suite, seed: u64) {
    use protomask::data::generate_sample;
    use protomask::model::{compute_loss, prepare_targets};
    let cfg = ModelConfig {
        input_size: 32,
        num_prototypes: 3,
        stem_channels: vec![2, 3],
        stage_channels: vec![3, 4, 4],
        fpn_channels: 3,
        proto_channels: 3,
        anchor_scales: vec![8.0, 14.0, 24.0],
        aspect_ratios: vec![1.0, 0.5],
        ..Default::default()
    };
    let synth = SynthConfig {
        size: 32,
        max_instances: 2,
        min_extent: 8.0,
        max_extent: 18.0,
        min_visible_pixels: 6,
        ..Default::default()
    };
    let (sample, _) = generate_sample(seed + 3, 0, &synth);
    let mut model = Model::new(cfg.clone(), seed + 11).unwrap();
    // zero biases leave flat image regions exactly on the ReLU kink; move to a generic point
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for conv in model.convs_mut() {
        conv.bias = rand_tensor(&mut rng, &[conv.bias.len()], -0.1, 0.1);
    }
    let anchors = model.anchors().clone();
    let targets = prepare_targets(&cfg, &anchors, &sample).unwrap();
    let (out, cache) = model.forward_with_cache(&sample.image, true).unwrap();
    let (_, grads) = compute_loss(&cfg, &anchors, &out, &targets).unwrap();
    model.backward(&cache, &grads).unwrap();
    let total = |m: &Model<f64>| -> protomask::Result<f64> {
        let o = m.forward(&sample.image, true)?;
        Ok(compute_loss(&cfg, &anchors, &o, &targets)?.0.total)
    };
    for (li, name) in model.conv_names().iter().enumerate() {
        let conv = &model.convs()[li];
        let n = conv.weight.len();
        let idx: Vec<usize> = (0..3).map(|_| rng.gen_range(0..n)).collect();
        let analytic = conv.weight.grad().unwrap().to_vec();
        s.record(
            &format!("total loss wrt {name}.weight"),
            grad_check_at(&conv.weight, &analytic, EPS, &idx, |w| {
                let mut m = model.clone();
                m.convs_mut()[li].weight = w.clone();
                total(&m)
            }),
        );
        let analytic = conv.bias.grad().unwrap().to_vec();
        let b = rng.gen_range(0..conv.bias.len());
        s.record(
            &format!("total loss wrt {name}.bias"),
            grad_check_at(&conv.bias, &analytic, EPS, &[b], |bias| {
                let mut m = model.clone();
                m.convs_mut()[li].bias = bias.clone();
                total(&m)
            }),
        );
    }
}

// ---------------------------------------------------------------- 4

/// `σ(Σ_j C[i,j]·P[y,x,j])` one pixel at a time.
fn assembly_loop(p: &Tensor<f64>, c: &Tensor<f64>) -> Vec<f64> {
    let (h, w, k) = (p.shape()[0], p.shape()[1], p.shape()[2]);
    let n = c.shape()[0];
    let mut out = vec![0.0; n * h * w];
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut z = 0.0;
                for j in 0..k {
                    z += c.data()[i * k + j] * p.data()[(y * w + x) * k + j];
                }
                out[(i * h + y) * w + x] = 1.0 / (1.0 + (-z).exp());
            }
        }
    }
    out
}

fn c4_assembly_oracle() -> Outcome {
    // two prototypes on a 2×2 grid: an identity pattern and twice its complement
    let p = Tensor::from_vec(&[2, 2, 2], vec![1.0, 0.0, 0.0, 2.0, 0.0, 2.0, 1.0, 0.0]).unwrap();
    let c = Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap();
    let m = assemble(&PrototypeStack::new(p.clone()).map_err(err)?, &c).map_err(err)?;
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let expected = [sig(1.0), sig(-2.0), sig(-2.0), sig(1.0)];
    let worked = m.data().iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(worked <= 1e-6, || format!("worked example off by {worked:.2e}"))?;
    ensure(
        (m.data()[0] - 0.7311).abs() < 1e-4 && (m.data()[1] - 0.1192).abs() < 1e-4,
        || format!("worked example gave {:?}", m.data()),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = worked;
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let k = rng.gen_range(1..=32);
        let n = rng.gen_range(1..=10);
        let p = rand_tensor(&mut rng, &[h, w, k], 0.0, 3.0);
        let c = rand_tensor(&mut rng, &[n, k], -1.0, 1.0);
        let m = assemble(&PrototypeStack::new(p.clone()).map_err(err)?, &c).map_err(err)?;
        let d = m
            .data()
            .iter()
            .zip(assembly_loop(&p, &c))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(d);
    }
    ensure(worst <= 1e-6, || format!("max abs difference {worst:.2e}"))?;
    Ok(format!("worked example + 100 random pairs, max abs difference {worst:.2e}"))
}

// ---------------------------------------------------------------- 7

/// AP from first principles: at each of the 101 recall levels, the best
/// precision reached at any cut-off whose recall is at least that level.
fn brute_force_ap(tp: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if tp.is_empty() { None } else { Some(0.0) };
    }
    let cutoffs: Vec<(f64, f64)> = (1..=tp.len())
        .map(|k| {
            let hits = tp[..k].iter().filter(|&&t| t).count() as f64;
            (hits / n_gt as f64, hits / k as f64)
        })
        .collect();
    let total: f64 = (0..=100)
        .map(|r| {
            let level = r as f64 / 100.0;
            cutoffs
                .iter()
                .filter(|(rec, _)| *rec >= level - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(total / 101.0)
}

fn c7_eval_oracle() -> Outcome {
    let mut cases = 0;
    for n_gt in 0..=3 {
        for n_det in 0..=6 {
            for bits in 0..(1u32 << n_det) {
                let tp: Vec<bool> = (0..n_det).map(|i| bits >> i & 1 == 1).collect();
                if tp.iter().filter(|&&t| t).count() > n_gt {
                    continue;
                }
                let got = average_precision(&tp, n_gt);
                let want = brute_force_ap(&tp, n_gt);
                let ok = match (got, want) {
                    (None, None) => true,
                    (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
                    _ => false,
                };
                ensure(ok, || format!("tp {tp:?}, {n_gt} gts: got {got:?}, want {want:?}"))?;
                cases += 1;
            }
        }
    }
    let two = average_precision(&[true, false], 2).unwrap();
    ensure((two - 51.0 / 101.0).abs() <= 1e-9, || format!("[TP, FP] with 2 gts gave {two}"))?;
    Ok(format!("{cases} sequences agree within 1e-9"))
}

// ---------------------------------------------------------------- 8

fn c8_mask_loss_normalisation() -> Outcome {
    let grid = 32;
    let mut values = Vec::new();
    for (p, target) in [(0.3, 1.0), (0.8, 0.0), (0.5, 1.0)] {
        let per_pixel = -(target * f64::ln(p) + (1.0 - target) * f64::ln(1.0 - p));
        for area in [4usize, 16, 64, 256] {
            for (bh, bw) in [(1usize, area), (area.isqrt(), area.isqrt()), (area, 1)] {
                if bh > grid || bw > grid {
                    continue;
                }
                let soft = Tensor::full(&[1, grid, grid], p);
                let targets = Tensor::full(&[1, grid, grid], target);
                let b = BBox::new(0.25, 0.0, 0.25 + bw as f64 / grid as f64, bh as f64 / grid as f64);
                let l = mask_loss(&soft, &targets, &[b]).map_err(err)?;
                ensure((l.value - per_pixel).abs() <= 1e-9, || {
                    format!("area {area} ({bh}x{bw}) at p={p}: {} vs per-pixel {per_pixel}", l.value)
                })?;
                values.push(l.value);
            }
        }
    }
    Ok(format!("{} box shapes over areas 4..256 equal the per-pixel BCE within 1e-9", values.len()))
}

// ---------------------------------------------------------------- 9

fn c9_bench_reports() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut lines = Vec::new();
    for n in [100, 1000] {
        for c in [8, 80] {
            let out = dir.path().join(format!("bench_{n}_{c}"));
            let args = BenchArgs {
                n,
                c,
                trials: 100,
                variant: BenchVariant::Both,
                iou: 0.5,
                top_n: 200,
                seed: 9,
                out: out.clone(),
            };
            cmd_bench(&args).map_err(err)?;
            let r: BenchReport = serde_json::from_slice(&std::fs::read(out.join("bench.json")).map_err(err)?).map_err(err)?;
            ensure(r.audit(), || format!("({n}, {c}): divergence audit failed"))?;
            ensure(r.trials.len() == 100 && r.variants.len() == 2, || format!("({n}, {c}): incomplete report"))?;
            for v in &r.variants {
                ensure(
                    v.n == n && v.c == c && v.mean_ms.is_finite() && v.mean_ms >= 0.0 && v.p50_ms <= v.p95_ms,
                    || format!("({n}, {c}): bad {:?} summary", v.variant),
                )?;
            }
            ensure(out.join("manifest.json").exists() && out.join("config.json").exists(), || "missing run files".into())?;
            lines.push(format!(
                "n={n} c={c}: fast {:.3}ms seq {:.3}ms diverge {:.2}",
                r.variants[0].mean_ms, r.variants[1].mean_ms, r.divergence_rate
            ));
        }
    }
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------- 10

fn c10_geometry() -> Outcome {
    let scales = [24.0, 48.0, 96.0, 192.0, 384.0];
    let strides = [8usize, 16, 32, 64, 128];
    let ratios = [1.0, 0.5, 2.0];
    let size = 550usize;
    let grid = generate_anchors(size, &strides, &scales, &ratios).map_err(err)?;
    let mut i = 0;
    for (l, (&stride, &scale)) in strides.iter().zip(&scales).enumerate() {
        let g = (size + stride - 1) / stride;
        let level = grid.levels[l];
        ensure(level.grid_h == g && level.grid_w == g && level.scale == scale, || format!("level {l}: {level:?}"))?;
        for row in 0..g {
            for col in 0..g {
                for &r in &ratios {
                    let (cx, cy) = ((col as f64 + 0.5) * stride as f64, (row as f64 + 0.5) * stride as f64);
                    let (w, h) = (scale * f64::sqrt(r), scale / f64::sqrt(r));
                    let want = [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0].map(|v| v / size as f64);
                    let a = grid.anchors[i];
                    let got = [a.x1, a.y1, a.x2, a.y2];
                    ensure(got.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12), || {
                        format!("anchor {i}: {got:?} vs {want:?}")
                    })?;
                    i += 1;
                }
            }
        }
    }
    ensure(i == grid.len(), || format!("{} anchors, expected {i}", grid.len()))?;

    // a real forward pass at 550 px
    let cfg = ModelConfig {
        input_size: size,
        num_prototypes: 4,
        stem_channels: vec![2, 2],
        stage_channels: vec![2, 2, 2, 2, 2],
        fpn_channels: 2,
        proto_channels: 2,
        strides: strides.to_vec(),
        anchor_scales: scales.to_vec(),
        ..Default::default()
    };
    let model = Model::<f64>::new(cfg.clone(), 0).map_err(err)?;
    let out = model.forward(&Tensor::full(&[3, size, size], 0.5), false).map_err(err)?;
    let (ph, pw, k) = out.prototypes.dims();
    ensure((ph, pw, k) == (138, 138, 4), || format!("prototype stack {ph}x{pw}x{k}"))?;
    ensure(size.div_ceil(4) == 138 && cfg.prototype_size() == 138, || "prototype size".into())?;
    ensure(out.class_logits.shape()[0] == grid.len(), || "head rows differ from anchor count".into())?;
    Ok(format!(
        "{} anchors over grids {:?}; 550px input gives a {ph}x{pw} prototype grid",
        grid.len(),
        grid.levels.iter().map(|l| l.grid_h).collect::<Vec<_>>()
    ))
}
