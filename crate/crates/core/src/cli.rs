//! Command-line front end. Every command writes its resolved configuration
//! and a `manifest.json` listing its outputs under `--out`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, crop_and_threshold, upscale_mask};
use crate::bench::{run_bench, BenchConfig};
use crate::data::pnm::Pnm;
use crate::data::{generate_dataset, image_from_rgb8, load_dataset, save_dataset, Sample, SynthConfig, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalImage, EvalResult, MatchMode};
use crate::model::{infer_with, Detection, InferOptions, Inference, Model, ModelConfig, NmsVariant, Schedule, Trainer};
use crate::nn::Checkpoint;
use crate::tensor::{Real, Tensor};
use crate::viz;

#[derive(Debug, Parser)]
#[command(name = "protomask", version, about = "Prototype-mask instance segmentation on synthetic shapes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic shapes dataset.
    Generate(GenerateArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Run detection on one image or a dataset.
    Infer(InferArgs),
    /// Mask or box AP of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Time both suppression variants on random clustered detections.
    BenchNms(BenchArgs),
    /// Dump prototype activations and the top detection's mask.
    VizProtos(VizArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub max_instances: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Short schedule for overfitting a handful of samples.
    Sanity,
    /// Full-length schedule.
    Desk,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON `{"model": {...}, "schedule": {...}}`; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Train on the first N samples only.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NmsArg {
    Fast,
    Sequential,
}

impl From<NmsArg> for NmsVariant {
    fn from(v: NmsArg) -> Self {
        match v {
            NmsArg::Fast => NmsVariant::Fast,
            NmsArg::Sequential => NmsVariant::Sequential,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A P6 image of the model's input size.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub boxes_only: bool,
    #[arg(long)]
    pub score_thresh: Option<f64>,
    /// Also write a colour overlay per image.
    #[arg(long)]
    pub viz: bool,
    #[arg(long, value_enum, default_value_t = NmsArg::Fast)]
    pub nms: NmsArg,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "mask")]
    pub mode: String,
    #[arg(long, value_enum, default_value_t = NmsArg::Fast)]
    pub nms: NmsArg,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchVariant {
    Fast,
    Sequential,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 80)]
    pub c: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, value_enum, default_value_t = BenchVariant::Both)]
    pub variant: BenchVariant,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, default_value_t = 200)]
    pub top_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VizArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Model and schedule as read from `--config`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: Schedule,
}

#[derive(Debug, Serialize)]
struct RunConfig<'a, A: Serialize, R: Serialize> {
    command: &'a str,
    version: &'a str,
    args: &'a A,
    resolved: R,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    files: Vec<String>,
}

/// Collects relative paths of everything a command writes.
struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let rel = rel.as_ref();
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.files.push(rel.to_string_lossy().replace('\\', "/"));
        Ok(p)
    }

    fn json(&mut self, rel: &str, value: &impl Serialize) -> Result<PathBuf> {
        let p = self.path(rel)?;
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn config<A: Serialize, R: Serialize>(&mut self, command: &str, args: &A, resolved: R) -> Result<()> {
        let rc = RunConfig {
            command,
            version: env!("CARGO_PKG_VERSION"),
            args,
            resolved,
        };
        self.json("config.json", &rc).map(|_| ())
    }

    fn finish(mut self, command: &str) -> Result<()> {
        self.files.sort();
        self.files.dedup();
        let m = Manifest {
            command,
            files: self.files.clone(),
        };
        let p = self.root.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::BenchNms(a) => cmd_bench(&a),
        Command::VizProtos(a) => cmd_viz(&a),
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    if a.max_instances == 0 {
        return Err(Error::Config("max instances must be at least 1".into()));
    }
    let base = SynthConfig::default();
    // extents and visibility floors scale with the image side
    let k = a.size as f64 / base.size as f64;
    let synth = SynthConfig {
        size: a.size,
        max_instances: a.max_instances,
        min_extent: base.min_extent * k,
        max_extent: base.max_extent * k,
        min_visible_pixels: ((base.min_visible_pixels as f64 * k * k).round() as usize).max(4),
        ..base
    };
    let (samples, report) = generate_dataset(a.seed, a.count, &synth);
    let mut out = Outputs::new(&a.out)?;
    out.config("generate", a, &synth)?;
    // the dataset manifest doubles as the output index
    let manifest = save_dataset(&a.out, &samples, &CLASS_NAMES, Some(report.clone()))?;
    print_json(&report)?;
    log::info!(
        "wrote {} samples to {}; same-class overlap in {:.1}% of samples",
        manifest.count,
        a.out.display(),
        100.0 * report.overlap_frequency
    );
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, "json", e.to_string()))
}

pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut tc: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(p) = a.preset {
        if a.config.is_none() {
            tc.schedule = match p {
                Preset::Sanity => Schedule::sanity(),
                Preset::Desk => Schedule::default(),
            };
        }
    }
    if let Some(i) = a.iters {
        tc.schedule.iterations = i;
    }
    if let Some(s) = a.seed {
        tc.schedule.seed = s;
    }
    tc.model.validate()?;
    tc.schedule.validate()?;
    Ok(tc)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let (_, mut samples) = load_dataset(&a.data)?;
    if let Some(n) = a.limit {
        samples.truncate(n);
    }
    if samples.is_empty() {
        return Err(Error::Validation(format!("{}: no training samples", a.data.display())));
    }
    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::<f64>::load(p)?;
            // the stored schedule wins unless a config or preset replaces it
            let mut schedule = if a.config.is_some() || a.preset.is_some() {
                resolve_train_config(a)?.schedule
            } else {
                Trainer::from_checkpoint(&ck, None)?.schedule().clone()
            };
            if let Some(i) = a.iters {
                schedule.iterations = i;
            }
            if let Some(s) = a.seed {
                schedule.seed = s;
            }
            Trainer::from_checkpoint(&ck, Some(schedule))?
        }
        None => {
            let tc = resolve_train_config(a)?;
            Trainer::new(Model::new(tc.model, tc.schedule.seed)?, tc.schedule)?
        }
    };
    let resolved = TrainConfig {
        model: trainer.model().config().clone(),
        schedule: trainer.schedule().clone(),
    };
    if samples[0].size() != resolved.model.input_size {
        return Err(Error::Validation(format!(
            "dataset images are {}px, model input is {}px",
            samples[0].size(),
            resolved.model.input_size
        )));
    }
    let mut out = Outputs::new(&a.out)?;
    out.config("train", a, &resolved)?;
    let log_path = out.path("train_log.jsonl")?;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(a.resume.is_some())
        .write(true)
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let ckpt_dir = a.out.join("checkpoints");
    let total = resolved.schedule.iterations;
    let started = std::time::Instant::now();
    let result = trainer.run(&samples, Some(&ckpt_dir), |l| {
        serde_json::to_writer(&mut log, l)?;
        writeln!(log).map_err(|e| Error::io(&log_path, e))?;
        if (l.iter + 1) % 100 == 0 || l.iter + 1 == total {
            log::info!(
                "iter {}/{total} total {:.4} (cls {:.3} box {:.3} mask {:.3} sem {:.3}) lr {:.1e} {:.1}s",
                l.iter + 1,
                l.total,
                l.cls,
                l.bbox,
                l.mask,
                l.semantic,
                l.lr,
                started.elapsed().as_secs_f64()
            );
        }
        Ok(())
    });
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    result?;
    let final_path = out.path("final.ckpt")?;
    trainer.to_checkpoint().save(&final_path)?;
    if let Ok(entries) = std::fs::read_dir(&ckpt_dir) {
        for e in entries.flatten() {
            out.files.push(format!("checkpoints/{}", e.file_name().to_string_lossy()));
        }
    }
    out.finish("train")
}

fn load_model_f64(path: &Path) -> Result<Model<f64>> {
    Model::from_checkpoint(&Checkpoint::<f64>::load(path)?)
}

enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl AnyModel {
    fn load(path: &Path, precision: Precision) -> Result<Self> {
        let m = load_model_f64(path)?;
        Ok(match precision {
            Precision::F32 => AnyModel::F32(m.cast()),
            Precision::F64 => AnyModel::F64(m),
        })
    }

    fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::F32(m) => m.config(),
            AnyModel::F64(m) => m.config(),
        }
    }

    fn infer(&self, image: &Tensor<f64>, opts: &InferOptions) -> Result<Inference> {
        match self {
            AnyModel::F32(m) => infer_with(m, image, opts),
            AnyModel::F64(m) => infer_with(m, image, opts),
        }
    }
}

fn load_image(path: &Path, size: usize) -> Result<Tensor<f64>> {
    let p = Pnm::load(path)?;
    if p.channels != 3 {
        return Err(Error::format(path, "magic", "expected an RGB (P6) image"));
    }
    if p.width != size || p.height != size {
        return Err(Error::Validation(format!(
            "{}: image is {}x{}, model expects {size}x{size}",
            path.display(),
            p.width,
            p.height
        )));
    }
    Ok(image_from_rgb8(p.height, p.width, &p.pixels))
}

#[derive(Debug, Serialize)]
struct DetectionsFile<'a> {
    image: String,
    detections: Vec<DetectionEntry<'a>>,
    forward_ms: f64,
    nms_ms: f64,
    mask_ms: f64,
}

#[derive(Debug, Serialize)]
struct DetectionEntry<'a> {
    #[serde(flatten)]
    det: &'a Detection,
    class_name: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
}

#[derive(Debug, Serialize)]
struct InferSummary {
    images: usize,
    detections: usize,
    mean_forward_ms: f64,
    mean_nms_ms: f64,
    mean_mask_ms: f64,
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let model = AnyModel::load(&a.ckpt, a.precision)?;
    let size = model.config().input_size;
    let inputs: Vec<(String, Tensor<f64>)> = match (&a.image, &a.data) {
        (Some(p), _) => {
            let stem = p.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
            vec![(stem, load_image(p, size)?)]
        }
        (None, Some(d)) => {
            let (m, samples) = load_dataset(d)?;
            m.samples.into_iter().zip(samples).map(|(n, s)| (n, s.image)).collect()
        }
        (None, None) => return Err(Error::Config("either --image or --data is required".into())),
    };
    let opts = InferOptions {
        score_threshold: a.score_thresh,
        boxes_only: a.boxes_only,
        nms: a.nms.into(),
    };
    let mut out = Outputs::new(&a.out)?;
    out.config("infer", a, model.config())?;
    let mut summary = InferSummary {
        images: inputs.len(),
        detections: 0,
        mean_forward_ms: 0.0,
        mean_nms_ms: 0.0,
        mean_mask_ms: 0.0,
    };
    for (name, image) in &inputs {
        let r = model.infer(image, &opts)?;
        summary.detections += r.detections.len();
        summary.mean_forward_ms += r.forward_ms;
        summary.mean_nms_ms += r.nms_ms;
        summary.mean_mask_ms += r.mask_ms;
        let mut entries = Vec::with_capacity(r.detections.len());
        for (i, d) in r.detections.iter().enumerate() {
            let mask = match &d.mask {
                Some(m) => {
                    let rel = format!("{name}/mask_{i:03}.pgm");
                    let p = out.path(&rel)?;
                    Pnm::grey(m.width(), m.height(), m.data().iter().map(|&v| v * 255).collect()).save(&p)?;
                    Some(format!("mask_{i:03}.pgm"))
                }
                None => None,
            };
            entries.push(DetectionEntry {
                det: d,
                class_name: CLASS_NAMES.get(d.class).copied().unwrap_or("unknown"),
                mask,
            });
        }
        let file = DetectionsFile {
            image: name.clone(),
            detections: entries,
            forward_ms: r.forward_ms,
            nms_ms: r.nms_ms,
            mask_ms: r.mask_ms,
        };
        out.json(&format!("{name}/detections.json"), &file)?;
        if a.viz {
            let rgb = crate::data::image_to_rgb8(image);
            let p = out.path(format!("{name}/overlay.ppm"))?;
            viz::overlay(&rgb, size, &r.detections).save(&p)?;
        }
    }
    let n = inputs.len().max(1) as f64;
    summary.mean_forward_ms /= n;
    summary.mean_nms_ms /= n;
    summary.mean_mask_ms /= n;
    out.json("summary.json", &summary)?;
    print_json(&summary)?;
    out.finish("infer")
}

/// Runs inference on every sample and scores it.
pub fn evaluate_model<T: Real>(model: &Model<T>, samples: &[Sample], mode: MatchMode, nms: NmsVariant) -> Result<EvalResult> {
    let opts = InferOptions {
        boxes_only: mode == MatchMode::Box,
        nms,
        ..Default::default()
    };
    let dets = samples
        .iter()
        .map(|s| infer_with(model, &s.image, &opts).map(|r| r.detections))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<EvalImage> = samples
        .iter()
        .zip(&dets)
        .map(|(s, d)| EvalImage {
            detections: d,
            ground_truth: &s.instances,
        })
        .collect();
    evaluate(&images, &CLASS_NAMES[..model.config().num_classes.min(CLASS_NAMES.len())], mode)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalResult> {
    let mode: MatchMode = a.mode.parse()?;
    let model = AnyModel::load(&a.ckpt, a.precision)?;
    let (_, samples) = load_dataset(&a.data)?;
    let result = match &model {
        AnyModel::F32(m) => evaluate_model(m, &samples, mode, a.nms.into())?,
        AnyModel::F64(m) => evaluate_model(m, &samples, mode, a.nms.into())?,
    };
    let mut out = Outputs::new(&a.out)?;
    out.config("eval", a, model.config())?;
    out.json("eval.json", &result)?;
    #[derive(Serialize)]
    struct Brief<'a> {
        #[serde(rename = "mAP")]
        map: f64,
        #[serde(rename = "AP50")]
        ap50: f64,
        #[serde(rename = "AP75")]
        ap75: f64,
        n_images: usize,
        mode: MatchMode,
        classes: Vec<&'a str>,
    }
    print_json(&Brief {
        map: result.map,
        ap50: result.ap50,
        ap75: result.ap75,
        n_images: result.n_images,
        mode: result.mode,
        classes: result.classes.keys().map(String::as_str).collect(),
    })?;
    out.finish("eval")?;
    Ok(result)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        n: a.n,
        c: a.c,
        trials: a.trials,
        variant: match a.variant {
            BenchVariant::Fast => Some(NmsVariant::Fast),
            BenchVariant::Sequential => Some(NmsVariant::Sequential),
            BenchVariant::Both => None,
        },
        iou: a.iou,
        top_n: a.top_n,
        seed: a.seed,
    };
    let report = run_bench(&cfg)?;
    if !report.audit() {
        return Err(Error::State("benchmark divergence rate disagrees with its stored kept sets".into()));
    }
    let mut out = Outputs::new(&a.out)?;
    out.config("bench-nms", a, &cfg)?;
    out.json("bench.json", &report)?;
    print_json(&report.variants)?;
    out.finish("bench-nms")
}

pub fn cmd_viz(a: &VizArgs) -> Result<()> {
    let model = load_model_f64(&a.ckpt)?;
    let cfg = model.config().clone();
    let image = load_image(&a.image, cfg.input_size)?;
    let outputs = model.forward(&image, false)?;
    let mut out = Outputs::new(&a.out)?;
    out.config("viz-protos", a, &cfg)?;
    for (i, p) in viz::prototype_images(&outputs.prototypes).iter().enumerate() {
        let path = out.path(format!("proto_{i:02}.pgm"))?;
        p.save(&path)?;
    }
    let r = infer_with(&model, &image, &InferOptions::default())?;
    if let Some(top) = r.detections.first() {
        // rerun assembly for the top detection to expose its soft mask
        let (ph, pw, _) = outputs.prototypes.dims();
        let row = top_coefficients(&model, &outputs, top)?;
        let soft = assemble(&outputs.prototypes, &row)?;
        out_soft(&mut out, "top_soft.pgm", soft.data(), ph, pw)?;
        let set = crop_and_threshold(&soft, &[top.bbox], cfg.mask_threshold, cfg.crop_pad)?;
        out_soft(&mut out, "top_cropped.pgm", set.soft.data(), ph, pw)?;
        let m = upscale_mask(&set.binary[0], cfg.input_size, cfg.input_size)?;
        let path = out.path("top_mask.pgm")?;
        Pnm::grey(m.width(), m.height(), m.data().iter().map(|&v| v * 255).collect()).save(&path)?;
        out.json("top_detection.json", top)?;
    }
    out.finish("viz-protos")
}

fn out_soft(out: &mut Outputs, rel: &str, data: &[f64], h: usize, w: usize) -> Result<()> {
    let p = out.path(rel)?;
    viz::soft_image(data, h, w).save(&p)
}

/// Coefficient row of the anchor whose decoded box and score produced `det`.
fn top_coefficients(model: &Model<f64>, outputs: &crate::model::NetworkOutputs<f64>, det: &Detection) -> Result<Tensor<f64>> {
    let cfg = model.config();
    let probs = crate::nn::softmax_rows(&outputs.class_logits)?;
    let c1 = cfg.num_classes + 1;
    let k = cfg.num_prototypes;
    let row = (0..model.anchors().len())
        .find(|&a| {
            let t: [f64; 4] = outputs.box_t.data()[a * 4..a * 4 + 4].try_into().expect("four");
            probs.data()[a * c1 + det.class + 1] == det.score
                && crate::geometry::decode_box(&t, &model.anchors().anchors[a], cfg.variances) == det.bbox
        })
        .ok_or_else(|| Error::State("top detection has no source anchor".into()))?;
    Tensor::from_vec(&[1, k], outputs.coeffs.data()[row * k..(row + 1) * k].to_vec())
}
