//! The toy detector: a strided conv backbone, a small top-down feature
//! pyramid, one prediction head shared by every level, the prototype branch
//! and a training-only semantic head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::assembly::PrototypeStack;
use crate::error::{Error, Result};
use crate::geometry::AnchorGrid;
use crate::nn::{resize_bilinear, resize_bilinear_backward, upsample_bilinear_x2, Activation, Checkpoint, Conv2d, ConvCache};
use crate::tensor::{Real, Tensor};

/// Everything one forward pass predicts. Row `i` of the per-anchor tensors
/// belongs to anchor `i` of the model's anchor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutputs<T = f64> {
    /// `n_anchors × (c+1)`, column 0 is background.
    pub class_logits: Tensor<T>,
    /// `n_anchors × 4` encoded offsets.
    pub box_t: Tensor<T>,
    /// `n_anchors × k`, in `(-1, 1)`.
    pub coeffs: Tensor<T>,
    pub prototypes: PrototypeStack<T>,
    /// `c × h₃ × w₃`, only in training mode.
    pub seg_logits: Option<Tensor<T>>,
}

/// Loss gradients with respect to each network output.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads<T = f64> {
    pub class_logits: Tensor<T>,
    pub box_t: Tensor<T>,
    /// With respect to the post-tanh coefficients.
    pub coeffs: Tensor<T>,
    /// `h × w × k`, matching the prototype stack layout.
    pub prototypes: Tensor<T>,
    pub seg_logits: Option<Tensor<T>>,
}

impl<T: Real> OutputGrads<T> {
    pub fn zeros_like(out: &NetworkOutputs<T>) -> Self {
        Self {
            class_logits: Tensor::zeros(out.class_logits.shape()),
            box_t: Tensor::zeros(out.box_t.shape()),
            coeffs: Tensor::zeros(out.coeffs.shape()),
            prototypes: Tensor::zeros(out.prototypes.maps().shape()),
            seg_logits: out.seg_logits.as_ref().map(|s| Tensor::zeros(s.shape())),
        }
    }
}

#[derive(Debug, Clone)]
struct Layer<T> {
    cache: ConvCache<T>,
    out: Tensor<T>,
}

#[derive(Debug, Clone)]
struct HeadLayers<T> {
    shared: Layer<T>,
    cls: Layer<T>,
    bbox: Layer<T>,
    coef: Layer<T>,
}

/// Activations a backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f64> {
    stem: Vec<Layer<T>>,
    stages: Vec<(Layer<T>, Layer<T>)>,
    lateral: Vec<Layer<T>>,
    smooth: Vec<Layer<T>>,
    heads: Vec<HeadLayers<T>>,
    proto: Vec<Layer<T>>,
    semantic: Option<Layer<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f64> {
    config: ModelConfig,
    anchors: AnchorGrid,
    stem: Vec<Conv2d<T>>,
    stages: Vec<(Conv2d<T>, Conv2d<T>)>,
    lateral: Vec<Conv2d<T>>,
    smooth: Vec<Conv2d<T>>,
    head: Conv2d<T>,
    cls: Conv2d<T>,
    bbox: Conv2d<T>,
    coef: Conv2d<T>,
    /// Three convs at stride 8, one after the ×2 upsample, the final 1×1.
    proto: Vec<Conv2d<T>>,
    semantic: Conv2d<T>,
}

const PROTO_PRE_UPSAMPLE: usize = 3;

fn conv_act<T: Real>(conv: &Conv2d<T>, x: &Tensor<T>, act: Option<Activation>, name: &str) -> Result<Layer<T>> {
    let (mut out, cache) = conv.forward(x)?;
    if let Some(a) = act {
        a.forward_inplace(&mut out);
    }
    out.check_finite(name)?;
    Ok(Layer { cache, out })
}

fn add_into<T: Real>(dst: &mut Tensor<T>, src: &Tensor<T>) -> Result<()> {
    if dst.shape() != src.shape() {
        return Err(Error::dim("add", format!("{:?} vs {:?}", dst.shape(), src.shape())));
    }
    for (a, &b) in dst.data_mut().iter_mut().zip(src.data()) {
        *a = *a + b;
    }
    Ok(())
}

fn shape3<T: Real>(t: &Tensor<T>) -> (usize, usize, usize) {
    t.dims3().expect("feature maps are rank 3")
}

/// Copies a level's `[A·d, H, W]` head map into rows `offset..` of an
/// `n × d` tensor, one row per (cell, ratio) in anchor order.
fn gather_rows<T: Real>(map: &Tensor<T>, ratios: usize, d: usize, offset: usize, rows: &mut [T]) {
    let (_, h, w) = shape3(map);
    let src = map.data();
    for cell in 0..h * w {
        for r in 0..ratios {
            let row = offset + cell * ratios + r;
            for e in 0..d {
                rows[row * d + e] = src[(r * d + e) * h * w + cell];
            }
        }
    }
}

fn scatter_rows<T: Real>(rows: &[T], ratios: usize, d: usize, offset: usize, h: usize, w: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); ratios * d * h * w];
    for cell in 0..h * w {
        for r in 0..ratios {
            let row = offset + cell * ratios + r;
            for e in 0..d {
                out[(r * d + e) * h * w + cell] = rows[row * d + e];
            }
        }
    }
    Tensor::from_vec(&[ratios * d, h, w], out).expect("sized above")
}

fn channels_first<T: Real>(hwk: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, k) = hwk.dims3()?;
    let src = hwk.data();
    let mut out = vec![T::zero(); k * h * w];
    for p in 0..h * w {
        for c in 0..k {
            out[c * h * w + p] = src[p * k + c];
        }
    }
    Tensor::from_vec(&[k, h, w], out)
}

fn relu_back<T: Real>(out: &Tensor<T>, grad: &mut Tensor<T>) {
    Activation::Relu.backward_inplace(out, grad);
}

impl Model<f64> {
    /// Fresh weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let anchors = config.anchors()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let a = config.num_anchor_ratios();
        let f = config.fpn_channels;

        let mut stem = Vec::new();
        let mut c_in = 3;
        for &c in &config.stem_channels {
            stem.push(Conv2d::new(rng, c_in, c, 3, 2)?);
            c_in = c;
        }
        let mut stages = Vec::new();
        for &c in &config.stage_channels {
            stages.push((Conv2d::new(rng, c_in, c, 3, 2)?, Conv2d::new(rng, c, c, 3, 1)?));
            c_in = c;
        }
        let lateral = config
            .stage_channels
            .iter()
            .map(|&c| Conv2d::new(rng, c, f, 1, 1))
            .collect::<Result<Vec<_>>>()?;
        let smooth = (0..config.stage_channels.len())
            .map(|_| Conv2d::new(rng, f, f, 3, 1))
            .collect::<Result<Vec<_>>>()?;
        let head = Conv2d::new(rng, f, f, 3, 1)?;
        let mut cls = Conv2d::new(rng, f, a * (config.num_classes + 1), 3, 1)?;
        let mut bbox = Conv2d::new(rng, f, a * 4, 3, 1)?;
        let mut coef = Conv2d::new(rng, f, a * config.num_prototypes, 3, 1)?;
        // Small prediction branches keep the first losses moderate.
        for conv in [&mut cls, &mut bbox, &mut coef] {
            for w in conv.weight.data_mut() {
                *w *= 0.1;
            }
        }
        let p = config.proto_channels;
        let mut proto = Vec::new();
        let mut c_in = f;
        for _ in 0..=PROTO_PRE_UPSAMPLE {
            proto.push(Conv2d::new(rng, c_in, p, 3, 1)?);
            c_in = p;
        }
        proto.push(Conv2d::new(rng, p, config.num_prototypes, 1, 1)?);
        let semantic = Conv2d::new(rng, f, config.num_classes, 1, 1)?;

        Ok(Self {
            config,
            anchors,
            stem,
            stages,
            lateral,
            smooth,
            head,
            cls,
            bbox,
            coef,
            proto,
            semantic,
        })
    }
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    /// Layer names in a fixed order shared by [`Self::convs`] and [`Self::convs_mut`].
    pub fn conv_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.extend((0..self.stem.len()).map(|i| format!("stem.{i}")));
        for i in 0..self.stages.len() {
            names.push(format!("stage.{i}.down"));
            names.push(format!("stage.{i}.conv"));
        }
        names.extend((0..self.lateral.len()).map(|i| format!("fpn.lateral.{i}")));
        names.extend((0..self.smooth.len()).map(|i| format!("fpn.smooth.{i}")));
        names.extend(["head.shared", "head.class", "head.box", "head.coeff"].map(String::from));
        names.extend((0..self.proto.len()).map(|i| format!("proto.{i}")));
        names.push("semantic".into());
        names
    }

    pub fn convs(&self) -> Vec<&Conv2d<T>> {
        let mut v: Vec<&Conv2d<T>> = self.stem.iter().collect();
        for (a, b) in &self.stages {
            v.push(a);
            v.push(b);
        }
        v.extend(&self.lateral);
        v.extend(&self.smooth);
        v.extend([&self.head, &self.cls, &self.bbox, &self.coef]);
        v.extend(&self.proto);
        v.push(&self.semantic);
        v
    }

    pub fn convs_mut(&mut self) -> Vec<&mut Conv2d<T>> {
        let mut v: Vec<&mut Conv2d<T>> = self.stem.iter_mut().collect();
        for (a, b) in &mut self.stages {
            v.push(a);
            v.push(b);
        }
        v.extend(&mut self.lateral);
        v.extend(&mut self.smooth);
        v.extend([&mut self.head, &mut self.cls, &mut self.bbox, &mut self.coef]);
        v.extend(&mut self.proto);
        v.push(&mut self.semantic);
        v
    }

    /// `(name, tensor)` for every weight and bias.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        self.conv_names()
            .into_iter()
            .zip(self.convs())
            .flat_map(|(n, c)| [(format!("{n}.weight"), &c.weight), (format!("{n}.bias"), &c.bias)])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.convs_mut()
            .into_iter()
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.clear_grad();
        }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let cast_all = |v: &[Conv2d<T>]| v.iter().map(Conv2d::cast).collect::<Vec<_>>();
        Model {
            config: self.config.clone(),
            anchors: self.anchors.clone(),
            stem: cast_all(&self.stem),
            stages: self.stages.iter().map(|(a, b)| (a.cast(), b.cast())).collect(),
            lateral: cast_all(&self.lateral),
            smooth: cast_all(&self.smooth),
            head: self.head.cast(),
            cls: self.cls.cast(),
            bbox: self.bbox.cast(),
            coef: self.coef.cast(),
            proto: cast_all(&self.proto),
            semantic: self.semantic.cast(),
        }
    }

    /// Weights plus `{"config": ...}` merged into `meta`.
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint<T> {
        let mut m = serde_json::Map::new();
        if let serde_json::Value::Object(extra) = meta {
            m.extend(extra);
        }
        m.insert(
            "config".into(),
            serde_json::to_value(&self.config).expect("config serialises"),
        );
        let mut ck = Checkpoint::new(serde_json::Value::Object(m));
        for (name, t) in self.named_parameters() {
            ck.push(name, t.clone());
        }
        ck
    }

    /// Rebuilds a model from a checkpoint written by [`Self::to_checkpoint`],
    /// in either precision.
    pub fn from_checkpoint<U: Real>(ck: &Checkpoint<U>) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ck.meta.get("config").cloned().unwrap_or_default())
            .map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
        let mut model = Model::new(config, 0)?.cast::<T>();
        let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(model.params_mut()) {
            let t = ck
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))?;
            if t.shape() != p.shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    p.shape()
                )));
            }
            *p = t.cast();
        }
        Ok(model)
    }

    /// Inference forward: no semantic head, no cache kept.
    pub fn forward(&self, image: &Tensor<T>, train: bool) -> Result<NetworkOutputs<T>> {
        self.forward_with_cache(image, train).map(|(o, _)| o)
    }

    pub fn forward_with_cache(&self, image: &Tensor<T>, train: bool) -> Result<(NetworkOutputs<T>, ForwardCache<T>)> {
        let cfg = &self.config;
        let s = cfg.input_size;
        if image.shape() != [3, s, s] {
            return Err(Error::dim(
                "forward",
                format!("image {:?}, model expects [3, {s}, {s}]", image.shape()),
            ));
        }
        image.check_finite("input image")?;
        let relu = Some(Activation::Relu);

        let mut stem: Vec<Layer<T>> = Vec::with_capacity(self.stem.len());
        for (i, conv) in self.stem.iter().enumerate() {
            let x = stem.last().map_or(image, |l| &l.out);
            let l = conv_act(conv, x, relu, &format!("stem.{i}"))?;
            stem.push(l);
        }
        let mut stages: Vec<(Layer<T>, Layer<T>)> = Vec::with_capacity(self.stages.len());
        for (i, (down, conv)) in self.stages.iter().enumerate() {
            let x = stages.last().map(|l| &l.1.out).or(stem.last().map(|l| &l.out)).unwrap_or(image);
            let a = conv_act(down, x, relu, &format!("stage.{i}.down"))?;
            let b = conv_act(conv, &a.out, relu, &format!("stage.{i}.conv"))?;
            stages.push((a, b));
        }

        let levels = stages.len();
        let lateral = stages
            .iter()
            .zip(&self.lateral)
            .enumerate()
            .map(|(i, (st, conv))| conv_act(conv, &st.1.out, None, &format!("fpn.lateral.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let mut merged: Vec<Tensor<T>> = lateral.iter().map(|l| l.out.clone()).collect();
        for i in (0..levels - 1).rev() {
            let (_, h, w) = shape3(&merged[i]);
            let up = resize_bilinear(&merged[i + 1], h, w)?;
            add_into(&mut merged[i], &up)?;
        }
        let smooth = merged
            .iter()
            .zip(&self.smooth)
            .enumerate()
            .map(|(i, (m, conv))| conv_act(conv, m, None, &format!("fpn.smooth.{i}")))
            .collect::<Result<Vec<_>>>()?;

        let a = cfg.num_anchor_ratios();
        let c1 = cfg.num_classes + 1;
        let k = cfg.num_prototypes;
        let n = self.anchors.len();
        let offsets = self.anchors.level_offsets();
        let mut cls_rows = vec![T::zero(); n * c1];
        let mut box_rows = vec![T::zero(); n * 4];
        let mut coef_rows = vec![T::zero(); n * k];
        let mut heads = Vec::with_capacity(levels);
        for (lvl, p) in smooth.iter().enumerate() {
            let (_, h, w) = shape3(&p.out);
            let level = &self.anchors.levels[lvl];
            if (h, w) != (level.grid_h, level.grid_w) {
                return Err(Error::dim(
                    "forward",
                    format!("level {lvl} map {h}x{w} vs anchor grid {}x{}", level.grid_h, level.grid_w),
                ));
            }
            let shared = conv_act(&self.head, &p.out, relu, "head.shared")?;
            let cls = conv_act(&self.cls, &shared.out, None, "head.class")?;
            let bbox = conv_act(&self.bbox, &shared.out, None, "head.box")?;
            let coef = conv_act(&self.coef, &shared.out, Some(Activation::Tanh), "head.coeff")?;
            gather_rows(&cls.out, a, c1, offsets[lvl], &mut cls_rows);
            gather_rows(&bbox.out, a, 4, offsets[lvl], &mut box_rows);
            gather_rows(&coef.out, a, k, offsets[lvl], &mut coef_rows);
            heads.push(HeadLayers {
                shared,
                cls,
                bbox,
                coef,
            });
        }

        let mut proto: Vec<Layer<T>> = Vec::with_capacity(self.proto.len());
        for (i, conv) in self.proto.iter().enumerate() {
            let l = if i == PROTO_PRE_UPSAMPLE {
                let up = upsample_bilinear_x2(&proto[i - 1].out)?;
                conv_act(conv, &up, relu, &format!("proto.{i}"))?
            } else {
                let x = proto.last().map_or(&smooth[0].out, |l| &l.out);
                conv_act(conv, x, relu, &format!("proto.{i}"))?
            };
            proto.push(l);
        }
        let prototypes = PrototypeStack::from_channels_first(&proto.last().expect("non-empty").out)?;

        let semantic = if train {
            Some(conv_act(&self.semantic, &smooth[0].out, None, "semantic")?)
        } else {
            None
        };

        let outputs = NetworkOutputs {
            class_logits: Tensor::from_vec(&[n, c1], cls_rows)?,
            box_t: Tensor::from_vec(&[n, 4], box_rows)?,
            coeffs: Tensor::from_vec(&[n, k], coef_rows)?,
            prototypes,
            seg_logits: semantic.as_ref().map(|l| l.out.clone()),
        };
        let cache = ForwardCache {
            stem,
            stages,
            lateral,
            smooth,
            heads,
            proto,
            semantic,
        };
        Ok((outputs, cache))
    }

    /// Accumulates parameter gradients for the given output gradients.
    pub fn backward(&mut self, cache: &ForwardCache<T>, grads: &OutputGrads<T>) -> Result<()> {
        let cfg = &self.config;
        let n = self.anchors.len();
        let (a, c1, k) = (cfg.num_anchor_ratios(), cfg.num_classes + 1, cfg.num_prototypes);
        for (name, t, want) in [
            ("class logits", &grads.class_logits, [n, c1]),
            ("box offsets", &grads.box_t, [n, 4]),
            ("coefficients", &grads.coeffs, [n, k]),
        ] {
            if t.shape() != want {
                return Err(Error::dim("backward", format!("{name} gradient {:?}, expected {want:?}", t.shape())));
            }
        }
        let proto_out = &cache.proto.last().expect("non-empty").out;
        let (pk, ph, pw) = shape3(proto_out);
        if grads.prototypes.shape() != [ph, pw, pk] {
            return Err(Error::dim(
                "backward",
                format!("prototype gradient {:?}, expected [{ph}, {pw}, {pk}]", grads.prototypes.shape()),
            ));
        }

        // prototype branch
        let mut d = channels_first(&grads.prototypes)?;
        for i in (0..self.proto.len()).rev() {
            relu_back(&cache.proto[i].out, &mut d);
            d = self.proto[i].backward(&cache.proto[i].cache, &d)?;
            if i == PROTO_PRE_UPSAMPLE {
                d = resize_bilinear_backward(shape3(&cache.proto[i - 1].out), &d)?;
            }
        }
        let mut dp: Vec<Tensor<T>> = cache.smooth.iter().map(|l| Tensor::zeros(l.out.shape())).collect();
        add_into(&mut dp[0], &d)?;

        match (&grads.seg_logits, &cache.semantic) {
            (Some(g), Some(layer)) => {
                let ds = self.semantic.backward(&layer.cache, g)?;
                add_into(&mut dp[0], &ds)?;
            }
            (Some(_), None) => {
                return Err(Error::State("semantic gradient given for an inference forward".into()));
            }
            _ => {}
        }

        let offsets = self.anchors.level_offsets();
        for (lvl, hl) in cache.heads.iter().enumerate() {
            let (_, h, w) = shape3(&hl.shared.out);
            let dcls = scatter_rows(grads.class_logits.data(), a, c1, offsets[lvl], h, w);
            let dbox = scatter_rows(grads.box_t.data(), a, 4, offsets[lvl], h, w);
            let mut dcoef = scatter_rows(grads.coeffs.data(), a, k, offsets[lvl], h, w);
            Activation::Tanh.backward_inplace(&hl.coef.out, &mut dcoef);
            let mut dh = self.cls.backward(&hl.cls.cache, &dcls)?;
            add_into(&mut dh, &self.bbox.backward(&hl.bbox.cache, &dbox)?)?;
            add_into(&mut dh, &self.coef.backward(&hl.coef.cache, &dcoef)?)?;
            relu_back(&hl.shared.out, &mut dh);
            let dx = self.head.backward(&hl.shared.cache, &dh)?;
            add_into(&mut dp[lvl], &dx)?;
        }

        let mut dmerged = Vec::with_capacity(dp.len());
        for (lvl, g) in dp.iter().enumerate() {
            dmerged.push(self.smooth[lvl].backward(&cache.smooth[lvl].cache, g)?);
        }
        for lvl in 0..dmerged.len() - 1 {
            let up = resize_bilinear_backward(shape3(&cache.lateral[lvl + 1].out), &dmerged[lvl])?;
            add_into(&mut dmerged[lvl + 1], &up)?;
        }

        let mut carry: Option<Tensor<T>> = None;
        for lvl in (0..self.stages.len()).rev() {
            let mut g = self.lateral[lvl].backward(&cache.lateral[lvl].cache, &dmerged[lvl])?;
            if let Some(c) = carry.take() {
                add_into(&mut g, &c)?;
            }
            let (la, lb) = &cache.stages[lvl];
            relu_back(&lb.out, &mut g);
            g = self.stages[lvl].1.backward(&lb.cache, &g)?;
            relu_back(&la.out, &mut g);
            g = self.stages[lvl].0.backward(&la.cache, &g)?;
            carry = Some(g);
        }
        let mut g = carry.expect("at least one stage");
        for i in (0..self.stem.len()).rev() {
            relu_back(&cache.stem[i].out, &mut g);
            g = self.stem[i].backward(&cache.stem[i].cache, &g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_size: 32,
            num_classes: 2,
            num_prototypes: 3,
            stem_channels: vec![2, 3],
            stage_channels: vec![3, 4, 4],
            fpn_channels: 3,
            proto_channels: 3,
            anchor_scales: vec![6.0, 12.0, 24.0],
            aspect_ratios: vec![1.0, 0.5],
            ..Default::default()
        }
    }

    fn image(seed: u64, s: usize) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[3, s, s], (0..3 * s * s).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn output_shapes_follow_config() {
        let m = Model::new(ModelConfig::default(), 1).unwrap();
        let out = m.forward(&image(0, 128), true).unwrap();
        let n = m.anchors().len();
        assert_eq!(out.class_logits.shape(), &[n, 4]);
        assert_eq!(out.box_t.shape(), &[n, 4]);
        assert_eq!(out.coeffs.shape(), &[n, 32]);
        assert_eq!(out.prototypes.dims(), (32, 32, 32));
        assert_eq!(out.seg_logits.as_ref().unwrap().shape(), &[3, 16, 16]);
        assert!(out.prototypes.maps().data().iter().all(|&v| v >= 0.0));
        assert!(out.coeffs.data().iter().all(|&v| v > -1.0 && v < 1.0));
        assert!(m.forward(&image(0, 128), false).unwrap().seg_logits.is_none());
    }

    #[test]
    fn forward_is_deterministic() {
        let m = Model::new(tiny_config(), 4).unwrap();
        let x = image(2, 32);
        assert_eq!(m.forward(&x, true).unwrap(), m.forward(&x.clone(), true).unwrap());
        assert_eq!(Model::new(tiny_config(), 4).unwrap(), m);
    }

    #[test]
    fn rows_align_with_anchor_grid() {
        let m = Model::new(tiny_config(), 3).unwrap();
        let (_, cache) = m.forward_with_cache(&image(1, 32), false).unwrap();
        let out = m.forward(&image(1, 32), false).unwrap();
        let at = crate::geometry::AnchorIndex {
            level: 0,
            row: 2,
            col: 3,
            ratio: 1,
        };
        let row = m.anchors().flat_index(at);
        let map = &cache.heads[0].bbox.out;
        let (_, h, w) = shape3(map);
        for e in 0..4 {
            let expect = map.data()[(4 + e) * h * w + 2 * w + 3];
            assert_eq!(out.box_t.at2(row, e), expect);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let m = Model::new(tiny_config(), 0).unwrap();
        let mut x = image(0, 32);
        x.data_mut()[5] = f64::NAN;
        assert!(matches!(m.forward(&x, false), Err(Error::Numeric(_))));
    }

    #[test]
    fn blown_up_weights_name_the_layer() {
        let mut m = Model::new(tiny_config(), 0).unwrap();
        for v in m.stages[1].0.weight.data_mut() {
            *v = f64::MAX;
        }
        match m.forward(&image(0, 32), false) {
            Err(Error::Numeric(layer)) => assert!(layer.starts_with("stage.1"), "{layer}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_across_precisions() {
        let m = Model::new(tiny_config(), 9).unwrap();
        let ck = m.to_checkpoint(serde_json::json!({"iter": 0}));
        let back: Model<f64> = Model::from_checkpoint(&ck).unwrap();
        assert_eq!(back, m);
        let single: Model<f32> = Model::from_checkpoint(&ck).unwrap();
        let x = image(5, 32);
        let a = m.forward(&x, false).unwrap();
        let b = single.forward(&x.cast(), false).unwrap();
        assert!(a.coeffs.max_abs_diff(&b.coeffs.cast()) < 1e-4);
    }

    #[test]
    fn backward_matches_finite_differences_for_a_linear_probe() {
        // loss = Σ w·outputs with fixed random weights w
        use rand::Rng;
        let mut m = Model::new(tiny_config(), 21).unwrap();
        let x = image(8, 32);
        let (out, cache) = m.forward_with_cache(&x, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut rand_like = |t: &Tensor<f64>| Tensor::from_vec(t.shape(), (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let g = OutputGrads {
            class_logits: rand_like(&out.class_logits),
            box_t: rand_like(&out.box_t),
            coeffs: rand_like(&out.coeffs),
            prototypes: rand_like(out.prototypes.maps()),
            seg_logits: out.seg_logits.as_ref().map(&mut rand_like),
        };
        let probe = |o: &NetworkOutputs<f64>| -> f64 {
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
            dot(&o.class_logits, &g.class_logits)
                + dot(&o.box_t, &g.box_t)
                + dot(&o.coeffs, &g.coeffs)
                + dot(o.prototypes.maps(), &g.prototypes)
                + dot(o.seg_logits.as_ref().unwrap(), g.seg_logits.as_ref().unwrap())
        };
        m.backward(&cache, &g).unwrap();
        let names = m.conv_names();
        for li in 0..names.len() {
            let analytic = m.convs()[li].weight.grad().unwrap().to_vec();
            let eps = 1e-5;
            for idx in [0, analytic.len() / 2, analytic.len() - 1] {
                let mut plus = m.clone();
                plus.convs_mut()[li].weight.data_mut()[idx] += eps;
                let mut minus = m.clone();
                minus.convs_mut()[li].weight.data_mut()[idx] -= eps;
                let num = (probe(&plus.forward(&x, true).unwrap()) - probe(&minus.forward(&x, true).unwrap())) / (2.0 * eps);
                let rel = (num - analytic[idx]).abs() / 1f64.max(num.abs()).max(analytic[idx].abs());
                assert!(rel < 1e-5, "{} [{idx}]: numeric {num} analytic {}", names[li], analytic[idx]);
            }
        }
    }
}
