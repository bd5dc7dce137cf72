//! Samples, the synthetic shapes generator and the on-disk sample layout.

mod io;
pub mod pnm;
mod synth;

pub use io::{load_dataset, load_sample, save_dataset, save_sample, DatasetManifest};
pub use synth::{generate_dataset, generate_sample, GeneratorReport, SampleStats, SynthConfig, CLASS_NAMES};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mask::Mask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// 0-based object class.
    pub class: usize,
    /// Tight bounding box of `mask`.
    pub bbox: BBox,
    /// Image-resolution binary mask.
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `3×S×S`, values in `[0, 1]`.
    pub image: Tensor<f64>,
    pub instances: Vec<Instance>,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let (c, h, w) = self.image.dims3()?;
        if c != 3 || h != w {
            return Err(Error::Validation(format!("image must be 3xSxS, got {:?}", self.image.shape())));
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("image values outside [0, 1]".into()));
        }
        for (i, inst) in self.instances.iter().enumerate() {
            if inst.class >= num_classes {
                return Err(Error::Validation(format!("instance {i}: class {} out of range", inst.class)));
            }
            if !inst.bbox.is_valid() {
                return Err(Error::Validation(format!("instance {i}: box {:?} outside [0, 1]", inst.bbox)));
            }
            if (inst.mask.height(), inst.mask.width()) != (h, w) {
                return Err(Error::Validation(format!("instance {i}: mask size differs from image")));
            }
            match inst.mask.bounding_box() {
                None => return Err(Error::Validation(format!("instance {i}: empty mask"))),
                Some(b) if b != inst.bbox => {
                    return Err(Error::Validation(format!(
                        "instance {i}: box {:?} is not the tight box {b:?} of its mask",
                        inst.bbox
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn flipped_horizontally(&self) -> Sample {
        let (c, h, w) = self.image.dims3().expect("validated image");
        let src = self.image.data();
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(ch * h + y) * w + (w - 1 - x)] = src[(ch * h + y) * w + x];
                }
            }
        }
        Sample {
            image: Tensor::from_vec(&[c, h, w], data).expect("same shape"),
            instances: self
                .instances
                .iter()
                .map(|i| Instance {
                    class: i.class,
                    bbox: i.bbox.flipped_horizontally(),
                    mask: i.mask.flipped_horizontally(),
                })
                .collect(),
        }
    }

    /// Image as interleaved 8-bit RGB.
    pub fn image_rgb8(&self) -> Vec<u8> {
        image_to_rgb8(&self.image)
    }
}

pub fn image_to_rgb8(image: &Tensor<f64>) -> Vec<u8> {
    let (_, h, w) = image.dims3().expect("3xHxW image");
    let d = image.data();
    let mut out = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for ch in 0..3 {
            out.push((d[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn image_from_rgb8(size_h: usize, size_w: usize, rgb: &[u8]) -> Tensor<f64> {
    let mut data = vec![0.0; 3 * size_h * size_w];
    for p in 0..size_h * size_w {
        for ch in 0..3 {
            data[ch * size_h * size_w + p] = rgb[p * 3 + ch] as f64 / 255.0;
        }
    }
    Tensor::from_vec(&[3, size_h, size_w], data).expect("3xHxW")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_keeps_box_mask_consistency() {
        let cfg = SynthConfig::default();
        let (s, _) = generate_sample(11, 0, &cfg);
        let f = s.flipped_horizontally();
        f.validate(3).unwrap();
        assert_eq!(f.flipped_horizontally(), s);
    }

    #[test]
    fn validation_catches_bad_boxes() {
        let cfg = SynthConfig::default();
        let (mut s, _) = generate_sample(5, 2, &cfg);
        s.instances[0].bbox.x2 = 1.5;
        let err = s.validate(3).unwrap_err();
        assert!(err.to_string().contains("outside [0, 1]"));
    }

    #[test]
    fn rgb8_round_trip() {
        let cfg = SynthConfig::default();
        let (s, _) = generate_sample(1, 1, &cfg);
        let back = image_from_rgb8(s.size(), s.size(), &s.image_rgb8());
        assert_eq!(back, s.image);
    }
}
