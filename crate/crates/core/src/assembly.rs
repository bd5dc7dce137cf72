//! Instance mask assembly: a sigmoid over one product of the prototype
//! stack with the coefficient rows, then cropping, binarisation and
//! upscaling to image resolution.

use crate::error::{Error, Result};
use crate::geometry::{crop_region, BBox, CropRect};
use crate::mask::Mask;
use crate::nn::Activation;
use crate::tensor::{gemm, Real, Tensor, Trans};

/// `h×w×k` non-negative prototype maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeStack<T = f64> {
    maps: Tensor<T>,
}

impl<T: Real> PrototypeStack<T> {
    pub fn new(maps: Tensor<T>) -> Result<Self> {
        maps.dims3()?;
        Ok(Self { maps })
    }

    /// From a `k×h×w` conv output.
    pub fn from_channels_first(t: &Tensor<T>) -> Result<Self> {
        let (k, h, w) = t.dims3()?;
        let src = t.data();
        let mut data = vec![T::zero(); k * h * w];
        for c in 0..k {
            for p in 0..h * w {
                data[p * k + c] = src[c * h * w + p];
            }
        }
        Self::new(Tensor::from_vec(&[h, w, k], data)?)
    }

    pub fn to_channels_first(&self) -> Tensor<T> {
        let (h, w, k) = self.dims();
        let src = self.maps.data();
        let mut data = vec![T::zero(); k * h * w];
        for p in 0..h * w {
            for c in 0..k {
                data[c * h * w + p] = src[p * k + c];
            }
        }
        Tensor::from_vec(&[k, h, w], data).expect("same size")
    }

    pub fn maps(&self) -> &Tensor<T> {
        &self.maps
    }

    /// `(h, w, k)`
    pub fn dims(&self) -> (usize, usize, usize) {
        self.maps.dims3().expect("rank 3 by construction")
    }

    pub fn cast<U: Real>(&self) -> PrototypeStack<U> {
        PrototypeStack {
            maps: self.maps.cast(),
        }
    }
}

/// Pre-sigmoid mask logits `C·Pᵀ` as `n×h×w`.
pub fn assemble_logits<T: Real>(protos: &PrototypeStack<T>, coeffs: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, k) = protos.dims();
    let (n, kc) = coeffs.dims2()?;
    if kc != k {
        return Err(Error::dim(
            "assemble",
            format!("{k} prototypes but {kc} coefficients per instance"),
        ));
    }
    let mut out = vec![T::zero(); n * h * w];
    gemm(
        Trans::No,
        Trans::Yes,
        n,
        h * w,
        k,
        T::one(),
        coeffs.data(),
        protos.maps().data(),
        T::zero(),
        &mut out,
    );
    Tensor::from_vec(&[n, h, w], out)
}

/// Soft masks `σ(P·Cᵀ)`, laid out `n×h×w`.
pub fn assemble<T: Real>(protos: &PrototypeStack<T>, coeffs: &Tensor<T>) -> Result<Tensor<T>> {
    let mut m = assemble_logits(protos, coeffs)?;
    Activation::Sigmoid.forward_inplace(&mut m);
    Ok(m)
}

/// Gradients of the mask logits with respect to the prototypes (`h×w×k`)
/// and the coefficients (`n×k`).
pub fn assemble_backward<T: Real>(
    protos: &PrototypeStack<T>,
    coeffs: &Tensor<T>,
    d_logits: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w, k) = protos.dims();
    let (n, _) = coeffs.dims2()?;
    if d_logits.shape() != [n, h, w] {
        return Err(Error::dim("assemble_backward", format!("{:?}", d_logits.shape())));
    }
    let mut dp = vec![T::zero(); h * w * k];
    gemm(Trans::Yes, Trans::No, h * w, k, n, T::one(), d_logits.data(), coeffs.data(), T::zero(), &mut dp);
    let mut dc = vec![T::zero(); n * k];
    gemm(Trans::No, Trans::No, n, k, h * w, T::one(), d_logits.data(), protos.maps().data(), T::zero(), &mut dc);
    Ok((Tensor::from_vec(&[h, w, k], dp)?, Tensor::from_vec(&[n, k], dc)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    /// `n×h×w` soft masks with everything outside each crop set to 0.
    pub soft: Tensor<f64>,
    /// Binarised masks at prototype resolution.
    pub binary: Vec<Mask>,
    pub crops: Vec<CropRect>,
    pub boxes: Vec<BBox>,
}

/// Zeroes every pixel outside each box's crop region.
pub fn crop_masks(soft: &Tensor<f64>, boxes: &[BBox], pad: usize) -> Result<(Tensor<f64>, Vec<CropRect>)> {
    let (n, h, w) = soft.dims3()?;
    if boxes.len() != n {
        return Err(Error::dim("crop", format!("{n} masks, {} boxes", boxes.len())));
    }
    let mut out = soft.clone();
    let mut crops = Vec::with_capacity(n);
    for (plane, b) in out.data_mut().chunks_exact_mut(h * w).zip(boxes) {
        let r = crop_region(b, h, w, pad);
        for y in 0..h {
            for x in 0..w {
                if !r.contains(y, x) {
                    plane[y * w + x] = 0.0;
                }
            }
        }
        crops.push(r);
    }
    Ok((out, crops))
}

/// Crops each mask to its box (padded by `pad` prototype pixels) and
/// binarises with a strict `> bin_t`.
pub fn crop_and_threshold(soft: &Tensor<f64>, boxes: &[BBox], bin_t: f64, pad: usize) -> Result<MaskSet> {
    if !(bin_t > 0.0 && bin_t < 1.0) {
        return Err(Error::Config(format!("binarisation threshold {bin_t} outside (0, 1)")));
    }
    let (_, h, w) = soft.dims3()?;
    let (cropped, crops) = crop_masks(soft, boxes, pad)?;
    let binary = cropped
        .data()
        .chunks_exact(h * w)
        .map(|plane| {
            Mask::from_vec(h, w, plane.iter().map(|&v| (v > bin_t) as u8).collect())
                .expect("binary by construction")
        })
        .collect();
    Ok(MaskSet {
        soft: cropped,
        binary,
        crops,
        boxes: boxes.to_vec(),
    })
}

/// Nearest-neighbour upscale of a binary mask to image resolution.
pub fn upscale_mask(binary: &Mask, out_h: usize, out_w: usize) -> Result<Mask> {
    if out_h < binary.height() || out_w < binary.width() {
        return Err(Error::dim(
            "upscale_mask",
            format!(
                "{}x{} -> {out_h}x{out_w} would shrink",
                binary.height(),
                binary.width()
            ),
        ));
    }
    Ok(binary.upscale(out_h, out_w))
}
