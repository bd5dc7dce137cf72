use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Source taps for one output coordinate (align-corners=false).
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize of a `C×H×W` tensor to `C×out_h×out_w`.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim("resize_bilinear", "zero output size"));
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in x.data().chunks_exact(h * w) {
        for y in &ty {
            let fy = T::from_f64_lossy(y.frac);
            let r0 = &plane[y.lo * w..(y.lo + 1) * w];
            let r1 = &plane[y.hi * w..(y.hi + 1) * w];
            for t in &tx {
                let fx = T::from_f64_lossy(t.frac);
                let top = r0[t.lo] + (r0[t.hi] - r0[t.lo]) * fx;
                let bot = r1[t.lo] + (r1[t.hi] - r1[t.lo]) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Scatters the upstream gradient back through the interpolation weights.
pub fn resize_bilinear_backward<T: Real>(
    in_shape: (usize, usize, usize),
    d_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (c, h, w) = in_shape;
    let (c2, out_h, out_w) = d_out.dims3()?;
    if c != c2 {
        return Err(Error::dim("resize_bilinear_backward", "channel mismatch"));
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let one = T::one();
    let mut dx = vec![T::zero(); c * h * w];
    for (plane, g) in dx.chunks_exact_mut(h * w).zip(d_out.data().chunks_exact(out_h * out_w)) {
        for (oy, y) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(y.frac);
            for (ox, t) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(t.frac);
                let v = g[oy * out_w + ox];
                plane[y.lo * w + t.lo] = plane[y.lo * w + t.lo] + v * (one - fy) * (one - fx);
                plane[y.lo * w + t.hi] = plane[y.lo * w + t.hi] + v * (one - fy) * fx;
                plane[y.hi * w + t.lo] = plane[y.hi * w + t.lo] + v * fy * (one - fx);
                plane[y.hi * w + t.hi] = plane[y.hi * w + t.hi] + v * fy * fx;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], dx)
}

pub fn upsample_bilinear_x2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = x.dims3()?;
    resize_bilinear(x, 2 * h, 2 * w)
}
