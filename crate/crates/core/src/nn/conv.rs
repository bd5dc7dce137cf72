use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor, Trans};

/// Square 2-D convolution (cross-correlation) over a single `C×H×W` image.
///
/// Kernels are 1×1 or 3×3. Padding is `kernel / 2`, so stride-1 layers keep
/// the spatial size and stride-2 layers produce `ceil(H/2) × ceil(W/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T = f64> {
    /// `[out, in, k, k]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Saved input patches of a forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    /// Kaiming-style uniform fan-in initialisation with zero bias.
    pub fn new(
        rng: &mut impl Rng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(Error::Config(format!("kernel size {kernel} (only 1 or 3)")));
        }
        if stride == 0 || in_ch == 0 || out_ch == 0 {
            return Err(Error::Config("conv with zero stride or channels".into()));
        }
        let fan_in = (in_ch * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n = out_ch * in_ch * kernel * kernel;
        let w: Vec<T> = (0..n)
            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
            .collect();
        Ok(Self {
            weight: Tensor::from_vec(&[out_ch, in_ch, kernel, kernel], w)?,
            bias: Tensor::zeros(&[out_ch]),
            kernel,
            stride,
            pad: kernel / 2,
        })
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, stride: usize) -> Result<Self> {
        let [out_ch, _, kh, kw] = weight.shape()[..] else {
            return Err(Error::dim("conv2d", "weight must be rank 4"));
        };
        if kh != kw || (kh != 1 && kh != 3) {
            return Err(Error::Config(format!("kernel {kh}x{kw} (only 1x1 or 3x3)")));
        }
        if bias.shape() != [out_ch] {
            return Err(Error::dim("conv2d", "bias length must equal output channels"));
        }
        Ok(Self {
            weight,
            bias,
            kernel: kh,
            stride,
            pad: kh / 2,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (c, h, w) = x.dims3()?;
        if c != self.in_channels() {
            return Err(Error::dim(
                "conv2d",
                format!("input has {c} channels, layer expects {}", self.in_channels()),
            ));
        }
        Ok((c, h, w))
    }

    fn im2col(&self, x: &Tensor<T>, c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
        let k = self.kernel;
        let (s, p) = (self.stride, self.pad as isize);
        let mut cols = vec![T::zero(); c * k * k * ho * wo];
        let xd = x.data();
        for ci in 0..c {
            let plane = &xd[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize + ki as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let out = &mut dst[oy * wo..(oy + 1) * wo];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * s) as isize + kj as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
        let k = self.kernel;
        let (s, p) = (self.stride, self.pad as isize);
        let mut dx = vec![T::zero(); c * h * w];
        for ci in 0..c {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize + ki as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &g) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * s) as isize + kj as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn apply(&self, cols: &[T], ho: usize, wo: usize) -> Result<Tensor<T>> {
        let out_ch = self.out_channels();
        let kk = self.weight.len() / out_ch;
        let mut y = Vec::with_capacity(out_ch * ho * wo);
        for &b in self.bias.data() {
            y.extend(std::iter::repeat(b).take(ho * wo));
        }
        gemm(
            Trans::No,
            Trans::No,
            out_ch,
            ho * wo,
            kk,
            T::one(),
            self.weight.data(),
            cols,
            T::one(),
            &mut y,
        );
        Tensor::from_vec(&[out_ch, ho, wo], y)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (c, h, w) = self.check_input(x)?;
        let (ho, wo) = self.output_hw(h, w);
        let cols = if self.is_pointwise() {
            x.data().to_vec()
        } else {
            self.im2col(x, c, h, w, ho, wo)
        };
        let y = self.apply(&cols, ho, wo)?;
        Ok((
            y,
            ConvCache {
                cols,
                in_shape: (c, h, w),
                out_hw: (ho, wo),
            },
        ))
    }

    /// Forward without keeping patches for a backward pass.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = self.check_input(x)?;
        let (ho, wo) = self.output_hw(h, w);
        if self.is_pointwise() {
            return self.apply(x.data(), ho, wo);
        }
        let cols = self.im2col(x, c, h, w, ho, wo);
        self.apply(&cols, ho, wo)
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ConvCache<T>, d_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        let out_ch = self.out_channels();
        if d_out.shape() != [out_ch, ho, wo] {
            return Err(Error::dim(
                "conv2d_backward",
                format!("upstream {:?}, expected [{out_ch}, {ho}, {wo}]", d_out.shape()),
            ));
        }
        let kk = self.weight.len() / out_ch;
        let n = ho * wo;
        let dy = d_out.data();

        let db: Vec<T> = dy.chunks_exact(n).map(|r| r.iter().copied().sum()).collect();
        self.bias.accumulate_grad(&db)?;

        let wgrad = self.weight.grad_mut();
        gemm(Trans::No, Trans::Yes, out_ch, kk, n, T::one(), dy, &cache.cols, T::one(), wgrad);

        let mut dcols = vec![T::zero(); kk * n];
        gemm(
            Trans::Yes,
            Trans::No,
            kk,
            n,
            out_ch,
            T::one(),
            self.weight.data(),
            dy,
            T::zero(),
            &mut dcols,
        );
        let dx = if self.is_pointwise() {
            dcols
        } else {
            self.col2im(&dcols, c, h, w, ho, wo)
        };
        Tensor::from_vec(&[c, h, w], dx)
    }

    pub fn cast<U: Real>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }
}
