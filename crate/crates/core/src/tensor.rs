//! Dense row-major tensors with an optional gradient slot, plus the `PTSR`
//! single-tensor file format.

use std::fmt::{Debug, Display};
use std::io::{BufRead, Write};
use std::iter::Sum;
use std::path::Path;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes at the start of every tensor file.
pub const TENSOR_MAGIC: &[u8; 4] = b"PTSR";

/// Floating point element type usable by the tensor core.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + Sum + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    /// `c = alpha * a·b + beta * c` with explicit element strides.
    ///
    /// # Safety
    /// Pointers must be valid for the extents implied by `m, k, n` and the strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to any Real")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

/// Whether a gemm operand is read as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `c[m×n] = alpha * op(a)·op(b) + beta * c` over row-major slices.
///
/// `a` holds `m×k` (or `k×m` when transposed), `b` holds `k×n` (or `n×k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    ta: Trans,
    tb: Trans,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v = beta * *v;
        }
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    // SAFETY: lengths asserted above cover every index the strides can reach.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim("dims2", format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::dim("dims3", format!("expected rank 3, got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn at2(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient slot, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::dim(
                "accumulate_grad",
                format!("{} vs {}", g.len(), self.data.len()),
            ));
        }
        for (a, &b) in self.grad_mut().iter_mut().zip(g) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Errors if any value (or gradient) is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        let bad = self.data.iter().any(|v| !v.is_finite())
            || self
                .grad
                .as_ref()
                .is_some_and(|g| g.iter().any(|v| !v.is_finite()));
        if bad {
            Err(Error::Numeric(what.to_string()))
        } else {
            Ok(())
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-major product of `a[m×k]` and `b[k×n]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul", format!("{m}x{k} · {k2}x{n}")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(Trans::No, Trans::No, m, n, k, T::one(), &a.data, &b.data, T::zero(), &mut out.data);
    Ok(out)
}

/// Gradients of `matmul(a, b)` given the upstream gradient:
/// `dA = dOut·Bᵀ`, `dB = Aᵀ·dOut`.
pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    d_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = a.dims2()?;
    let (_, n) = b.dims2()?;
    if d_out.shape() != [m, n] {
        return Err(Error::dim(
            "matmul_backward",
            format!("upstream {:?}, expected [{m}, {n}]", d_out.shape()),
        ));
    }
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    gemm(Trans::No, Trans::Yes, m, k, n, T::one(), &d_out.data, &b.data, T::zero(), &mut da.data);
    gemm(Trans::Yes, Trans::No, k, n, m, T::one(), &a.data, &d_out.data, T::zero(), &mut db.data);
    Ok((da, db))
}

/// Runs the forward product and accumulates both operand gradients into their slots.
pub fn matmul_accumulate<T: Real>(
    a: &mut Tensor<T>,
    b: &mut Tensor<T>,
    d_out: &Tensor<T>,
) -> Result<()> {
    let (da, db) = matmul_backward(a, b, d_out)?;
    a.accumulate_grad(da.data())?;
    b.accumulate_grad(db.data())?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    dtype: String,
    shape: Vec<usize>,
}

impl<T: Real> Tensor<T> {
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * T::BYTES);
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    /// Decodes a little-endian payload of the given dtype into `T`.
    pub fn from_payload(shape: &[usize], dtype: &str, bytes: &[u8]) -> Result<Self> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match dtype {
            "f64" => {
                check_payload_len(bytes, n, 8)?;
                bytes
                    .chunks_exact(8)
                    .map(|c| T::from_f64_lossy(f64::read_le(c)))
                    .collect()
            }
            "f32" => {
                check_payload_len(bytes, n, 4)?;
                bytes
                    .chunks_exact(4)
                    .map(|c| T::from_f64_lossy(f32::read_le(c) as f64))
                    .collect()
            }
            other => return Err(Error::Validation(format!("unknown dtype {other:?}"))),
        };
        Self::from_vec(shape, data)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = TensorHeader {
            dtype: T::DTYPE.to_string(),
            shape: self.shape.clone(),
        };
        w.write_all(TENSOR_MAGIC)?;
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        w.write_all(&self.payload_bytes())
    }

    pub fn read_from(r: &mut impl BufRead, path: &Path) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| Error::format(path, "magic", e.to_string()))?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::format(path, "magic", format!("{magic:?}")));
        }
        let mut line = String::new();
        r.read_line(&mut line)
            .map_err(|e| Error::format(path, "header", e.to_string()))?;
        let header: TensorHeader = serde_json::from_str(line.trim_end_matches('\n'))
            .map_err(|e| Error::format(path, "header", e.to_string()))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)
            .map_err(|e| Error::format(path, "payload", e.to_string()))?;
        Self::from_payload(&header.shape, &header.dtype, &payload)
            .map_err(|e| Error::format(path, "payload", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut std::io::BufReader::new(f), path)
    }
}

fn check_payload_len(bytes: &[u8], n: usize, width: usize) -> Result<()> {
    if bytes.len() != n * width {
        return Err(Error::Validation(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            n * width
        )));
    }
    Ok(())
}
