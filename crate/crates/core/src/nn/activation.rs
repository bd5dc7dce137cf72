use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl Activation {
    pub fn apply_scalar<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    pub fn forward<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| self.apply_scalar(v))
    }

    pub fn forward_inplace<T: Real>(self, x: &mut Tensor<T>) {
        for v in x.data_mut() {
            *v = self.apply_scalar(*v);
        }
    }

    /// Input gradient expressed through the forward output, which is all
    /// three kinds need.
    pub fn backward<T: Real>(self, out: &Tensor<T>, d_out: &Tensor<T>) -> Result<Tensor<T>> {
        if out.shape() != d_out.shape() {
            return Err(Error::dim(
                "activation_backward",
                format!("{:?} vs {:?}", out.shape(), d_out.shape()),
            ));
        }
        let mut dx = d_out.clone();
        self.backward_inplace(out, &mut dx);
        Ok(dx)
    }

    pub(crate) fn backward_inplace<T: Real>(self, out: &Tensor<T>, grad: &mut Tensor<T>) {
        let one = T::one();
        for (g, &y) in grad.data_mut().iter_mut().zip(out.data()) {
            *g = *g
                * match self {
                    Activation::Relu => {
                        if y > T::zero() {
                            one
                        } else {
                            T::zero()
                        }
                    }
                    Activation::Tanh => one - y * y,
                    Activation::Sigmoid => y * (one - y),
                };
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = x.dims2()?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

/// `dx_i = y_i (dy_i − Σ_j y_j dy_j)` per row.
pub fn softmax_rows_backward<T: Real>(out: &Tensor<T>, d_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = out.dims2()?;
    if out.shape() != d_out.shape() {
        return Err(Error::dim("softmax_rows_backward", "shape mismatch"));
    }
    let mut dx = d_out.clone();
    for (g, y) in dx.data_mut().chunks_exact_mut(c).zip(out.data().chunks_exact(c)) {
        let dot: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
        for (gi, &yi) in g.iter_mut().zip(y) {
            *gi = yi * (*gi - dot);
        }
    }
    Ok(dx)
}
