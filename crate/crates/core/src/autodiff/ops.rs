//! Forward definitions of every differentiable op.

use std::sync::Arc;

use super::{Op, Var};
use crate::tensor::{gemm, lit, Float, Tensor, TensorError};
use crate::tokens::split::SplitGeometry;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn sigmoid_scalar<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn gelu_scalar<T: Float>(x: T) -> T {
    let inner = lit::<T>(GELU_C) * (x + lit::<T>(GELU_A) * x * x * x);
    lit::<T>(0.5) * x * (T::one() + inner.tanh())
}

pub(crate) fn gelu_grad_scalar<T: Float>(x: T) -> T {
    let inner = lit::<T>(GELU_C) * (x + lit::<T>(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = lit::<T>(GELU_C) * (T::one() + lit::<T>(3.0 * GELU_A) * x * x);
    lit::<T>(0.5) * (T::one() + t) + lit::<T>(0.5) * x * (T::one() - t * t) * dinner
}

/// `(outer, len, inner)` strides for reducing along `axis`.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn same_shape(op: &'static str, a: &Tensor<impl Float>, b: &Tensor<impl Float>) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn same_tape<T: Float>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<(), TensorError> {
    if !std::ptr::eq(a.tape, b.tape) {
        return Err(TensorError::contract(op, "operands live on different tapes"));
    }
    Ok(())
}

impl<'t, T: Float> Var<'t, T> {
    /// `alpha · op(self) · op(other)` where `op` optionally transposes.
    pub fn matmul_ex(
        &self,
        ta: bool,
        other: &Var<'t, T>,
        tb: bool,
        alpha: T,
    ) -> Result<Var<'t, T>, TensorError> {
        same_tape("matmul", self, other)?;
        let out = gemm(&self.value, ta, &other.value, tb, alpha, "matmul")?;
        Ok(self.tape.record(&[self.node, other.node], out, || Op::MatMul {
            a: self.saved(),
            b: other.saved(),
            ta,
            tb,
            alpha,
        }))
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.matmul_ex(false, other, false, T::one())
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.matmul_ex(false, other, true, T::one())
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        same_tape("add", self, other)?;
        same_shape("add", &self.value, &other.value)?;
        let mut out = (*self.value).clone();
        out.add_assign(&other.value);
        Ok(self.tape.record(&[self.node, other.node], out, || Op::Add {
            a: self.node,
            b: other.node,
        }))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        same_tape("sub", self, other)?;
        same_shape("sub", &self.value, &other.value)?;
        let data = self
            .value
            .data()
            .iter()
            .zip(other.value.data())
            .map(|(&a, &b)| a - b)
            .collect();
        let out = Tensor::new(self.shape(), data)?;
        Ok(self.tape.record(&[self.node, other.node], out, || Op::Sub {
            a: self.node,
            b: other.node,
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        same_tape("mul", self, other)?;
        same_shape("mul", &self.value, &other.value)?;
        let data = self
            .value
            .data()
            .iter()
            .zip(other.value.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let out = Tensor::new(self.shape(), data)?;
        Ok(self.tape.record(&[self.node, other.node], out, || Op::Mul {
            a: self.saved(),
            b: other.saved(),
        }))
    }

    /// Adds the vector `bias` to every row of a matrix. The only broadcast the
    /// engine performs.
    pub fn add_bias(&self, bias: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        same_tape("add_bias", self, bias)?;
        let (_, cols) = self.value.dims2("add_bias")?;
        if bias.shape() != [cols] {
            return Err(TensorError::shape("add_bias", self.shape(), bias.shape()));
        }
        let mut out = (*self.value).clone();
        let b = bias.value.data();
        for row in out.data_mut().chunks_exact_mut(cols) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(self.tape.record(&[self.node, bias.node], out, || Op::AddBias {
            x: self.node,
            b: bias.node,
            cols,
        }))
    }

    pub fn scale(&self, c: T) -> Result<Var<'t, T>, TensorError> {
        let out = self.value.map(|v| v * c);
        Ok(self.tape.record(&[self.node], out, || Op::Scale { x: self.node, c }))
    }

    pub fn sum(&self) -> Result<Var<'t, T>, TensorError> {
        let out = Tensor::scalar(self.value.sum());
        Ok(self.tape.record(&[self.node], out, || Op::Sum {
            x: self.node,
            shape: self.shape().to_vec(),
        }))
    }

    pub fn mean(&self) -> Result<Var<'t, T>, TensorError> {
        let n = lit::<T>(self.value.len() as f64);
        let out = Tensor::scalar(self.value.sum() / n);
        Ok(self.tape.record(&[self.node], out, || Op::Mean {
            x: self.node,
            shape: self.shape().to_vec(),
        }))
    }

    /// Softmax along `axis`, stabilised by subtracting the running maximum.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>, TensorError> {
        if axis >= self.value.rank() {
            return Err(TensorError::contract(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", self.shape()),
            ));
        }
        let (outer, len, inner) = axis_layout(self.shape(), axis);
        let x = self.value.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |j: usize| base + j * inner;
                let mut m = T::neg_infinity();
                for j in 0..len {
                    m = m.max(x[idx(j)]);
                }
                let mut z = T::zero();
                for j in 0..len {
                    let e = (x[idx(j)] - m).exp();
                    y[idx(j)] = e;
                    z += e;
                }
                let inv = T::one() / z;
                for j in 0..len {
                    y[idx(j)] *= inv;
                }
            }
        }
        let y = Arc::new(Tensor::new(self.shape(), y)?);
        let node = (self.tape.recording && self.node.is_some()).then(|| {
            self.tape.push(Op::Softmax {
                x: self.node,
                y: Arc::clone(&y),
                axis,
            })
        });
        Ok(Var {
            tape: self.tape,
            node,
            value: y,
        })
    }

    pub fn sigmoid(&self) -> Result<Var<'t, T>, TensorError> {
        let y = Arc::new(self.value.map(sigmoid_scalar));
        let node = (self.tape.recording && self.node.is_some()).then(|| {
            self.tape.push(Op::Sigmoid {
                x: self.node,
                y: Arc::clone(&y),
            })
        });
        Ok(Var {
            tape: self.tape,
            node,
            value: y,
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Var<'t, T>, TensorError> {
        let out = self.value.map(gelu_scalar);
        Ok(self.tape.record(&[self.node], out, || Op::Gelu { x: self.saved() }))
    }

    /// Row-wise layer normalisation of an `l×d` matrix with affine `gamma`,
    /// `beta` of length `d`.
    pub fn layer_norm(
        &self,
        gamma: &Var<'t, T>,
        beta: &Var<'t, T>,
        eps: f64,
    ) -> Result<Var<'t, T>, TensorError> {
        same_tape("layer_norm", self, gamma)?;
        same_tape("layer_norm", self, beta)?;
        let (rows, d) = self.value.dims2("layer_norm")?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::shape("layer_norm", self.shape(), gamma.shape()));
        }
        let x = self.value.data();
        let (g, b) = (gamma.value.data(), beta.value.data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); x.len()];
        let inv_d = lit::<T>(1.0 / d as f64);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + lit(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        let out = Tensor::new(self.shape(), out)?;
        Ok(self
            .tape
            .record(&[self.node, gamma.node, beta.node], out, || Op::LayerNorm {
                x: self.node,
                gamma: gamma.saved(),
                beta: beta.node,
                xhat,
                rstd,
            }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>, TensorError> {
        let out = (*self.value).clone().reshape(shape)?;
        Ok(self.tape.record(&[self.node], out, || Op::Reshape {
            x: self.node,
            shape: self.shape().to_vec(),
        }))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t, T>, TensorError> {
        let (rows, cols) = self.value.dims2("slice_cols")?;
        if len == 0 || start + len > cols {
            return Err(TensorError::contract(
                "slice_cols",
                format!("range {start}..{} out of {cols} columns", start + len),
            ));
        }
        let x = self.value.data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&x[r * cols + start..r * cols + start + len]);
        }
        let out = Tensor::new(&[rows, len], out)?;
        Ok(self.tape.record(&[self.node], out, || Op::SliceCols {
            x: self.node,
            rows,
            cols,
            start,
        }))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t, T>, TensorError> {
        let (rows, cols) = self.value.dims2("slice_rows")?;
        if len == 0 || start + len > rows {
            return Err(TensorError::contract(
                "slice_rows",
                format!("range {start}..{} out of {rows} rows", start + len),
            ));
        }
        let out = self.value.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new(&[len, cols], out)?;
        Ok(self.tape.record(&[self.node], out, || Op::SliceRows {
            x: self.node,
            shape: vec![rows, cols],
            start,
        }))
    }

    /// Soft split of an `h×w×c` image into overlapping patch tokens.
    pub fn soft_split(&self, geom: &SplitGeometry) -> Result<Var<'t, T>, TensorError> {
        if self.shape() != [geom.h, geom.w, geom.c] {
            return Err(TensorError::shape(
                "soft_split",
                self.shape(),
                &[geom.h, geom.w, geom.c],
            ));
        }
        let out = Tensor::new(&[geom.n_tokens(), geom.token_dim()], geom.unfold(self.value.data()))?;
        Ok(self.tape.record(&[self.node], out, || Op::SoftSplit {
            x: self.node,
            geom: *geom,
        }))
    }

    /// Folds patch tokens back onto an `h×w×c` image, summing overlaps.
    pub fn fold(&self, geom: &SplitGeometry) -> Result<Var<'t, T>, TensorError> {
        if self.shape() != [geom.n_tokens(), geom.token_dim()] {
            return Err(TensorError::shape(
                "fold",
                self.shape(),
                &[geom.n_tokens(), geom.token_dim()],
            ));
        }
        let out = Tensor::new(&[geom.h, geom.w, geom.c], geom.fold(self.value.data()))?;
        Ok(self.tape.record(&[self.node], out, || Op::Fold {
            x: self.node,
            geom: *geom,
        }))
    }

    /// Mean binary cross-entropy of `sigmoid(self)` against `target`, in the
    /// overflow-free logit form `max(x,0) − x·t + ln(1 + e^{−|x|})`.
    pub fn bce_with_logits(&self, target: &Tensor<T>) -> Result<Var<'t, T>, TensorError> {
        same_shape("bce_with_logits", &self.value, target)?;
        let n = self.value.len() as f64;
        let total: T = self
            .value
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let out = Tensor::scalar(total / lit(n));
        Ok(self.tape.record(&[self.node], out, || Op::BceLogits {
            x: self.saved(),
            target: Arc::new(target.clone()),
        }))
    }
}

/// Concatenates matrices along columns.
pub fn concat_cols<'t, T: Float>(parts: &[&Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::contract("concat_cols", "no inputs"))?;
    let (rows, _) = first.value.dims2("concat_cols")?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        same_tape("concat_cols", first, p)?;
        let (r, c) = p.value.dims2("concat_cols")?;
        if r != rows {
            return Err(TensorError::shape("concat_cols", first.shape(), p.shape()));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.value.data()[r * w..(r + 1) * w]);
        }
    }
    let out = Tensor::new(&[rows, total], out)?;
    let nodes: Vec<_> = parts.iter().map(|p| p.node).collect();
    Ok(first.tape.record(&nodes, out, || Op::ConcatCols {
        parts: nodes.iter().copied().zip(widths.iter().copied()).collect(),
    }))
}

/// Concatenates matrices along rows.
pub fn concat_rows<'t, T: Float>(parts: &[&Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::contract("concat_rows", "no inputs"))?;
    let (_, cols) = first.value.dims2("concat_rows")?;
    let mut heights = Vec::with_capacity(parts.len());
    let mut out = Vec::new();
    for p in parts {
        same_tape("concat_rows", first, p)?;
        let (r, c) = p.value.dims2("concat_rows")?;
        if c != cols {
            return Err(TensorError::shape("concat_rows", first.shape(), p.shape()));
        }
        heights.push(r);
        out.extend_from_slice(p.value.data());
    }
    let out = Tensor::new(&[heights.iter().sum(), cols], out)?;
    let nodes: Vec<_> = parts.iter().map(|p| p.node).collect();
    Ok(first.tape.record(&nodes, out, || Op::ConcatRows {
        parts: nodes
            .iter()
            .copied()
            .zip(heights.iter().map(|h| h * cols))
            .collect(),
    }))
}
