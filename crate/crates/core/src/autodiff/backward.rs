//! Vector-Jacobian products for every recorded op.

use super::ops::axis_layout;
use super::Op;
use crate::tensor::{gemm, lit, Float, Tensor, TensorError};

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], node: Option<usize>, g: Tensor<T>) {
    let Some(id) = node else { return };
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub(super) fn propagate<T: Float>(
    op: &Op<T>,
    g: Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) -> Result<(), TensorError> {
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b, ta, tb, alpha } => {
            let (ta, tb, alpha) = (*ta, *tb, *alpha);
            if a.node.is_some() {
                let da = if ta {
                    gemm(&b.value, tb, &g, true, alpha, "matmul")?
                } else {
                    gemm(&g, false, &b.value, !tb, alpha, "matmul")?
                };
                accumulate(grads, a.node, da);
            }
            if b.node.is_some() {
                let db = if tb {
                    gemm(&g, true, &a.value, ta, alpha, "matmul")?
                } else {
                    gemm(&a.value, !ta, &g, false, alpha, "matmul")?
                };
                accumulate(grads, b.node, db);
            }
        }
        Op::Add { a, b } => {
            if b.is_some() {
                accumulate(grads, *b, g.clone());
            }
            accumulate(grads, *a, g);
        }
        Op::Sub { a, b } => {
            if b.is_some() {
                accumulate(grads, *b, g.map(|v| -v));
            }
            accumulate(grads, *a, g);
        }
        Op::Mul { a, b } => {
            if a.node.is_some() {
                let mut da = g.clone();
                for (d, &bv) in da.data_mut().iter_mut().zip(b.value.data()) {
                    *d *= bv;
                }
                accumulate(grads, a.node, da);
            }
            if b.node.is_some() {
                let mut db = g;
                for (d, &av) in db.data_mut().iter_mut().zip(a.value.data()) {
                    *d *= av;
                }
                accumulate(grads, b.node, db);
            }
        }
        Op::AddBias { x, b, cols } => {
            if b.is_some() {
                let mut db = vec![T::zero(); *cols];
                for row in g.data().chunks_exact(*cols) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, *b, Tensor::new(&[*cols], db)?);
            }
            accumulate(grads, *x, g);
        }
        Op::Scale { x, c } => {
            let c = *c;
            accumulate(grads, *x, g.map(|v| v * c));
        }
        Op::Sum { x, shape } => {
            accumulate(grads, *x, Tensor::full(shape, g.item()));
        }
        Op::Mean { x, shape } => {
            let n: usize = shape.iter().product();
            accumulate(grads, *x, Tensor::full(shape, g.item() / lit(n as f64)));
        }
        Op::Softmax { x, y, axis } => {
            // dx = y ⊙ (g − Σ_axis g⊙y)
            let (outer, len, inner) = axis_layout(y.shape(), *axis);
            let yd = y.data();
            let mut dx = g.into_data();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = T::zero();
                    for j in 0..len {
                        let k = base + j * inner;
                        dot += dx[k] * yd[k];
                    }
                    for j in 0..len {
                        let k = base + j * inner;
                        dx[k] = yd[k] * (dx[k] - dot);
                    }
                }
            }
            accumulate(grads, *x, Tensor::new(y.shape(), dx)?);
        }
        Op::Sigmoid { x, y } => {
            let mut dx = g;
            for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                *d *= yv * (T::one() - yv);
            }
            accumulate(grads, *x, dx);
        }
        Op::Gelu { x } => {
            let mut dx = g;
            for (d, &xv) in dx.data_mut().iter_mut().zip(x.value.data()) {
                *d *= super::ops::gelu_grad_scalar(xv);
            }
            accumulate(grads, x.node, dx);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let d = gamma.value.len();
            let rows = rstd.len();
            let gd = g.data();
            if gamma.node.is_some() || beta.is_some() {
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for r in 0..rows {
                    for j in 0..d {
                        dgamma[j] += gd[r * d + j] * xhat[r * d + j];
                        dbeta[j] += gd[r * d + j];
                    }
                }
                accumulate(grads, gamma.node, Tensor::new(&[d], dgamma)?);
                accumulate(grads, *beta, Tensor::new(&[d], dbeta)?);
            }
            if x.is_some() {
                let gam = gamma.value.data();
                let inv_d = lit::<T>(1.0 / d as f64);
                let mut dx = vec![T::zero(); rows * d];
                for r in 0..rows {
                    let mut mean_dxh = T::zero();
                    let mut mean_dxh_xh = T::zero();
                    for j in 0..d {
                        let dxh = gd[r * d + j] * gam[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat[r * d + j];
                    }
                    mean_dxh *= inv_d;
                    mean_dxh_xh *= inv_d;
                    for j in 0..d {
                        let dxh = gd[r * d + j] * gam[j];
                        dx[r * d + j] = rstd[r] * (dxh - mean_dxh - xhat[r * d + j] * mean_dxh_xh);
                    }
                }
                accumulate(grads, *x, Tensor::new(&[rows, d], dx)?);
            }
        }
        Op::Reshape { x, shape } => {
            accumulate(grads, *x, g.reshape(shape)?);
        }
        Op::SliceCols {
            x,
            rows,
            cols,
            start,
        } => {
            let len = g.len() / rows;
            let mut dx = vec![T::zero(); rows * cols];
            for (r, chunk) in g.data().chunks_exact(len).enumerate() {
                dx[r * cols + start..r * cols + start + len].copy_from_slice(chunk);
            }
            accumulate(grads, *x, Tensor::new(&[*rows, *cols], dx)?);
        }
        Op::ConcatCols { parts } => {
            let total: usize = parts.iter().map(|p| p.1).sum();
            let rows = g.len() / total;
            let mut offset = 0;
            for &(node, w) in parts {
                if node.is_some() {
                    let mut part = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        part.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, node, Tensor::new(&[rows, w], part)?);
                }
                offset += w;
            }
        }
        Op::SliceRows { x, shape, start } => {
            let cols = shape[1];
            let mut dx = vec![T::zero(); shape[0] * cols];
            dx[start * cols..start * cols + g.len()].copy_from_slice(g.data());
            accumulate(grads, *x, Tensor::new(shape, dx)?);
        }
        Op::ConcatRows { parts } => {
            let cols = g.shape()[1];
            let mut offset = 0;
            for &(node, n) in parts {
                if node.is_some() {
                    let part = g.data()[offset..offset + n].to_vec();
                    accumulate(grads, node, Tensor::new(&[n / cols, cols], part)?);
                }
                offset += n;
            }
        }
        Op::SoftSplit { x, geom } => {
            let dx = geom.fold(g.data());
            accumulate(grads, *x, Tensor::new(&[geom.h, geom.w, geom.c], dx)?);
        }
        Op::Fold { x, geom } => {
            let dx = geom.unfold(g.data());
            accumulate(
                grads,
                *x,
                Tensor::new(&[geom.n_tokens(), geom.token_dim()], dx)?,
            );
        }
        Op::BceLogits { x, target } => {
            let scale = g.item() / lit(x.value.len() as f64);
            let dx = x
                .value
                .data()
                .iter()
                .zip(target.data())
                .map(|(&xv, &t)| (super::ops::sigmoid_scalar(xv) - t) * scale)
                .collect();
            accumulate(grads, x.node, Tensor::new(x.value.shape(), dx)?);
        }
    }
    Ok(())
}
