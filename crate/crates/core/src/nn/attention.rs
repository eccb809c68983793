//! Scaled dot-product attention and the layers built on it: multi-head
//! self-attention, the pre-norm transformer layer, cross-modality attention
//! with its CMT layer, and sigmoid-gated patch-task attention.

use super::layers::{LayerNorm, Linear, Mlp};
use super::params::{ParamRegistry, ParamStore};
use super::params::Bound;
use crate::autodiff::concat_cols;
use crate::autodiff::Var;
use crate::tensor::{lit, Float, TensorError};

/// `softmax(q·kᵀ / √dh) · v`, softmax over keys.
pub fn scaled_dot_attention<'t, T: Float>(
    q: &Var<'t, T>,
    k: &Var<'t, T>,
    v: &Var<'t, T>,
) -> Result<Var<'t, T>, TensorError> {
    let (_, dh) = q.value().dims2("attention")?;
    let (lk, dk) = k.value().dims2("attention")?;
    let (lv, _) = v.value().dims2("attention")?;
    if dh != dk {
        return Err(TensorError::shape("attention", q.shape(), k.shape()));
    }
    if lk != lv {
        return Err(TensorError::shape("attention", k.shape(), v.shape()));
    }
    let scale = lit::<T>(1.0 / (dh as f64).sqrt());
    q.matmul_ex(false, k, true, scale)?.softmax(1)?.matmul(v)
}

/// Query/key/value/output projections of one attention block. Q, K and V are
/// bias-free; the output projection carries a bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl AttnParams {
    pub fn new(reg: &mut ParamRegistry, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "{dim} not divisible by {heads} heads");
        AttnParams {
            q: Linear::new(reg, &format!("{name}.q"), dim, dim, false),
            k: Linear::new(reg, &format!("{name}.k"), dim, dim, false),
            v: Linear::new(reg, &format!("{name}.v"), dim, dim, false),
            o: Linear::new(reg, &format!("{name}.o"), dim, dim, true),
            heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.din
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }
}

/// Splits projected `q, k, v` into heads, attends per head, concatenates.
fn attend_heads<'t, T: Float>(
    heads: usize,
    q: &Var<'t, T>,
    k: &Var<'t, T>,
    v: &Var<'t, T>,
) -> Result<Var<'t, T>, TensorError> {
    if heads == 1 {
        return scaled_dot_attention(q, k, v);
    }
    let dh = q.shape()[1] / heads;
    let outs = (0..heads)
        .map(|h| {
            scaled_dot_attention(
                &q.slice_cols(h * dh, dh)?,
                &k.slice_cols(h * dh, dh)?,
                &v.slice_cols(h * dh, dh)?,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    concat_cols(&outs.iter().collect::<Vec<_>>())
}

/// Multi-head attention with queries from `xq` and keys/values from `xkv`.
pub fn multi_head_attention<'t, T: Float>(
    p: &AttnParams,
    params: &Bound<'t, T>,
    xq: &Var<'t, T>,
    xkv: &Var<'t, T>,
) -> Result<Var<'t, T>, TensorError> {
    let q = p.q.forward(params, xq)?;
    let k = p.k.forward(params, xkv)?;
    let v = p.v.forward(params, xkv)?;
    p.o.forward(params, &attend_heads(p.heads, &q, &k, &v)?)
}

/// Cross-modality attention: RGB queries attend over depth keys/values and
/// depth queries over RGB keys/values. Each modality uses its own Q/K/V
/// projections and its own output projection.
pub fn cross_modality_attention<'t, T: Float>(
    t_r: &Var<'t, T>,
    t_d: &Var<'t, T>,
    p_r: &AttnParams,
    p_d: &AttnParams,
    params: &Bound<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>), TensorError> {
    if t_r.shape() != t_d.shape() {
        return Err(TensorError::contract(
            "cross_modality_attention",
            format!(
                "token sequences must align, got {:?} and {:?}",
                t_r.shape(),
                t_d.shape()
            ),
        ));
    }
    let (q_r, k_r, v_r) = (
        p_r.q.forward(params, t_r)?,
        p_r.k.forward(params, t_r)?,
        p_r.v.forward(params, t_r)?,
    );
    let (q_d, k_d, v_d) = (
        p_d.q.forward(params, t_d)?,
        p_d.k.forward(params, t_d)?,
        p_d.v.forward(params, t_d)?,
    );
    let out_r = p_r.o.forward(params, &attend_heads(p_r.heads, &q_r, &k_d, &v_d)?)?;
    let out_d = p_d.o.forward(params, &attend_heads(p_d.heads, &q_d, &k_r, &v_r)?)?;
    Ok((out_r, out_d))
}

/// Pre-norm transformer layer: `x + MSA(LN(x))`, then `+ MLP(LN(·))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerParams {
    pub ln1: LayerNorm,
    pub attn: AttnParams,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl LayerParams {
    pub fn new(reg: &mut ParamRegistry, name: &str, dim: usize, heads: usize, mlp_ratio: f64) -> Self {
        LayerParams {
            ln1: LayerNorm::new(reg, &format!("{name}.ln1"), dim),
            attn: AttnParams::new(reg, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(reg, &format!("{name}.ln2"), dim),
            mlp: Mlp::new(reg, &format!("{name}.mlp"), dim, hidden_dim(dim, mlp_ratio)),
        }
    }

    pub fn forward<'t, T: Float>(
        &self,
        params: &Bound<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let h = self.ln1.forward(params, x)?;
        let x = x.add(&multi_head_attention(&self.attn, params, &h, &h)?)?;
        let h = self.ln2.forward(params, &x)?;
        x.add(&self.mlp.forward(params, &h)?)
    }

    /// Zeros both residual branches, turning the layer into the identity.
    pub fn zero_residual<T: Float>(&self, store: &mut ParamStore<T>) {
        self.attn.o.zero(store);
        self.mlp.fc2.zero(store);
    }
}

/// MLP hidden width for a given ratio.
pub fn hidden_dim(dim: usize, ratio: f64) -> usize {
    ((dim as f64 * ratio).round() as usize).max(1)
}

/// Cross-modality transformer layer: pre-norm residual cross attention,
/// then a pre-norm residual MLP per modality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmtParams {
    pub ln_r: LayerNorm,
    pub ln_d: LayerNorm,
    pub attn_r: AttnParams,
    pub attn_d: AttnParams,
    pub ln2_r: LayerNorm,
    pub ln2_d: LayerNorm,
    pub mlp_r: Mlp,
    pub mlp_d: Mlp,
}

impl CmtParams {
    pub fn new(reg: &mut ParamRegistry, name: &str, dim: usize, heads: usize, mlp_ratio: f64) -> Self {
        let hidden = hidden_dim(dim, mlp_ratio);
        CmtParams {
            ln_r: LayerNorm::new(reg, &format!("{name}.rgb.ln1"), dim),
            attn_r: AttnParams::new(reg, &format!("{name}.rgb.attn"), dim, heads),
            ln2_r: LayerNorm::new(reg, &format!("{name}.rgb.ln2"), dim),
            mlp_r: Mlp::new(reg, &format!("{name}.rgb.mlp"), dim, hidden),
            ln_d: LayerNorm::new(reg, &format!("{name}.depth.ln1"), dim),
            attn_d: AttnParams::new(reg, &format!("{name}.depth.attn"), dim, heads),
            ln2_d: LayerNorm::new(reg, &format!("{name}.depth.ln2"), dim),
            mlp_d: Mlp::new(reg, &format!("{name}.depth.mlp"), dim, hidden),
        }
    }

    /// The same layer with the depth branch tied to the RGB parameters.
    pub fn tied(&self) -> Self {
        CmtParams {
            ln_d: self.ln_r,
            attn_d: self.attn_r,
            ln2_d: self.ln2_r,
            mlp_d: self.mlp_r,
            ..*self
        }
    }

    pub fn forward<'t, T: Float>(
        &self,
        params: &Bound<'t, T>,
        t_r: &Var<'t, T>,
        t_d: &Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>), TensorError> {
        let h_r = self.ln_r.forward(params, t_r)?;
        let h_d = self.ln_d.forward(params, t_d)?;
        let (a_r, a_d) = cross_modality_attention(&h_r, &h_d, &self.attn_r, &self.attn_d, params)?;
        let x_r = t_r.add(&a_r)?;
        let x_d = t_d.add(&a_d)?;
        let x_r = x_r.add(&self.mlp_r.forward(params, &self.ln2_r.forward(params, &x_r)?)?)?;
        let x_d = x_d.add(&self.mlp_d.forward(params, &self.ln2_d.forward(params, &x_d)?)?)?;
        Ok((x_r, x_d))
    }

    pub fn zero_residual<T: Float>(&self, store: &mut ParamStore<T>) {
        self.attn_r.o.zero(store);
        self.attn_d.o.zero(store);
        self.mlp_r.fc2.zero(store);
        self.mlp_d.fc2.zero(store);
    }
}

/// Single-key attention between patch tokens and one task token, gated by a
/// sigmoid instead of a softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchTaskParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

impl PatchTaskParams {
    pub fn new(reg: &mut ParamRegistry, name: &str, dim: usize) -> Self {
        PatchTaskParams {
            q: Linear::new(reg, &format!("{name}.q"), dim, dim, false),
            k: Linear::new(reg, &format!("{name}.k"), dim, dim, false),
            v: Linear::new(reg, &format!("{name}.v"), dim, dim, false),
        }
    }

    /// `sigmoid(Q·Kᵀ/√d)·V + t_patch` with `Q` from the patches and `K`, `V`
    /// from the task token.
    pub fn forward<'t, T: Float>(
        &self,
        params: &Bound<'t, T>,
        t_patch: &Var<'t, T>,
        t_task: &Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let (rows, d) = t_task.value().dims2("patch_task_attention")?;
        if rows != 1 {
            return Err(TensorError::contract(
                "patch_task_attention",
                format!("task token must be a single row, got {rows}"),
            ));
        }
        let q = self.q.forward(params, t_patch)?;
        let k = self.k.forward(params, t_task)?;
        let v = self.v.forward(params, t_task)?;
        let gate = q
            .matmul_ex(false, &k, true, lit(1.0 / (d as f64).sqrt()))?
            .sigmoid()?;
        gate.matmul(&v)?.add(t_patch)
    }
}
