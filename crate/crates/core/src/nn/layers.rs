use super::params::{Init, ParamId, ParamRegistry, ParamStore, INIT_STD};
use super::params::Bound;
use crate::autodiff::Var;
use crate::tensor::{Float, TensorError};

/// Epsilon used by every layer norm in the model.
pub const LN_EPS: f64 = 1e-5;

/// `x · w (+ b)` with `w: din×dout` and `b: dout`, bias broadcast over rows.
pub fn linear<'t, T: Float>(
    x: &Var<'t, T>,
    w: &Var<'t, T>,
    b: Option<&Var<'t, T>>,
) -> Result<Var<'t, T>, TensorError> {
    let y = x.matmul(w)?;
    match b {
        Some(b) => y.add_bias(b),
        None => Ok(y),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(reg: &mut ParamRegistry, name: &str, din: usize, dout: usize, bias: bool) -> Self {
        let w = reg.add(format!("{name}.w"), &[din, dout], Init::TruncNormal(INIT_STD));
        let b = bias.then(|| reg.add(format!("{name}.b"), &[dout], Init::Zeros));
        Linear { w, b, din, dout }
    }

    pub fn forward<'t, T: Float>(
        &self,
        p: &Bound<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        linear(x, &p[self.w], self.b.map(|b| &p[b]))
    }

    pub fn zero<T: Float>(&self, store: &mut ParamStore<T>) {
        store.fill(self.w, T::zero());
        if let Some(b) = self.b {
            store.fill(b, T::zero());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(reg: &mut ParamRegistry, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: reg.add(format!("{name}.gamma"), &[dim], Init::Ones),
            beta: reg.add(format!("{name}.beta"), &[dim], Init::Zeros),
        }
    }

    pub fn forward<'t, T: Float>(
        &self,
        p: &Bound<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        x.layer_norm(&p[self.gamma], &p[self.beta], LN_EPS)
    }
}

/// Two-layer feed-forward block with a GELU in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(reg: &mut ParamRegistry, name: &str, dim: usize, hidden: usize) -> Self {
        Mlp {
            fc1: Linear::new(reg, &format!("{name}.fc1"), dim, hidden, true),
            fc2: Linear::new(reg, &format!("{name}.fc2"), hidden, dim, true),
        }
    }

    pub fn forward<'t, T: Float>(
        &self,
        p: &Bound<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        self.fc2.forward(p, &self.fc1.forward(p, x)?.gelu()?)
    }
}
