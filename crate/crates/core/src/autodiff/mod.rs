//! Reverse-mode automatic differentiation over an eager, append-only tape.
//!
//! Every op computes its value immediately. When at least one input carries a
//! gradient, the op also appends a node recording its inputs and whatever it
//! needs for the backward pass. Constants never enter the tape, so a tensor
//! that does not require gradients can never become a differentiable node.
//!
//! Tapes are single-use: build one per forward pass, call
//! [`Tape::backward`] once, drop it.

mod backward;
pub mod gradcheck;
mod ops;

use std::cell::{Cell, RefCell};
use std::str::FromStr;
use std::sync::Arc;

use crate::tensor::{Float, Tensor, TensorError};
use crate::tokens::split::SplitGeometry;

pub use gradcheck::{grad_check, relative_error};
pub use ops::{concat_cols, concat_rows};

/// Op identifiers, used for diagnostics and gradient fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    AddBias,
    Scale,
    Sum,
    Mean,
    Softmax,
    Sigmoid,
    Gelu,
    LayerNorm,
    Reshape,
    SliceCols,
    ConcatCols,
    SliceRows,
    ConcatRows,
    SoftSplit,
    Fold,
    BceLogits,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddBias,
        OpKind::Scale,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Softmax,
        OpKind::Sigmoid,
        OpKind::Gelu,
        OpKind::LayerNorm,
        OpKind::Reshape,
        OpKind::SliceCols,
        OpKind::ConcatCols,
        OpKind::SliceRows,
        OpKind::ConcatRows,
        OpKind::SoftSplit,
        OpKind::Fold,
        OpKind::BceLogits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddBias => "add_bias",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Softmax => "softmax",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Gelu => "gelu",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Reshape => "reshape",
            OpKind::SliceCols => "slice_cols",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SliceRows => "slice_rows",
            OpKind::ConcatRows => "concat_rows",
            OpKind::SoftSplit => "soft_split",
            OpKind::Fold => "fold",
            OpKind::BceLogits => "bce_logits",
        }
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown op `{s}`"))
    }
}

/// An input reference that also keeps the input's value for the backward pass.
pub(crate) struct Saved<T> {
    pub node: Option<usize>,
    pub value: Arc<Tensor<T>>,
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul {
        a: Saved<T>,
        b: Saved<T>,
        ta: bool,
        tb: bool,
        alpha: T,
    },
    Add {
        a: Option<usize>,
        b: Option<usize>,
    },
    Sub {
        a: Option<usize>,
        b: Option<usize>,
    },
    Mul {
        a: Saved<T>,
        b: Saved<T>,
    },
    AddBias {
        x: Option<usize>,
        b: Option<usize>,
        cols: usize,
    },
    Scale {
        x: Option<usize>,
        c: T,
    },
    Sum {
        x: Option<usize>,
        shape: Vec<usize>,
    },
    Mean {
        x: Option<usize>,
        shape: Vec<usize>,
    },
    Softmax {
        x: Option<usize>,
        y: Arc<Tensor<T>>,
        axis: usize,
    },
    Sigmoid {
        x: Option<usize>,
        y: Arc<Tensor<T>>,
    },
    Gelu {
        x: Saved<T>,
    },
    LayerNorm {
        x: Option<usize>,
        gamma: Saved<T>,
        beta: Option<usize>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Reshape {
        x: Option<usize>,
        shape: Vec<usize>,
    },
    SliceCols {
        x: Option<usize>,
        rows: usize,
        cols: usize,
        start: usize,
    },
    ConcatCols {
        parts: Vec<(Option<usize>, usize)>,
    },
    SliceRows {
        x: Option<usize>,
        shape: Vec<usize>,
        start: usize,
    },
    ConcatRows {
        parts: Vec<(Option<usize>, usize)>,
    },
    SoftSplit {
        x: Option<usize>,
        geom: SplitGeometry,
    },
    Fold {
        x: Option<usize>,
        geom: SplitGeometry,
    },
    BceLogits {
        x: Saved<T>,
        target: Arc<Tensor<T>>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Scale { .. } => OpKind::Scale,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Gelu { .. } => OpKind::Gelu,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::ConcatCols { .. } => OpKind::ConcatCols,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::ConcatRows { .. } => OpKind::ConcatRows,
            Op::SoftSplit { .. } => OpKind::SoftSplit,
            Op::Fold { .. } => OpKind::Fold,
            Op::BceLogits { .. } => OpKind::BceLogits,
        }
    }
}

/// Append-only record of differentiable ops.
pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Op<T>>>,
    recording: bool,
    fault: Cell<Option<OpKind>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            fault: Cell::new(None),
        }
    }

    /// A tape that records nothing: every value is a constant and
    /// intermediates are freed as soon as they go out of scope.
    pub fn no_grad() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Test hook: perturbs the backward rule of `kind` by 1% so that gradient
    /// checks can be shown to catch a broken derivative.
    pub fn inject_fault(&self, kind: Option<OpKind>) {
        self.fault.set(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(op);
        nodes.len() - 1
    }

    /// A differentiable leaf sharing `value`'s storage.
    pub fn leaf_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        let node = self.recording.then(|| self.push(Op::Leaf));
        Var {
            tape: self,
            node,
            value,
        }
    }

    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf_shared(Arc::new(value))
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var {
            tape: self,
            node: None,
            value: Arc::new(value),
        }
    }

    /// Records `make_op` when any input participates in differentiation.
    pub(crate) fn record(
        &self,
        inputs: &[Option<usize>],
        value: Tensor<T>,
        make_op: impl FnOnce() -> Op<T>,
    ) -> Var<'_, T> {
        let node = (self.recording && inputs.iter().any(Option::is_some))
            .then(|| self.push(make_op()));
        Var {
            tape: self,
            node,
            value: Arc::new(value),
        }
    }
}

/// A value produced on a tape.
pub struct Var<'t, T: Float> {
    tape: &'t Tape<T>,
    node: Option<usize>,
    value: Arc<Tensor<T>>,
}

impl<T: Float> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape,
            node: self.node,
            value: Arc::clone(&self.value),
        }
    }
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("node", &self.node)
            .field("value", &self.value)
            .finish()
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared_value(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub(crate) fn saved(&self) -> Saved<T> {
        Saved {
            node: self.node,
            value: Arc::clone(&self.value),
        }
    }

    /// A constant holding this value, cut off from the tape.
    pub fn detach(&self) -> Var<'t, T> {
        Var {
            tape: self.tape,
            node: None,
            value: Arc::clone(&self.value),
        }
    }
}

/// Gradients of one backward pass, keyed by leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of the loss with respect to `var`; `None` if `var` is not a
    /// leaf of this tape or the loss does not depend on it.
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.node?)?.as_ref()
    }

    /// Like [`get`](Self::get), but zeros when the loss does not depend on `var`.
    pub fn get_or_zeros(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

impl<T: Float> Tape<T> {
    /// Backpropagates from a scalar `loss`, returning gradients for every leaf.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>, TensorError> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::contract("backward", "loss belongs to another tape"));
        }
        if loss.value.len() != 1 {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", loss.shape()),
            ));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root) = loss.node else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::ones(loss.shape()));
        let fault = self.fault.get();
        for id in (0..=root).rev() {
            let Some(mut g) = grads[id].take() else {
                continue;
            };
            let op = &nodes[id];
            if fault == Some(op.kind()) {
                g.scale_in_place(T::from_f64(1.01));
            }
            if let Op::Leaf = op {
                grads[id] = Some(g);
                continue;
            }
            backward::propagate(op, g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }
}
