//! Finite-difference verification of every differentiable component and of
//! the toy end-to-end model.
//!
//! Each check draws inputs and parameters from a seeded stream, reduces the
//! component output to a scalar with a fixed random weighting and compares
//! reverse-mode gradients against central differences in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::gradcheck::{grad_check_multi, CheckOptions, GradCheckReport};
use crate::autodiff::{concat_cols, concat_rows, OpKind, Var};
use crate::data::sobel_boundary;
use crate::model::{Convertor, Modality, Vst, VstConfig};
use crate::nn::{
    cross_modality_attention, multi_head_attention, AttnParams, Bound, CmtParams, LayerNorm, LayerParams,
    Linear, ParamRegistry, ParamSpec, PatchTaskParams,
};
use crate::tensor::{Tensor, TensorError};
use crate::tokens::{rt2t, t2t_module, SplitGeometry, SplitSpec, TokenSeq};
use crate::train::{total_loss, Targets};

/// Threshold for individual layers.
pub const LAYER_TOLERANCE: f64 = 1e-6;
/// Threshold for the end-to-end model.
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const LAYER_EPS: f64 = 3e-4;
pub const MODEL_EPS: f64 = 1e-3;
pub const LAYER_FLOOR: f64 = 1e-8;
/// Round-off in the end-to-end loss limits finite differences to roughly
/// 1e-12 absolute, so smaller gradients are judged against this floor.
pub const MODEL_FLOOR: f64 = 1e-7;
/// Parameter coordinates probed per tensor in the end-to-end check.
pub const MODEL_PROBES_PER_TENSOR: usize = 2;
const STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentResult {
    pub name: &'static str,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl ComponentResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.tolerance
    }
}

struct Ctx {
    rng: ChaCha8Rng,
    fault: Option<OpKind>,
}

impl Ctx {
    fn tensor(&mut self, shape: &[usize]) -> Tensor<f64> {
        let normal = Normal::new(0.0, STD).expect("valid std");
        Tensor::from_fn(shape, |_| normal.sample(&mut self.rng))
    }

    /// Checks `body` over every registry parameter and every extra input,
    /// reducing its output with a random weighting of shape `out_shape`.
    fn check<F>(
        &mut self,
        reg: &ParamRegistry,
        extra: &[&[usize]],
        out_shape: &[usize],
        body: F,
    ) -> Result<GradCheckReport, TensorError>
    where
        F: for<'t> Fn(&Bound<'t, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, TensorError>,
    {
        let mut inputs: Vec<_> = reg.specs().iter().map(|s| generic_param(self, s)).collect();
        let n = inputs.len();
        for shape in extra {
            inputs.push(self.tensor(shape));
        }
        let weight = self.tensor(out_shape);
        grad_check_multi(
            |vars| {
                let bound = Bound::from_vars(vars[..n].to_vec());
                let out = body(&bound, &vars[n..])?;
                out.mul(&out.tape().constant(weight.clone()))?.sum()
            },
            &inputs,
            |_, _| true,
            &CheckOptions {
                eps: LAYER_EPS,
                floor: LAYER_FLOOR,
                fault: self.fault,
            },
        )
    }
}

fn linear(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let l = Linear::new(&mut reg, "l", 8, 5, true);
    ctx.check(&reg, &[&[4, 8]], &[4, 5], |p, x| l.forward(p, &x[0]))
}

fn layer_norm(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let ln = LayerNorm::new(&mut reg, "ln", 8);
    ctx.check(&reg, &[&[4, 8]], &[4, 8], |p, x| ln.forward(p, &x[0]))
}

fn gelu(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    ctx.check(&ParamRegistry::new(), &[&[4, 8]], &[4, 8], |_, x| x[0].gelu())
}

fn softmax(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    ctx.check(&ParamRegistry::new(), &[&[4, 8]], &[4, 8], |_, x| x[0].softmax(1))
}

fn sigmoid(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    ctx.check(&ParamRegistry::new(), &[&[4, 8]], &[4, 8], |_, x| x[0].sigmoid())
}

fn attention(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let a = AttnParams::new(&mut reg, "a", 8, 2);
    ctx.check(&reg, &[&[4, 8]], &[4, 8], |p, x| multi_head_attention(&a, p, &x[0], &x[0]))
}

fn transformer_layer(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let l = LayerParams::new(&mut reg, "l", 8, 2, 2.0);
    ctx.check(&reg, &[&[4, 8]], &[4, 8], |p, x| l.forward(p, &x[0]))
}

fn cross_attention(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let a_r = AttnParams::new(&mut reg, "r", 8, 2);
    let a_d = AttnParams::new(&mut reg, "d", 8, 2);
    ctx.check(&reg, &[&[4, 8], &[4, 8]], &[8, 8], |p, x| {
        let (r, d) = cross_modality_attention(&x[0], &x[1], &a_r, &a_d, p)?;
        concat_rows(&[&r, &d])
    })
}

fn cmt_layer(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let c = CmtParams::new(&mut reg, "cmt", 8, 2, 2.0);
    ctx.check(&reg, &[&[4, 8], &[4, 8]], &[4, 16], |p, x| {
        let (r, d) = c.forward(p, &x[0], &x[1])?;
        concat_cols(&[&r, &d])
    })
}

fn patch_task(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let pta = PatchTaskParams::new(&mut reg, "pta", 8);
    ctx.check(&reg, &[&[4, 8], &[1, 8]], &[4, 8], |p, x| pta.forward(p, &x[0], &x[1]))
}

fn soft_split(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let geom = SplitGeometry::new(5, 6, 2, SplitSpec::new(3, 1, 1))?;
    let out = [geom.n_tokens(), geom.token_dim()];
    ctx.check(&ParamRegistry::new(), &[&[5, 6, 2]], &out, |_, x| x[0].soft_split(&geom))
}

fn fold(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let geom = SplitGeometry::new(5, 6, 2, SplitSpec::new(3, 1, 1))?;
    let tokens = [geom.n_tokens(), geom.token_dim()];
    ctx.check(&ParamRegistry::new(), &[&tokens], &[5, 6, 2], |_, x| x[0].fold(&geom))
}

fn t2t(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let layer = LayerParams::new(&mut reg, "t2t", 4, 1, 1.0);
    let spec = SplitSpec::new(3, 1, 1);
    ctx.check(&reg, &[&[16, 4]], &[4, 36], |p, x| {
        let tok = TokenSeq::new(x[0].clone(), 4, 4)?;
        Ok(t2t_module(&tok, &layer, p, &spec)?.1.into_tokens())
    })
}

fn reverse_t2t(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let spec = SplitSpec::new(3, 1, 1);
    let proj = Linear::new(&mut reg, "proj", 8, 3, true);
    let expand = Linear::new(&mut reg, "expand", 3, 27, true);
    ctx.check(&reg, &[&[4, 8]], &[16, 3], |p, x| {
        let tok = TokenSeq::new(x[0].clone(), 2, 2)?;
        Ok(rt2t(&tok, &spec, 4, 4, &proj, &expand, p)?.into_tokens())
    })
}

fn bce(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let target = Tensor::from_fn(&[4, 8], |_| if ctx.rng.random_bool(0.5) { 1.0 } else { 0.0 });
    ctx.check(&ParamRegistry::new(), &[&[4, 8]], &[], |_, x| {
        x[0].scale(4.0)?.bce_with_logits(&target)
    })
}

fn small_convertor_config(l_c: usize) -> VstConfig {
    VstConfig {
        d: 8,
        n_heads: Some(2),
        l_c,
        mlp_ratio_head: 2.0,
        ..VstConfig::toy()
    }
}

fn convert_rgb(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let Convertor::Rgb(layers) = Convertor::rgb(&mut reg, "c", &small_convertor_config(2)) else {
        unreachable!("rgb constructor")
    };
    ctx.check(&reg, &[&[4, 8]], &[4, 8], |p, x| Convertor::forward_rgb(&layers, p, &x[0]))
}

fn convert_rgbd(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    let mut reg = ParamRegistry::new();
    let Convertor::Rgbd { blocks, fuse } = Convertor::rgbd(&mut reg, "c", &small_convertor_config(1)) else {
        unreachable!("rgbd constructor")
    };
    ctx.check(&reg, &[&[4, 8], &[4, 8]], &[4, 8], |p, x| {
        Ok(Convertor::forward_rgbd(&blocks, &fuse, p, &x[0], &x[1])?.0)
    })
}

/// Matrices with unit-variance outputs, layer-norm gains around one and small
/// random vectors elsewhere. At the training init the attention logits are nearly
/// flat and query/key gradients fall below finite-difference resolution.
fn generic_param(ctx: &mut Ctx, spec: &ParamSpec) -> Tensor<f64> {
    let (mean, std) = match spec.shape[..] {
        [din, _] => (0.0, 1.0 / (din as f64).sqrt()),
        _ if spec.name.ends_with(".gamma") => (1.0, 0.1),
        _ => (0.0, 0.1),
    };
    let normal = Normal::new(mean, std).expect("valid std");
    Tensor::from_fn(&spec.shape, |_| normal.sample(&mut ctx.rng))
}

/// Full training loss of the toy model on a disc mask, probed at a random
/// subsample of parameter coordinates.
fn model(ctx: &mut Ctx, modality: Modality) -> Result<GradCheckReport, TensorError> {
    let cfg = VstConfig {
        modality,
        ..VstConfig::toy()
    };
    let model = Vst::new(&cfg).map_err(|e| TensorError::Spec(e.to_string()))?;
    let [h, w] = cfg.input_hw;
    let mut inputs: Vec<Tensor<f64>> = model
        .registry()
        .specs()
        .iter()
        .map(|spec| generic_param(ctx, spec))
        .collect();
    let n = inputs.len();
    let probes: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| (0..MODEL_PROBES_PER_TENSOR).map(|_| ctx.rng.random_range(0..t.len())).collect())
        .collect();
    inputs.push(Tensor::from_fn(&[h, w, 3], |_| ctx.rng.random::<f64>()));
    if modality == Modality::Rgbd {
        inputs.push(Tensor::from_fn(&[h, w, 3], |_| ctx.rng.random::<f64>()));
    }
    let mask = Tensor::from_fn(&[h, w], |i| {
        let y = (i / w) as f64 / h as f64 - 0.5;
        let x = (i % w) as f64 / w as f64 - 0.45;
        if y * y + x * x < 0.09 {
            1.0
        } else {
            0.0
        }
    });
    let grids = model.grids();
    let targets = Targets::new(&mask, &sobel_boundary(&mask), &grids.decoder[..3])?;
    grad_check_multi(
        |vars| {
            let bound = Bound::from_vars(vars[..n].to_vec());
            let out = model.forward(&bound, &vars[n], vars.get(n + 1))?;
            Ok(total_loss(&out, &targets)?.total)
        },
        &inputs,
        |i, j| i < n && probes[i].contains(&j),
        &CheckOptions {
            eps: MODEL_EPS,
            floor: MODEL_FLOOR,
            fault: ctx.fault,
        },
    )
}

type CheckFn = fn(&mut Ctx) -> Result<GradCheckReport, TensorError>;

fn model_rgb(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    model(ctx, Modality::Rgb)
}

fn model_rgbd(ctx: &mut Ctx) -> Result<GradCheckReport, TensorError> {
    model(ctx, Modality::Rgbd)
}

const COMPONENTS: &[(&str, f64, CheckFn)] = &[
    ("linear", LAYER_TOLERANCE, linear),
    ("layer_norm", LAYER_TOLERANCE, layer_norm),
    ("gelu", LAYER_TOLERANCE, gelu),
    ("softmax", LAYER_TOLERANCE, softmax),
    ("sigmoid", LAYER_TOLERANCE, sigmoid),
    ("multi_head_attention", LAYER_TOLERANCE, attention),
    ("transformer_layer", LAYER_TOLERANCE, transformer_layer),
    ("cross_modality_attention", LAYER_TOLERANCE, cross_attention),
    ("cmt_layer", LAYER_TOLERANCE, cmt_layer),
    ("patch_task_attention", LAYER_TOLERANCE, patch_task),
    ("soft_split", LAYER_TOLERANCE, soft_split),
    ("fold", LAYER_TOLERANCE, fold),
    ("t2t_module", LAYER_TOLERANCE, t2t),
    ("rt2t", LAYER_TOLERANCE, reverse_t2t),
    ("bce_with_logits", LAYER_TOLERANCE, bce),
    ("convert_rgb", LAYER_TOLERANCE, convert_rgb),
    ("convert_rgbd", LAYER_TOLERANCE, convert_rgbd),
    ("model_rgb", MODEL_TOLERANCE, model_rgb),
    ("model_rgbd", MODEL_TOLERANCE, model_rgbd),
];

/// Component names in suite order.
pub fn component_names() -> impl Iterator<Item = &'static str> {
    COMPONENTS.iter().map(|c| c.0)
}

fn name_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Runs one named component. `fault` corrupts the backward pass of one op.
pub fn run_component(name: &str, seed: u64, fault: Option<OpKind>) -> Result<ComponentResult, TensorError> {
    let &(name, tolerance, f) = COMPONENTS
        .iter()
        .find(|c| c.0 == name)
        .ok_or_else(|| TensorError::contract("gradcheck", format!("unknown component {name}")))?;
    let mut ctx = Ctx {
        rng: ChaCha8Rng::seed_from_u64(seed ^ name_hash(name)),
        fault,
    };
    Ok(ComponentResult {
        name,
        report: f(&mut ctx)?,
        tolerance,
    })
}

/// Runs every component with `seed`.
pub fn run_suite(seed: u64, fault: Option<OpKind>) -> Result<Vec<ComponentResult>, TensorError> {
    component_names().map(|n| run_component(n, seed, fault)).collect()
}
