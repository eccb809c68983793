//! Convertor from encoder space to decoder space: plain transformer layers
//! for RGB, alternating cross-modality and per-modality layers for RGB-D.

use crate::autodiff::{concat_cols, Var};
use crate::nn::{Bound, CmtParams, LayerParams, Linear, ParamRegistry};
use crate::tensor::{Float, TensorError};

use super::config::VstConfig;

#[derive(Debug, Clone)]
pub struct RgbdBlock {
    pub cmt: CmtParams,
    pub layer_r: LayerParams,
    pub layer_d: LayerParams,
}

#[derive(Debug, Clone)]
pub enum Convertor {
    Rgb(Vec<LayerParams>),
    Rgbd { blocks: Vec<RgbdBlock>, fuse: Linear },
}

impl Convertor {
    pub fn rgb(reg: &mut ParamRegistry, name: &str, cfg: &VstConfig) -> Self {
        Convertor::Rgb(
            (0..cfg.l_c)
                .map(|i| {
                    LayerParams::new(reg, &format!("{name}.layers.{i}"), cfg.d, cfg.heads(), cfg.mlp_ratio_head)
                })
                .collect(),
        )
    }

    pub fn rgbd(reg: &mut ParamRegistry, name: &str, cfg: &VstConfig) -> Self {
        let (d, heads, r) = (cfg.d, cfg.heads(), cfg.mlp_ratio_head);
        let blocks = (0..cfg.l_c)
            .map(|i| RgbdBlock {
                cmt: CmtParams::new(reg, &format!("{name}.blocks.{i}.cmt"), d, heads, r),
                layer_r: LayerParams::new(reg, &format!("{name}.blocks.{i}.rgb"), d, heads, r),
                layer_d: LayerParams::new(reg, &format!("{name}.blocks.{i}.depth"), d, heads, r),
            })
            .collect();
        Convertor::Rgbd {
            blocks,
            fuse: Linear::new(reg, &format!("{name}.fuse"), 2 * d, d, true),
        }
    }

    pub fn forward_rgb<'t, T: Float>(
        layers: &[LayerParams],
        params: &Bound<'t, T>,
        t_e: &Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let mut x = t_e.clone();
        for layer in layers {
            x = layer.forward(params, &x)?;
        }
        Ok(x)
    }

    /// Returns the fused tokens together with the two streams before fusion.
    pub fn forward_rgbd<'t, T: Float>(
        blocks: &[RgbdBlock],
        fuse: &Linear,
        params: &Bound<'t, T>,
        t_r: &Var<'t, T>,
        t_d: &Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>), TensorError> {
        if t_r.shape() != t_d.shape() {
            return Err(TensorError::contract(
                "convert_rgbd",
                format!("grid mismatch: rgb {:?}, depth {:?}", t_r.shape(), t_d.shape()),
            ));
        }
        let (mut r, mut d) = (t_r.clone(), t_d.clone());
        for b in blocks {
            let (r2, d2) = b.cmt.forward(params, &r, &d)?;
            r = b.layer_r.forward(params, &r2)?;
            d = b.layer_d.forward(params, &d2)?;
        }
        let fused = fuse.forward(params, &concat_cols(&[&r, &d])?)?;
        Ok((fused, r, d))
    }
}
