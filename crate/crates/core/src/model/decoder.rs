//! Token-based multi-task decoder: task tokens, reverse tokens-to-token
//! upsampling, multi-level fusion and patch-task-attention prediction heads.

use crate::autodiff::{concat_cols, concat_rows, Var};
use crate::nn::{Bound, Init, LayerParams, Linear, ParamId, ParamRegistry, PatchTaskParams, INIT_STD};
use crate::tensor::{Float, TensorError};
use crate::tokens::{rt2t, SplitSpec, TokenSeq};

use super::config::VstConfig;

/// Saliency and boundary logits on one grid, each `h×w`.
#[derive(Clone)]
pub struct MapLogits<'t, T: Float> {
    pub saliency: Var<'t, T>,
    pub boundary: Var<'t, T>,
}

impl<'t, T: Float> MapLogits<'t, T> {
    pub fn grid(&self) -> (usize, usize) {
        (self.saliency.shape()[0], self.saliency.shape()[1])
    }
}

/// Decoder output: full-resolution logits plus one auxiliary pair per
/// decoder level, ordered 1/16, 1/8, 1/4.
#[derive(Clone)]
pub struct SaliencyOutput<'t, T: Float> {
    pub final_maps: MapLogits<'t, T>,
    pub aux: Vec<MapLogits<'t, T>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Upsampler {
    pub proj_in: Linear,
    pub expand: Linear,
    pub spec: SplitSpec,
}

impl Upsampler {
    fn new(reg: &mut ParamRegistry, name: &str, din: usize, c: usize, spec: SplitSpec) -> Self {
        Upsampler {
            proj_in: Linear::new(reg, &format!("{name}.proj"), din, c, true),
            expand: Linear::new(reg, &format!("{name}.expand"), c, c * spec.k * spec.k, true),
            spec,
        }
    }

    fn forward<'t, T: Float>(
        &self,
        params: &Bound<'t, T>,
        tok: &TokenSeq<'t, T>,
        target: (usize, usize),
    ) -> Result<TokenSeq<'t, T>, TensorError> {
        rt2t(tok, &self.spec, target.0, target.1, &self.proj_in, &self.expand, params)
    }
}

/// Fuses upsampled tokens with encoder tokens: `[up, T_i]` (2c) → c,
/// one transformer layer at `c`, then back to `d`.
#[derive(Debug, Clone, Copy)]
pub struct Fusion {
    pub reduce: Linear,
    pub layer: LayerParams,
    pub recover: Linear,
}

/// Patch-task attention and per-pixel heads for one decoder level.
#[derive(Debug, Clone, Copy)]
pub struct LevelHeads {
    pub pta_s: PatchTaskParams,
    pub pta_b: PatchTaskParams,
    pub head_s: Linear,
    pub head_b: Linear,
}

impl LevelHeads {
    fn new(reg: &mut ParamRegistry, name: &str, d: usize) -> Self {
        LevelHeads {
            pta_s: PatchTaskParams::new(reg, &format!("{name}.pta_sal"), d),
            pta_b: PatchTaskParams::new(reg, &format!("{name}.pta_bnd"), d),
            head_s: Linear::new(reg, &format!("{name}.head_sal"), d, 1, true),
            head_b: Linear::new(reg, &format!("{name}.head_bnd"), d, 1, true),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub sal_token: ParamId,
    pub bnd_token: ParamId,
    pub layers: [Vec<LayerParams>; 3],
    pub heads: [LevelHeads; 3],
    pub up: [Upsampler; 2],
    pub fuse: [Fusion; 2],
    pub final_up_s: Upsampler,
    pub final_up_b: Upsampler,
    pub final_head_s: Linear,
    pub final_head_b: Linear,
}

impl Decoder {
    pub fn new(reg: &mut ParamRegistry, name: &str, cfg: &VstConfig) -> Self {
        let (c, d) = (cfg.c, cfg.d);
        let sal_token = reg.add(format!("{name}.sal_token"), &[1, d], Init::TruncNormal(INIT_STD));
        let bnd_token = reg.add(format!("{name}.bnd_token"), &[1, d], Init::TruncNormal(INIT_STD));
        let mut layers: [Vec<LayerParams>; 3] = Default::default();
        let mut heads = Vec::new();
        let mut up = Vec::new();
        let mut fuse = Vec::new();
        for (i, count) in [cfg.l_d3, cfg.l_d2, cfg.l_d1].into_iter().enumerate() {
            let level = format!("{name}.level{}", 3 - i);
            if i > 0 {
                fuse.push(Fusion {
                    reduce: Linear::new(reg, &format!("{level}.fuse.reduce"), 2 * c, c, true),
                    layer: LayerParams::new(reg, &format!("{level}.fuse.layer"), c, cfg.heads_c(), cfg.mlp_ratio_head),
                    recover: Linear::new(reg, &format!("{level}.fuse.recover"), c, d, true),
                });
            }
            layers[i] = (0..count)
                .map(|j| LayerParams::new(reg, &format!("{level}.layers.{j}"), d, cfg.heads(), cfg.mlp_ratio_head))
                .collect();
            heads.push(LevelHeads::new(reg, &level, d));
            if i < 2 {
                up.push(Upsampler::new(reg, &format!("{level}.up"), d, c, cfg.decoder_specs[i]));
            }
        }
        let spec = cfg.decoder_specs[2];
        Decoder {
            sal_token,
            bnd_token,
            layers,
            heads: heads.try_into().expect("three levels"),
            up: up.try_into().expect("two upsamplers"),
            fuse: fuse.try_into().expect("two fusions"),
            final_up_s: Upsampler::new(reg, &format!("{name}.final.up_sal"), d, c, spec),
            final_up_b: Upsampler::new(reg, &format!("{name}.final.up_bnd"), d, c, spec),
            final_head_s: Linear::new(reg, &format!("{name}.final.head_sal"), c, 1, true),
            final_head_b: Linear::new(reg, &format!("{name}.final.head_bnd"), c, 1, true),
        }
    }

    /// `t_c` at 1/16, `t2` at 1/8 and `t1` at 1/4; `out_hw` is the input size.
    pub fn forward<'t, T: Float>(
        &self,
        params: &Bound<'t, T>,
        t_c: &TokenSeq<'t, T>,
        t1: &TokenSeq<'t, T>,
        t2: &TokenSeq<'t, T>,
        out_hw: (usize, usize),
    ) -> Result<SaliencyOutput<'t, T>, TensorError> {
        let mut patches = t_c.clone();
        let mut t_s = params[self.sal_token].clone();
        let mut t_b = params[self.bnd_token].clone();
        let lows = [t2, t1];
        let mut aux = Vec::with_capacity(3);
        let mut last_pta = None;

        for level in 0..3 {
            if level > 0 {
                let low = lows[level - 1];
                let up = self.up[level - 1].forward(params, &patches, low.grid())?;
                patches = self.fuse_level(params, &self.fuse[level - 1], &up, low)?;
            }
            let n = patches.len();
            let mut x = concat_rows(&[patches.tokens(), &t_s, &t_b])?;
            for layer in &self.layers[level] {
                x = layer.forward(params, &x)?;
            }
            patches = patches.with_tokens(x.slice_rows(0, n)?)?;
            t_s = x.slice_rows(n, 1)?;
            t_b = x.slice_rows(n + 1, 1)?;

            let h = &self.heads[level];
            let p_s = h.pta_s.forward(params, patches.tokens(), &t_s)?;
            let p_b = h.pta_b.forward(params, patches.tokens(), &t_b)?;
            let (gh, gw) = patches.grid();
            aux.push(MapLogits {
                saliency: h.head_s.forward(params, &p_s)?.reshape(&[gh, gw])?,
                boundary: h.head_b.forward(params, &p_b)?.reshape(&[gh, gw])?,
            });
            last_pta = Some((patches.with_tokens(p_s)?, patches.with_tokens(p_b)?));
        }

        let (p_s, p_b) = last_pta.expect("three levels ran");
        let (h, w) = out_hw;
        let full_s = self.final_up_s.forward(params, &p_s, out_hw)?;
        let full_b = self.final_up_b.forward(params, &p_b, out_hw)?;
        Ok(SaliencyOutput {
            final_maps: MapLogits {
                saliency: self.final_head_s.forward(params, full_s.tokens())?.reshape(&[h, w])?,
                boundary: self.final_head_b.forward(params, full_b.tokens())?.reshape(&[h, w])?,
            },
            aux,
        })
    }

    fn fuse_level<'t, T: Float>(
        &self,
        params: &Bound<'t, T>,
        f: &Fusion,
        up: &TokenSeq<'t, T>,
        low: &TokenSeq<'t, T>,
    ) -> Result<TokenSeq<'t, T>, TensorError> {
        if up.grid() != low.grid() {
            return Err(TensorError::contract(
                "decode",
                format!("upsampled grid {:?} does not match encoder grid {:?}", up.grid(), low.grid()),
            ));
        }
        let x = f.reduce.forward(params, &concat_cols(&[up.tokens(), low.tokens()])?)?;
        let x = f.layer.forward(params, &x)?;
        up.with_tokens(f.recover.forward(params, &x)?)
    }
}
