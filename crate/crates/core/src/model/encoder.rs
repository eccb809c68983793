//! Tokens-to-token encoder producing the multi-level tokens `T1`, `T2` and
//! the backbone output `T^E`.

use crate::nn::{Bound, LayerParams, Linear, ParamRegistry};
use crate::tensor::{Float, Tensor, TensorError};
use crate::tokens::{sinusoidal_pos_embed, soft_split, t2t_module, TokenSeq};

use super::config::VstConfig;

#[derive(Debug, Clone)]
pub struct Encoder {
    pub embed0: Linear,
    pub t2t1: LayerParams,
    pub embed1: Linear,
    pub t2t2: LayerParams,
    pub embed2: Linear,
    pub layers: Vec<LayerParams>,
    specs: [crate::tokens::SplitSpec; 3],
}

/// Encoder outputs: `T1` (1/4, `c`), `T2` (1/8, `c`) and `T^E` (1/16, `d`).
pub struct Encoded<'t, T: Float> {
    pub t1: TokenSeq<'t, T>,
    pub t2: TokenSeq<'t, T>,
    pub te: TokenSeq<'t, T>,
}

impl Encoder {
    pub fn new(reg: &mut ParamRegistry, name: &str, cfg: &VstConfig, in_ch: usize) -> Self {
        let [s0, s1, s2] = cfg.encoder_specs;
        let (c, d) = (cfg.c, cfg.d);
        Encoder {
            embed0: Linear::new(reg, &format!("{name}.embed0"), in_ch * s0.k * s0.k, c, true),
            t2t1: LayerParams::new(reg, &format!("{name}.t2t1"), c, 1, cfg.mlp_ratio_token),
            embed1: Linear::new(reg, &format!("{name}.embed1"), c * s1.k * s1.k, c, true),
            t2t2: LayerParams::new(reg, &format!("{name}.t2t2"), c, 1, cfg.mlp_ratio_token),
            embed2: Linear::new(reg, &format!("{name}.embed2"), c * s2.k * s2.k, d, true),
            layers: (0..cfg.l_e)
                .map(|i| {
                    LayerParams::new(
                        reg,
                        &format!("{name}.layers.{i}"),
                        d,
                        cfg.heads(),
                        cfg.mlp_ratio_backbone,
                    )
                })
                .collect(),
            specs: cfg.encoder_specs,
        }
    }

    /// Encodes an `h×w×ch` image.
    pub fn forward<'t, T: Float>(
        &self,
        params: &Bound<'t, T>,
        img: &crate::autodiff::Var<'t, T>,
    ) -> Result<Encoded<'t, T>, TensorError> {
        let s = soft_split(img, &self.specs[0])?;
        let tok0 = s.with_tokens(self.embed0.forward(params, s.tokens())?)?;
        let (t1, s1) = t2t_module(&tok0, &self.t2t1, params, &self.specs[1])?;
        let tok1 = s1.with_tokens(self.embed1.forward(params, s1.tokens())?)?;
        let (t2, s2) = t2t_module(&tok1, &self.t2t2, params, &self.specs[2])?;

        let (gh, gw) = s2.grid();
        let x = self.embed2.forward(params, s2.tokens())?;
        let pe: Tensor<T> = sinusoidal_pos_embed(gh, gw, x.shape()[1])?;
        let mut x = x.add(&x.tape().constant(pe))?;
        for layer in &self.layers {
            x = layer.forward(params, &x)?;
        }
        Ok(Encoded {
            t1,
            t2,
            te: TokenSeq::new(x, gh, gw)?,
        })
    }
}
