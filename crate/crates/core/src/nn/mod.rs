//! Parameterised building blocks: parameter storage, dense layers and every
//! attention variant used by the model.

pub mod attention;
pub mod layers;
pub mod params;

pub use attention::{
    cross_modality_attention, multi_head_attention, scaled_dot_attention, AttnParams, CmtParams,
    LayerParams, PatchTaskParams,
};
pub use layers::{linear, LayerNorm, Linear, Mlp, LN_EPS};
pub use params::{Bound, Init, ParamId, ParamRegistry, ParamSpec, ParamStore, INIT_STD};
