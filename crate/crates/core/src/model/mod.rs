//! The full model: encoder(s), convertor and decoder, plus parameter
//! accounting and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod convertor;
pub mod decoder;
pub mod encoder;

use crate::autodiff::{Tape, Var};
use crate::nn::{Bound, ParamRegistry, ParamStore};
use crate::tensor::{Float, Tensor, TensorError};
use crate::tokens::TokenSeq;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{ConfigError, Grids, Modality, VstConfig};
pub use convertor::Convertor;
pub use decoder::{Decoder, MapLogits, SaliencyOutput};
pub use encoder::{Encoded, Encoder};

/// Probability maps in `[0, 1]`, each `h×w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Maps<T> {
    pub saliency: Tensor<T>,
    pub boundary: Tensor<T>,
}

/// Inference result: full-resolution maps and the three auxiliary levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub maps: Maps<T>,
    pub aux: Vec<Maps<T>>,
}

/// An instantiated architecture. Holds parameter handles only; values live
/// in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Vst {
    config: VstConfig,
    grids: Grids,
    registry: ParamRegistry,
    pub encoder_rgb: Encoder,
    pub encoder_depth: Option<Encoder>,
    pub convertor: Convertor,
    pub decoder: Decoder,
}

impl Vst {
    pub fn new(config: &VstConfig) -> Result<Self, ConfigError> {
        let grids = config.validate()?;
        let mut reg = ParamRegistry::new();
        let encoder_rgb = Encoder::new(&mut reg, "encoder_rgb", config, 3);
        let (encoder_depth, convertor) = match config.modality {
            Modality::Rgb => (None, Convertor::rgb(&mut reg, "convertor", config)),
            Modality::Rgbd => (
                Some(Encoder::new(&mut reg, "encoder_depth", config, 3)),
                Convertor::rgbd(&mut reg, "convertor", config),
            ),
        };
        let decoder = Decoder::new(&mut reg, "decoder", config);
        Ok(Vst {
            config: config.clone(),
            grids,
            registry: reg,
            encoder_rgb,
            encoder_depth,
            convertor,
            decoder,
        })
    }

    pub fn config(&self) -> &VstConfig {
        &self.config
    }

    pub fn grids(&self) -> Grids {
        self.grids
    }

    pub fn registry(&self) -> &ParamRegistry {
        &self.registry
    }

    pub fn num_params(&self) -> usize {
        self.registry.numel()
    }

    /// Parameters drawn from the initialisers with the config seed.
    pub fn init_params<T: Float>(&self) -> ParamStore<T> {
        ParamStore::init(&self.registry, self.config.seed)
    }

    /// Parameter count per module, keyed by the first two name components,
    /// in registration order.
    pub fn param_ledger(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for spec in self.registry.specs() {
            let key = module_key(&spec.name);
            match out.last_mut() {
                Some((k, n)) if *k == key => *n += spec.numel(),
                _ => out.push((key, spec.numel())),
            }
        }
        out
    }

    fn check_image<T: Float>(&self, what: &str, img: &Var<'_, T>) -> Result<(), TensorError> {
        let [h, w] = self.config.input_hw;
        if img.shape() != [h, w, 3] {
            return Err(TensorError::contract(
                "vst_forward",
                format!("{what} must be {h}x{w}x3, got {:?}", img.shape()),
            ));
        }
        Ok(())
    }

    /// Full forward pass. `depth` is required in RGB-D mode and ignored in
    /// RGB mode.
    pub fn forward<'t, T: Float>(
        &self,
        params: &Bound<'t, T>,
        image: &Var<'t, T>,
        depth: Option<&Var<'t, T>>,
    ) -> Result<SaliencyOutput<'t, T>, TensorError> {
        self.check_image("image", image)?;
        let enc = self.encoder_rgb.forward(params, image)?;
        let t_c = match (&self.convertor, &self.encoder_depth) {
            (Convertor::Rgb(layers), _) => Convertor::forward_rgb(layers, params, enc.te.tokens())?,
            (Convertor::Rgbd { blocks, fuse }, Some(enc_d)) => {
                let depth = depth.ok_or_else(|| {
                    TensorError::contract("vst_forward", "rgbd model requires a depth input")
                })?;
                self.check_image("depth", depth)?;
                let te_d = enc_d.forward(params, depth)?.te;
                Convertor::forward_rgbd(blocks, fuse, params, enc.te.tokens(), te_d.tokens())?.0
            }
            (Convertor::Rgbd { .. }, None) => unreachable!("rgbd convertor without depth encoder"),
        };
        let t_c = TokenSeq::new(t_c, enc.te.grid().0, enc.te.grid().1)?;
        let [h, w] = self.config.input_hw;
        self.decoder.forward(params, &t_c, &enc.t1, &enc.t2, (h, w))
    }

    /// Inference without recording gradients.
    pub fn predict<T: Float>(
        &self,
        store: &ParamStore<T>,
        image: &Tensor<T>,
        depth: Option<&Tensor<T>>,
    ) -> Result<Prediction<T>, TensorError> {
        let tape = Tape::no_grad();
        let params = store.bind(&tape);
        let img = tape.constant(image.clone());
        let dep = match self.config.modality {
            Modality::Rgbd => depth.map(|d| tape.constant(d.clone())),
            Modality::Rgb => None,
        };
        let out = self.forward(&params, &img, dep.as_ref())?;
        let probs = |m: &MapLogits<'_, T>| -> Result<Maps<T>, TensorError> {
            Ok(Maps {
                saliency: m.saliency.sigmoid()?.value().clone(),
                boundary: m.boundary.sigmoid()?.value().clone(),
            })
        };
        Ok(Prediction {
            maps: probs(&out.final_maps)?,
            aux: out.aux.iter().map(probs).collect::<Result<_, _>>()?,
        })
    }
}

fn module_key(name: &str) -> String {
    let mut parts = name.split('.');
    let first = parts.next().unwrap_or_default();
    match parts.next() {
        Some(second) if parts.next().is_some() => format!("{first}.{second}"),
        _ => first.to_string(),
    }
}

/// Total scalar parameter count of the model described by `config`.
pub fn count_params(config: &VstConfig) -> Result<usize, ConfigError> {
    Ok(Vst::new(config)?.num_params())
}
