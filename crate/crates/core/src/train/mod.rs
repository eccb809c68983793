//! Training: loss, optimiser, schedule and the seeded training loop.

pub mod adam;
pub mod loss;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::data::{load_sample, DataError, Manifest, Preprocessor, Sample};
use crate::model::{save_checkpoint, CheckpointError, ConfigError, Vst, VstConfig};
use crate::nn::ParamStore;
use crate::tensor::{Float, Tensor, TensorError};

pub use adam::{lr_schedule, lr_schedule_with, Adam, AdamConfig};
pub use loss::{avg_pool, bce_loss, total_loss, LevelTarget, LossParts, Targets};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<TrainError>,
    },
}

impl TrainError {
    /// True when the root cause is a NaN/Inf loss or gradient.
    pub fn is_non_finite(&self) -> bool {
        match self {
            TrainError::NonFinite(_) => true,
            TrainError::AtStep { source, .. } => source.is_non_finite(),
            _ => false,
        }
    }

    fn at(self, step: u64) -> Self {
        TrainError::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

/// Optimisation settings. Defaults follow the full-size RGB recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Fractions of `total_steps` at which the rate is multiplied by `lr_decay`.
    pub milestones: Vec<f64>,
    pub lr_decay: f64,
    pub adam: AdamConfig,
    /// Seed of the data-order and augmentation stream.
    pub seed: u64,
    /// Steps between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 40_000,
            batch_size: 11,
            base_lr: 1e-4,
            milestones: vec![0.5, 0.75],
            lr_decay: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 5_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size == 0 {
            return Err(ConfigError::new("training.batch_size must be >= 1"));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(ConfigError::new("training.base_lr must be finite and >= 0"));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(ConfigError::new("training.lr_decay must be positive"));
        }
        let mut prev = 0.0;
        for &m in &self.milestones {
            if !(m > prev && m < 1.0) {
                return Err(ConfigError::new(
                    "training.milestones must be strictly increasing within (0, 1)",
                ));
            }
            prev = m;
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(ConfigError::new("training.adam needs betas in [0, 1) and eps > 0"));
        }
        Ok(())
    }

    pub fn lr(&self, step: u64) -> f64 {
        lr_schedule_with(step, self.total_steps, self.base_lr, &self.milestones, self.lr_decay)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_sal: f64,
    pub loss_bnd: f64,
}

pub const LOG_HEADER: &str = "step,lr,loss_total,loss_sal,loss_bnd";

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:.8},{:.8},{:.8}",
            self.step, self.lr, self.loss_total, self.loss_sal, self.loss_bnd
        )
    }
}

/// Seeded single-threaded trainer over an in-memory dataset.
///
/// Random draws come from one ChaCha8 stream: a shuffle at the start of each
/// epoch, then per sample the crop top, crop left and flip draws.
pub struct Trainer<T: Float> {
    model: Vst,
    params: ParamStore<T>,
    adam: Adam<T>,
    config: TrainConfig,
    pre: Preprocessor,
    resized: Vec<Sample<T>>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: u64,
}

impl<T: Float> Trainer<T> {
    /// Builds the model, initialises parameters from the model seed and
    /// resizes every sample once.
    pub fn new(
        model_config: &VstConfig,
        config: &TrainConfig,
        pre: Preprocessor,
        samples: &[Sample<T>],
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Vst::new(model_config)?;
        if samples.is_empty() {
            return Err(DataError::Config("no training samples".into()).into());
        }
        let [h, w] = model_config.input_hw;
        if (pre.crop_h, pre.crop_w) != (h, w) {
            return Err(ConfigError::new(format!(
                "crop {}x{} does not match model input {h}x{w}",
                pre.crop_h, pre.crop_w
            ))
            .into());
        }
        let rgbd = model_config.modality == crate::model::Modality::Rgbd;
        if rgbd && samples.iter().any(|s| s.depth.is_none()) {
            return Err(DataError::Config("rgbd training needs a depth map for every sample".into()).into());
        }
        let params = model.init_params();
        Ok(Trainer {
            adam: Adam::new(&params, config.adam),
            params,
            model,
            config: config.clone(),
            pre,
            resized: samples.iter().map(|s| pre.resize(s)).collect(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    pub fn model(&self) -> &Vst {
        &self.model
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.resized.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Gradient and loss of one preprocessed sample.
    fn sample_grads(&self, s: &Sample<T>) -> Result<(Vec<Tensor<T>>, f64, f64, f64), TrainError> {
        let g = self.model.grids();
        let targets = Targets::new(&s.mask, &s.boundary, &g.decoder[..3])?;
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let image = tape.constant(s.image.clone());
        let depth = s.depth.as_ref().map(|d| tape.constant(d.clone()));
        let out = self.model.forward(&bound, &image, depth.as_ref())?;
        let loss = total_loss(&out, &targets)?;
        let total = loss.total.value().item().as_f64();
        if !total.is_finite() {
            return Err(TrainError::NonFinite(format!("loss = {total}")));
        }
        let grads = tape.backward(&loss.total)?;
        Ok((bound.collect_grads(&grads), total, loss.saliency, loss.boundary))
    }

    /// Runs one optimisation step on the next batch.
    pub fn step(&mut self) -> Result<StepLog, TrainError> {
        let step = self.step;
        self.step_inner().map_err(|e| e.at(step))
    }

    fn step_inner(&mut self) -> Result<StepLog, TrainError> {
        let lr = self.config.lr(self.step);
        let bs = self.config.batch_size;
        let inv = T::from_f64(1.0 / bs as f64);
        let mut acc: Option<Vec<Tensor<T>>> = None;
        let (mut total, mut sal, mut bnd) = (0.0, 0.0, 0.0);
        for _ in 0..bs {
            let idx = self.next_index();
            let sample = self.pre.crop_flip(&self.resized[idx], Some(&mut self.rng));
            let (grads, t, s, b) = self.sample_grads(&sample)?;
            total += t;
            sal += s;
            bnd += b;
            match acc.as_mut() {
                None => acc = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.add_assign(g);
                    }
                }
            }
        }
        let mut grads = acc.expect("batch_size >= 1");
        for g in &mut grads {
            g.scale_in_place(inv);
        }
        self.adam.step(&mut self.params, &grads, lr)?;
        self.step += 1;
        let n = bs as f64;
        Ok(StepLog {
            step: self.step,
            lr,
            loss_total: total / n,
            loss_sal: sal / n,
            loss_bnd: bnd / n,
        })
    }
}

/// Files written by [`train_to_dir`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub log: Vec<StepLog>,
}

/// Extra checkpoint metadata recording the preprocessing resize.
pub fn checkpoint_meta(pre: &Preprocessor) -> BTreeMap<String, String> {
    BTreeMap::from([("data.resize".to_string(), pre.resize.to_string())])
}

/// Trains for `config.total_steps`, writing `train_log.csv`, periodic
/// checkpoints under `checkpoints/step_NNNNNN/` and the final checkpoint
/// under `final/`.
pub fn train_to_dir<T: Float>(
    model_config: &VstConfig,
    config: &TrainConfig,
    pre: Preprocessor,
    samples: &[Sample<T>],
    out_dir: &Path,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(model_config, config, pre, samples)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let log_path = out_dir.join("train_log.csv");
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(io(&log_path))?);
    writeln!(log_file, "{LOG_HEADER}").map_err(io(&log_path))?;
    let meta = checkpoint_meta(&pre);
    let mut log = Vec::with_capacity(config.total_steps as usize);
    while trainer.step_count() < config.total_steps {
        let row = trainer.step()?;
        writeln!(log_file, "{}", row.csv_row()).map_err(io(&log_path))?;
        on_step(&row);
        log.push(row);
        if config.checkpoint_every > 0 && row.step % config.checkpoint_every == 0 && row.step < config.total_steps {
            log_file.flush().map_err(io(&log_path))?;
            let dir = out_dir.join("checkpoints").join(format!("step_{:06}", row.step));
            save_checkpoint(&dir, model_config, trainer.params(), &meta)?;
        }
    }
    log_file.flush().map_err(io(&log_path))?;
    let final_checkpoint = out_dir.join("final");
    save_checkpoint(&final_checkpoint, model_config, trainer.params(), &meta)?;
    Ok(TrainOutcome {
        final_checkpoint,
        log_path,
        log,
    })
}

/// Loads every record of a manifest at native resolution.
pub fn load_dataset<T: Float>(manifest: &Manifest) -> Result<Vec<Sample<T>>, DataError> {
    manifest.records.iter().map(load_sample).collect()
}
