//! Joint training of enhancer and head through the detection loss.

mod adamw;
pub mod checkpoint;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use crate::dataset::Annotation;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::Image;
use crate::model::{Enhancer, Model};
use crate::net::{Bound, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// When false the enhancer is bypassed and only the head is trained.
    pub train_enhancer: bool,
    pub checkpoint: Option<PathBuf>,
    /// Save every this many steps; 0 saves only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamWConfig::default(),
            batch_size: 6,
            steps: 1000,
            seed: 0,
            train_enhancer: true,
            checkpoint: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    // Negated comparisons so NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(o.learning_rate.is_finite() && o.learning_rate >= 0.0) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return bad("eps must be positive and weight decay non-negative");
        }
        Ok(())
    }

    pub fn enhancer(&self) -> Enhancer {
        if self.train_enhancer {
            Enhancer::On
        } else {
            Enhancer::Bypassed
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Image,
    pub annotations: Vec<Annotation>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub state: OptimizerState<f32>,
    /// Batch-mean loss per step.
    pub losses: Vec<f64>,
}

/// Mean loss and mean gradients over `batch`. Parameters outside `trainable`
/// get `None`.
pub fn batch_gradients(
    model: &Model,
    params: &ParamStore<f32>,
    batch: &[&Sample],
    enhancer: Enhancer,
) -> Result<(f64, Vec<Option<Tensor<f32>>>)> {
    let trainable = |id| match enhancer {
        Enhancer::On => true,
        Enhancer::Bypassed => model.head.owns(id),
    };
    let mut grads: Vec<Option<Tensor<f32>>> = model
        .layout
        .ids()
        .map(|id| trainable(id).then(|| Tensor::zeros(params.get(id).shape())))
        .collect();
    let scale = 1.0 / batch.len() as f32;
    let mut total = 0.0;
    for s in batch {
        let mut g = Graph::new();
        let b = Bound::new(&mut g, params, trainable);
        let loss = model.loss(&mut g, &b, &s.image, &s.annotations, enhancer)?;
        let value = f64::from(g.value(loss).item()?);
        if !f64::is_finite(value) {
            return Err(Error::NonFinite("loss".into()));
        }
        total += value;
        let mut gr = g.backward(loss)?;
        for (id, acc) in model.layout.ids().zip(&mut grads) {
            if let Some(acc) = acc {
                acc.add_assign(&gr.take(b.var(id)).map(|v| v * scale));
            }
        }
    }
    Ok((total / batch.len() as f64, grads))
}

/// Trains from the initialization given by `cfg.seed`. `log` receives one
/// `step=<n> loss=<value>` line per step.
pub fn train(
    model: &Model,
    cfg: &TrainConfig,
    samples: &[Sample],
    mut log: impl FnMut(&str),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() && cfg.steps > 0 {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let mut params = model.init::<f32>(cfg.seed);
    let mut state = OptimizerState::new(&model.layout);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch: Vec<&Sample> = (0..cfg.batch_size)
            .map(|_| &samples[rng.random_range(0..samples.len())])
            .collect();
        let (loss, grads) =
            batch_gradients(model, &params, &batch, cfg.enhancer()).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
                other => other,
            })?;
        log(&format!("step={step} loss={loss:.6}"));
        losses.push(loss);
        adamw_step(&mut params, &grads, &mut state, &cfg.optimizer).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
            other => other,
        })?;
        if let Some(path) = &cfg.checkpoint {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                save_checkpoint(path, &params, &state)?;
            }
        }
    }
    if let Some(path) = &cfg.checkpoint {
        save_checkpoint(path, &params, &state)?;
    }
    Ok(TrainOutcome {
        params,
        state,
        losses,
    })
}
