//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::net::{Layout, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter tensor, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(layout: &Layout) -> Self {
        let zeros = || {
            layout
                .specs()
                .iter()
                .map(|s| Tensor::zeros(s.shape))
                .collect()
        };
        OptimizerState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One update. Tensors whose gradient is `None` are left untouched, weight
/// decay included. A non-finite gradient aborts before anything changes.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients and {} moment tensors for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            let p = params.get(crate::net::ParamId::from_index(i));
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of {}",
                    params.name(crate::net::ParamId::from_index(i))
                )));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.learning_rate;
    for (i, (g, p)) in grads.iter().zip(params.tensors_mut()).enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j].as_f64();
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
            m[j] = T::lit(mj);
            v[j] = T::lit(vj);
            let (mh, vh) = (mj / c1, vj / c2);
            let wj = w.as_f64();
            *w = T::lit(wj - lr * mh / (vh.sqrt() + cfg.eps) - lr * cfg.weight_decay * wj);
        }
    }
    Ok(())
}
