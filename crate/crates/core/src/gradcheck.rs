//! Central finite-difference gradient checking in `f64`.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of every backward rule it is used to verify.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Finite-difference step `h` in `(f(x+h) - f(x-h)) / 2h`.
    pub step: f64,
    /// Coordinates sampled per input; `None` checks every coordinate.
    pub coords_per_input: Option<usize>,
    /// Magnitude below which errors are measured against this floor instead
    /// of the gradient itself.
    pub floor: f64,
    pub seed: u64,
    pub scale: ErrorScale,
}

/// What a coordinate's absolute error is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ErrorScale {
    /// `max(|analytic|, |numeric|, floor)` of the coordinate itself.
    #[default]
    Elementwise,
    /// The largest `|analytic|` over the whole input tensor. Coordinates whose gradient is orders of magnitude below
    /// their siblings are otherwise dominated by roundoff in the loss.
    PerTensor,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            coords_per_input: None,
            floor: 1e-6,
            seed: 0,
            scale: ErrorScale::Elementwise,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.value(loss).item()
}

impl GradCheck {
    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn per_tensor(mut self) -> Self {
        self.scale = ErrorScale::PerTensor;
        self
    }

    pub fn sampled(mut self, coords: usize, seed: u64) -> Self {
        self.coords_per_input = Some(coords);
        self.seed = seed;
        self
    }

    /// Compares `backward` against central differences of the scalar built by `f`.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let mut grads = g.backward(loss)?;
        let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.take(v)).collect();
        drop(g);

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradCheckReport::default();
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (input, tensor) in inputs.iter().enumerate() {
            let coords: Vec<usize> = match self.coords_per_input {
                Some(k) if k < tensor.len() => sample(&mut rng, tensor.len(), k).into_vec(),
                _ => (0..tensor.len()).collect(),
            };
            let mut checked = Vec::with_capacity(coords.len());
            for coord in coords {
                let orig = tensor.data()[coord];
                work[input].data_mut()[coord] = orig + self.step;
                let plus = evaluate(&work, &f)?;
                work[input].data_mut()[coord] = orig - self.step;
                let minus = evaluate(&work, &f)?;
                work[input].data_mut()[coord] = orig;

                let numeric = (plus - minus) / (2.0 * self.step);
                let a = analytic[input].data()[coord];
                if !numeric.is_finite() || !a.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient of input {input} coordinate {coord}"
                    )));
                }
                checked.push((coord, a, numeric));
            }
            let tensor_scale = analytic[input]
                .data()
                .iter()
                .map(|v| v.abs())
                .fold(self.floor, f64::max);
            for (coord, a, numeric) in checked {
                let rel = match self.scale {
                    ErrorScale::Elementwise => relative_error(a, numeric, self.floor),
                    ErrorScale::PerTensor => (a - numeric).abs() / tensor_scale,
                };
                report.checked += 1;
                if report.worst.is_none() || rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = Some(Mismatch {
                        input,
                        coord,
                        analytic: a,
                        numeric,
                        rel_error: rel,
                    });
                }
            }
        }
        Ok(report)
    }
}
