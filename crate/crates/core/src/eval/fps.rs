//! Wall-clock throughput of a forward pass.

use std::time::Instant;

use crate::error::{Error, Result};

/// Runs with fewer timed iterations than this are flagged.
pub const LOW_CONFIDENCE_ITERS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct FpsReport {
    /// Frames per second of each repetition.
    pub reps: Vec<f64>,
    pub mean_fps: f64,
    /// Population standard deviation over the mean.
    pub cv: f64,
    pub iters: usize,
    pub warmup: usize,
    pub low_confidence: bool,
}

impl FpsReport {
    pub fn to_key_value(&self) -> String {
        format!(
            "fps={:.3}\ncv={:.4}\nreps={}\niters={}\nwarmup={}\nlow_confidence={}\n",
            self.mean_fps,
            self.cv,
            self.reps.len(),
            self.iters,
            self.warmup,
            self.low_confidence
        )
    }
}

/// Times `iters` calls of `step` per repetition, on the calling thread,
/// after `warmup` untimed calls.
pub fn fps_bench(
    warmup: usize,
    iters: usize,
    repetitions: usize,
    mut step: impl FnMut() -> Result<()>,
) -> Result<FpsReport> {
    if iters == 0 || repetitions == 0 {
        return Err(Error::InvalidArgument(
            "fps_bench needs at least one iteration and one repetition".into(),
        ));
    }
    for _ in 0..warmup {
        step()?;
    }
    let mut reps = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for _ in 0..iters {
            step()?;
        }
        let secs = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        reps.push(iters as f64 / secs);
    }
    let n = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / n;
    let var = reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(FpsReport {
        mean_fps: mean,
        cv: var.sqrt() / mean,
        reps,
        iters,
        warmup,
        low_confidence: iters < LOW_CONFIDENCE_ITERS,
    })
}
