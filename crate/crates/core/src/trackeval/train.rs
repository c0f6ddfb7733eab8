use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{dataset_mean, PairSampler, SequenceRecord, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::network::{PatchPair, TrackerModel};
use crate::numerics::{adam_step, l1_loss, Mode, OptimConfig, Tensor};
use crate::parallel::Execution;
use crate::seeds::{derive_seed, SeedPurpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Overrides the per-epoch step count `pairs / batch_size` when set.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            steps_per_epoch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: usize,
    pub epoch_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    /// Batch loss at every step, in order.
    pub step_loss: Vec<f64>,
    pub mean_rgb: [f64; 3],
}

/// Progress callback payload.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Offline training: each step samples a batch of successive-frame pairs,
/// runs a train-mode forward, takes the L1 loss against the encoded ground
/// truth, backpropagates and applies one Adam update. Sets the model's input
/// mean to the split's dataset mean first.
pub fn train(
    model: &mut TrackerModel,
    split: &[SequenceRecord],
    optim: &OptimConfig,
    config: &TrainConfig,
    exec: Execution,
    mut progress: impl FnMut(StepInfo),
) -> Result<TrainReport> {
    if split.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if config.batch_size < 1 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mean = dataset_mean(split)?;
    model.set_mean_rgb(mean);
    let sampler = PairSampler::new(split, mean, model.input_size())?;
    let steps_per_epoch = config
        .steps_per_epoch
        .unwrap_or(sampler.pair_count() / config.batch_size)
        .max(1);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SeedPurpose::Sampling));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SeedPurpose::Dropout));

    let mut report = TrainReport {
        seed: config.seed,
        steps: 0,
        epoch_loss: Vec::with_capacity(config.epochs),
        epoch_seconds: Vec::with_capacity(config.epochs),
        step_loss: Vec::with_capacity(config.epochs * steps_per_epoch),
        mean_rgb: mean,
    };
    model.zero_grad();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        for _ in 0..steps_per_epoch {
            let step = report.steps;
            let batch = sampler.sample(split, config.batch_size, &mut sample_rng, exec)?;
            let inputs: Vec<PatchPair<'_>> = batch
                .iter()
                .map(|p| PatchPair {
                    prev: Some(&p.prev_patch.pixels),
                    curr: &p.curr_patch.pixels,
                })
                .collect();
            let diverged = |e: Error| if e.is_numeric() { Error::Diverged { step, loss: f64::NAN } } else { e };
            let (outputs, trace) = model
                .forward_batch(&inputs, Mode::Train, &mut dropout_rng, exec)
                .map_err(diverged)?;
            let b = outputs.len();
            let pred = Tensor::new(vec![b, 3], outputs.iter().flatten().copied().collect())?;
            let target = Tensor::new(vec![b, 3], batch.iter().flat_map(|p| p.target).collect())?;
            let (loss, grad) = l1_loss(&pred, &target)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            let grad_outputs: Vec<[f64; 3]> = grad.chunks_exact(3).map(|g| [g[0], g[1], g[2]]).collect();
            let grads = model.backward_batch(&trace, &grad_outputs, exec).map_err(diverged)?;
            drop(trace);
            model.accumulate(&grads);
            adam_step(model.params_mut(), optim);
            if model.params().iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { step, loss });
            }
            total += loss;
            report.step_loss.push(loss);
            report.steps += 1;
            progress(StepInfo { epoch, step, loss });
        }
        report.epoch_loss.push(total / steps_per_epoch as f64);
        report.epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(report)
}
