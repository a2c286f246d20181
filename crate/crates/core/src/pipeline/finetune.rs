use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{chain_backward, chain_forward, run_pipeline, PipelineConfig, RunMode};
use crate::error::{Error, Result};
use crate::nn::{Adam, Optimizer};
use crate::rng::stream;
use crate::supernet::{LossFn, Sample, SearchModules};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOptions {
    pub steps: usize,
    pub lr: f32,
    pub batch: usize,
    /// Original-operator evaluation period; the best evaluated parameters
    /// are returned.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self { steps: 200, lr: 1e-2, batch: 4, eval_every: 20, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub config: PipelineConfig,
    /// Original-operator loss before any update.
    pub initial_loss: f64,
    /// Original-operator loss of the returned parameters.
    pub final_loss: f64,
    /// `(step, original-operator loss)` at every evaluation.
    pub evaluations: Vec<(usize, f64)>,
    /// Differentiable-path batch loss of every step.
    pub train_losses: Vec<f64>,
    pub skipped_steps: usize,
}

/// Mean loss of the pipeline run with the original operators.
pub fn original_loss(cfg: &PipelineConfig, modules: &SearchModules, data: &[Sample], loss: &dyn LossFn) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let losses: Vec<f64> = data
        .par_iter()
        .map(|(x, y)| {
            let out = run_pipeline(cfg, x, RunMode::Original, modules)?;
            Ok(loss.loss(&out.tensor, y)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// Optimises the parameters of the chosen modules with gradients taken
/// through the differentiable stand-ins. Module identity and order are
/// untouched. Returns the parameters with the lowest original-operator
/// loss seen at an evaluation, the starting point included.
pub fn finetune_parameters(
    cfg: &PipelineConfig,
    modules: &SearchModules,
    data: &[Sample],
    loss: &dyn LossFn,
    opts: &FinetuneOptions,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    for s in &cfg.steps {
        modules.check_available(s.module)?;
    }
    for (x, _) in data {
        x.expect_domain(cfg.input_domain()?, "finetune data")?;
    }
    let initial_loss = original_loss(cfg, modules, data, loss)?;
    let mut current = cfg.clone();
    let mut best = (cfg.clone(), initial_loss);
    let mut evaluations = vec![(0, initial_loss)];
    let mut train_losses = Vec::with_capacity(opts.steps);
    let mut skipped_steps = 0;

    let n_params: usize = cfg.steps.iter().map(|s| s.params_normalized.len()).sum();
    if n_params == 0 || opts.steps == 0 {
        return Ok(FinetuneOutcome {
            config: current,
            initial_loss,
            final_loss: initial_loss,
            evaluations,
            train_losses,
            skipped_steps,
        });
    }
    let mut adam = Adam::new(n_params);
    let mut rng = stream(opts.seed, 20);
    let size = opts.batch.clamp(1, data.len());
    let every = opts.eval_every.max(1);

    for t in 0..opts.steps {
        let idx = sample(&mut rng, data.len(), size).into_vec();
        let per_sample: Vec<(f64, Vec<Vec<f32>>)> = idx
            .par_iter()
            .map(|&i| {
                let (x, y) = &data[i];
                let pass = chain_forward(&current, modules, &x.tensor)?;
                let (l, g) = loss.loss(&pass.output, y)?;
                Ok((l, chain_backward(&current, modules, pass, &g)?))
            })
            .collect::<Result<_>>()?;
        let mut grad = vec![0.0f32; n_params];
        let mut batch_loss = 0.0;
        for (l, g) in &per_sample {
            batch_loss += l / size as f64;
            for (acc, v) in grad.iter_mut().zip(g.iter().flatten()) {
                *acc += v / size as f32;
            }
        }
        train_losses.push(batch_loss);
        if !batch_loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            log::warn!("non-finite fine-tuning gradient at step {t}; step skipped");
            skipped_steps += 1;
            continue;
        }
        let mut flat: Vec<f32> = current.steps.iter().flat_map(|s| s.params_normalized.iter().copied()).collect();
        adam.step(&mut flat, &grad, opts.lr);
        let mut it = flat.into_iter();
        for s in &mut current.steps {
            for p in &mut s.params_normalized {
                *p = it.next().expect("length").clamp(0.0, 1.0);
            }
        }
        current.refresh_actual();
        if (t + 1) % every == 0 || t + 1 == opts.steps {
            let l = original_loss(&current, modules, data, loss)?;
            evaluations.push((t + 1, l));
            if l < best.1 {
                best = (current.clone(), l);
            }
        }
    }
    Ok(FinetuneOutcome {
        config: best.0,
        initial_loss,
        final_loss: best.1,
        evaluations,
        train_losses,
        skipped_steps,
    })
}
