//! Supervised training, evaluation over a dataset, and inference helpers.

use std::sync::mpsc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::features::{normalize_image, ImagePair};
use crate::harness::config::RunConfig;
use crate::harness::dataset::StereoSample;
use crate::harness::metrics::{evaluate, MetricsReport, Region};
use crate::head::{total_loss, DisparityMap};
use crate::model::StereoNet;
use crate::nn::Module;
use crate::optim::{adam_step, AdamState};
use crate::tensor::{Real, Tensor};

const CROP_STREAM: u64 = 0xc0_7a11_5eed;

/// Where the next training crop comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropPlan {
    pub sample: usize,
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

/// Visits samples in order, one per step, and draws each crop's top-left
/// corner uniformly from a seeded stream.
pub struct CropSampler {
    rng: ChaCha8Rng,
    step: usize,
}

impl CropSampler {
    pub fn new(seed: u64) -> Self {
        CropSampler {
            rng: ChaCha8Rng::seed_from_u64(seed ^ CROP_STREAM),
            step: 0,
        }
    }

    pub fn next_plan(&mut self, dataset: &[StereoSample], crop_h: usize, crop_w: usize) -> CropPlan {
        let sample = self.step % dataset.len();
        self.step += 1;
        let s = &dataset[sample];
        let (h, w) = (crop_h.min(s.height()), crop_w.min(s.width()));
        CropPlan {
            sample,
            y: self.rng.gen_range(0..=s.height() - h),
            x: self.rng.gen_range(0..=s.width() - w),
            height: h,
            width: w,
        }
    }
}

/// Normalises both images of `sample` and converts them to `T`.
pub fn prepare_pair<T: Real>(sample: &StereoSample, mean: [f64; 3], std: [f64; 3]) -> Result<ImagePair<T>> {
    normalize_pair(&sample.left, &sample.right, mean, std)
}

pub fn normalize_pair<T: Real>(
    left: &Tensor<f32>,
    right: &Tensor<f32>,
    mean: [f64; 3],
    std: [f64; 3],
) -> Result<ImagePair<T>> {
    ImagePair::new(normalize_image(&left.cast(), mean, std)?, normalize_image(&right.cast(), mean, std)?)
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Total loss before each optimizer step.
    pub losses: Vec<f64>,
}

pub fn total_steps(config: &RunConfig, dataset_len: usize) -> usize {
    if config.steps > 0 {
        config.steps
    } else {
        config.epochs * dataset_len
    }
}

/// Trains from the seeded initialisation and returns the final weights.
pub fn train<T: Real>(config: &RunConfig, dataset: &[StereoSample]) -> Result<TrainOutcome> {
    train_with::<T>(config, dataset, |step, loss| {
        if config.log_every > 0 && (step % config.log_every == 0) {
            log::info!("step {step} loss {loss:.6}");
        }
    })
}

/// As [`train`], reporting `(step, loss)` after every step.
pub fn train_with<T: Real>(
    config: &RunConfig,
    dataset: &[StereoSample],
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    let mut model = StereoNet::<T>::new(config.model_config(), config.seed)?;
    let steps = total_steps(config, dataset.len());
    let mut sampler = CropSampler::new(config.seed);
    let mut next_crop = move || {
        let plan = sampler.next_plan(dataset, config.crop_height, config.crop_width);
        dataset[plan.sample].crop(plan.y, plan.x, plan.height, plan.width)
    };

    let mut losses = Vec::with_capacity(steps);
    let mut state = AdamState::new(config.adam());
    let mut run_step = |step: usize, crop: StereoSample| -> Result<()> {
        let loss = optimizer_step(&mut model, &mut state, config, &crop, step)?;
        on_step(step, loss);
        losses.push(loss);
        Ok(())
    };

    if config.prefetch == 0 {
        for step in 0..steps {
            run_step(step, next_crop()?)?;
        }
    } else {
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel(config.prefetch);
            scope.spawn(move || {
                for _ in 0..steps {
                    if tx.send(next_crop()).is_err() {
                        break;
                    }
                }
            });
            for (step, crop) in rx.iter().enumerate() {
                run_step(step, crop?)?;
            }
            Ok(())
        })?;
    }
    Ok(TrainOutcome {
        checkpoint: model.to_checkpoint(),
        losses,
    })
}

/// Forward, loss, backward and one Adam update on a single crop. Returns
/// the loss measured before the update.
pub fn optimizer_step<T: Real>(
    model: &mut StereoNet<T>,
    state: &mut AdamState<T>,
    config: &RunConfig,
    crop: &StereoSample,
    step: usize,
) -> Result<f64> {
    let pair = prepare_pair::<T>(crop, config.norm_mean, config.norm_std)?;
    let gt = crop.ground_truth_within::<T>(config.d_max)?;
    let pred = model.forward(&pair)?;
    let loss = total_loss(&pred.intermediate, &pred.output, &gt, config.loss_weights())?;
    let value = loss.value().data()[0].to_f64();
    if !value.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!("loss is {value} on {}", crop.provenance),
        });
    }
    let grads = loss.backward()?;
    let owned: Vec<Option<Tensor<T>>> = model.params().iter().map(|p| grads.get(p.var()).cloned()).collect();
    drop(grads);
    drop(loss);
    drop(pred);
    if let Some((i, _)) = owned
        .iter()
        .enumerate()
        .find(|(_, g)| g.as_ref().is_some_and(|g| !g.all_finite()))
    {
        return Err(Error::Divergence {
            step,
            detail: format!("non-finite gradient for {} at loss {value}", model.params()[i].name()),
        });
    }
    let refs: Vec<Option<&Tensor<T>>> = owned.iter().map(Option::as_ref).collect();
    adam_step(&mut model.params_mut(), &refs, state)?;
    Ok(value)
}

/// Final-output disparity for one sample.
pub fn infer_sample<T: Real>(
    model: &StereoNet<T>,
    sample: &StereoSample,
    config: &RunConfig,
    streaming: bool,
) -> Result<DisparityMap<T>> {
    model.infer(&prepare_pair(sample, config.norm_mean, config.norm_std)?, streaming)
}

#[derive(Clone, Debug)]
pub struct SampleEvaluation {
    pub name: String,
    pub all: MetricsReport,
    /// Present when the sample carries an occlusion mask.
    pub noc: Option<MetricsReport>,
}

fn evaluate_one<T: Real>(
    model: &StereoNet<T>,
    sample: &StereoSample,
    config: &RunConfig,
    streaming: bool,
) -> Result<SampleEvaluation> {
    let pred = infer_sample(model, sample, config, streaming)?;
    let gt = sample.ground_truth_within::<T>(model.config().d_max)?;
    let occ = sample.occlusion.as_deref();
    Ok(SampleEvaluation {
        name: sample.provenance.clone(),
        all: evaluate(&pred.values, &gt, None, Region::All)?,
        noc: occ.map(|o| evaluate(&pred.values, &gt, Some(o), Region::Noc)).transpose()?,
    })
}

pub fn evaluate_model<T: Real>(
    model: &StereoNet<T>,
    samples: &[StereoSample],
    config: &RunConfig,
    streaming: bool,
) -> Result<Vec<SampleEvaluation>> {
    samples.iter().map(|s| evaluate_one(model, s, config, streaming)).collect()
}

/// Evaluates `samples` with `workers` threads, each running its own copy of
/// the network restored from `checkpoint`. Results keep the input order.
pub fn evaluate_checkpoint<T: Real>(
    checkpoint: &Checkpoint,
    samples: &[StereoSample],
    config: &RunConfig,
    streaming: bool,
    workers: usize,
) -> Result<Vec<SampleEvaluation>> {
    let workers = workers.clamp(1, samples.len().max(1));
    if workers == 1 {
        return evaluate_model(&StereoNet::<T>::from_checkpoint(checkpoint)?, samples, config, streaming);
    }
    let parts: Vec<Result<Vec<(usize, SampleEvaluation)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|k| {
                scope.spawn(move || -> Result<Vec<(usize, SampleEvaluation)>> {
                    let model = StereoNet::<T>::from_checkpoint(checkpoint)?;
                    (k..samples.len())
                        .step_by(workers)
                        .map(|i| Ok((i, evaluate_one(&model, &samples[i], config, streaming)?)))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut all = Vec::with_capacity(samples.len());
    for p in parts {
        all.extend(p?);
    }
    all.sort_by_key(|(i, _)| *i);
    Ok(all.into_iter().map(|(_, e)| e).collect())
}
