//! Full training loops: supervised source training and adaptation.

use rand::seq::SliceRandom;

use super::config::AdaptConfig;
use super::loss::masked_ce;
use super::step::{adapt_step, StepReport};
use crate::field::Mask;
use crate::model::{
    adam_step, backprop, forward, init_params, AdamConfig, AdamState, Checkpoint, CheckpointMeta, ForwardMode,
    Gradients, ModelParams,
};
use crate::synthdata::Dataset;
use crate::{rng, Error, Result};

/// Batches of sample indices for one epoch, shuffled by a keyed stream.
pub fn epoch_batches(seed: u64, purpose: &str, epoch: usize, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, purpose, epoch as u64, 0));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Supervised cross-entropy training of a freshly initialized network.
pub fn train_source(train: &Dataset, cfg: &AdaptConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("source dataset"));
    }
    let mut params = init_params(cfg.seed, train.channels(), 1)?;
    let mut adam = AdamState::new(&params);
    let opt = AdamConfig::with_lr(cfg.source.lr);
    let mut step = 0u64;
    for epoch in 0..cfg.source.epochs {
        for batch in epoch_batches(cfg.seed, "source-shuffle", epoch, train.len(), cfg.source.batch_size) {
            let mut grads = Gradients::zeros(params.arch());
            for (slot, &idx) in batch.iter().enumerate() {
                let s = &train.samples[idx];
                let seed = rng::derive(cfg.seed, "source-dropout", step, slot as u64);
                let trace = forward(&params, &s.image, ForwardMode::Stochastic { seed, rate: cfg.dropout_rate })?;
                let (h, w) = s.label.dims();
                let (_, d) = masked_ce(&trace.prob_field()?, &s.label, &Mask::filled(h, w, true)?)?;
                grads.add_scaled(&backprop(&params, &trace, &d)?, 1.0)?;
            }
            adam_step(&mut params, &grads, &mut adam, &opt)?;
            step += 1;
        }
    }
    let meta = CheckpointMeta { seed: cfg.seed, step, config_hash: cfg.hash(), adam_step: None };
    Ok(Checkpoint::new(params, meta))
}

/// Adapted student checkpoint, final teacher, and one report per step.
#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub student: Checkpoint,
    pub teacher: ModelParams,
    pub reports: Vec<StepReport>,
}

/// Teacher and student both start from the source weights; the student
/// gets a fresh Adam state.
pub fn adapt_run(source: &Checkpoint, target: &Dataset, cfg: &AdaptConfig) -> Result<AdaptOutcome> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::Empty("target dataset"));
    }
    let mut student = source.params.clone();
    let mut teacher = source.params.clone();
    let mut adam = AdamState::new(&student);
    let per_epoch = target.len().div_ceil(cfg.batch_size);
    let schedule_len = (cfg.epochs * per_epoch).saturating_sub(1);
    let mut reports = Vec::with_capacity(cfg.epochs * per_epoch);
    for epoch in 0..cfg.epochs {
        for batch in epoch_batches(cfg.seed, "shuffle", epoch, target.len(), cfg.batch_size) {
            let images: Vec<_> = batch.iter().map(|&i| target.samples[i].image.clone()).collect();
            let step = reports.len();
            let r = adapt_step(&mut student, &mut adam, &mut teacher, &images, step, schedule_len, cfg)?;
            if ![r.w_te, r.w_st, r.loss_te, r.loss_st, r.loss_div, r.loss_total].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidValue(format!("non-finite report at step {step}")));
            }
            reports.push(r);
        }
    }
    let meta = CheckpointMeta {
        seed: cfg.seed,
        step: reports.len() as u64,
        config_hash: cfg.hash(),
        adam_step: Some(adam.step),
    };
    let student = Checkpoint { params: student, adam: Some(adam), meta };
    Ok(AdaptOutcome { student, teacher, reports })
}
