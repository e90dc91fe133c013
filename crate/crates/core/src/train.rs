//! Training loops. Every loop takes its random streams from a named prefix
//! (`{prefix}/shuffle`, `{prefix}/dropout`, ...) so two loops sharing a
//! prefix see the same data order and dropout masks.

use quarts_tensor::{AdamState, GradStore, LrSchedule, ParamStore, RngStreams, Tape};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{weighted_ce, Classifier};
use crate::dssm::Dssm;
use crate::e2e::{sample_switch, switched_loss, ExampleRngs};
use crate::error::{QuartsError, Result};
use crate::text::{batches, Example, TripleExample};
use crate::ved::Ved;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-example loss over the epoch.
    pub loss: f64,
    pub examples: usize,
    /// Examples routed through the generated path.
    pub s1: usize,
    /// Examples with `y = 0`, the ones eligible for the generated path.
    pub negatives: usize,
}

impl EpochStats {
    pub fn s1_fraction(&self) -> f64 {
        if self.examples == 0 {
            0.0
        } else {
            self.s1 as f64 / self.examples as f64
        }
    }
}

pub struct LoopRngs {
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub switch: ChaCha8Rng,
    pub latent: ChaCha8Rng,
}

impl LoopRngs {
    pub fn new(streams: &RngStreams, prefix: &str) -> Self {
        Self {
            shuffle: streams.named(&format!("{prefix}/shuffle")),
            dropout: streams.named(&format!("{prefix}/dropout")),
            switch: streams.named(&format!("{prefix}/switch")),
            latent: streams.named(&format!("{prefix}/latent")),
        }
    }
}

fn ensure_clean(grads: &GradStore) -> Result<()> {
    if grads.is_clean() {
        Ok(())
    } else {
        Err(QuartsError::Contract("gradient buffer not reset before a new batch".into()))
    }
}

fn check_finite(loss: f64, phase: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(QuartsError::Numeric(format!("{phase}: non-finite loss {loss}")))
    }
}

/// Classifier-only training with the weighted cross-entropy. `on_epoch`
/// runs after every epoch with the current parameters.
pub fn train_classifier(
    store: &mut ParamStore,
    clf: &Classifier,
    data: &[Example],
    cfg: &LoopConfig,
    rngs: &mut LoopRngs,
    mut on_epoch: impl FnMut(&EpochStats, &ParamStore) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    let mut adam = AdamState::new(store, cfg.schedule.initial);
    let mut grads = GradStore::new(store);
    let mut tape = Tape::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.schedule.lr_at(epoch);
        let mut total = 0.0;
        for batch in batches(data, cfg.batch_size, Some(&mut rngs.shuffle)) {
            ensure_clean(&grads)?;
            let scale = 1.0 / batch.len() as f64;
            for i in 0..batch.len() {
                tape.clear();
                let (logit, _) = clf.logit(&mut tape, store, batch.item(i), batch.query(i), Some(&mut rngs.dropout))?;
                let loss = weighted_ce(&mut tape, logit, batch.labels[i], cfg.beta);
                total += tape.value(loss).item();
                let scaled = tape.scale(loss, scale);
                tape.backward_into(scaled, &mut grads)?;
            }
            tape.clear();
            adam.step(store, &grads);
            grads.zero();
        }
        let stats = EpochStats {
            epoch,
            lr: adam.lr,
            loss: total / data.len().max(1) as f64,
            examples: data.len(),
            s1: 0,
            negatives: data.iter().filter(|e| e.label == 0).count(),
        };
        check_finite(stats.loss, "classifier")?;
        on_epoch(&stats, store)?;
        history.push(stats);
    }
    Ok(history)
}

/// End-to-end training: per example a fresh switch draw decides between
/// the real pair and the generated representation. Generator parameters
/// update too unless frozen in `store`.
#[allow(clippy::too_many_arguments)]
pub fn train_e2e(
    store: &mut ParamStore,
    clf: &Classifier,
    ved: Option<&Ved>,
    data: &[Example],
    cfg: &LoopConfig,
    p: f64,
    rngs: &mut LoopRngs,
    mut on_epoch: impl FnMut(&EpochStats, &ParamStore) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    if !(0.0..1.0).contains(&p) {
        return Err(QuartsError::Config(format!("switch probability p = {p} must lie in [0, 1)")));
    }
    if p > 0.0 && ved.is_none() {
        return Err(QuartsError::pipeline("train-e2e", "p > 0 needs a pretrained generator"));
    }
    let mut adam = AdamState::new(store, cfg.schedule.initial);
    let mut grads = GradStore::new(store);
    let mut tape = Tape::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.schedule.lr_at(epoch);
        let mut total = 0.0;
        let mut s1 = 0;
        for batch in batches(data, cfg.batch_size, Some(&mut rngs.shuffle)) {
            ensure_clean(&grads)?;
            let scale = 1.0 / batch.len() as f64;
            for i in 0..batch.len() {
                let y = batch.labels[i];
                let draw = sample_switch(y, p, &mut rngs.switch);
                s1 += draw.s as usize;
                tape.clear();
                let rngs_i = ExampleRngs {
                    dropout: Some(&mut rngs.dropout),
                    latent: Some(&mut rngs.latent),
                };
                let loss = switched_loss(clf, ved, &mut tape, store, batch.item(i), batch.query(i), y, draw.s, cfg.beta, rngs_i)?;
                total += tape.value(loss).item();
                let scaled = tape.scale(loss, scale);
                tape.backward_into(scaled, &mut grads)?;
            }
            tape.clear();
            adam.step(store, &grads);
            grads.zero();
        }
        let stats = EpochStats {
            epoch,
            lr: adam.lr,
            loss: total / data.len().max(1) as f64,
            examples: data.len(),
            s1,
            negatives: data.iter().filter(|e| e.label == 0).count(),
        };
        check_finite(stats.loss, "train-e2e")?;
        on_epoch(&stats, store)?;
        history.push(stats);
    }
    Ok(history)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VedEpochStats {
    pub epoch: usize,
    pub kl_weight: f64,
    /// Mean of `NLL + λ·KL`.
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
}

/// KL weight rising linearly from 0 to 1 over `anneal_epochs`, per batch.
pub fn kl_weight(epoch: usize, batch: usize, batches: usize, anneal_epochs: usize) -> f64 {
    if anneal_epochs == 0 {
        return 1.0;
    }
    let progress = epoch as f64 + batch as f64 / batches.max(1) as f64;
    (progress / anneal_epochs as f64).min(1.0)
}

/// Generator pretraining on triples. The caller decides what is frozen
/// (normally every `clf.*` parameter).
#[allow(clippy::too_many_arguments)]
pub fn train_ved(
    store: &mut ParamStore,
    clf: &Classifier,
    ved: &Ved,
    triples: &[TripleExample],
    cfg: &LoopConfig,
    anneal_epochs: usize,
    rngs: &mut LoopRngs,
    mut on_epoch: impl FnMut(&VedEpochStats, &ParamStore) -> Result<()>,
) -> Result<Vec<VedEpochStats>> {
    use rand::seq::SliceRandom;
    let mut adam = AdamState::new(store, cfg.schedule.initial);
    let mut grads = GradStore::new(store);
    let mut tape = Tape::new();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let n_batches = triples.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.schedule.lr_at(epoch);
        order.shuffle(&mut rngs.shuffle);
        let (mut loss_sum, mut nll_sum, mut kl_sum) = (0.0, 0.0, 0.0);
        let mut lambda = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            ensure_clean(&grads)?;
            lambda = kl_weight(epoch, b, n_batches, anneal_epochs);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let t = &triples[i];
                tape.clear();
                let (loss, nll, kl) = ved.loss(
                    clf,
                    &mut tape,
                    store,
                    &t.item_ids,
                    &t.matched_query_ids,
                    &t.mismatched_query_ids,
                    lambda,
                    Some(&mut rngs.latent),
                )?;
                loss_sum += tape.value(loss).item();
                nll_sum += tape.value(nll).item();
                kl_sum += tape.value(kl).item();
                let scaled = tape.scale(loss, scale);
                tape.backward_into(scaled, &mut grads)?;
            }
            tape.clear();
            adam.step(store, &grads);
            grads.zero();
        }
        let n = triples.len().max(1) as f64;
        let stats = VedEpochStats {
            epoch,
            kl_weight: lambda,
            loss: loss_sum / n,
            nll: nll_sum / n,
            kl: kl_sum / n,
        };
        check_finite(stats.loss, "pretrain-ved")?;
        on_epoch(&stats, store)?;
        history.push(stats);
    }
    Ok(history)
}

/// Dense-baseline training with the same loss.
pub fn train_dssm(
    store: &mut ParamStore,
    dssm: &Dssm,
    data: &[Example],
    cfg: &LoopConfig,
    rngs: &mut LoopRngs,
) -> Result<Vec<EpochStats>> {
    let mut adam = AdamState::new(store, cfg.schedule.initial);
    let mut grads = GradStore::new(store);
    let mut tape = Tape::new();
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.schedule.lr_at(epoch);
        let mut total = 0.0;
        for batch in batches(data, cfg.batch_size, Some(&mut rngs.shuffle)) {
            ensure_clean(&grads)?;
            let scale = 1.0 / batch.len() as f64;
            for i in 0..batch.len() {
                tape.clear();
                let logit = dssm.logit(&mut tape, store, batch.item(i), batch.query(i))?;
                let loss = weighted_ce(&mut tape, logit, batch.labels[i], cfg.beta);
                total += tape.value(loss).item();
                let scaled = tape.scale(loss, scale);
                tape.backward_into(scaled, &mut grads)?;
            }
            tape.clear();
            adam.step(store, &grads);
            grads.zero();
        }
        let stats = EpochStats {
            epoch,
            lr: adam.lr,
            loss: total / data.len().max(1) as f64,
            examples: data.len(),
            s1: 0,
            negatives: data.iter().filter(|e| e.label == 0).count(),
        };
        check_finite(stats.loss, "train-baseline")?;
        history.push(stats);
    }
    Ok(history)
}

/// Eval-mode classifier probabilities.
pub fn predict(clf: &Classifier, store: &ParamStore, data: &[Example]) -> Result<Vec<f64>> {
    data.iter()
        .map(|e| clf.probability(store, &e.item_ids, &e.query_ids))
        .collect()
}

pub fn predict_dssm(dssm: &Dssm, store: &ParamStore, data: &[Example]) -> Result<Vec<f64>> {
    data.iter()
        .map(|e| dssm.probability(store, &e.item_ids, &e.query_ids))
        .collect()
}
