mod common;

use common::*;
use quarts_core::classifier::Classifier;
use quarts_core::e2e::sample_switch;
use quarts_core::text::{batches, Example};
use quarts_core::train::{train_classifier, train_e2e, train_ved, EpochStats, LoopConfig, LoopRngs};
use quarts_tensor::{LrSchedule, ParamStore, RngStreams};

fn cfg(epochs: usize, batch_size: usize) -> LoopConfig {
    LoopConfig {
        epochs,
        batch_size,
        schedule: LrSchedule::constant(1e-2),
        beta: 5.0,
    }
}

/// Classifier parameters by name, as bit patterns.
type Snapshot = Vec<(String, Vec<u64>)>;

fn clf_params(store: &ParamStore) -> Snapshot {
    store
        .iter()
        .filter(|(_, name, _)| name.starts_with(Classifier::PREFIX))
        .map(|(_, name, t)| (name.to_string(), t.data().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

/// Switch count a training run must report, replayed from the same streams.
fn replay_s1(data: &[Example], batch_size: usize, epochs: usize, p: f64, seed: u64, prefix: &str) -> usize {
    let mut rngs = LoopRngs::new(&RngStreams::new(seed), prefix);
    let mut s1 = 0;
    for _ in 0..epochs {
        for b in batches(data, batch_size, Some(&mut rngs.shuffle)) {
            for &y in &b.labels {
                s1 += sample_switch(y, p, &mut rngs.switch).s as usize;
            }
        }
    }
    s1
}

#[test]
fn switch_fraction_is_p_times_negative_share() {
    let data = toy_data(3, 2000, 10_000, 100);
    let labels: Vec<u8> = data.annotated.iter().map(|e| e.label).collect();
    let n = labels.len() as f64;
    let q = labels.iter().filter(|&&y| y == 0).count() as f64 / n;
    let mut rngs = LoopRngs::new(&RngStreams::new(3), "e2e");
    for p in [0.1, 0.3, 0.6] {
        let mut s1 = 0usize;
        for &y in &labels {
            let d = sample_switch(y, p, &mut rngs.switch);
            if y == 1 {
                assert_eq!(d.s, 0);
            }
            s1 += d.s as usize;
        }
        let want = p * q;
        let se = (want * (1.0 - want) / n).sqrt();
        let got = s1 as f64 / n;
        assert!((got - want).abs() <= 3.0 * se, "p={p}: {got} vs {want} ± {se}");
    }
}

#[test]
fn training_reports_the_replayed_switch_count() {
    let data = toy_data(4, 150, 300, 100);
    let (mut store, clf, ved) = toy_models(&data, 6, 4);
    let stats = train_e2e(&mut store, &clf, Some(&ved), &data.annotated, &cfg(2, 16), 0.3, &mut LoopRngs::new(&RngStreams::new(4), "e2e"), |_, _| Ok(())).unwrap();
    let s1: usize = stats.iter().map(|s| s.s1).sum();
    assert!(s1 > 0);
    assert_eq!(s1, replay_s1(&data.annotated, 16, 2, 0.3, 4, "e2e"));
}

#[test]
fn all_positive_data_never_switches() {
    let data = toy_data(5, 150, 300, 100);
    let positives: Vec<Example> = data.annotated.iter().filter(|e| e.label == 1).cloned().collect();
    assert!(!positives.is_empty());
    let (mut store, clf, ved) = toy_models(&data, 6, 5);
    let stats = train_e2e(&mut store, &clf, Some(&ved), &positives, &cfg(2, 8), 0.9, &mut LoopRngs::new(&RngStreams::new(5), "e2e"), |_, _| Ok(())).unwrap();
    assert!(stats.iter().all(|s| s.s1 == 0 && s.negatives == 0));
}

#[test]
fn p_zero_reduces_to_classifier_training_bitwise() {
    let data = toy_data(6, 150, 300, 100);
    let (init, clf, ved) = toy_models(&data, 6, 6);
    let streams = RngStreams::new(6);

    let mut a = init.clone();
    let mut a_epochs: Vec<(EpochStats, Snapshot)> = Vec::new();
    train_classifier(&mut a, &clf, &data.annotated, &cfg(3, 16), &mut LoopRngs::new(&streams, "e2e"), |s, st| {
        a_epochs.push((*s, clf_params(st)));
        Ok(())
    })
    .unwrap();

    let mut b = init.clone();
    b.set_frozen_prefix("ved.", true);
    let mut b_epochs = Vec::new();
    train_e2e(&mut b, &clf, Some(&ved), &data.annotated, &cfg(3, 16), 0.0, &mut LoopRngs::new(&streams, "e2e"), |s, st| {
        b_epochs.push((*s, clf_params(st)));
        Ok(())
    })
    .unwrap();

    assert_eq!(a_epochs.len(), 3);
    for ((sa, pa), (sb, pb)) in a_epochs.iter().zip(&b_epochs) {
        assert_eq!(sa.loss.to_bits(), sb.loss.to_bits(), "epoch {}", sa.epoch);
        assert_eq!(sb.s1, 0);
        assert_eq!(pa, pb, "epoch {}", sa.epoch);
    }
    assert_ne!(clf_params(&init), clf_params(&a));
}

#[test]
fn p_zero_needs_no_generator_and_p_one_is_rejected() {
    let data = toy_data(7, 150, 200, 100);
    let (mut store, clf, _) = toy_models(&data, 4, 7);
    let mut rngs = LoopRngs::new(&RngStreams::new(7), "e2e");
    assert!(train_e2e(&mut store, &clf, None, &data.annotated, &cfg(1, 16), 0.0, &mut rngs, |_, _| Ok(())).is_ok());
    assert!(train_e2e(&mut store, &clf, None, &data.annotated, &cfg(1, 16), 0.3, &mut rngs, |_, _| Ok(())).is_err());
    assert!(train_e2e(&mut store, &clf, None, &data.annotated, &cfg(1, 16), 1.0, &mut rngs, |_, _| Ok(())).is_err());
}

#[test]
fn generator_loss_decreases_and_classifier_stays_frozen() {
    let data = toy_data(8, 150, 600, 100);
    let triples: Vec<_> = data.triples.iter().take(50).cloned().collect();
    assert_eq!(triples.len(), 50);
    let (mut store, clf, ved) = toy_models(&data, 8, 8);
    let before = clf_params(&store);
    store.set_frozen_prefix(Classifier::PREFIX, true);
    let stats = train_ved(&mut store, &clf, &ved, &triples, &cfg(5, 10), 5, &mut LoopRngs::new(&RngStreams::new(8), "ved"), |_, _| Ok(())).unwrap();
    let losses: Vec<f64> = stats.iter().map(|s| s.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert!(stats.iter().all(|s| s.kl >= 0.0));
    assert_eq!(before, clf_params(&store));
}
