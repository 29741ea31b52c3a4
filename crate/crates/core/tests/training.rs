mod common;

use common::corpora::{short_schedule, toy_corpus};
use ncrd::model::{ModelConfig, ModelParams};
use ncrd::trainer::{Split, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn train(seed: u64, steps: u64) -> Trainer {
    let params = ModelParams::init(&ModelConfig::micro(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut t = Trainer::new(params, toy_corpus(), short_schedule(4, steps, 1e-2), seed).unwrap();
    t.run(|_, _| {}).unwrap();
    t
}

fn train_losses(t: &Trainer) -> Vec<f64> {
    t.history.iter().filter(|r| r.split == Split::Train).map(|r| r.total).collect()
}

#[test]
fn loss_goes_down() {
    let t = train(1, 150);
    let l = train_losses(&t);
    assert_eq!(l.len(), 150);
    let head: f64 = l[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = l[l.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.8 * head, "{head} -> {tail}");
    assert!(t.history.iter().all(|r| r.total.is_finite() && r.grad_norm.is_finite()));
}

#[test]
fn same_seed_same_run() {
    let (a, b) = (train(2, 20), train(2, 20));
    assert_eq!(train_losses(&a), train_losses(&b));
    assert_ne!(train_losses(&a), train_losses(&train(3, 20)));
}
