use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{record_sequence, sequence_nll};
use super::masks::PermutationMask;
use super::optim::{adamw_step, clip_gradients, AdamWConfig, OptimizerState};
use super::tape::{Grads, Tape};
use crate::data::{augment_stream, AugmentConfig};
use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::model::graph::Graph;
use crate::model::{ModelConfig, ModelParams};

/// Upper bound on the number of gradient accumulators per batch. Items are
/// assigned to chunks independently of the thread count, so the reduction
/// order and hence the result are fixed for a given seed.
const GRAD_CHUNKS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub initial_batch_length: usize,
    pub length_increment_per_epoch: usize,
    pub grad_clip_norm: f64,
    pub total_event_budget: u64,
    /// `(events seen, batch size)` thresholds, applied in order.
    pub batch_size_escalation: Vec<(u64, usize)>,
    pub validation_fraction: f64,
    pub max_steps: Option<u64>,
    pub max_epochs: Option<u64>,
    pub optimizer: AdamWConfig,
    /// Cosine-anneal the learning rate to this value over `max_steps`.
    /// Constant when absent.
    pub final_lr: Option<f64>,
    /// Augment each crop on the fly.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch_size: 32,
            initial_batch_length: 32,
            length_increment_per_epoch: 1,
            grad_clip_norm: 1.0,
            total_event_budget: 20_000_000,
            batch_size_escalation: vec![(10_000_000_000, 64), (15_000_000_000, 128)],
            validation_fraction: 0.05,
            max_steps: None,
            max_epochs: None,
            optimizer: AdamWConfig::default(),
            final_lr: None,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train schedule: {what}")));
        if self.batch_size == 0 || self.initial_batch_length == 0 {
            return bad("batch size and length must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.batch_size_escalation.iter().any(|(_, b)| *b == 0) {
            return bad("escalated batch sizes must be positive");
        }
        if let Some(lr) = self.final_lr {
            if !(lr >= 0.0) || self.max_steps.is_none() {
                return bad("final_lr needs max_steps and must be non-negative");
            }
        }
        Ok(())
    }

    pub fn batch_length(&self, epoch: u64) -> usize {
        self.initial_batch_length + self.length_increment_per_epoch * epoch as usize
    }

    /// Learning rate for the update made at `step` (counting from 0).
    pub fn lr_at(&self, step: u64) -> f64 {
        let base = self.optimizer.lr;
        match (self.final_lr, self.max_steps) {
            (Some(end), Some(n)) if n > 1 => {
                let f = (step.min(n - 1) as f64) / (n - 1) as f64;
                end + (base - end) * 0.5 * (1.0 + (std::f64::consts::PI * f).cos())
            }
            _ => base,
        }
    }

    pub fn batch_size_at(&self, events_seen: u64) -> usize {
        self.batch_size_escalation
            .iter()
            .filter(|(at, _)| events_seen >= *at)
            .map(|(_, b)| *b)
            .last()
            .unwrap_or(self.batch_size)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

/// One row of the loss history; NLLs are nats per event.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub split: Split,
    pub step: u64,
    pub epoch: u64,
    pub events_seen: u64,
    pub batch_length: usize,
    pub instrument: f64,
    pub pitch: f64,
    pub time: f64,
    pub velocity: f64,
    pub eos: f64,
    pub total: f64,
    /// Pre-clipping gradient norm; NaN for validation rows.
    pub grad_norm: f64,
}

pub const HISTORY_HEADER: &str =
    "split,step,epoch,events_seen,batch_length,instrument,pitch,time,velocity,eos,total,grad_norm";

pub fn history_csv(history: &[LossRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let split = match r.split {
            Split::Train => "train",
            Split::Valid => "valid",
        };
        let _ = writeln!(
            s,
            "{split},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.step,
            r.epoch,
            r.events_seen,
            r.batch_length,
            r.instrument,
            r.pitch,
            r.time,
            r.velocity,
            r.eos,
            r.total,
            r.grad_norm
        );
    }
    s
}

/// Indices for a shuffled train/validation split.
pub fn split_dataset<R: Rng + ?Sized>(n: usize, valid_fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_valid = (n as f64 * valid_fraction).round() as usize;
    let valid = idx.split_off(n - n_valid.min(n));
    (idx, valid)
}

/// One cropped training sequence with its masks.
struct Item {
    events: Vec<Event>,
    masks: Vec<PermutationMask>,
    eos_at_end: bool,
    seed: u64,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    modalities: [f64; 4],
    eos: f64,
    events: usize,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        for i in 0..4 {
            self.modalities[i] += o.modalities[i];
        }
        self.eos += o.eos;
        self.events += o.events;
    }

    fn record(&self, split: Split, step: u64, epoch: u64, events_seen: u64, batch_length: usize, grad_norm: f64) -> LossRecord {
        let n = self.events.max(1) as f64;
        let m = self.modalities.map(|v| v / n);
        LossRecord {
            split,
            step,
            epoch,
            events_seen,
            batch_length,
            instrument: m[0],
            pitch: m[1],
            time: m[2],
            velocity: m[3],
            eos: self.eos / n,
            total: (self.modalities.iter().sum::<f64>() + self.eos) / n,
            grad_norm,
        }
    }
}

/// Gradient of the summed loss of `items`, accumulated chunk by chunk.
fn batch_gradients(params: &ModelParams, items: &[Item], dropout: f64) -> (Grads, Sums) {
    let per_chunk = items.len().div_ceil(GRAD_CHUNKS).max(1);
    let parts: Vec<(Grads, Sums)> = items
        .par_chunks(per_chunk)
        .map(|chunk| {
            let mut grads = Grads::zeros(params);
            let mut sums = Sums::default();
            for item in chunk {
                let mut rng = ChaCha8Rng::seed_from_u64(item.seed);
                let mut tape = Tape::new(params);
                let d = (dropout > 0.0).then_some((dropout, &mut rng as &mut dyn RngCore));
                let terms = record_sequence(&mut tape, &item.events, &item.masks, item.eos_at_end, d);
                tape.backward_into(terms.total, 1.0, &mut grads);
                for t in &terms.events {
                    for i in 0..4 {
                        sums.modalities[i] += tape.value(&t.modalities[i])[0];
                    }
                    sums.eos += tape.value(&t.eos)[0];
                }
                if let Some(n) = &terms.final_eos {
                    sums.eos += tape.value(n)[0];
                }
                sums.events += item.events.len();
            }
            (grads, sums)
        })
        .collect();
    let mut it = parts.into_iter();
    let (mut grads, mut sums) = it.next().expect("at least one item");
    for (g, s) in it {
        grads.add_assign(&g);
        sums.add(&s);
    }
    (grads, sums)
}

pub struct Trainer {
    params: ModelParams,
    optimizer: OptimizerState,
    schedule: TrainSchedule,
    train: Vec<EventStream>,
    valid: Vec<EventStream>,
    rng: ChaCha8Rng,
    validation_seed: u64,
    order: Vec<usize>,
    cursor: usize,
    pub step: u64,
    pub epoch: u64,
    pub events_seen: u64,
    pub history: Vec<LossRecord>,
}

impl Trainer {
    /// Empty streams are dropped; the rest are split into train and
    /// validation sets.
    pub fn new(params: ModelParams, dataset: Vec<EventStream>, schedule: TrainSchedule, seed: u64) -> Result<Self> {
        schedule.validate()?;
        let dataset: Vec<EventStream> = dataset.into_iter().filter(|s| !s.events.is_empty()).collect();
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train_idx, valid_idx) = split_dataset(dataset.len(), schedule.validation_fraction, &mut rng);
        let mut slots: Vec<Option<EventStream>> = dataset.into_iter().map(Some).collect();
        let train: Vec<EventStream> = train_idx.iter().map(|i| slots[*i].take().unwrap()).collect();
        let valid: Vec<EventStream> = valid_idx.iter().map(|i| slots[*i].take().unwrap()).collect();
        let optimizer = OptimizerState::new(&params, schedule.optimizer);
        let validation_seed = rng.gen();
        let mut t = Trainer {
            params,
            optimizer,
            schedule,
            train,
            valid,
            rng,
            validation_seed,
            order: Vec::new(),
            cursor: 0,
            step: 0,
            epoch: 0,
            events_seen: 0,
            history: Vec::new(),
        };
        t.reshuffle();
        Ok(t)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.train.len()).collect();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    pub fn train_set(&self) -> &[EventStream] {
        &self.train
    }

    pub fn valid_set(&self) -> &[EventStream] {
        &self.valid
    }

    pub fn batch_length(&self) -> usize {
        self.schedule.batch_length(self.epoch)
    }

    pub fn done(&self) -> bool {
        self.events_seen >= self.schedule.total_event_budget
            || self.schedule.max_steps.is_some_and(|m| self.step >= m)
            || self.schedule.max_epochs.is_some_and(|m| self.epoch >= m)
    }

    fn crop(&mut self, stream: usize, length: usize) -> Item {
        let s = &self.train[stream];
        let mut events = s.events.clone();
        let mut terminated = s.terminated;
        if let Some(cfg) = &self.schedule.augment {
            let aug = augment_stream(&EventStream { events, terminated }, cfg, &mut self.rng);
            events = aug.events;
            terminated = aug.terminated;
        }
        let len = events.len();
        let (start, end) = if len <= length {
            (0, len)
        } else {
            let start = self.rng.gen_range(0..=len - length);
            (start, start + length)
        };
        let mut events = events[start..end].to_vec();
        if let Some(first) = events.first_mut() {
            if start > 0 {
                // a crop has no predecessor inside the window
                first.time_delta = 0.0;
            }
        }
        let masks = (0..events.len()).map(|_| PermutationMask::sample(&mut self.rng)).collect();
        Item {
            events,
            masks,
            eos_at_end: terminated && end == len,
            seed: self.rng.gen(),
        }
    }

    /// One optimizer step on the next batch. Finishing a pass over the
    /// training set advances the epoch and lengthens later crops.
    pub fn train_step(&mut self) -> Result<LossRecord> {
        let batch = self.schedule.batch_size_at(self.events_seen);
        let length = self.batch_length();
        let mut items = Vec::with_capacity(batch);
        while items.len() < batch && self.cursor < self.order.len() {
            let s = self.order[self.cursor];
            self.cursor += 1;
            let item = self.crop(s, length);
            if !item.events.is_empty() {
                items.push(item);
            }
        }
        let epoch = self.epoch;
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        if items.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (mut grads, sums) = batch_gradients(&self.params, &items, self.params.config.dropout_p);
        let loss = (sums.modalities.iter().sum::<f64>() + sums.eos) / sums.events as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(self.step as usize));
        }
        grads.scale(1.0 / sums.events as f64);
        grads.check_finite(&self.params)?;
        let norm = clip_gradients(&mut grads, self.schedule.grad_clip_norm);
        self.optimizer.config.lr = self.schedule.lr_at(self.step);
        adamw_step(&mut self.params, &grads, &mut self.optimizer);
        self.step += 1;
        self.events_seen += sums.events as u64;
        let rec = sums.record(Split::Train, self.step, epoch, self.events_seen, length, norm);
        self.history.push(rec);
        Ok(rec)
    }

    /// Validation NLL under fixed random masks without dropout. Each stream
    /// is cut to the current batch length.
    pub fn validate(&mut self) -> Option<LossRecord> {
        if self.valid.is_empty() {
            return None;
        }
        let sums = evaluate_streams(&self.params, &self.valid, self.batch_length(), self.validation_seed);
        let rec = sums.record(Split::Valid, self.step, self.epoch, self.events_seen, self.batch_length(), f64::NAN);
        self.history.push(rec);
        Some(rec)
    }

    /// Train until the budget, step limit or epoch limit is reached,
    /// validating at every epoch boundary.
    pub fn run(&mut self, mut on_step: impl FnMut(&Trainer, &LossRecord)) -> Result<()> {
        while !self.done() {
            let epoch = self.epoch;
            let rec = self.train_step()?;
            on_step(self, &rec);
            if self.epoch != epoch {
                self.validate();
            }
        }
        Ok(())
    }
}

fn evaluate_streams(params: &ModelParams, streams: &[EventStream], length: usize, seed: u64) -> Sums {
    let parts: Vec<Sums> = streams
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let n = s.events.len().min(length);
            let masks: Vec<PermutationMask> = (0..n).map(|_| PermutationMask::sample(&mut rng)).collect();
            let eos_at_end = s.terminated && n == s.events.len();
            let (per, fin) = sequence_nll(params, &s.events[..n], &masks, eos_at_end);
            let mut sums = Sums::default();
            for e in &per {
                for k in 0..4 {
                    sums.modalities[k] += e.modalities[k];
                }
                sums.eos += e.eos;
            }
            sums.eos += fin.unwrap_or(0.0);
            sums.events = n;
            sums
        })
        .collect();
    let mut total = Sums::default();
    for p in &parts {
        total.add(p);
    }
    total
}

/// Everything a finished run produces.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<LossRecord>,
}

/// Initialize a model from `config` and train it on `dataset`.
pub fn train(config: &ModelConfig, dataset: Vec<EventStream>, schedule: TrainSchedule, seed: u64) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(config, &mut rng)?;
    let mut t = Trainer::new(params, dataset, schedule, rng.gen())?;
    t.run(|_, _| {})?;
    t.validate();
    Ok(TrainOutcome {
        history: t.history.clone(),
        params: t.into_params(),
    })
}
