//! Maximum-likelihood training over random conditioning masks.

pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod masks;
pub mod optim;
pub mod tape;
mod train;

pub use eval::{eval_nll_breakdown, EvalOptions, NllBreakdown};
pub use loss::{event_nll, record_sequence, EventNll, LossGraph};
pub use masks::{sample_masks, PermutationMask};
pub use optim::{adamw_step, clip_gradients, AdamWConfig, OptimizerState};
pub use tape::{Grads, Tape};
pub use train::{
    history_csv, split_dataset, train, LossRecord, Split, TrainOutcome, TrainSchedule, Trainer,
    HISTORY_HEADER,
};
