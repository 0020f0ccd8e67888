//! Losses, optimizer, batch sampling and the training loops.

mod data;
mod loops;
mod loss;
mod multistage;
mod optim;
mod sampler;

pub use data::{format_pairs, load_pairs, parse_pairs, save_pairs, Lang, TrainingPair};
pub use loops::{
    mask_tokens, pretrain, train_cross_encoder, train_retriever, with_random_negatives, LabeledPair, MlmConfig,
    TrainReport,
};
pub use loss::{contrastive_loss, mlm_loss, pair_classification_loss, ContrastiveOutput, BCE_CLAMP};
pub use multistage::{run_multistage, MultistageOutcome, Stage, StageRecord};
pub use optim::{adam_step, adam_step_encoder, HyperParams, LrSchedule, NamedParam, OptimizerState, ParamGroup};
pub use sampler::{sample_batches, TrainingBatch};
