//! The defended system: three classifier architectures, their majority-vote
//! ensemble and the runtime decision policy.

mod ensemble;
mod model;
mod policy;
mod train;

pub use ensemble::{ensemble_vote, Ensemble};
pub use model::{
    argmax, build_model, ArchKind, ArchSpec, EpochRecord, ModelCache, Prediction, TrainedModel,
};
pub use policy::{
    authenticate_stream, decide_stream, BatchOutcome, DecisionPolicy, DecisionState, IdleRule,
    StreamEvent,
};
pub use train::{
    read_training_report, train_model, window_accuracy, write_training_report, TrainConfig,
};
