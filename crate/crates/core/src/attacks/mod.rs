//! Attacks on the authenticator: smart replay of a victim's modifiable
//! signals, sniff-based collection, and an RL-guided generator trained
//! against the authenticator as an oracle.

mod campaign;
mod generator;
mod oracle;
mod replay;

pub use campaign::{deploy_attack, AttackInputs, AttackOutcome, Scenario, Timing, SETUP_MINUTES};
pub use generator::{
    craft_batch, ensemble_input_grad, generator_asr, generator_forward, latent_step_factor,
    rl_latent_update, sample_slice, train_generator, CraftedSlice, EpisodeState, GeneratorModel,
    GeneratorSpec, GeneratorTraining, RlConfig, CONVERGENCE_RUN, SLICE_SECONDS,
};
pub use oracle::{OracleHandle, OracleMode, DECISION_SECONDS};
pub use replay::{bb1_collect, run_gb1, smart_replay_merge, AsrCount, ModifiableMask};
