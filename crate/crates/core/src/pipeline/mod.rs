//! Two-stage training and text-only synthesis.

pub mod run;
pub mod stage1;
pub mod stage2;
pub mod synth;
pub mod vocoder;

pub use run::RunLayout;
pub use stage1::{
    evaluate, prepare_examples, train_stage1, Example, Stage1Checkpoint, Stage1Data, Stage1Model, Stage1Outcome,
    Stage1TrainConfig, StepLog, VarianceStats, STAGE1_SCHEMA,
};
pub use stage2::{build_stage2_dataset, read_pairs, write_pairs, Stage2Dataset};
pub use synth::{Synthesis, Synthesizer};
pub use vocoder::{GriffinLim, Vocoder};
