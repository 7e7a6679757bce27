//! Optimization, training procedures, the weighted linear classifier and checkpoints.

pub mod checkpoint;
pub mod optim;
pub mod procedures;
pub mod wsvm;

pub use checkpoint::{
    checkpoint_crc, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
    AnyModel, Architecture, CheckpointMeta,
};
pub use optim::{fit, sgd_step, EpochLog, TrainingConfig, Velocity};
pub use procedures::{
    frame_dataset, modality_frames, patch_dataset, run_modality, run_three_step, run_two_step,
    run_two_step_on_images, sequence_segments, train_fused_images, train_joint, train_joint_fused,
    train_network, train_temporal, ModalityRun, Segment, TemporalConfig, ThreeStepConfig,
    ThreeStepOutput, TwoStepConfig, TwoStepOutput,
};
pub use wsvm::{compute_class_weights, train_linear, train_weighted_linear, LinearClassifier};
