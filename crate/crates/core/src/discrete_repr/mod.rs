//! Discrete hand–object representation: a four-stage VQ-VAE over grasp
//! parameters and object articulation.

pub mod codebook;
pub mod losses;
pub mod model;
pub mod samples;

pub use codebook::{quantize, Codebook, ResetStatus, Stage, TokenFrame};
pub use losses::{
    frame_loss, loss_articulation, loss_commitment, loss_joint, loss_penetration, loss_pose_consistency,
    loss_reconstruction, penetration_with_grad, FrameTarget, LossBreakdown, LossWeights, StageOutputs,
};
pub use model::{checkpoint_hash, commitment_terms, to_world, train_vqvae, EncodedFrame, EpochStats, VqVae, VqVaeConfig};
pub use samples::{build_objects, prepare_sequences, FrameSample, ObjectContext, SampleSet};
