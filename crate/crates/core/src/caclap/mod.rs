//! Context-aware contrastive language-audio model: encoders, the symmetric
//! contrastive objective, training and checkpoints.

mod checkpoint;
mod loss;
mod model;
mod train;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{batch_objective, contrastive_loss, similarity_matrix, ContrastiveLoss, Example, SimilarityMatrix};
pub use model::{AudioNorm, CaClap, CaClapConfig, StyleEmbedding, UNIT_TOLERANCE};
pub use train::{train, untrained, TrainReport};
