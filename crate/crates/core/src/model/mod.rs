//! Shared-parameter encoder, pair embedding, losses, training and checkpoints.

mod checkpoint;
mod classifier;
mod encoder;
mod loss;
mod train;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, parse_checkpoint, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use classifier::{cross_entropy, pretrain_classifier, train_classifier, Classifier, ClassifierHyper};
pub use encoder::{
    Architecture, EncoderParams, ForwardCache, FreezeMode, Layer, LayerGradients, CONV1, CONV2, DENSE1, DENSE2,
    LAYER_NAMES,
};
pub use loss::{
    contrastive_with_grad, embed_pair, embedding_distance, loss_double_margin, loss_single_margin, LossMode,
    PairEmbedding,
};
pub use train::{
    batch_loss_and_grad, quadruple_loss, train, train_step, Hyperparams, LogRow, PreparedImages, StepStats,
    TrainingLog,
};
