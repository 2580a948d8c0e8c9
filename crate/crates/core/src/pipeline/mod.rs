//! Masked-reconstruction pre-training, stage-1 data and checkpoint transfer.

mod bytes;
mod cache;
mod checkpoint;
mod loss;
mod train;
mod video;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_into, read_checkpoint, save_checkpoint,
    Checkpoint, CheckpointMeta, LoadReport, Stage, Strictness, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use loss::{normalize_targets, reconstruction_loss, reconstruction_loss_tape, TargetNorm};
pub use train::{
    loss_curve_csv, prepare_tubes, pretrain, pretrain_with, tubes_of, write_loss_curve, EpochStat, TrainConfig,
    TrainReport,
};
pub use video::video_blobs;
pub use cache::{
    decode_spectro_cache, encode_spectro_cache, read_spectro_cache, write_spectro_cache, SpectroCache, CACHE_MAGIC,
    CACHE_VERSION,
};
