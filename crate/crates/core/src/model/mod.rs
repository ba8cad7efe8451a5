//! The JRD prediction network and its checkpoint format.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_with_config,
    save_checkpoint, MAGIC,
};
pub use config::{ModelConfig, Normalization, LN_EPS, VVC_QP_CLASSES};
pub use network::{
    interpolate_pos_embed, parameter_layout, patchify, predict_batch, predict_jrd,
    predict_jrd_expected, BoundParams, DtJrdModel, Encoded,
};
