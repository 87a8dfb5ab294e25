//! Files on disk: atomic writes, checkpoints and experiment configs.

pub mod atomic;
pub mod checkpoint;
pub mod config;

pub use atomic::{read_file, write_atomic};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{config_hash, load_config, parse_config, render_config, CONFIG_KEYS};
