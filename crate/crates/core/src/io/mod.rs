//! Persistence: images, PLY clouds and training checkpoints.

pub mod checkpoint;
pub mod image_io;
pub mod ply;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointModel};
pub use image_io::{read_image, write_image};
pub use ply::{cloud_to_splat_ply, read_splat_ply, simplify_splat_ply, write_splat_ply, PlyScore, SplatPlyRecord};
