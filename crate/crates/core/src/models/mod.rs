mod checkpoint;
mod embed;
mod mlp;
mod vae;

pub use checkpoint::{Checkpoint, ModelType};
pub use embed::*;
pub use mlp::Mlp;
pub use vae::*;
