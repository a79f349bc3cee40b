//! Feed-forward networks, explicit backpropagation and Adam.

mod adam;
mod mlp;
mod networks;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{MlpCache, MlpParams, DEFAULT_LEAKY_SLOPE};
pub use networks::{
    init_networks, Checkpoint, CheckpointMeta, ControlNetworks, InputScaling, NetworkSpec, NetworkZ, Scratch,
    WidthPolicy,
};
