//! ConvMixer backbone, the SE/ECA/C2D attention modules and the FCA-Net
//! variants built from them, with parameter and MAC accounting.

mod checkpoint;
mod config;
mod layers;
mod net;
mod params;

pub use checkpoint::CHECKPOINT_VERSION;
pub use config::{AttentionKind, ModelConfig, Placement};
pub use layers::{eca_kernel_size, Attention, ConvBlock, MixerBlock, MixerLayer, Mlp, Norm, SeparableConv};
pub use net::{count_footprint, FcaNet, FootprintReport, Stage};
pub use params::{round_to_f32, BnId, ParamId, ParamStore, Session};

#[cfg(test)]
mod tests;
