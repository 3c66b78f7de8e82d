//! Architecture tables, instantiated networks and their on-disk format.

mod compiled;
mod network;
mod spec;
mod weights;

pub use compiled::{InferenceNet, SPARSE_DENSITY_THRESHOLD};
pub use network::{init_network, ConvLayer, ForwardCache, LayerGrads, Mask, Network};
pub use spec::{
    build_robo, build_robo_bn, build_robo_hr, Activation, Architecture, HeadSpec, HeadTap,
    LayerSpec, ModelSpec, HEAD_CHANNELS, VALUES_PER_CLASS,
};
pub use weights::{
    decode_weights, encode_weights, load_weights, load_weights_for, save_weights, FORMAT_VERSION,
    MAGIC,
};
