//! The four embedding networks: TD-ResNet7 (dilated temporal convolutions),
//! TC-ResNet8, cnn_trad_fpool3 and the 4-block C64 CNN.

mod network;
mod spec;

pub use network::{
    build_c64, build_cnn_trad_fpool3, build_tc_resnet8, build_td_resnet7, EmbeddingBatch, Network, BN_EPS,
    BN_MOMENTUM,
};
pub use spec::{
    arch_spec, c64_spec, chain_shape, cnn_trad_fpool3_spec, tc_resnet8_spec, td_resnet7_spec, ArchKind,
    ArchitectureSpec, InputShape, LayerSpec,
};
