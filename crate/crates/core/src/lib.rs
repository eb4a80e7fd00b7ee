//! Inference engine for CLIP-family ViT image encoders with last-block
//! surgery, dense open-vocabulary segmentation and feature-map statistics.
//!
//! * [`tensor`]: dense f32 kernels (matmul, softmax, layer norm, GELU, cosine, grid resize)
//! * [`checkpoint`]: safetensors weights and text embeddings, seeded fixtures
//! * [`vit`]: the encoder, block decomposition and [`vit::SurgeryConfig`]
//! * [`stats`]: entropy, norm, maximum and channel statistics per block branch
//! * [`seg`]: preprocessing, sliding-window segmentation and mIoU

pub mod checkpoint;
pub mod error;
pub mod seg;
pub mod stats;
pub mod tensor;
pub mod vit;

pub use checkpoint::{
    gen_fixture_checkpoint, load_checkpoint, load_checkpoint_with, load_text_embeddings, KeyMap,
    LoadOptions, TextEmbeddings, VitConfig, VitWeights,
};
pub use error::{Error, ErrorKind, Result};
pub use tensor::{GeluVariant, Tensor};
pub use vit::{AttnMode, BlockTrace, PatchEmbeddings, SurgeryConfig, VitEncoder};
