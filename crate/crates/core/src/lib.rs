//! Learned compression for LiDAR-style 3D point clouds.
//!
//! The pipeline projects a scan onto a range image, partitions it into
//! fixed-size patches, downsamples each patch to a single (position, feature)
//! latent with trainable weights, entropy-codes the quantized latents into a
//! real bitstream, and reconstructs the patch on the decoder side by
//! expanding candidate points and fusing them. Everything is trained
//! end-to-end against a rate-distortion objective by the bundled
//! reverse-mode differentiation engine.
//!
//! Crate layout mirrors the pipeline: [`rangegrid`] projection and patches,
//! [`encoder`] / [`decoder`] the networks, [`bottleneck`] quantization and
//! entropy coding, [`codec`] the scan-level pipeline, [`quality`] metrics,
//! [`harness`] training and ablations, [`autodiff`] / [`optim`] the
//! differentiation engine.

pub mod array;
pub mod autodiff;
pub mod bottleneck;
pub mod codec;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod harness;
pub mod io;
pub mod kdtree;
pub mod optim;
pub mod quality;
pub mod rangegrid;
pub mod util;

pub use array::Array;
pub use autodiff::{gradcheck, Tape, Var};
pub use config::{BottleneckConfig, CodecConfig, ModelConfig, PatchDims, SamplerKind};
pub use optim::{AdamConfig, ParamStore, TapeParams};
pub use rangegrid::{GridSpec, Patch, PatchLayout, ScanGrid};
