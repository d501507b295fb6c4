//! Configuration structs shared by the codec, trainer, and CLI.

use crate::rangegrid::GridSpec;

/// Patch dimensions in range-image cells. N = rows * cols points per patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchDims {
    pub rows: usize,
    pub cols: usize,
}

impl PatchDims {
    pub fn new(rows: usize, cols: usize) -> Self {
        PatchDims { rows, cols }
    }

    pub fn slots(&self) -> usize {
        self.rows * self.cols
    }
}

/// Network widths. The per-point extractor runs 3 -> mlp1 -> mlp1, the
/// combiner (2*mlp1) -> mlp2 -> channels; weight heads use one hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Latent feature channels C.
    pub channels: usize,
    /// Candidate points per reconstructed slot (N_c).
    pub expansion: usize,
    pub mlp1_hidden: usize,
    pub mlp2_hidden: usize,
    pub head_hidden: usize,
    /// Width of the learned per-slot / per-candidate embeddings.
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 16,
            expansion: 4,
            mlp1_hidden: 32,
            mlp2_hidden: 64,
            head_hidden: 32,
            embed_dim: 8,
        }
    }
}

impl ModelConfig {
    /// A deliberately small variant for finite-difference sweeps and fast tests.
    pub fn tiny() -> Self {
        ModelConfig {
            channels: 4,
            expansion: 2,
            mlp1_hidden: 6,
            mlp2_hidden: 8,
            head_hidden: 6,
            embed_dim: 4,
        }
    }
}

/// Quantization and entropy-model settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BottleneckConfig {
    /// Position quantization step in meters.
    pub q_step_p: f64,
    /// Feature quantization step (dimensionless).
    pub q_step_f: f64,
    pub symbol_min: i32,
    pub symbol_max: i32,
    /// Minimum probability reserved for the escape symbol.
    pub tail_mass: f64,
    /// Initial width (in symbols) of the position densities.
    pub init_scale_p: f64,
    /// Initial width (in symbols) of the feature densities.
    pub init_scale_f: f64,
}

impl Default for BottleneckConfig {
    fn default() -> Self {
        BottleneckConfig {
            q_step_p: 0.02,
            q_step_f: 1.0,
            symbol_min: -2047,
            symbol_max: 2047,
            tail_mass: 1e-4,
            init_scale_p: 1024.0,
            init_scale_f: 10.0,
        }
    }
}

/// How the per-patch representative position is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    /// Convex combination of patch points under learned masked-softmax weights.
    Learnable,
    /// Mean of the valid points.
    Mean,
    /// A uniformly chosen valid point.
    Random,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "learnable" => Some(SamplerKind::Learnable),
            "mean" => Some(SamplerKind::Mean),
            "random" => Some(SamplerKind::Random),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Learnable => "learnable",
            SamplerKind::Mean => "mean",
            SamplerKind::Random => "random",
        }
    }
}

/// Everything the codec needs to run: geometry, partitioning, model widths,
/// and bottleneck settings.
#[derive(Clone, Copy, Debug)]
pub struct CodecConfig {
    pub grid: GridSpec,
    pub patch: PatchDims,
    pub model: ModelConfig,
    pub bottleneck: BottleneckConfig,
}

impl CodecConfig {
    /// Desk-scale default: 32x256 grid, 4x8 patches.
    pub fn desk_default() -> Self {
        CodecConfig {
            grid: GridSpec {
                rows: 32,
                cols: 256,
                fov_up: 2.0_f64.to_radians(),
                fov_down: (-24.8_f64).to_radians(),
                azimuth_origin: -std::f64::consts::PI,
            },
            patch: PatchDims::new(4, 8),
            model: ModelConfig::default(),
            bottleneck: BottleneckConfig::default(),
        }
    }
}
