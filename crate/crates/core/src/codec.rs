//! Scan-level compression pipeline: grid, partition, per-patch encode,
//! quantize, entropy-code; and the inverse.
//!
//! Compression needs the full `CodecConfig`; decompression is self-contained
//! given the bitstream and a checkpoint, since the header carries the
//! geometry and quantization settings and the checkpoint carries the
//! network. Patches are processed in parallel but collected in layout
//! order, so outputs are byte-identical regardless of thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bottleneck::bitstream::{
    parse_bitstream, write_bitstream_with_payload, BitstreamInfo, StreamError,
};
use crate::bottleneck::{
    estimate_symbol_bits, channel_prefixes, hard_quantize, quantized_tables, reconstruct,
    QuantizeError, QuantizedLatent,
};
use crate::config::{CodecConfig, SamplerKind};
use crate::decoder;
use crate::encoder::{self, PatchInput};
use crate::optim::{ParamStore, TapeParams};
use crate::rangegrid::{
    assemble, build_grid, partition, patch_anchor, AssembleError, GridStats, Patch, PatchLayout,
    Point, ReconstructedPatch,
};
use crate::autodiff::Tape;
use crate::util::patch_stream_seed;

/// Prefix of the entropy-model parameters; its hash identifies a model.
pub const MODEL_HASH_PREFIX: &str = "ebm.";

/// Extra salt so the random sampler's stream differs from the partition fill.
const SAMPLER_SEED_SALT: u64 = 0x5a4d_9c3b_17e5_88d1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("scan has no points inside the grid field of view")]
    EmptyScan,
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error("checkpoint mismatch: {0}")]
    ModelMismatch(String),
}

/// One encoded patch: the continuous latent position and its quantized form.
#[derive(Clone, Debug)]
pub struct EncodedLatent {
    pub patch_index: (usize, usize),
    /// Encoder output position before quantization, meters.
    pub raw_position: [f64; 3],
    pub quantized: QuantizedLatent,
}

#[derive(Clone, Debug)]
pub struct CompressStats {
    pub input_points: usize,
    /// Valid points on the grid after projection (the coded point count).
    pub gridded_points: usize,
    pub occupied_patches: usize,
    pub total_bits: usize,
    /// Bits spent on the entropy-coded symbol streams alone (no container).
    pub symbol_payload_bits: usize,
    /// Continuous-model estimate of the symbol payload, bits.
    pub estimated_bits: f64,
    pub grid: GridStats,
}

pub struct CompressOutput {
    pub bytes: Vec<u8>,
    pub layout: PatchLayout,
    pub latents: Vec<EncodedLatent>,
    pub stats: CompressStats,
}

pub struct DecompressOutput {
    pub points: Vec<Point>,
    pub latents: Vec<QuantizedLatent>,
    pub layout: PatchLayout,
    pub info: BitstreamInfo,
}

/// Rounds every header-carried field through its serialized f32 width, so
/// the encoder computes with exactly the values the decoder will read back.
pub fn canonical_config(cfg: &CodecConfig) -> CodecConfig {
    let mut c = *cfg;
    c.grid.fov_up = c.grid.fov_up as f32 as f64;
    c.grid.fov_down = c.grid.fov_down as f32 as f64;
    c.grid.azimuth_origin = c.grid.azimuth_origin as f32 as f64;
    c.bottleneck.q_step_p = c.bottleneck.q_step_p as f32 as f64;
    c.bottleneck.q_step_f = c.bottleneck.q_step_f as f32 as f64;
    c.bottleneck.tail_mass = c.bottleneck.tail_mass as f32 as f64;
    c
}

/// Fresh parameter store for a codec configuration: encoder, decoder, and
/// entropy model, deterministically initialized from the seed.
pub fn init_store(cfg: &CodecConfig, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    encoder::init_params(&mut store, &cfg.model, &mut rng);
    decoder::init_params(&mut store, &cfg.model, cfg.patch.slots(), &mut rng);
    crate::bottleneck::init_params(&mut store, cfg.model.channels, &cfg.bottleneck, &mut rng);
    store
}

/// 64-bit identifier of the entropy model inside a store.
pub fn model_hash(store: &ParamStore) -> u64 {
    store.hash_prefix(MODEL_HASH_PREFIX)
}

/// Encodes one patch to its continuous latent (no tape kept).
pub fn encode_patch_values(
    patch: &Patch,
    store: &ParamStore,
    cfg: &CodecConfig,
    sampler: SamplerKind,
    seed: u64,
    patch_linear: usize,
) -> ([f64; 3], Vec<f64>) {
    let tape = Tape::new();
    let params = TapeParams::frozen(&tape, store);
    let input = PatchInput::new(&tape, patch);
    let mut rng =
        ChaCha8Rng::seed_from_u64(patch_stream_seed(seed ^ SAMPLER_SEED_SALT, patch_linear));
    let enc = encoder::encode_patch(&tape, &params, &cfg.model, &input, sampler, Some(&mut rng));
    let p = tape.value(enc.position);
    let f = tape.value(enc.feature);
    ([p.data()[0], p.data()[1], p.data()[2]], f.into_data())
}

/// Full compression of a raw scan.
pub fn compress(
    points: &[Point],
    store: &ParamStore,
    cfg: &CodecConfig,
    sampler: SamplerKind,
    seed: u64,
) -> Result<CompressOutput, CodecError> {
    let cfg = &canonical_config(cfg);
    let (grid, grid_stats) = build_grid(points, &cfg.grid);
    let gridded_points = grid.valid_count();
    if gridded_points == 0 {
        return Err(CodecError::EmptyScan);
    }
    let (layout, patches) = partition(&grid, cfg.patch.rows, cfg.patch.cols, seed);

    let latents: Result<Vec<EncodedLatent>, CodecError> = patches
        .par_iter()
        .map(|patch| {
            let linear = layout.linear_index(patch.patch_index);
            let (raw_position, feature) =
                encode_patch_values(patch, store, cfg, sampler, seed, linear);
            let anchor = patch_anchor(&cfg.grid, cfg.patch.rows, cfg.patch.cols, patch.patch_index);
            let psyms = hard_quantize(&raw_position, cfg.bottleneck.q_step_p, &anchor)?;
            let zeros = vec![0.0; feature.len()];
            let fsyms = hard_quantize(&feature, cfg.bottleneck.q_step_f, &zeros)?;
            let position = reconstruct(&psyms, cfg.bottleneck.q_step_p, &anchor);
            let feature_rec = reconstruct(&fsyms, cfg.bottleneck.q_step_f, &zeros);
            Ok(EncodedLatent {
                patch_index: patch.patch_index,
                raw_position,
                quantized: QuantizedLatent {
                    patch_index: patch.patch_index,
                    position_symbols: [psyms[0], psyms[1], psyms[2]],
                    feature_symbols: fsyms,
                    position: [position[0], position[1], position[2]],
                    feature: feature_rec,
                },
            })
        })
        .collect();
    let latents = latents?;

    let channels = cfg.model.channels;
    let mut symbols: Vec<Vec<i32>> = vec![Vec::with_capacity(latents.len()); 3 + channels];
    for latent in &latents {
        for ch in 0..3 {
            symbols[ch].push(latent.quantized.position_symbols[ch]);
        }
        for ch in 0..channels {
            symbols[3 + ch].push(latent.quantized.feature_symbols[ch]);
        }
    }

    let estimated_bits: f64 = channel_prefixes(channels)
        .par_iter()
        .zip(&symbols)
        .map(|(prefix, syms)| estimate_symbol_bits(store, prefix, syms))
        .sum();

    let tables = quantized_tables(store, channels, &cfg.bottleneck);
    let masks: Vec<Vec<bool>> = patches.iter().map(|p| p.flags.clone()).collect();
    let info = BitstreamInfo {
        grid: cfg.grid,
        patch: cfg.patch,
        channels,
        model_hash: model_hash(store),
        bottleneck: cfg.bottleneck,
    };
    let (bytes, symbol_payload_bits) =
        write_bitstream_with_payload(&info, &layout.occupancy, &masks, &symbols, &tables);
    let total_bits = bytes.len() * 8;

    Ok(CompressOutput {
        stats: CompressStats {
            input_points: points.len(),
            gridded_points,
            occupied_patches: layout.occupied_count(),
            total_bits,
            symbol_payload_bits,
            estimated_bits,
            grid: grid_stats,
        },
        layout,
        latents,
        bytes,
    })
}

/// Full decompression. Everything needed comes from the stream header and
/// the checkpoint; a checkpoint with a different entropy model is refused.
pub fn decompress(bytes: &[u8], store: &ParamStore) -> Result<DecompressOutput, CodecError> {
    let parsed = parse_bitstream(bytes)?;
    let checkpoint_hash = model_hash(store);
    if parsed.info.model_hash != checkpoint_hash {
        return Err(CodecError::Stream(StreamError::ModelHashMismatch {
            stream: parsed.info.model_hash,
            checkpoint: checkpoint_hash,
        }));
    }
    let channels = parsed.info.channels;
    for name in ["dec.slot_embed", "dec.cand_embed", "dec.up1.l1.b"] {
        if !store.contains(name) {
            return Err(CodecError::ModelMismatch(format!(
                "checkpoint lacks decoder parameter '{}'",
                name
            )));
        }
    }
    let decoder_channels = store.get("dec.up1.l1.b").len();
    if decoder_channels != channels {
        return Err(CodecError::ModelMismatch(format!(
            "stream carries {} feature channels, checkpoint decodes {}",
            channels, decoder_channels
        )));
    }
    let slots = parsed.info.patch.slots();
    let checkpoint_slots = store.get("dec.slot_embed").shape()[0];
    if checkpoint_slots != slots {
        return Err(CodecError::ModelMismatch(format!(
            "stream uses {} slots per patch, checkpoint was trained for {}",
            slots, checkpoint_slots
        )));
    }
    let expansion = store.get("dec.cand_embed").shape()[0];

    let tables = quantized_tables(store, channels, &parsed.info.bottleneck);
    let masks = parsed.decode_masks()?;
    let symbols = parsed.decode_symbols(&tables)?;

    let layout = PatchLayout {
        patch_rows: parsed.info.patch.rows,
        patch_cols: parsed.info.patch.cols,
        grid_rows: parsed.info.grid.rows.div_ceil(parsed.info.patch.rows) * parsed.info.patch.rows,
        grid_cols: parsed.info.grid.cols.div_ceil(parsed.info.patch.cols) * parsed.info.patch.cols,
        occupancy: parsed.occupancy.clone(),
    };
    let indices = layout.occupied_indices();

    let latents: Vec<QuantizedLatent> = indices
        .iter()
        .enumerate()
        .map(|(i, &patch_index)| {
            let anchor = patch_anchor(
                &parsed.info.grid,
                parsed.info.patch.rows,
                parsed.info.patch.cols,
                patch_index,
            );
            let psyms = [symbols[0][i], symbols[1][i], symbols[2][i]];
            let fsyms: Vec<i32> = (0..channels).map(|ch| symbols[3 + ch][i]).collect();
            let position = reconstruct(&psyms, parsed.info.bottleneck.q_step_p, &anchor);
            let feature = reconstruct(
                &fsyms,
                parsed.info.bottleneck.q_step_f,
                &vec![0.0; channels],
            );
            QuantizedLatent {
                patch_index,
                position_symbols: psyms,
                feature_symbols: fsyms,
                position: [position[0], position[1], position[2]],
                feature,
            }
        })
        .collect();

    let reconstructed: Vec<ReconstructedPatch> = latents
        .par_iter()
        .zip(&masks)
        .map(|(latent, mask)| {
            let tape = Tape::new();
            let params = TapeParams::frozen(&tape, store);
            let position = tape.constant(crate::array::Array::vector(&latent.position));
            let feature = tape.constant(crate::array::Array::vector(&latent.feature));
            let dec = decoder::decode_patch(&tape, &params, slots, position, feature, expansion);
            let pts = tape.value(dec.points);
            let points: Vec<Point> = pts.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            ReconstructedPatch {
                patch_index: latent.patch_index,
                valid: mask.clone(),
                points,
            }
        })
        .collect();

    let points = assemble(&layout, &reconstructed)?;
    Ok(DecompressOutput {
        points,
        latents,
        layout,
        info: parsed.info,
    })
}
