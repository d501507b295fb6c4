//! End-to-end training, evaluation on real bitstreams, and ablation runs.
//!
//! One training step: sample a batch of patches, encode each to a latent,
//! relax-quantize with uniform noise, estimate the rate under the learned
//! densities, decode, take the Chamfer distortion on valid slots, and
//! minimize D + lambda * R with Adam. Everything is seeded; single-threaded
//! runs produce bit-identical traces and checkpoints.

pub mod synth;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::bottleneck::{channel_prefixes, rate_bits, relax_quantize};
use crate::codec::{self, CodecError};
use crate::config::{CodecConfig, SamplerKind};
use crate::decoder;
use crate::encoder::{self, PatchInput};
use crate::optim::{adam_step, AdamConfig, OptimError, ParamStore, TapeParams};
use crate::quality::{self, chamfer_loss};
use crate::rangegrid::{build_grid, partition, patch_anchor, Patch, Point};
use crate::util::splitmix64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training needs a nonempty patch pool")]
    NoPatches,
    #[error("loss diverged at step {step} (D={distortion}, R={rate_bits})")]
    NonFinite {
        step: usize,
        distortion: f64,
        rate_bits: f64,
    },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metric(#[from] quality::MetricError),
}

/// Full training recipe. `expansion_enabled = false` trains and decodes with
/// a single candidate per slot (the no-expansion ablation).
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub codec: CodecConfig,
    pub lambda: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub expansion_enabled: bool,
    /// Emit a log line every this many steps (0 = silent).
    pub log_every: usize,
}

impl TrainConfig {
    pub fn new(codec: CodecConfig) -> Self {
        TrainConfig {
            codec,
            lambda: 1e-4,
            lr: 1e-3,
            steps: 5000,
            batch: 64,
            seed: 7,
            sampler: SamplerKind::Learnable,
            expansion_enabled: true,
            log_every: 100,
        }
    }

    /// Codec configuration with the expansion switch folded in and the
    /// header-carried fields canonicalized.
    pub fn effective_codec(&self) -> CodecConfig {
        let mut c = codec::canonical_config(&self.codec);
        if !self.expansion_enabled {
            c.model.expansion = 1;
        }
        c
    }
}

/// One logged step: total = distortion + lambda * rate, exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub distortion: f64,
    pub rate_bits: f64,
    pub total: f64,
}

impl TraceRow {
    pub fn csv_header() -> &'static str {
        "step,distortion_m2,rate_bits,total_loss"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.step, self.distortion, self.rate_bits, self.total
        )
    }
}

pub struct TrainResult {
    pub store: ParamStore,
    pub trace: Vec<TraceRow>,
}

/// Projects scans onto grids and pools every occupied patch.
pub fn scans_to_patches(scans: &[Vec<Point>], codec: &CodecConfig, seed: u64) -> Vec<Patch> {
    let mut pool = Vec::new();
    for (i, scan) in scans.iter().enumerate() {
        let (grid, _) = build_grid(scan, &codec.grid);
        let scan_seed = splitmix64(seed ^ (i as u64).wrapping_mul(0xa076_1d64_78bd_642f));
        let (_, patches) = partition(&grid, codec.patch.rows, codec.patch.cols, scan_seed);
        pool.extend(patches);
    }
    pool
}

/// Trains a fresh model on the patch pool.
pub fn train(cfg: &TrainConfig, patches: &[Patch]) -> Result<TrainResult, TrainError> {
    let codec_cfg = cfg.effective_codec();
    let mut store = codec::init_store(&codec_cfg, cfg.seed);
    let trace = train_in_place(&mut store, cfg, patches)?;
    Ok(TrainResult { store, trace })
}

/// Runs the optimization loop against an existing store.
pub fn train_in_place(
    store: &mut ParamStore,
    cfg: &TrainConfig,
    patches: &[Patch],
) -> Result<Vec<TraceRow>, TrainError> {
    if patches.is_empty() {
        return Err(TrainError::NoPatches);
    }
    let codec_cfg = cfg.effective_codec();
    let n_c = codec_cfg.model.expansion;
    let channels = codec_cfg.model.channels;
    let slots = codec_cfg.patch.slots();
    let q_step_p = codec_cfg.bottleneck.q_step_p;
    let q_step_f = codec_cfg.bottleneck.q_step_f;
    let prefixes = channel_prefixes(channels);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };

    let mut data_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x01));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x02));
    let mut sampler_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x03));

    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let tape = Tape::new();
        let params = TapeParams::new(&tape, store);
        // Patch distortions are weighted by their valid point count, so the
        // batch objective matches the Chamfer distance of the pooled cloud
        // instead of over-weighting nearly-empty patches.
        let mut distortions: Vec<Var> = Vec::with_capacity(cfg.batch);
        let mut valid_total = 0usize;
        let mut z_channels: Vec<Vec<Var>> = vec![Vec::with_capacity(cfg.batch); 3 + channels];

        for _ in 0..cfg.batch {
            let patch = &patches[data_rng.gen_range(0..patches.len())];
            let input = PatchInput::new(&tape, patch);
            let enc = encoder::encode_patch(
                &tape,
                &params,
                &codec_cfg.model,
                &input,
                cfg.sampler,
                Some(&mut sampler_rng),
            );
            let p_noisy = relax_quantize(&tape, enc.position, q_step_p, &mut noise_rng);
            let f_noisy = relax_quantize(&tape, enc.feature, q_step_f, &mut noise_rng);

            let anchor = patch_anchor(
                &codec_cfg.grid,
                codec_cfg.patch.rows,
                codec_cfg.patch.cols,
                patch.patch_index,
            );
            let anchor_c = tape.constant(Array::vector(&anchor));
            let z_p = tape.scale(tape.sub(p_noisy, anchor_c), 1.0 / q_step_p);
            let z_f = tape.scale(f_noisy, 1.0 / q_step_f);
            for ch in 0..3 {
                z_channels[ch].push(tape.reshape(tape.gather0(z_p, &[ch]), &[1, 1]));
            }
            for ch in 0..channels {
                z_channels[3 + ch].push(tape.reshape(tape.gather0(z_f, &[ch]), &[1, 1]));
            }

            let dec = decoder::decode_patch(&tape, &params, slots, p_noisy, f_noisy, n_c);
            let recon_valid = tape.gather0(dec.points, &patch.valid_indices());
            let d = chamfer_loss(&tape, recon_valid, &patch.valid_points());
            distortions.push(tape.scale(d, patch.valid_count as f64));
            valid_total += patch.valid_count;
        }

        let mut d_sum = distortions[0];
        for &d in &distortions[1..] {
            d_sum = tape.add(d_sum, d);
        }
        let d_mean = tape.scale(d_sum, 1.0 / valid_total as f64);

        let mut r_sum: Option<Var> = None;
        for (ch, prefix) in prefixes.iter().enumerate() {
            let z = tape.concat(&z_channels[ch], 0);
            let bits = rate_bits(&tape, &params, prefix, z);
            r_sum = Some(match r_sum {
                Some(acc) => tape.add(acc, bits),
                None => bits,
            });
        }
        let r_mean = tape.scale(r_sum.unwrap(), 1.0 / cfg.batch as f64);

        let loss = tape.add(d_mean, tape.scale(r_mean, cfg.lambda));
        let row = TraceRow {
            step,
            distortion: tape.item(d_mean),
            rate_bits: tape.item(r_mean),
            total: tape.item(loss),
        };
        if !row.total.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                distortion: row.distortion,
                rate_bits: row.rate_bits,
            });
        }
        tape.backward(loss);
        let bound = params.finish();
        adam_step(store, &tape, &bound, &adam)?;
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!(
                "step {:>6}  D {:.6e}  R {:.2} bits  L {:.6e}",
                step,
                row.distortion,
                row.rate_bits,
                row.total
            );
        }
        trace.push(row);
    }
    Ok(trace)
}

/// Actual-bitstream evaluation over held-out scans: compress, decompress,
/// and score against the gridded valid cloud.
#[derive(Clone, Copy, Debug)]
pub struct EvalSummary {
    pub bpp: f64,
    pub chamfer: f64,
    pub p2plane_psnr_db: f64,
    pub total_bits: usize,
    pub symbol_payload_bits: usize,
    pub points: usize,
    pub estimated_bits: f64,
}

pub fn evaluate(
    store: &ParamStore,
    codec_cfg: &CodecConfig,
    sampler: SamplerKind,
    scans: &[Vec<Point>],
    seed: u64,
) -> Result<EvalSummary, TrainError> {
    assert!(!scans.is_empty(), "evaluation needs scans");
    let mut total_bits = 0usize;
    let mut payload_bits = 0usize;
    let mut points = 0usize;
    let mut estimated = 0.0f64;
    let mut cd_sum = 0.0f64;
    let mut psnr_sum = 0.0f64;
    for (i, scan) in scans.iter().enumerate() {
        let scan_seed = splitmix64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let out = codec::compress(scan, store, codec_cfg, sampler, scan_seed)?;
        let dec = codec::decompress(&out.bytes, store)?;
        let (grid, _) = build_grid(scan, &codec::canonical_config(codec_cfg).grid);
        let reference = grid.valid_points();
        cd_sum += quality::chamfer(&reference, &dec.points)?;
        let peak = quality::default_peak(&reference);
        psnr_sum += quality::p2plane_psnr(&reference, &dec.points, peak, 12)?;
        total_bits += out.stats.total_bits;
        payload_bits += out.stats.symbol_payload_bits;
        points += out.stats.gridded_points;
        estimated += out.stats.estimated_bits;
    }
    Ok(EvalSummary {
        bpp: quality::bpp(total_bits, points)?,
        chamfer: cd_sum / scans.len() as f64,
        p2plane_psnr_db: psnr_sum / scans.len() as f64,
        total_bits,
        symbol_payload_bits: payload_bits,
        points,
        estimated_bits: estimated,
    })
}

/// One ablation arm: a sampler / expansion combination.
#[derive(Clone, Debug)]
pub struct AblationArm {
    pub name: String,
    pub sampler: SamplerKind,
    pub expansion_enabled: bool,
}

/// Trained-and-evaluated outcome of one arm.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub sampler: SamplerKind,
    pub expansion: usize,
    /// Mean total loss over the final tenth of training.
    pub final_loss: f64,
    pub bpp: f64,
    pub chamfer: f64,
    pub p2plane_psnr_db: f64,
}

impl AblationRow {
    pub fn csv_header() -> &'static str {
        "arm,sampler,expansion,final_loss,bpp,chamfer_m2,p2plane_psnr_db"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.name,
            self.sampler.name(),
            self.expansion,
            self.final_loss,
            self.bpp,
            self.chamfer,
            self.p2plane_psnr_db
        )
    }
}

/// Mean of the last tenth of the loss trace, the arm's converged loss.
pub fn converged_loss(trace: &[TraceRow]) -> f64 {
    let k = (trace.len() / 10).max(1);
    let tail = &trace[trace.len() - k..];
    tail.iter().map(|r| r.total).sum::<f64>() / k as f64
}

/// Trains every arm with identical seeds and data, then evaluates each on
/// the held-out scans with real bitstreams.
pub fn ablate(
    base: &TrainConfig,
    arms: &[AblationArm],
    train_patches: &[Patch],
    eval_scans: &[Vec<Point>],
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let mut cfg = base.clone();
        cfg.sampler = arm.sampler;
        cfg.expansion_enabled = arm.expansion_enabled;
        let result = train(&cfg, train_patches)?;
        let codec_cfg = cfg.effective_codec();
        let eval = evaluate(&result.store, &codec_cfg, cfg.sampler, eval_scans, cfg.seed)?;
        log::info!(
            "arm {:<12} L {:.5e}  bpp {:.3}  CD {:.5e}  PSNR {:.2} dB",
            arm.name,
            converged_loss(&result.trace),
            eval.bpp,
            eval.chamfer,
            eval.p2plane_psnr_db
        );
        rows.push(AblationRow {
            name: arm.name.clone(),
            sampler: arm.sampler,
            expansion: codec_cfg.model.expansion,
            final_loss: converged_loss(&result.trace),
            bpp: eval.bpp,
            chamfer: eval.chamfer,
            p2plane_psnr_db: eval.p2plane_psnr_db,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::synth::{corner_scene, synth_scan};
    use super::*;
    use crate::config::{ModelConfig, PatchDims};

    fn tiny_train_cfg() -> TrainConfig {
        let mut codec = CodecConfig::desk_default();
        codec.grid.rows = 8;
        codec.grid.cols = 64;
        codec.patch = PatchDims::new(2, 4);
        codec.model = ModelConfig::tiny();
        let mut cfg = TrainConfig::new(codec);
        cfg.steps = 5;
        cfg.batch = 4;
        cfg.log_every = 0;
        cfg
    }

    fn tiny_patch_pool(cfg: &TrainConfig) -> Vec<Patch> {
        let scan = synth_scan(&corner_scene(cfg.codec.grid, 11));
        scans_to_patches(&[scan], &cfg.codec, cfg.seed)
    }

    #[test]
    fn loss_decomposition_is_exact() {
        let cfg = tiny_train_cfg();
        let pool = tiny_patch_pool(&cfg);
        let result = train(&cfg, &pool).unwrap();
        assert_eq!(result.trace.len(), cfg.steps);
        for row in &result.trace {
            assert_eq!(row.total, row.distortion + cfg.lambda * row.rate_bits);
        }
    }

    #[test]
    fn identical_configs_reproduce_traces_and_checkpoints() {
        let cfg = tiny_train_cfg();
        let pool = tiny_patch_pool(&cfg);
        let a = train(&cfg, &pool).unwrap();
        let b = train(&cfg, &pool).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.store.to_bytes(), b.store.to_bytes());
    }

    #[test]
    fn empty_pool_is_an_error() {
        let cfg = tiny_train_cfg();
        assert!(matches!(train(&cfg, &[]), Err(TrainError::NoPatches)));
    }

    #[test]
    fn rule_based_samplers_train_too() {
        let mut cfg = tiny_train_cfg();
        let pool = tiny_patch_pool(&cfg);
        for sampler in [SamplerKind::Mean, SamplerKind::Random] {
            cfg.sampler = sampler;
            let result = train(&cfg, &pool).unwrap();
            assert!(result.trace.iter().all(|r| r.total.is_finite()));
        }
    }

    #[test]
    fn evaluation_round_trips_real_bitstreams() {
        let cfg = tiny_train_cfg();
        let pool = tiny_patch_pool(&cfg);
        let result = train(&cfg, &pool).unwrap();
        let eval_scan = synth_scan(&corner_scene(cfg.codec.grid, 99));
        let summary = evaluate(
            &result.store,
            &cfg.effective_codec(),
            cfg.sampler,
            &[eval_scan],
            5,
        )
        .unwrap();
        assert!(summary.bpp > 0.0);
        assert!(summary.chamfer.is_finite());
        assert!(summary.total_bits > 0);
    }

    #[test]
    fn expansion_switch_changes_candidate_count() {
        let mut cfg = tiny_train_cfg();
        cfg.expansion_enabled = false;
        assert_eq!(cfg.effective_codec().model.expansion, 1);
        let pool = tiny_patch_pool(&cfg);
        let result = train(&cfg, &pool).unwrap();
        assert_eq!(result.store.get("dec.cand_embed").shape()[0], 1);
    }
}
