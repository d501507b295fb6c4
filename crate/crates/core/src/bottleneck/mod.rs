//! Entropy bottleneck: quantization, learned factorized densities, and the
//! bit-exact coding layer.
//!
//! Each latent channel (3 position coordinates + C feature channels) gets an
//! independent scalar density modeled through a monotone 4-layer flow with
//! softplus-constrained weights and tanh gates, ending in a sigmoid. The
//! flow's output is the CDF; during training the rate is the negative
//! log-probability of the noise-relaxed latent under that CDF, and at coding
//! time the CDF is frozen into 16-bit cumulative frequency tables for the
//! range coder. Out-of-range symbols are escape-coded as raw 32-bit values.
//!
//! Latents are normalized to symbol units (value - anchor) / step before
//! they meet the density, so one model serves any step size.

pub mod bitstream;
pub mod rangecoder;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::config::BottleneckConfig;
use crate::optim::{ParamStore, TapeParams};

use rangecoder::CdfTable;

/// Probability floor before the log in the rate computation.
pub const PROB_FLOOR: f64 = 2.3283064365386963e-10; // 2^-32

/// Total frequency of every quantized table.
pub const CDF_TOTAL: u32 = 1 << 16;

const FLOW_WIDTH: usize = 3;
const FLOW_LAYERS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum QuantizeError {
    #[error("latent value {0} cannot be quantized (non-finite or out of i32 range)")]
    NonFinite(f64),
}

/// One quantized latent with its integer symbols and dequantized values.
#[derive(Clone, Debug)]
pub struct QuantizedLatent {
    pub patch_index: (usize, usize),
    pub position_symbols: [i32; 3],
    pub feature_symbols: Vec<i32>,
    /// anchor + symbol * step, meters.
    pub position: [f64; 3],
    /// symbol * step per feature channel.
    pub feature: Vec<f64>,
}

/// Channel naming for the factorized model: 3 position channels then C
/// feature channels.
pub fn channel_prefixes(feature_channels: usize) -> Vec<String> {
    let mut v: Vec<String> = (0..3).map(|k| format!("ebm.p.{}", k)).collect();
    v.extend((0..feature_channels).map(|k| format!("ebm.f.{}", k)));
    v
}

/// Registers the per-channel flow parameters. `init_scale` sets the initial
/// width (in symbol units) of each density.
pub fn init_params(
    store: &mut ParamStore,
    feature_channels: usize,
    cfg: &BottleneckConfig,
    rng: &mut ChaCha8Rng,
) {
    for (i, prefix) in channel_prefixes(feature_channels).iter().enumerate() {
        let init_scale = if i < 3 { cfg.init_scale_p } else { cfg.init_scale_f };
        init_flow(store, prefix, init_scale, rng);
    }
}

fn init_flow(store: &mut ParamStore, prefix: &str, init_scale: f64, rng: &mut ChaCha8Rng) {
    let dims = flow_dims();
    let scale = init_scale.powf(1.0 / FLOW_LAYERS as f64);
    for (layer, &(d_in, d_out)) in dims.iter().enumerate() {
        let l = layer + 1;
        // softplus(h) starts at 1 / (scale * d_out), so the composed flow
        // spans roughly `init_scale` symbol units.
        let h0 = (1.0 / (scale * d_out as f64)).exp_m1().ln();
        store.insert(
            &format!("{}.l{}.h", prefix, l),
            Array::filled(&[d_in, d_out], h0),
        );
        let bias: Vec<f64> = (0..d_out).map(|_| rng.gen_range(-0.5..0.5)).collect();
        store.insert(&format!("{}.l{}.b", prefix, l), Array::vector(&bias));
        if l < FLOW_LAYERS {
            store.insert(&format!("{}.l{}.a", prefix, l), Array::zeros(&[d_out]));
        }
    }
}

fn flow_dims() -> [(usize, usize); FLOW_LAYERS] {
    [
        (1, FLOW_WIDTH),
        (FLOW_WIDTH, FLOW_WIDTH),
        (FLOW_WIDTH, FLOW_WIDTH),
        (FLOW_WIDTH, 1),
    ]
}

/// Cumulative density of one channel evaluated on tape. `x` has shape
/// [B, 1] in symbol units; the result is [B, 1] in (0, 1), monotone in x by
/// construction (nonnegative weights, gated tanh with |gate| < 1, sigmoid).
pub fn flow_cdf(tape: &Tape, params: &TapeParams, prefix: &str, x: Var) -> Var {
    let mut y = x;
    for layer in 1..=FLOW_LAYERS {
        let h = params.var(&format!("{}.l{}.h", prefix, layer));
        let b = params.var(&format!("{}.l{}.b", prefix, layer));
        y = tape.add(tape.matmul(y, tape.softplus(h)), b);
        if layer < FLOW_LAYERS {
            let a = params.var(&format!("{}.l{}.a", prefix, layer));
            let gate = tape.mul(tape.tanh(y), tape.tanh(a));
            y = tape.add(y, gate);
        }
    }
    tape.sigmoid(y)
}

/// Differentiable rate in bits for one channel: sum over the batch of
/// -log2(CDF(z + 1/2) - CDF(z - 1/2)), probabilities floored at 2^-32.
/// `z` is the noise-relaxed latent in symbol units, shape [B, 1].
pub fn rate_bits(tape: &Tape, params: &TapeParams, prefix: &str, z: Var) -> Var {
    let hi = flow_cdf(tape, params, prefix, tape.add_scalar(z, 0.5));
    let lo = flow_cdf(tape, params, prefix, tape.add_scalar(z, -0.5));
    let p = tape.clamp_min(tape.sub(hi, lo), PROB_FLOOR);
    tape.scale(tape.reduce_sum_all(tape.log(p)), -1.0 / std::f64::consts::LN_2)
}

/// Information content of a probability, floored like the rate loss.
pub fn bits_from_probability(p: f64) -> f64 {
    -p.max(PROB_FLOOR).log2()
}

/// Training relaxation of quantization: adds i.i.d. uniform noise of one
/// step's width. The gradient is the identity (noise enters as a constant).
pub fn relax_quantize(tape: &Tape, x: Var, step: f64, rng: &mut ChaCha8Rng) -> Var {
    let noise: Vec<f64> = tape.peek(x, |a| {
        (0..a.len()).map(|_| rng.gen_range(-0.5..0.5) * step).collect()
    });
    let shape = tape.shape(x);
    let n = tape.constant(Array::from_vec(&shape, noise));
    tape.add(x, n)
}

/// Inference quantization: symbol = round((x - anchor) / step), rounding
/// half away from zero.
pub fn hard_quantize(values: &[f64], step: f64, anchor: &[f64]) -> Result<Vec<i32>, QuantizeError> {
    assert!(step > 0.0, "quantization step must be positive");
    assert_eq!(values.len(), anchor.len());
    values
        .iter()
        .zip(anchor)
        .map(|(&v, &a)| {
            let s = ((v - a) / step).round();
            if !s.is_finite() || s.abs() > i32::MAX as f64 {
                return Err(QuantizeError::NonFinite(v));
            }
            Ok(s as i32)
        })
        .collect()
}

/// Dequantization: anchor + symbol * step.
pub fn reconstruct(symbols: &[i32], step: f64, anchor: &[f64]) -> Vec<f64> {
    symbols
        .iter()
        .zip(anchor)
        .map(|(&s, &a)| a + s as f64 * step)
        .collect()
}

/// Plain (tape-free) CDF evaluation of one channel at many points, used to
/// freeze tables and estimate rates outside training.
pub fn flow_cdf_values(store: &ParamStore, prefix: &str, xs: &[f64]) -> Vec<f64> {
    let tape = Tape::new();
    let params = TapeParams::frozen(&tape, store);
    let x = tape.constant(Array::from_vec(&[xs.len(), 1], xs.to_vec()));
    let out = flow_cdf(&tape, &params, prefix, x);
    tape.value(out).into_data()
}

/// Continuous-model estimate in bits for a sequence of hard symbols.
pub fn estimate_symbol_bits(store: &ParamStore, prefix: &str, symbols: &[i32]) -> f64 {
    if symbols.is_empty() {
        return 0.0;
    }
    let lo: Vec<f64> = symbols.iter().map(|&s| s as f64 - 0.5).collect();
    let hi: Vec<f64> = symbols.iter().map(|&s| s as f64 + 0.5).collect();
    let c_lo = flow_cdf_values(store, prefix, &lo);
    let c_hi = flow_cdf_values(store, prefix, &hi);
    c_lo.iter()
        .zip(&c_hi)
        .map(|(&l, &h)| bits_from_probability(h - l))
        .sum()
}

/// Freezes one channel's learned CDF into a cumulative frequency table over
/// [symbol_min, symbol_max] plus a trailing escape symbol. Every symbol gets
/// at least one count; the escape symbol also absorbs the tail mass.
pub fn quantized_table(store: &ParamStore, prefix: &str, cfg: &BottleneckConfig) -> CdfTable {
    let n_range = (cfg.symbol_max - cfg.symbol_min + 1) as usize;
    let boundaries: Vec<f64> = (0..=n_range)
        .map(|k| cfg.symbol_min as f64 + k as f64 - 0.5)
        .collect();
    let cdf = flow_cdf_values(store, prefix, &boundaries);
    let mut pmf: Vec<f64> = (0..n_range).map(|k| (cdf[k + 1] - cdf[k]).max(0.0)).collect();
    let tail = (cdf[0] + (1.0 - cdf[n_range])).max(0.0);
    pmf.push(tail.max(cfg.tail_mass));
    CdfTable::from_counts(&quantize_pmf(&pmf, CDF_TOTAL))
}

/// All channel tables in stream order (p-x, p-y, p-z, f-0..f-{C-1}).
pub fn quantized_tables(
    store: &ParamStore,
    feature_channels: usize,
    cfg: &BottleneckConfig,
) -> Vec<CdfTable> {
    channel_prefixes(feature_channels)
        .iter()
        .map(|p| quantized_table(store, p, cfg))
        .collect()
}

/// Integer counts summing to `total` with every entry >= 1, proportional to
/// `pmf`. Largest-remainder rounding with deterministic tie-breaking.
pub fn quantize_pmf(pmf: &[f64], total: u32) -> Vec<u32> {
    let n = pmf.len();
    assert!(total as usize >= n, "total too small for {} symbols", n);
    let sum: f64 = pmf.iter().sum();
    assert!(sum > 0.0, "pmf sums to zero");
    let scaled: Vec<f64> = pmf.iter().map(|&p| p / sum * total as f64).collect();
    let mut counts: Vec<u32> = scaled.iter().map(|&s| (s.floor() as u32).max(1)).collect();
    let mut have: i64 = counts.iter().map(|&c| c as i64).sum();

    if have < total as i64 {
        // Hand out the shortfall by descending fractional remainder.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut k = 0;
        while have < total as i64 {
            counts[order[k % n]] += 1;
            have += 1;
            k += 1;
        }
    } else {
        // The >=1 floors overshot; take back from the largest counts.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut k = 0;
        while have > total as i64 {
            let idx = order[k % n];
            if counts[idx] > 1 {
                counts[idx] -= 1;
                have -= 1;
            }
            k += 1;
        }
    }
    counts
}
