//! Per-patch encoder: PointNet-style feature extraction, point sampling with
//! learned masked-softmax weights, and adaptive feature aggregation.
//!
//! Each patch of N points (with validity flags) is reduced to one latent:
//! a position that is a per-channel convex combination of the valid points,
//! and a feature aggregated from offset-augmented per-point features. The
//! rule-based mean/random samplers reuse the same feature path and swap only
//! the position rule, which keeps ablations apples-to-apples.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::config::{ModelConfig, SamplerKind};
use crate::optim::{ParamStore, TapeParams};
use crate::rangegrid::Patch;

/// Patch data staged onto a tape: the [N,3] point matrix plus flag masks.
pub struct PatchInput {
    pub points: Var,
    pub flags: Vec<bool>,
    pub valid_count: usize,
}

impl PatchInput {
    pub fn new(tape: &Tape, patch: &Patch) -> Self {
        Self::with_points(tape, patch, false)
    }

    /// Points as differentiable leaves, for gradient checks against inputs.
    pub fn trainable(tape: &Tape, patch: &Patch) -> Self {
        Self::with_points(tape, patch, true)
    }

    fn with_points(tape: &Tape, patch: &Patch, trainable: bool) -> Self {
        assert!(patch.valid_count >= 1, "patch must hold a valid point");
        let n = patch.len();
        let data: Vec<f64> = patch.points.iter().flat_map(|p| p.iter().copied()).collect();
        let arr = Array::from_vec(&[n, 3], data);
        let points = if trainable {
            tape.leaf(arr)
        } else {
            tape.constant(arr)
        };
        PatchInput {
            points,
            flags: patch.flags.clone(),
            valid_count: patch.valid_count,
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i)
            .collect()
    }

    /// 0/1 mask replicated over `channels` columns, as a tape constant.
    fn mask(&self, tape: &Tape, channels: usize) -> Var {
        let data: Vec<f64> = self
            .flags
            .iter()
            .flat_map(|&f| std::iter::repeat(if f { 1.0 } else { 0.0 }).take(channels))
            .collect();
        tape.constant(Array::from_vec(&[self.flags.len(), channels], data))
    }
}

/// Intermediates of the learnable sampler, kept for inspection and tests.
pub struct SamplingDetail {
    /// Masked positive scores (exponentials), [N,3].
    pub score_exps: Var,
    /// Per-channel simplex weights, [N,3]; zero at invalid slots.
    pub weights: Var,
}

/// Intermediates of the feature aggregation.
pub struct AggregationDetail {
    /// Offsets point - position, [N,3].
    pub offsets: Var,
    /// Offset-augmented projected features, [N,C].
    pub combined: Var,
    /// Per-channel simplex weights, [N,C]; zero at invalid slots.
    pub weights: Var,
}

/// One encoded patch: latent position [3], latent feature [C].
pub struct PatchEncoding {
    pub position: Var,
    pub feature: Var,
    /// Present only for the learnable sampler.
    pub sampling: Option<SamplingDetail>,
    pub aggregation: AggregationDetail,
}

pub fn init_params(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    let c = cfg.channels;
    let (h1, h2, hh) = (cfg.mlp1_hidden, cfg.mlp2_hidden, cfg.head_hidden);
    let dense = |store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
        store.insert(&format!("{}.w", name), glorot(rng, fan_in, fan_out));
        store.insert(&format!("{}.b", name), Array::zeros(&[fan_out]));
    };
    dense(store, "enc.mlp1.l0", 3, h1, rng);
    dense(store, "enc.mlp1.l1", h1, h1, rng);
    dense(store, "enc.mlp2.l0", 2 * h1, h2, rng);
    dense(store, "enc.mlp2.l1", h2, c, rng);
    dense(store, "enc.head_p.l0", c, hh, rng);
    // Zero-initialized scores make the masked softmax uniform, so the
    // learnable sampler starts exactly at the valid-point mean and training
    // moves the weights only where that pays off.
    store.insert("enc.head_p.l1.w", Array::zeros(&[hh, 3]));
    store.insert("enc.head_p.l1.b", Array::zeros(&[3]));
    dense(store, "enc.head_f.l0", c, hh, rng);
    dense(store, "enc.head_f.l1", hh, c, rng);
    dense(store, "enc.proj", c + 3, c, rng);
}

/// Uniform Glorot initialization in +-sqrt(6 / (fan_in + fan_out)).
pub fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Array::from_vec(&[fan_in, fan_out], data)
}

pub(crate) fn linear(tape: &Tape, x: Var, params: &TapeParams, name: &str) -> Var {
    let w = params.var(&format!("{}.w", name));
    let b = params.var(&format!("{}.b", name));
    tape.add(tape.matmul(x, w), b)
}

/// exp-and-normalize over the leading axis, restricted to flagged rows.
/// Scores are shifted by the masked max before exponentiation; the resulting
/// weights are identical (the shift cancels) and overflow-safe.
pub(crate) fn masked_softmax_axis0(
    tape: &Tape,
    logits: Var,
    flags: &[bool],
    mask: Var,
) -> (Var, Var) {
    let shift = tape.reduce_max_masked(logits, flags);
    let shifted = tape.sub(logits, shift);
    let exps = tape.mul(tape.exp(shifted), mask);
    let denom = tape.reduce_sum_axis0(exps);
    let weights = tape.div(exps, denom);
    (weights, exps)
}

/// Mean of the valid points, on tape: [3].
pub fn valid_mean(tape: &Tape, input: &PatchInput) -> Var {
    let mask3 = input.mask(tape, 3);
    let masked = tape.mul(input.points, mask3);
    tape.scale(tape.reduce_sum_axis0(masked), 1.0 / input.valid_count as f64)
}

/// Per-point features via a shared MLP, a masked global max-pool, and a
/// combining MLP: f_i = MLP2(concat(h_i, g)), h_i = MLP1(p_i - mean),
/// g = masked max over valid h_i.
pub fn extract_features(
    tape: &Tape,
    params: &TapeParams,
    _cfg: &ModelConfig,
    input: &PatchInput,
) -> Var {
    let n = input.len();
    let center = valid_mean(tape, input);
    let centered = tape.sub(input.points, center);
    let h = linear(tape, centered, params, "enc.mlp1.l0");
    let h = tape.relu(h);
    let h = linear(tape, h, params, "enc.mlp1.l1");
    let global = tape.reduce_max_masked(h, &input.flags);
    let global_rows = tape.broadcast0(global, n);
    let combined = tape.concat(&[h, global_rows], 1);
    let f = linear(tape, combined, params, "enc.mlp2.l0");
    let f = tape.relu(f);
    linear(tape, f, params, "enc.mlp2.l1")
}

/// Position from already-computed per-point scores: weights are the masked
/// softmax of the scores per coordinate channel, and the position is the
/// weighted per-channel sum of the patch points.
pub fn sample_from_scores(
    tape: &Tape,
    input: &PatchInput,
    score_logits: Var,
) -> (Var, SamplingDetail) {
    let mask3 = input.mask(tape, 3);
    let (weights, score_exps) = masked_softmax_axis0(tape, score_logits, &input.flags, mask3);
    let position = tape.reduce_sum_axis0(tape.mul(weights, input.points));
    (position, SamplingDetail { score_exps, weights })
}

/// Learnable sampler: per-point 3-channel scores from a shared head over the
/// features, then the masked-softmax aggregation.
pub fn sample_point(
    tape: &Tape,
    params: &TapeParams,
    input: &PatchInput,
    features: Var,
) -> (Var, SamplingDetail) {
    let hidden = tape.relu(linear(tape, features, params, "enc.head_p.l0"));
    let logits = linear(tape, hidden, params, "enc.head_p.l1");
    sample_from_scores(tape, input, logits)
}

/// Feature for the sampled position: offsets are concatenated with the point
/// features, projected to C channels, and aggregated with a second set of
/// masked-softmax weights.
pub fn aggregate_feature(
    tape: &Tape,
    params: &TapeParams,
    cfg: &ModelConfig,
    input: &PatchInput,
    features: Var,
    position: Var,
) -> (Var, AggregationDetail) {
    let offsets = tape.sub(input.points, position);
    let cat = tape.concat(&[offsets, features], 1);
    let combined = linear(tape, cat, params, "enc.proj");
    let hidden = tape.relu(linear(tape, features, params, "enc.head_f.l0"));
    let logits = linear(tape, hidden, params, "enc.head_f.l1");
    let mask_c = input.mask(tape, cfg.channels);
    let (weights, _) = masked_softmax_axis0(tape, logits, &input.flags, mask_c);
    let feature = tape.reduce_sum_axis0(tape.mul(weights, combined));
    (
        feature,
        AggregationDetail {
            offsets,
            combined,
            weights,
        },
    )
}

/// Full patch encoding under the chosen sampler. `rng` is consulted only by
/// the random sampler.
pub fn encode_patch(
    tape: &Tape,
    params: &TapeParams,
    cfg: &ModelConfig,
    input: &PatchInput,
    sampler: SamplerKind,
    rng: Option<&mut ChaCha8Rng>,
) -> PatchEncoding {
    let features = extract_features(tape, params, cfg, input);
    let (position, sampling) = match sampler {
        SamplerKind::Learnable => {
            let (p, detail) = sample_point(tape, params, input, features);
            (p, Some(detail))
        }
        SamplerKind::Mean => (valid_mean(tape, input), None),
        SamplerKind::Random => {
            let rng = rng.expect("random sampler needs an rng");
            let valid = input.valid_indices();
            let pick = valid[rng.gen_range(0..valid.len())];
            let row = tape.gather0(input.points, &[pick]);
            (tape.reshape(row, &[3]), None)
        }
    };
    let (feature, aggregation) = aggregate_feature(tape, params, cfg, input, features, position);
    PatchEncoding {
        position,
        feature,
        sampling,
        aggregation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn test_store(cfg: &ModelConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_params(&mut store, cfg, &mut rng);
        store
    }

    fn patch_from(points: Vec<[f64; 3]>, flags: Vec<bool>) -> Patch {
        let valid_count = flags.iter().filter(|&&f| f).count();
        Patch {
            points,
            flags,
            patch_index: (0, 0),
            valid_count,
        }
    }

    #[test]
    fn permuting_points_permutes_features_and_keeps_latent() {
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 5);
        let patch = patch_from(
            vec![[1.0, 0.2, 0.0], [0.5, -0.4, 0.3], [0.0, 0.1, -0.2], [0.5, -0.4, 0.3]],
            vec![true, true, true, false],
        );
        let perm = [2usize, 0, 1, 3];
        let permuted = patch_from(
            perm.iter().map(|&i| patch.points[i]).collect(),
            perm.iter().map(|&i| patch.flags[i]).collect(),
        );

        let tape = Tape::new();
        let params = TapeParams::frozen(&tape, &store);
        let a = PatchInput::new(&tape, &patch);
        let b = PatchInput::new(&tape, &permuted);
        let fa = tape.value(extract_features(&tape, &params, &cfg, &a));
        let fb = tape.value(extract_features(&tape, &params, &cfg, &b));
        let c = cfg.channels;
        for (to, &from) in perm.iter().enumerate() {
            for ch in 0..c {
                assert!(
                    (fa.data()[from * c + ch] - fb.data()[to * c + ch]).abs() < 1e-12,
                    "features must permute with points"
                );
            }
        }

        let ea = encode_patch(&tape, &params, &cfg, &a, SamplerKind::Learnable, None);
        let eb = encode_patch(&tape, &params, &cfg, &b, SamplerKind::Learnable, None);
        let (pa, pb) = (tape.value(ea.position), tape.value(eb.position));
        for d in 0..3 {
            assert!((pa.data()[d] - pb.data()[d]).abs() < 1e-12);
        }
        let (qa, qb) = (tape.value(ea.feature), tape.value(eb.feature));
        for d in 0..c {
            assert!((qa.data()[d] - qb.data()[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_points_give_identical_features() {
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 6);
        let patch = patch_from(vec![[0.3, -0.2, 0.9]; 4], vec![true; 4]);
        let tape = Tape::new();
        let params = TapeParams::frozen(&tape, &store);
        let input = PatchInput::new(&tape, &patch);
        let f = tape.value(extract_features(&tape, &params, &cfg, &input));
        let c = cfg.channels;
        for row in 1..4 {
            for ch in 0..c {
                assert_eq!(f.data()[ch], f.data()[row * c + ch]);
            }
        }
    }

    #[test]
    fn masked_pool_ignores_rogue_invalid_point() {
        // An invalid slot holding an extreme non-copy point must not leak
        // into the pooled global feature.
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 7);
        let base = patch_from(
            vec![[0.4, 0.1, 0.0], [-0.2, 0.3, 0.2], [0.1, -0.1, 0.1], [0.1, -0.1, 0.1]],
            vec![true, true, true, false],
        );
        let mut rogue = base.clone();
        rogue.points[3] = [50.0, -40.0, 30.0];

        let tape = Tape::new();
        let params = TapeParams::frozen(&tape, &store);
        let ea = encode_patch(
            &tape,
            &params,
            &cfg,
            &PatchInput::new(&tape, &base),
            SamplerKind::Learnable,
            None,
        );
        let eb = encode_patch(
            &tape,
            &params,
            &cfg,
            &PatchInput::new(&tape, &rogue),
            SamplerKind::Learnable,
            None,
        );
        // The centroid uses valid points only and pooling is masked, so the
        // latent must not move.
        let (pa, pb) = (tape.value(ea.position), tape.value(eb.position));
        for d in 0..3 {
            assert!((pa.data()[d] - pb.data()[d]).abs() < 1e-9);
        }
        let (fa, fb) = (tape.value(ea.feature), tape.value(eb.feature));
        for d in 0..cfg.channels {
            assert!((fa.data()[d] - fb.data()[d]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_valid_point_is_sampled_exactly() {
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 8);
        let target = [1.25, -0.75, 2.5];
        let patch = patch_from(
            vec![target, target, target, target],
            vec![false, false, true, false],
        );
        let tape = Tape::new();
        let params = TapeParams::frozen(&tape, &store);
        let input = PatchInput::new(&tape, &patch);
        let enc = encode_patch(&tape, &params, &cfg, &input, SamplerKind::Learnable, None);
        let p = tape.value(enc.position);
        for d in 0..3 {
            assert_eq!(p.data()[d], target[d], "single weight must be exactly 1");
        }
    }

    #[test]
    fn equal_features_sample_the_midpoint() {
        let patch = patch_from(
            vec![[1.0, 2.0, 3.0], [3.0, 0.0, -1.0]],
            vec![true, true],
        );
        let tape = Tape::new();
        let input = PatchInput::new(&tape, &patch);
        // Equal scores per channel: the softmax is uniform over valid points.
        let logits = tape.constant(Array::from_vec(&[2, 3], vec![0.7; 6]));
        let (position, _) = sample_from_scores(&tape, &input, logits);
        let p = tape.value(position);
        assert_eq!(p.data(), &[2.0, 1.0, 1.0]);
    }

    #[test]
    fn hand_logits_give_one_third_two_thirds() {
        // Scores (0, ln 2) on channel x: weights (1/3, 2/3),
        // p*_x = (p1x + 2 p2x) / 3.
        let patch = patch_from(vec![[1.0, 0.0, 0.0], [4.0, 0.0, 0.0]], vec![true, true]);
        let tape = Tape::new();
        let input = PatchInput::new(&tape, &patch);
        let logits = tape.constant(Array::from_vec(
            &[2, 3],
            vec![0.0, 0.0, 0.0, 2.0f64.ln(), 0.0, 0.0],
        ));
        let (position, detail) = sample_from_scores(&tape, &input, logits);
        let w = tape.value(detail.weights);
        assert!((w.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w.data()[3] - 2.0 / 3.0).abs() < 1e-15);
        let p = tape.value(position);
        assert!((p.data()[0] - 3.0).abs() < 1e-15, "(1*1 + 2*4)/3 = 3");
    }

    #[test]
    fn weights_form_simplex_with_zeros_at_invalid() {
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 9);
        let patch = patch_from(
            vec![[0.5, 0.2, -0.1], [1.0, -0.3, 0.4], [0.5, 0.2, -0.1], [-0.2, 0.8, 0.3]],
            vec![true, true, false, true],
        );
        let tape = Tape::new();
        let params = TapeParams::frozen(&tape, &store);
        let input = PatchInput::new(&tape, &patch);
        let enc = encode_patch(&tape, &params, &cfg, &input, SamplerKind::Learnable, None);
        let wp = tape.value(enc.sampling.as_ref().unwrap().weights);
        for ch in 0..3 {
            let sum: f64 = (0..4).map(|i| wp.data()[i * 3 + ch]).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert_eq!(wp.data()[2 * 3 + ch], 0.0, "invalid slot weight must be 0");
        }
        let wf = tape.value(enc.aggregation.weights);
        for ch in 0..cfg.channels {
            let sum: f64 = (0..4).map(|i| wf.data()[i * cfg.channels + ch]).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert_eq!(wf.data()[2 * cfg.channels + ch], 0.0);
        }
    }

    #[test]
    fn position_stays_in_valid_hull() {
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 10);
        let patch = patch_from(
            vec![[0.0, 0.0, 0.0], [2.0, 1.0, -1.0], [1.0, 4.0, 2.0], [0.0, 0.0, 0.0]],
            vec![true, true, true, false],
        );
        let tape = Tape::new();
        let params = TapeParams::frozen(&tape, &store);
        let input = PatchInput::new(&tape, &patch);
        let enc = encode_patch(&tape, &params, &cfg, &input, SamplerKind::Learnable, None);
        let p = tape.value(enc.position);
        for d in 0..3 {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (i, &f) in patch.flags.iter().enumerate() {
                if f {
                    lo = lo.min(patch.points[i][d]);
                    hi = hi.max(patch.points[i][d]);
                }
            }
            assert!(p.data()[d] >= lo - 1e-6 && p.data()[d] <= hi + 1e-6);
        }
    }

    #[test]
    fn extra_duplicates_change_nothing() {
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 11);
        let base = patch_from(
            vec![[0.4, 0.2, 0.1], [1.2, -0.5, 0.3], [0.4, 0.2, 0.1]],
            vec![true, true, false],
        );
        let extended = patch_from(
            vec![
                [0.4, 0.2, 0.1],
                [1.2, -0.5, 0.3],
                [0.4, 0.2, 0.1],
                [1.2, -0.5, 0.3],
                [1.2, -0.5, 0.3],
            ],
            vec![true, true, false, false, false],
        );
        let tape = Tape::new();
        let params = TapeParams::frozen(&tape, &store);
        let ea = encode_patch(
            &tape, &params, &cfg, &PatchInput::new(&tape, &base), SamplerKind::Learnable, None,
        );
        let eb = encode_patch(
            &tape, &params, &cfg, &PatchInput::new(&tape, &extended), SamplerKind::Learnable, None,
        );
        assert_eq!(tape.value(ea.position).data(), tape.value(eb.position).data());
        assert_eq!(tape.value(ea.feature).data(), tape.value(eb.feature).data());
    }

    #[test]
    fn mean_sampler_takes_valid_average() {
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 12);
        let patch = patch_from(
            vec![[1.0, 0.0, 2.0], [3.0, 4.0, 0.0], [1.0, 0.0, 2.0]],
            vec![true, true, false],
        );
        let tape = Tape::new();
        let params = TapeParams::frozen(&tape, &store);
        let input = PatchInput::new(&tape, &patch);
        let enc = encode_patch(&tape, &params, &cfg, &input, SamplerKind::Mean, None);
        assert_eq!(tape.value(enc.position).data(), &[2.0, 2.0, 1.0]);
    }

    #[test]
    fn random_sampler_picks_a_valid_point_deterministically() {
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 13);
        let patch = patch_from(
            vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![true, true, true, false],
        );
        let tape = Tape::new();
        let params = TapeParams::frozen(&tape, &store);
        let input = PatchInput::new(&tape, &patch);
        let mut rng1 = ChaCha8Rng::seed_from_u64(99);
        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let e1 = encode_patch(&tape, &params, &cfg, &input, SamplerKind::Random, Some(&mut rng1));
        let e2 = encode_patch(&tape, &params, &cfg, &input, SamplerKind::Random, Some(&mut rng2));
        let p1 = tape.value(e1.position);
        assert_eq!(p1.data(), tape.value(e2.position).data());
        let chosen = [p1.data()[0], p1.data()[1], p1.data()[2]];
        assert!(patch
            .valid_points()
            .iter()
            .any(|v| *v == chosen));
    }

    #[test]
    fn aggregation_matches_straight_line_evaluation() {
        // Independent re-evaluation of the whole encoder with plain loops.
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 14);
        let patch = patch_from(
            vec![[0.6, -0.1, 0.2], [0.1, 0.4, -0.3], [-0.5, 0.2, 0.1]],
            vec![true, true, true],
        );
        let tape = Tape::new();
        let params = TapeParams::frozen(&tape, &store);
        let input = PatchInput::new(&tape, &patch);
        let enc = encode_patch(&tape, &params, &cfg, &input, SamplerKind::Learnable, None);
        let got_p = tape.value(enc.position);
        let got_f = tape.value(enc.feature);

        let (exp_p, exp_f) = reference_encoder(&store, &cfg, &patch);
        for d in 0..3 {
            assert!((got_p.data()[d] - exp_p[d]).abs() < 1e-10, "position ch {}", d);
        }
        for d in 0..cfg.channels {
            assert!((got_f.data()[d] - exp_f[d]).abs() < 1e-10, "feature ch {}", d);
        }
    }

    /// Plain-loop reimplementation of the encoder used as a test oracle.
    fn reference_encoder(store: &ParamStore, cfg: &ModelConfig, patch: &Patch) -> ([f64; 3], Vec<f64>) {
        let n = patch.len();
        let c = cfg.channels;
        let w = |name: &str| store.get(&format!("{}.w", name));
        let b = |name: &str| store.get(&format!("{}.b", name));
        let dense = |x: &[Vec<f64>], name: &str, relu: bool| -> Vec<Vec<f64>> {
            let wm = w(name);
            let bv = b(name);
            let (fi, fo) = (wm.rows(), wm.cols());
            x.iter()
                .map(|row| {
                    assert_eq!(row.len(), fi);
                    (0..fo)
                        .map(|j| {
                            let mut s = bv.data()[j];
                            for (k, &xv) in row.iter().enumerate() {
                                s += xv * wm.data()[k * fo + j];
                            }
                            if relu {
                                s.max(0.0)
                            } else {
                                s
                            }
                        })
                        .collect()
                })
                .collect()
        };

        let mut mean = [0.0; 3];
        for (i, &f) in patch.flags.iter().enumerate() {
            if f {
                for d in 0..3 {
                    mean[d] += patch.points[i][d];
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= patch.valid_count as f64;
        }
        let centered: Vec<Vec<f64>> = patch
            .points
            .iter()
            .map(|p| (0..3).map(|d| p[d] - mean[d]).collect())
            .collect();
        let h = dense(&dense(&centered, "enc.mlp1.l0", true), "enc.mlp1.l1", false);
        let mut global = vec![f64::NEG_INFINITY; cfg.mlp1_hidden];
        for (i, &f) in patch.flags.iter().enumerate() {
            if f {
                for (j, g) in global.iter_mut().enumerate() {
                    *g = g.max(h[i][j]);
                }
            }
        }
        let cat: Vec<Vec<f64>> = h
            .iter()
            .map(|hi| hi.iter().chain(global.iter()).copied().collect())
            .collect();
        let f = dense(&dense(&cat, "enc.mlp2.l0", true), "enc.mlp2.l1", false);

        let softmax_weights = |logits: &[Vec<f64>], ch: usize| -> Vec<Vec<f64>> {
            let mut weights = vec![vec![0.0; ch]; n];
            for j in 0..ch {
                let mut denom = 0.0;
                for i in 0..n {
                    if patch.flags[i] {
                        denom += logits[i][j].exp();
                    }
                }
                for i in 0..n {
                    if patch.flags[i] {
                        weights[i][j] = logits[i][j].exp() / denom;
                    }
                }
            }
            weights
        };

        let p_logits = dense(&dense(&f, "enc.head_p.l0", true), "enc.head_p.l1", false);
        let wp = softmax_weights(&p_logits, 3);
        let mut position = [0.0; 3];
        for i in 0..n {
            for d in 0..3 {
                position[d] += wp[i][d] * patch.points[i][d];
            }
        }

        let combined_in: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..3)
                    .map(|d| patch.points[i][d] - position[d])
                    .chain(f[i].iter().copied())
                    .collect()
            })
            .collect();
        let fl = dense(&combined_in, "enc.proj", false);
        let f_logits = dense(&dense(&f, "enc.head_f.l0", true), "enc.head_f.l1", false);
        let wf = softmax_weights(&f_logits, c);
        let mut feature = vec![0.0; c];
        for i in 0..n {
            for d in 0..c {
                feature[d] += wf[i][d] * fl[i][d];
            }
        }
        (position, feature)
    }

    #[test]
    fn encoder_gradcheck_against_inputs_and_params() {
        let cfg = ModelConfig::tiny();
        let store = test_store(&cfg, 15);
        let patch = patch_from(
            vec![[0.5, -0.2, 0.3], [0.1, 0.6, -0.4], [-0.3, 0.2, 0.5], [0.1, 0.6, -0.4]],
            vec![true, true, true, false],
        );
        // Probe: loss = sum(p*) + sum(f*) against the point matrix and two
        // representative parameter tensors.
        let names = ["enc.head_p.l1.w", "enc.mlp2.l1.w"];
        let base: Vec<Array> = {
            let mut v = vec![Array::from_vec(
                &[4, 3],
                patch.points.iter().flat_map(|p| p.iter().copied()).collect(),
            )];
            v.extend(names.iter().map(|n| store.get(n).clone()));
            v
        };
        let err = crate::autodiff::gradcheck(
            |t, xs| {
                let params = TapeParams::frozen(t, &store);
                let input = PatchInput {
                    points: xs[0],
                    flags: vec![true, true, true, false],
                    valid_count: 3,
                };
                let enc = encode_with_overrides(t, &params, &cfg, &input, &names, &xs[1..]);
                t.add(t.reduce_sum_all(enc.0), t.reduce_sum_all(enc.1))
            },
            &base,
            1e-5,
        );
        assert!(err < 1e-6, "encoder gradcheck error {}", err);
    }

    /// encode_patch with chosen parameter tensors replaced by probe vars.
    fn encode_with_overrides(
        tape: &Tape,
        params: &TapeParams,
        cfg: &ModelConfig,
        input: &PatchInput,
        names: &[&str],
        probes: &[Var],
    ) -> (Var, Var) {
        let get = |name: &str| -> Var {
            if let Some(pos) = names.iter().position(|&n| n == name) {
                probes[pos]
            } else {
                params.var(name)
            }
        };
        let lin = |x: Var, name: &str| -> Var {
            let w = get(&format!("{}.w", name));
            let b = get(&format!("{}.b", name));
            tape.add(tape.matmul(x, w), b)
        };
        let n = input.len();
        let center = valid_mean(tape, input);
        let centered = tape.sub(input.points, center);
        let h = lin(centered, "enc.mlp1.l0");
        let h = tape.relu(h);
        let h = lin(h, "enc.mlp1.l1");
        let global = tape.reduce_max_masked(h, &input.flags);
        let global_rows = tape.broadcast0(global, n);
        let combined = tape.concat(&[h, global_rows], 1);
        let f = tape.relu(lin(combined, "enc.mlp2.l0"));
        let f = lin(f, "enc.mlp2.l1");
        let hidden = tape.relu(lin(f, "enc.head_p.l0"));
        let logits = lin(hidden, "enc.head_p.l1");
        let (position, _) = sample_from_scores(tape, input, logits);
        let offsets = tape.sub(input.points, position);
        let cat = tape.concat(&[offsets, f], 1);
        let fl = lin(cat, "enc.proj");
        let hf = tape.relu(lin(f, "enc.head_f.l0"));
        let lf = lin(hf, "enc.head_f.l1");
        let mask_c = input.mask(tape, cfg.channels);
        let (wf, _) = masked_softmax_axis0(tape, lf, &input.flags, mask_c);
        let feature = tape.reduce_sum_axis0(tape.mul(wf, fl));
        (position, feature)
    }
}
