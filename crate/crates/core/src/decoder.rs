//! Per-patch decoder: expands one latent back into N points.
//!
//! The latent feature is first upsampled to N slot features (slot identity
//! supplied by learned embeddings), which predict offsets from the decoded
//! position. Each initial point is then expanded into N_c candidates with a
//! second upsampling round, and the candidates are fused by a softmax over
//! learned weights, per slot and coordinate channel. Offset heads start at
//! zero, so an untrained decoder reproduces the latent position exactly.

use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::encoder::{glorot, linear};
use crate::optim::{ParamStore, TapeParams};

/// Decoded patch with intermediates for inspection and tests.
pub struct DecodedPatch {
    /// Slot features after the first upsampling, [N,C].
    pub slot_features: Var,
    /// Initial points: position + predicted offset, [N,3].
    pub initial_points: Var,
    /// Candidate points per expansion index, each [N,3].
    pub candidates: Vec<Var>,
    /// Fusion weights per expansion index, each [N,3]; simplex over the index.
    pub fusion_weights: Vec<Var>,
    /// Fused reconstruction, [N,3].
    pub points: Var,
}

pub fn init_params(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    slots: usize,
    rng: &mut ChaCha8Rng,
) {
    let c = cfg.channels;
    let (h2, hh, e) = (cfg.mlp2_hidden, cfg.head_hidden, cfg.embed_dim);
    let dense = |store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
        store.insert(&format!("{}.w", name), glorot(rng, fan_in, fan_out));
        store.insert(&format!("{}.b", name), Array::zeros(&[fan_out]));
    };
    store.insert("dec.slot_embed", embedding(rng, slots, e));
    store.insert("dec.cand_embed", embedding(rng, cfg.expansion, e));
    dense(store, "dec.up1.l0", c + e, h2, rng);
    dense(store, "dec.up1.l1", h2, c, rng);
    dense(store, "dec.off1.l0", c, hh, rng);
    store.insert("dec.off1.l1.w", Array::zeros(&[hh, 3]));
    store.insert("dec.off1.l1.b", Array::zeros(&[3]));
    dense(store, "dec.up2.l0", c + e, h2, rng);
    dense(store, "dec.up2.l1", h2, c, rng);
    dense(store, "dec.off2.l0", c, hh, rng);
    store.insert("dec.off2.l1.w", Array::zeros(&[hh, 3]));
    store.insert("dec.off2.l1.b", Array::zeros(&[3]));
    dense(store, "dec.fuse.l0", c, hh, rng);
    dense(store, "dec.fuse.l1", hh, 3, rng);
}

fn embedding(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array {
    use rand::Rng;
    let data: Vec<f64> = (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Array::from_vec(&[rows, dim], data)
}

fn mlp2(tape: &Tape, params: &TapeParams, x: Var, name: &str) -> Var {
    let h = tape.relu(linear(tape, x, params, &format!("{}.l0", name)));
    linear(tape, h, params, &format!("{}.l1", name))
}

/// Upsamples the latent feature to N slot features and adds the predicted
/// offsets to the decoded position.
pub fn initial_upsample(
    tape: &Tape,
    params: &TapeParams,
    slots: usize,
    position: Var,
    feature: Var,
) -> (Var, Var) {
    let slot_embed = params.var("dec.slot_embed");
    let embed_rows = tape.peek(slot_embed, |a| a.rows());
    assert_eq!(
        embed_rows, slots,
        "checkpoint was trained for {} slots per patch, not {}",
        embed_rows, slots
    );
    let feature_rows = tape.broadcast0(feature, slots);
    let cat = tape.concat(&[feature_rows, slot_embed], 1);
    let slot_features = mlp2(tape, params, cat, "dec.up1");
    let offsets = mlp2(tape, params, slot_features, "dec.off1");
    let initial = tape.add(tape.broadcast0(position, slots), offsets);
    (slot_features, initial)
}

/// Expands every initial point into `expansion` candidates with features.
pub fn expand(
    tape: &Tape,
    params: &TapeParams,
    slot_features: Var,
    initial_points: Var,
    expansion: usize,
) -> (Vec<Var>, Vec<Var>) {
    assert!(expansion >= 1, "expansion ratio must be at least 1");
    let slots = tape.peek(slot_features, |a| a.rows());
    let cand_embed = params.var("dec.cand_embed");
    assert!(
        tape.peek(cand_embed, |a| a.rows()) >= expansion,
        "checkpoint supports fewer candidates than requested"
    );
    let embed_dim = tape.peek(cand_embed, |a| a.cols());
    let mut candidates = Vec::with_capacity(expansion);
    let mut features = Vec::with_capacity(expansion);
    for j in 0..expansion {
        let ej = tape.reshape(tape.gather0(cand_embed, &[j]), &[embed_dim]);
        let ej_rows = tape.broadcast0(ej, slots);
        let cat = tape.concat(&[slot_features, ej_rows], 1);
        let fj = mlp2(tape, params, cat, "dec.up2");
        let offset = mlp2(tape, params, fj, "dec.off2");
        candidates.push(tape.add(initial_points, offset));
        features.push(fj);
    }
    (candidates, features)
}

/// Fuses candidates with a softmax over the expansion index, per slot and
/// coordinate channel (no masking here; all candidates participate).
pub fn fuse(
    tape: &Tape,
    params: &TapeParams,
    candidates: &[Var],
    candidate_features: &[Var],
) -> (Var, Vec<Var>) {
    assert_eq!(candidates.len(), candidate_features.len());
    let logits: Vec<Var> = candidate_features
        .iter()
        .map(|&fj| mlp2(tape, params, fj, "dec.fuse"))
        .collect();
    // Shift by the running max for overflow safety; weights are unchanged.
    let mut shift = logits[0];
    for &l in &logits[1..] {
        shift = tape.maximum(shift, l);
    }
    let exps: Vec<Var> = logits.iter().map(|&l| tape.exp(tape.sub(l, shift))).collect();
    let mut denom = exps[0];
    for &e in &exps[1..] {
        denom = tape.add(denom, e);
    }
    let weights: Vec<Var> = exps.iter().map(|&e| tape.div(e, denom)).collect();
    let mut fused = tape.mul(weights[0], candidates[0]);
    for j in 1..candidates.len() {
        fused = tape.add(fused, tape.mul(weights[j], candidates[j]));
    }
    (fused, weights)
}

/// Full decode of one latent into N points using `expansion` candidates.
pub fn decode_patch(
    tape: &Tape,
    params: &TapeParams,
    slots: usize,
    position: Var,
    feature: Var,
    expansion: usize,
) -> DecodedPatch {
    let (slot_features, initial_points) = initial_upsample(tape, params, slots, position, feature);
    let (candidates, candidate_features) = expand(tape, params, slot_features, initial_points, expansion);
    let (points, fusion_weights) = fuse(tape, params, &candidates, &candidate_features);
    DecodedPatch {
        slot_features,
        initial_points,
        candidates,
        fusion_weights,
        points,
    }
}
