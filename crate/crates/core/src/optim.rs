//! Named parameters, Adam updates, and the checkpoint container.
//!
//! A `ParamStore` maps names to arrays plus per-parameter Adam state.
//! During a training step the parameters used by the forward pass are bound
//! onto a tape through `TapeParams`; after `backward`, `adam_step` pulls the
//! gradients off the tape and updates the store. Iteration is always in
//! name order, so runs are reproducible and checkpoints byte-identical.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::util::fnv1a64;

const CHECKPOINT_MAGIC: &[u8; 4] = b"LPRS";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("malformed checkpoint record: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("missing gradient for parameter '{0}'")]
    MissingGradient(String),
}

/// Adam hyperparameters. Defaults follow the usual 1e-3 / 0.9 / 0.999 / 1e-8.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct ParamEntry {
    value: Array,
    m: Array,
    v: Array,
    t: u64,
}

/// Named parameter set with per-parameter Adam moments.
#[derive(Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array) {
        let m = Array::zeros(value.shape());
        let v = Array::zeros(value.shape());
        self.entries
            .insert(name.to_string(), ParamEntry { value, m, v, t: 0 });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Array {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{}'", name))
            .value
    }

    pub fn set(&mut self, name: &str, value: Array) {
        let entry = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter '{}'", name));
        assert_eq!(entry.value.shape(), value.shape(), "set: shape change for '{}'", name);
        entry.value = value;
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serialized form: magic, version, then one record per array. Values are
    /// stored as little-endian f32; Adam moments ride along under `<name>.m`
    /// and `<name>.v`, step counts under `<name>.t`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for (name, entry) in &self.entries {
            write_record(&mut out, name, &entry.value);
            write_record(&mut out, &format!("{}.m", name), &entry.m);
            write_record(&mut out, &format!("{}.v", name), &entry.v);
            write_record(&mut out, &format!("{}.t", name), &Array::vector(&[entry.t as f64]));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 6 {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let mut pos = 6;
        let mut values: BTreeMap<String, Array> = BTreeMap::new();
        while pos < bytes.len() {
            let (name, array, next) = read_record(bytes, pos)?;
            values.insert(name, array);
            pos = next;
        }
        let mut store = ParamStore::new();
        let names: Vec<String> = values
            .keys()
            .filter(|k| {
                !(k.ends_with(".m") || k.ends_with(".v") || k.ends_with(".t"))
            })
            .cloned()
            .collect();
        for name in names {
            let value = values.remove(&name).unwrap();
            let m = values.remove(&format!("{}.m", name));
            let v = values.remove(&format!("{}.v", name));
            let t = values.remove(&format!("{}.t", name));
            let shape = value.shape().to_vec();
            let entry = ParamEntry {
                value,
                m: m.unwrap_or_else(|| Array::zeros(&shape)),
                v: v.unwrap_or_else(|| Array::zeros(&shape)),
                t: t.map(|a| a.item() as u64).unwrap_or(0),
            };
            store.entries.insert(name, entry);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut file = fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// 64-bit identifier of every parameter whose name starts with `prefix`,
    /// computed over the serialized (f32) records in name order.
    pub fn hash_prefix(&self, prefix: &str) -> u64 {
        let mut buf = Vec::new();
        for (name, entry) in &self.entries {
            if name.starts_with(prefix) {
                write_record(&mut buf, name, &entry.value);
            }
        }
        fnv1a64(&buf)
    }
}

fn write_record(out: &mut Vec<u8>, name: &str, array: &Array) {
    let name_bytes = name.as_bytes();
    out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(name_bytes);
    out.push(array.rank() as u8);
    for &d in array.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in array.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

fn read_record(bytes: &[u8], mut pos: usize) -> Result<(String, Array, usize), CheckpointError> {
    let need = |pos: usize, n: usize| {
        if pos + n > bytes.len() {
            Err(CheckpointError::Truncated)
        } else {
            Ok(())
        }
    };
    need(pos, 2)?;
    let name_len = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as usize;
    pos += 2;
    need(pos, name_len)?;
    let name = String::from_utf8(bytes[pos..pos + name_len].to_vec())
        .map_err(|_| CheckpointError::Malformed("non-utf8 name".into()))?;
    pos += name_len;
    need(pos, 1)?;
    let rank = bytes[pos] as usize;
    pos += 1;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        need(pos, 4)?;
        shape.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
        pos += 4;
    }
    let count: usize = shape.iter().product();
    need(pos, count * 4)?;
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = pos + i * 4;
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
    }
    pos += count * 4;
    Ok((name, Array::from_vec(&shape, data), pos))
}

/// Lazily binds store parameters onto a tape. Bind once per step; `finish`
/// hands back the name->node map for the optimizer.
pub struct TapeParams<'a> {
    tape: &'a Tape,
    store: &'a ParamStore,
    trainable: bool,
    map: RefCell<BTreeMap<String, Var>>,
}

impl<'a> TapeParams<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore) -> Self {
        TapeParams {
            tape,
            store,
            trainable: true,
            map: RefCell::new(BTreeMap::new()),
        }
    }

    /// Binding for inference: parameters enter the tape as constants.
    pub fn frozen(tape: &'a Tape, store: &'a ParamStore) -> Self {
        TapeParams {
            tape,
            store,
            trainable: false,
            map: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn var(&self, name: &str) -> Var {
        if let Some(&v) = self.map.borrow().get(name) {
            return v;
        }
        let value = self.store.get(name).clone();
        let v = if self.trainable {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.map.borrow_mut().insert(name.to_string(), v);
        v
    }

    /// Pre-binds a name to an existing tape node, overriding the store value.
    /// Probe nodes for gradient checks enter the real code paths this way.
    pub fn bind(&self, name: &str, var: Var) {
        self.map.borrow_mut().insert(name.to_string(), var);
    }

    pub fn finish(self) -> BTreeMap<String, Var> {
        self.map.into_inner()
    }
}

/// One Adam update with bias correction over every bound parameter.
/// Gradients live on the tape and are discarded with it afterwards.
pub fn adam_step(
    store: &mut ParamStore,
    tape: &Tape,
    bound: &BTreeMap<String, Var>,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    for (name, &var) in bound {
        let grad = tape
            .grad(var)
            .ok_or_else(|| OptimError::MissingGradient(name.clone()))?;
        let entry = store
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("bound parameter '{}' missing from store", name));
        entry.t += 1;
        let t = entry.t as i32;
        let b1t = 1.0 - cfg.beta1.powi(t);
        let b2t = 1.0 - cfg.beta2.powi(t);
        for i in 0..entry.value.len() {
            let g = grad.data()[i];
            let m = cfg.beta1 * entry.m.data()[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * entry.v.data()[i] + (1.0 - cfg.beta2) * g * g;
            entry.m.data_mut()[i] = m;
            entry.v.data_mut()[i] = v;
            let m_hat = m / b1t;
            let v_hat = v / b2t;
            entry.value.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with_scalar(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Array::scalar(x));
        s
    }

    fn one_step(store: &mut ParamStore, cfg: &AdamConfig) {
        // loss = w, so the gradient is exactly 1.
        let tape = Tape::new();
        let params = TapeParams::new(&tape, store);
        let w = params.var("w");
        let loss = tape.reduce_sum_all(w);
        tape.backward(loss);
        let bound = params.finish();
        adam_step(store, &tape, &bound, cfg).unwrap();
    }

    #[test]
    fn first_adam_step_moves_by_about_lr() {
        // Hand evaluation of bias-corrected Adam, step 1, gradient 1:
        // m_hat = v_hat = 1, so delta = lr / (1 + eps).
        let cfg = AdamConfig::default();
        let mut store = store_with_scalar(0.25);
        one_step(&mut store, &cfg);
        let expected = 0.25 - cfg.lr / (1.0 + cfg.epsilon);
        assert!((store.get("w").item() - expected).abs() < 1e-15);
        assert!((0.25 - store.get("w").item() - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let cfg = AdamConfig::default();
        let mut store = store_with_scalar(1.0);
        let mut prev = 1.0;
        for _ in 0..2 {
            one_step(&mut store, &cfg);
            let now = store.get("w").item();
            assert!(now < prev, "positive gradient must decrease the parameter");
            prev = now;
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let cfg = AdamConfig::default();
        let mut store = store_with_scalar(3.0);
        let tape = Tape::new();
        let params = TapeParams::new(&tape, &store);
        let w = params.var("w");
        // loss = 0 * w: reachable but with exactly zero gradient
        let z = tape.scale(w, 0.0);
        let loss = tape.reduce_sum_all(z);
        tape.backward(loss);
        let bound = params.finish();
        adam_step(&mut store, &tape, &bound, &cfg).unwrap();
        assert_eq!(store.get("w").item(), 3.0);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = store_with_scalar(1.0);
        store.insert("unused", Array::scalar(5.0));
        let tape = Tape::new();
        let params = TapeParams::new(&tape, &store);
        let w = params.var("w");
        let _unused = params.var("unused");
        let loss = tape.reduce_sum_all(w);
        tape.backward(loss);
        let bound = params.finish();
        let err = adam_step(&mut store, &tape, &bound, &AdamConfig::default());
        assert!(matches!(err, Err(OptimError::MissingGradient(n)) if n == "unused"));
    }

    #[test]
    fn checkpoint_round_trip_preserves_f32_values() {
        let mut store = ParamStore::new();
        store.insert("a.w", Array::matrix(2, 2, vec![0.1, -0.2, 0.3, 0.4]));
        store.insert("b", Array::vector(&[1.5]));
        let bytes = store.to_bytes();
        let loaded = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes(), bytes);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(matches!(
            ParamStore::from_bytes(b"XXXX\x01\x00"),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(
            ParamStore::from_bytes(b"LP"),
            Err(CheckpointError::Truncated)
        ));
    }

    #[test]
    fn hash_prefix_changes_with_values() {
        let mut a = ParamStore::new();
        a.insert("ebm.x", Array::vector(&[1.0, 2.0]));
        a.insert("enc.y", Array::vector(&[9.0]));
        let mut b = ParamStore::new();
        b.insert("ebm.x", Array::vector(&[1.0, 2.5]));
        b.insert("enc.y", Array::vector(&[9.0]));
        assert_ne!(a.hash_prefix("ebm."), b.hash_prefix("ebm."));
        // Non-prefixed parameters do not influence the hash.
        let mut c = ParamStore::new();
        c.insert("ebm.x", Array::vector(&[1.0, 2.0]));
        c.insert("enc.y", Array::vector(&[-3.0]));
        assert_eq!(a.hash_prefix("ebm."), c.hash_prefix("ebm."));
    }
}
