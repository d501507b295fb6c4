//! Reverse-mode differentiation over dense arrays.
//!
//! A `Tape` is an append-only arena of nodes. Ops record their parents and
//! enough structure to replay the chain rule; `backward` walks the arena in
//! reverse creation order, which is already a reverse topological order, and
//! accumulates gradients. Everything is f64 and single-threaded per tape, so
//! gradients are bit-identical across runs for the same graph.
//!
//! Shape discipline: binary elementwise ops accept identical shapes, or a
//! right operand whose shape is a suffix of the left's (leading-dimension
//! expansion, e.g. bias rows). Any other mismatch panics with the op name.

use std::cell::RefCell;

use crate::array::{suffix_of, Array};

/// Handle to a tape node. Only meaningful with the tape that produced it.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Maximum(Var, Var),
    Matmul(Var, Var),
    Concat(Vec<Var>, usize),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    ClampMin(Var, f64),
    ReduceSumAll(Var),
    ReduceSumAxis0(Var),
    ReduceMaxMasked(Var, Vec<bool>),
    Broadcast0(Var, usize),
    Gather0(Var, Vec<usize>),
    Reshape(Var),
}

struct Inner {
    values: Vec<Array>,
    grads: Vec<Option<Array>>,
    ops: Vec<Op>,
    requires: Vec<bool>,
}

/// Append-only computation graph.
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                values: Vec::new(),
                grads: Vec::new(),
                ops: Vec::new(),
                requires: Vec::new(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array, op: Op, requires: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(value);
        inner.grads.push(None);
        inner.ops.push(op);
        inner.requires.push(requires);
        Var(inner.values.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.inner.borrow().requires[v.0]
    }

    /// Value with no gradient tracking.
    pub fn constant(&self, a: Array) -> Var {
        self.push(a, Op::Leaf, false)
    }

    /// Differentiable input (parameter or probe point).
    pub fn leaf(&self, a: Array) -> Var {
        self.push(a, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Array {
        self.inner.borrow().values[v.0].clone()
    }

    /// Read-only access without cloning.
    pub fn peek<R>(&self, v: Var, f: impl FnOnce(&Array) -> R) -> R {
        f(&self.inner.borrow().values[v.0])
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().values[v.0].shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.inner.borrow().values[v.0].item()
    }

    /// Gradient accumulated by the last `backward`, if the node was reached.
    pub fn grad(&self, v: Var) -> Option<Array> {
        self.inner.borrow().grads[v.0].clone()
    }

    // ---- binary elementwise ----------------------------------------------

    fn binary(&self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Array {
        let inner = self.inner.borrow();
        let (va, vb) = (&inner.values[a.0], &inner.values[b.0]);
        if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Array::from_vec(va.shape(), data)
        } else if suffix_of(vb.shape(), va.shape()) {
            let n = vb.len().max(1);
            let data = va
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, vb.data()[i % n]))
                .collect();
            Array::from_vec(va.shape(), data)
        } else {
            panic!(
                "{}: incompatible shapes {:?} and {:?}",
                name,
                va.shape(),
                vb.shape()
            );
        }
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let v = self.binary("add", a, b, |x, y| x + y);
        let req = self.requires(a) || self.requires(b);
        self.push(v, Op::Add(a, b), req)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let v = self.binary("sub", a, b, |x, y| x - y);
        let req = self.requires(a) || self.requires(b);
        self.push(v, Op::Sub(a, b), req)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let v = self.binary("mul", a, b, |x, y| x * y);
        let req = self.requires(a) || self.requires(b);
        self.push(v, Op::Mul(a, b), req)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let v = self.binary("div", a, b, |x, y| x / y);
        let req = self.requires(a) || self.requires(b);
        self.push(v, Op::Div(a, b), req)
    }

    /// Elementwise maximum; shapes must match exactly. Ties route the
    /// gradient to the first operand.
    pub fn maximum(&self, a: Var, b: Var) -> Var {
        {
            let inner = self.inner.borrow();
            assert_eq!(
                inner.values[a.0].shape(),
                inner.values[b.0].shape(),
                "maximum: shapes must match exactly"
            );
        }
        let v = self.binary("maximum", a, b, f64::max);
        let req = self.requires(a) || self.requires(b);
        self.push(v, Op::Maximum(a, b), req)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let (va, vb) = (&inner.values[a.0], &inner.values[b.0]);
            matmul_arrays(va, vb)
        };
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::Matmul(a, b), req)
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat: no inputs");
        let value = {
            let inner = self.inner.borrow();
            let arrays: Vec<&Array> = parts.iter().map(|v| &inner.values[v.0]).collect();
            concat_arrays(&arrays, axis)
        };
        let req = parts.iter().any(|&p| self.requires(p));
        self.push(value, Op::Concat(parts.to_vec(), axis), req)
    }

    // ---- unary elementwise ------------------------------------------------

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.inner.borrow().values[a.0].map(&f);
        let req = self.requires(a);
        self.push(v, op, req)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// max(x, floor); gradient passes only where x >= floor.
    pub fn clamp_min(&self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::ClampMin(a, floor), |x| x.max(floor))
    }

    // ---- reductions / structure -------------------------------------------

    pub fn reduce_sum_all(&self, a: Var) -> Var {
        let v = Array::scalar(self.inner.borrow().values[a.0].data().iter().sum());
        let req = self.requires(a);
        self.push(v, Op::ReduceSumAll(a), req)
    }

    /// Sum over the leading axis: [n, rest..] -> [rest..].
    pub fn reduce_sum_axis0(&self, a: Var) -> Var {
        let v = {
            let inner = self.inner.borrow();
            reduce_sum_axis0_array(&inner.values[a.0])
        };
        let req = self.requires(a);
        self.push(v, Op::ReduceSumAxis0(a), req)
    }

    /// Max over valid rows of the leading axis. `mask[i]` marks row i valid;
    /// at least one row must be valid. Ties backpropagate to the first
    /// maximal valid row.
    pub fn reduce_max_masked(&self, a: Var, mask: &[bool]) -> Var {
        let v = {
            let inner = self.inner.borrow();
            reduce_max_masked_array(&inner.values[a.0], mask)
        };
        let req = self.requires(a);
        self.push(v, Op::ReduceMaxMasked(a, mask.to_vec()), req)
    }

    /// Repeat along a new leading axis: [rest..] -> [n, rest..].
    pub fn broadcast0(&self, a: Var, n: usize) -> Var {
        let v = {
            let inner = self.inner.borrow();
            let va = &inner.values[a.0];
            let mut shape = vec![n];
            shape.extend_from_slice(va.shape());
            let mut data = Vec::with_capacity(n * va.len());
            for _ in 0..n {
                data.extend_from_slice(va.data());
            }
            Array::from_vec(&shape, data)
        };
        let req = self.requires(a);
        self.push(v, Op::Broadcast0(a, n), req)
    }

    /// Select rows of the leading axis. Gradient scatter-adds, so repeated
    /// indices accumulate.
    pub fn gather0(&self, a: Var, indices: &[usize]) -> Var {
        let v = {
            let inner = self.inner.borrow();
            let va = &inner.values[a.0];
            assert!(va.rank() >= 1, "gather0 on scalar");
            let n = va.shape()[0];
            let inner_len = va.len() / n.max(1);
            let mut shape = va.shape().to_vec();
            shape[0] = indices.len();
            let mut data = Vec::with_capacity(indices.len() * inner_len);
            for &i in indices {
                assert!(i < n, "gather0 index {} out of range {}", i, n);
                data.extend_from_slice(&va.data()[i * inner_len..(i + 1) * inner_len]);
            }
            Array::from_vec(&shape, data)
        };
        let req = self.requires(a);
        self.push(v, Op::Gather0(a, indices.to_vec()), req)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let v = self.inner.borrow().values[a.0].reshaped(shape);
        let req = self.requires(a);
        self.push(v, Op::Reshape(a), req)
    }

    // ---- backward -----------------------------------------------------------

    /// Reverse pass from a scalar loss. Gradients of earlier backward calls
    /// on the same tape are kept and accumulated into.
    pub fn backward(&self, loss: Var) {
        let mut inner = self.inner.borrow_mut();
        assert!(
            inner.values[loss.0].is_scalar(),
            "backward requires a scalar loss, got shape {:?}",
            inner.values[loss.0].shape()
        );
        let seed = Array::filled(inner.values[loss.0].shape(), 1.0);
        accumulate(&mut inner.grads[loss.0], &seed);

        for i in (0..=loss.0).rev() {
            if !inner.requires[i] || inner.grads[i].is_none() {
                continue;
            }
            let g = inner.grads[i].take().unwrap();
            let contributions = backward_step(&inner, i, &g);
            inner.grads[i] = Some(g);
            for (parent, contrib) in contributions {
                if inner.requires[parent.0] {
                    accumulate(&mut inner.grads[parent.0], &contrib);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Array>, g: &Array) {
    match slot {
        Some(acc) => acc.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

/// Sum `g` (shaped like the broadcast output) down to `target_shape`.
fn reduce_to_shape(g: &Array, target_shape: &[usize]) -> Array {
    if g.shape() == target_shape {
        return g.clone();
    }
    let inner_len: usize = target_shape.iter().product::<usize>().max(1);
    let mut out = Array::zeros(target_shape);
    for (i, &v) in g.data().iter().enumerate() {
        out.data_mut()[i % inner_len] += v;
    }
    out
}

fn backward_step(inner: &Inner, i: usize, g: &Array) -> Vec<(Var, Array)> {
    let val = |v: Var| &inner.values[v.0];
    match &inner.ops[i] {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![
            (*a, g.clone()),
            (*b, reduce_to_shape(g, val(*b).shape())),
        ],
        Op::Sub(a, b) => {
            let mut gb = reduce_to_shape(g, val(*b).shape());
            gb.scale_assign(-1.0);
            vec![(*a, g.clone()), (*b, gb)]
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let nb = vb.len().max(1);
            let ga = Array::from_vec(
                va.shape(),
                g.data()
                    .iter()
                    .enumerate()
                    .map(|(k, &gv)| gv * vb.data()[k % nb])
                    .collect(),
            );
            let mut gb_full = Array::from_vec(
                va.shape(),
                g.data()
                    .iter()
                    .zip(va.data())
                    .map(|(&gv, &x)| gv * x)
                    .collect(),
            );
            gb_full = reduce_to_shape(&gb_full, vb.shape());
            vec![(*a, ga), (*b, gb_full)]
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let nb = vb.len().max(1);
            let ga = Array::from_vec(
                va.shape(),
                g.data()
                    .iter()
                    .enumerate()
                    .map(|(k, &gv)| gv / vb.data()[k % nb])
                    .collect(),
            );
            let gb_full = Array::from_vec(
                va.shape(),
                g.data()
                    .iter()
                    .enumerate()
                    .map(|(k, &gv)| {
                        let y = vb.data()[k % nb];
                        -gv * va.data()[k] / (y * y)
                    })
                    .collect(),
            );
            vec![(*a, ga), (*b, reduce_to_shape(&gb_full, vb.shape()))]
        }
        Op::Maximum(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let mut ga = Array::zeros(va.shape());
            let mut gb = Array::zeros(vb.shape());
            for k in 0..g.len() {
                if va.data()[k] >= vb.data()[k] {
                    ga.data_mut()[k] = g.data()[k];
                } else {
                    gb.data_mut()[k] = g.data()[k];
                }
            }
            vec![(*a, ga), (*b, gb)]
        }
        Op::Matmul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ga = matmul_arrays(g, &transpose(vb));
            let gb = matmul_arrays(&transpose(va), g);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Concat(parts, axis) => {
            let shapes: Vec<Vec<usize>> =
                parts.iter().map(|p| val(*p).shape().to_vec()).collect();
            let slices = split_like(g, &shapes, *axis);
            parts.iter().copied().zip(slices).collect()
        }
        Op::Exp(a) => {
            let out = &inner.values[i];
            vec![(*a, elementwise(g, out, |gv, y| gv * y))]
        }
        Op::Log(a) => vec![(*a, elementwise(g, val(*a), |gv, x| gv / x))],
        Op::Sqrt(a) => {
            let out = &inner.values[i];
            vec![(*a, elementwise(g, out, |gv, y| gv * 0.5 / y))]
        }
        Op::Square(a) => vec![(*a, elementwise(g, val(*a), |gv, x| gv * 2.0 * x))],
        Op::Relu(a) => vec![(
            *a,
            elementwise(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
        )],
        Op::Tanh(a) => {
            let out = &inner.values[i];
            vec![(*a, elementwise(g, out, |gv, y| gv * (1.0 - y * y)))]
        }
        Op::Sigmoid(a) => {
            let out = &inner.values[i];
            vec![(*a, elementwise(g, out, |gv, y| gv * y * (1.0 - y)))]
        }
        Op::Softplus(a) => vec![(*a, elementwise(g, val(*a), |gv, x| gv * sigmoid(x)))],
        Op::Neg(a) => {
            let mut ga = g.clone();
            ga.scale_assign(-1.0);
            vec![(*a, ga)]
        }
        Op::Scale(a, c) => {
            let mut ga = g.clone();
            ga.scale_assign(*c);
            vec![(*a, ga)]
        }
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::ClampMin(a, floor) => vec![(
            *a,
            elementwise(g, val(*a), |gv, x| if x >= *floor { gv } else { 0.0 }),
        )],
        Op::ReduceSumAll(a) => vec![(*a, Array::filled(val(*a).shape(), g.item()))],
        Op::ReduceSumAxis0(a) => {
            let va = val(*a);
            let n = va.shape()[0];
            let mut data = Vec::with_capacity(va.len());
            for _ in 0..n {
                data.extend_from_slice(g.data());
            }
            vec![(*a, Array::from_vec(va.shape(), data))]
        }
        Op::ReduceMaxMasked(a, mask) => {
            let va = val(*a);
            let n = va.shape()[0];
            let inner_len = va.len() / n.max(1);
            let mut ga = Array::zeros(va.shape());
            for j in 0..inner_len {
                let mut best: Option<usize> = None;
                for (r, &valid) in mask.iter().enumerate().take(n) {
                    if !valid {
                        continue;
                    }
                    let x = va.data()[r * inner_len + j];
                    match best {
                        None => best = Some(r),
                        Some(b) if x > va.data()[b * inner_len + j] => best = Some(r),
                        _ => {}
                    }
                }
                let r = best.expect("reduce_max_masked: no valid rows");
                ga.data_mut()[r * inner_len + j] = g.data()[j];
            }
            vec![(*a, ga)]
        }
        Op::Broadcast0(a, n) => {
            let va = val(*a);
            let inner_len = va.len();
            let mut ga = Array::zeros(va.shape());
            for r in 0..*n {
                for j in 0..inner_len {
                    ga.data_mut()[j] += g.data()[r * inner_len + j];
                }
            }
            vec![(*a, ga)]
        }
        Op::Gather0(a, indices) => {
            let va = val(*a);
            let n = va.shape()[0];
            let inner_len = va.len() / n.max(1);
            let mut ga = Array::zeros(va.shape());
            for (row, &src) in indices.iter().enumerate() {
                for j in 0..inner_len {
                    ga.data_mut()[src * inner_len + j] += g.data()[row * inner_len + j];
                }
            }
            vec![(*a, ga)]
        }
        Op::Reshape(a) => vec![(*a, g.reshaped(val(*a).shape()))],
    }
}

fn reduce_sum_axis0_array(a: &Array) -> Array {
    assert!(a.rank() >= 1, "reduce_sum_axis0 on scalar");
    let n = a.shape()[0];
    let inner_len = a.len() / n.max(1);
    let mut out = Array::zeros(&a.shape()[1..]);
    for r in 0..n {
        for j in 0..inner_len {
            out.data_mut()[j] += a.data()[r * inner_len + j];
        }
    }
    out
}

fn reduce_max_masked_array(a: &Array, mask: &[bool]) -> Array {
    assert!(a.rank() >= 1, "reduce_max_masked on scalar");
    let n = a.shape()[0];
    assert_eq!(mask.len(), n, "mask length {} != leading dim {}", mask.len(), n);
    assert!(mask.iter().any(|&m| m), "reduce_max_masked: no valid rows");
    let inner_len = a.len() / n.max(1);
    let mut out = Array::filled(&a.shape()[1..], f64::NEG_INFINITY);
    for (r, &valid) in mask.iter().enumerate() {
        if !valid {
            continue;
        }
        for j in 0..inner_len {
            let x = a.data()[r * inner_len + j];
            if x > out.data()[j] {
                out.data_mut()[j] = x;
            }
        }
    }
    out
}

fn elementwise(g: &Array, other: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    Array::from_vec(
        g.shape(),
        g.data()
            .iter()
            .zip(other.data())
            .map(|(&gv, &x)| f(gv, x))
            .collect(),
    )
}

fn matmul_arrays(a: &Array, b: &Array) -> Array {
    assert_eq!(a.rank(), 2, "matmul: left operand must be rank 2");
    assert_eq!(b.rank(), 2, "matmul: right operand must be rank 2");
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul: inner dims {} vs {}", k, k2);
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    Array::from_vec(&[m, n], out)
}

fn transpose(a: &Array) -> Array {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Array::from_vec(&[n, m], out)
}

fn concat_arrays(arrays: &[&Array], axis: usize) -> Array {
    let rank = arrays[0].rank();
    assert!(axis < rank, "concat: axis {} out of rank {}", axis, rank);
    for a in arrays {
        assert_eq!(a.rank(), rank, "concat: rank mismatch");
        for d in 0..rank {
            if d != axis {
                assert_eq!(
                    a.shape()[d],
                    arrays[0].shape()[d],
                    "concat: dim {} mismatch",
                    d
                );
            }
        }
    }
    let outer: usize = arrays[0].shape()[..axis].iter().product();
    let inner: usize = arrays[0].shape()[axis + 1..].iter().product();
    let total_axis: usize = arrays.iter().map(|a| a.shape()[axis]).sum();
    let mut shape = arrays[0].shape().to_vec();
    shape[axis] = total_axis;
    let mut data = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for a in arrays {
            let block = a.shape()[axis] * inner;
            data.extend_from_slice(&a.data()[o * block..(o + 1) * block]);
        }
    }
    Array::from_vec(&shape, data)
}

fn split_like(g: &Array, shapes: &[Vec<usize>], axis: usize) -> Vec<Array> {
    let outer: usize = shapes[0][..axis].iter().product();
    let inner: usize = shapes[0][axis + 1..].iter().product();
    let mut parts: Vec<Array> = shapes.iter().map(|s| Array::zeros(s)).collect();
    let total_block: usize = shapes.iter().map(|s| s[axis] * inner).sum();
    for o in 0..outer {
        let mut offset = 0;
        for (part, shape) in parts.iter_mut().zip(shapes) {
            let block = shape[axis] * inner;
            part.data_mut()[o * block..(o + 1) * block]
                .copy_from_slice(&g.data()[o * total_block + offset..o * total_block + offset + block]);
            offset += block;
        }
    }
    parts
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Max relative error between analytic gradients and central finite
/// differences of `f` at `inputs`, using the given step.
///
/// Error per coordinate is |analytic - fd| / max(|analytic|, |fd|, 1e-8).
pub fn gradcheck<F>(f: F, inputs: &[Array], step: f64) -> f64
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let loss = f(&tape, &vars);
    tape.backward(loss);
    let analytic: Vec<Array> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, a)| tape.grad(v).unwrap_or_else(|| Array::zeros(a.shape())))
        .collect();

    let eval = |probe: &[Array]| -> f64 {
        let t = Tape::new();
        let vs: Vec<Var> = probe.iter().map(|a| t.leaf(a.clone())).collect();
        t.item(f(&t, &vs))
    };

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += step;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= step;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let a = analytic[i].data()[j];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}
