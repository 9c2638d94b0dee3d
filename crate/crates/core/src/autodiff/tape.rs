use std::cell::{Ref, RefCell};

use super::tensor::{gemm, Tensor};

/// Guard inside the square root of [`Var::sd`].
pub const SD_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRowBias(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Concat(Vec<usize>, usize),
    Slice { input: usize, axis: usize, start: usize },
    Reshape(usize),
    GatherRows(usize, Vec<usize>),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Sd(usize),
    Clamp(usize, f64, f64),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for one forward pass; [`Tape::backward`] replays them in
/// reverse. A tape is single-use: build a fresh one per step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros if `v` does not influence the loss.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        self.grads[v.id].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }

    pub fn take(&mut self, v: Var<'_>) -> Tensor {
        self.grads[v.id].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A leaf (input or parameter).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var<'_>) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward needs a scalar loss, got shape {:?}", nodes[loss.id].value.shape);
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(&nodes[loss.id].value.shape, 1.0));

        let acc = |grads: &mut Vec<Option<Tensor>>, id: usize, g: Tensor| match &mut grads[id] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let out = &node.value;
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = val(*a).dims2();
                    let (_, n) = val(*b).dims2();
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, &g.data, false, &val(*b).data, true, &mut ga, 0.0);
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, &val(*a).data, true, &g.data, false, &mut gb, 0.0);
                    acc(&mut grads, *a, Tensor::new(val(*a).shape.clone(), ga));
                    acc(&mut grads, *b, Tensor::new(val(*b).shape.clone(), gb));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, g.zip_map(val(*b), |x, y| x * y));
                    acc(&mut grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
                Op::Div(a, b) => {
                    acc(&mut grads, *a, g.zip_map(val(*b), |x, y| x / y));
                    let gb = Tensor::new(
                        g.shape.clone(),
                        g.data.iter().zip(&out.data).zip(&val(*b).data).map(|((&x, &q), &y)| -x * q / y).collect(),
                    );
                    acc(&mut grads, *b, gb);
                }
                Op::AddRowBias(a, b) => {
                    let (_, n) = g.dims2();
                    let mut gb = vec![0.0; n];
                    for row in g.data.chunks(n) {
                        for (s, x) in gb.iter_mut().zip(row) {
                            *s += x;
                        }
                    }
                    acc(&mut grads, *b, Tensor::new(val(*b).shape.clone(), gb));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Concat(inputs, axis) => {
                    let (rows, cols) = g.dims2();
                    let mut offset = 0;
                    for &i in inputs {
                        let (r, c) = val(i).dims2();
                        let part = if *axis == 0 {
                            g.data[offset * cols..(offset + r) * cols].to_vec()
                        } else {
                            (0..rows).flat_map(|row| g.data[row * cols + offset..row * cols + offset + c].iter().copied()).collect()
                        };
                        offset += if *axis == 0 { r } else { c };
                        acc(&mut grads, i, Tensor::new(val(i).shape.clone(), part));
                    }
                }
                Op::Slice { input, axis, start } => {
                    let src = val(*input);
                    let (_, cols) = src.dims2();
                    let mut gi = Tensor::zeros(&src.shape);
                    let (gr, gc) = g.dims2();
                    if *axis == 0 {
                        gi.data[start * cols..(start + gr) * cols].copy_from_slice(&g.data);
                    } else {
                        for r in 0..gr {
                            gi.data[r * cols + start..r * cols + start + gc].copy_from_slice(&g.data[r * gc..(r + 1) * gc]);
                        }
                    }
                    acc(&mut grads, *input, gi);
                }
                Op::Reshape(a) => acc(&mut grads, *a, Tensor::new(val(*a).shape.clone(), g.data)),
                Op::GatherRows(a, idx) => {
                    let src = val(*a);
                    let (_, cols) = src.dims2();
                    let mut gi = Tensor::zeros(&src.shape);
                    for (k, &r) in idx.iter().enumerate() {
                        for c in 0..cols {
                            gi.data[r * cols + c] += g.data[k * cols + c];
                        }
                    }
                    acc(&mut grads, *a, gi);
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(out, |x, s| x * s * (1.0 - s))),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(out, |x, t| x * (1.0 - t * t))),
                Op::Relu(a) => acc(&mut grads, *a, g.zip_map(val(*a), |x, v| if v > 0.0 { x } else { 0.0 })),
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(out, |x, e| x * e)),
                Op::Log(a) => acc(&mut grads, *a, g.zip_map(val(*a), |x, v| x / v)),
                Op::Abs(a) => acc(&mut grads, *a, g.zip_map(val(*a), |x, v| x * sign(v))),
                Op::Square(a) => acc(&mut grads, *a, g.zip_map(val(*a), |x, v| 2.0 * x * v)),
                Op::Sum(a) => acc(&mut grads, *a, Tensor::full(&val(*a).shape, g.item())),
                Op::Mean(a) => {
                    let n = val(*a).len() as f64;
                    acc(&mut grads, *a, Tensor::full(&val(*a).shape, g.item() / n));
                }
                Op::Sd(a) => {
                    let x = val(*a);
                    let n = x.len() as f64;
                    let mean = x.sum() / n;
                    let sd = out.item();
                    let gs = g.item();
                    acc(&mut grads, *a, x.map(|v| gs * (v - mean) / (n * sd)));
                }
                Op::Clamp(a, lo, hi) => {
                    acc(&mut grads, *a, g.zip_map(val(*a), |x, v| if v >= *lo && v <= *hi { x } else { 0.0 }))
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape.clone()).collect();
        Gradients { grads, shapes }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(*self).clone()
    }

    pub fn item(&self) -> f64 {
        self.tape.value(*self).item()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(*self).shape.clone()
    }

    fn unary(self, op: Op, f: impl Fn(&Tensor) -> Tensor) -> Var<'t> {
        let v = f(&self.tape.value(self));
        self.tape.push(v, op)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        let v = {
            let a = self.tape.value(self);
            let b = self.tape.value(other);
            assert_eq!(a.shape, b.shape, "elementwise shape mismatch in {op:?}");
            a.zip_map(&b, f)
        };
        self.tape.push(v, op)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let v = {
            let a = self.tape.value(self);
            let b = self.tape.value(other);
            super::tensor::matmul(&a, &b)
        };
        self.tape.push(v, Op::MatMul(self.id, other.id))
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Div(self.id, other.id), |a, b| a / b)
    }

    /// Add a length-`n` bias vector to every row of an `m x n` matrix.
    pub fn add_row_bias(self, bias: Var<'t>) -> Var<'t> {
        let v = {
            let a = self.tape.value(self);
            let b = self.tape.value(bias);
            let (_, n) = a.dims2();
            assert_eq!(b.len(), n, "bias length {} does not match {} columns", b.len(), n);
            let mut out = a.clone();
            for row in out.data.chunks_mut(n) {
                for (x, y) in row.iter_mut().zip(&b.data) {
                    *x += y;
                }
            }
            out
        };
        self.tape.push(v, Op::AddRowBias(self.id, bias.id))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |t| t.map(|x| x * s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |t| t.map(|x| x + s))
    }

    /// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        assert!(axis < 2, "concat axis must be 0 or 1");
        let tape = parts[0].tape;
        let v = {
            let vals: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| tape.value(*p)).collect();
            let dims: Vec<(usize, usize)> = vals.iter().map(|t| t.dims2()).collect();
            if axis == 0 {
                let cols = dims[0].1;
                assert!(dims.iter().all(|d| d.1 == cols), "concat axis 0 column mismatch: {dims:?}");
                let rows = dims.iter().map(|d| d.0).sum();
                let data = vals.iter().flat_map(|t| t.data.iter().copied()).collect();
                Tensor::matrix(rows, cols, data)
            } else {
                let rows = dims[0].0;
                assert!(dims.iter().all(|d| d.0 == rows), "concat axis 1 row mismatch: {dims:?}");
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for (t, d) in vals.iter().zip(&dims) {
                        data.extend_from_slice(&t.data[r * d.1..(r + 1) * d.1]);
                    }
                }
                Tensor::matrix(rows, cols, data)
            }
        };
        tape.push(v, Op::Concat(parts.iter().map(|p| p.id).collect(), axis))
    }

    /// Rows (`axis = 0`) or columns (`axis = 1`) `start..start + len` of a 2-D tensor.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Var<'t> {
        let v = {
            let a = self.tape.value(self);
            let (rows, cols) = a.dims2();
            if axis == 0 {
                assert!(start + len <= rows, "row slice {start}+{len} out of {rows}");
                Tensor::matrix(len, cols, a.data[start * cols..(start + len) * cols].to_vec())
            } else {
                assert!(start + len <= cols, "column slice {start}+{len} out of {cols}");
                let data = (0..rows).flat_map(|r| a.data[r * cols + start..r * cols + start + len].iter().copied()).collect();
                Tensor::matrix(rows, len, data)
            }
        };
        self.tape.push(v, Op::Slice { input: self.id, axis, start })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = {
            let a = self.tape.value(self);
            Tensor::new(shape.to_vec(), a.data.clone())
        };
        self.tape.push(v, Op::Reshape(self.id))
    }

    /// Select rows of a 2-D tensor (repeats allowed).
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let v = {
            let a = self.tape.value(self);
            let (rows, cols) = a.dims2();
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &r in idx {
                assert!(r < rows, "gather row {r} out of {rows}");
                data.extend_from_slice(&a.data[r * cols..(r + 1) * cols]);
            }
            Tensor::matrix(idx.len(), cols, data)
        };
        self.tape.push(v, Op::GatherRows(self.id, idx.to_vec()))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |t| t.map(sigmoid))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |t| t.map(f64::tanh))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |t| t.map(|x| x.max(0.0)))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |t| t.map(f64::exp))
    }

    /// Natural log; panics on non-positive input.
    pub fn log(self) -> Var<'t> {
        self.unary(Op::Log(self.id), |t| {
            assert!(t.data.iter().all(|&x| x > 0.0), "log of a non-positive value");
            t.map(f64::ln)
        })
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), |t| t.map(f64::abs))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |t| t.map(|x| x * x))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |t| Tensor::scalar(t.sum()))
    }

    pub fn mean(self) -> Var<'t> {
        self.unary(Op::Mean(self.id), |t| {
            assert!(!t.is_empty(), "mean of an empty tensor");
            Tensor::scalar(t.sum() / t.len() as f64)
        })
    }

    /// Population standard deviation over all elements, `sqrt(var + 1e-12)`.
    pub fn sd(self) -> Var<'t> {
        self.unary(Op::Sd(self.id), |t| {
            assert!(!t.is_empty(), "sd of an empty tensor");
            let n = t.len() as f64;
            let m = t.sum() / n;
            let var = t.data.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            Tensor::scalar((var + SD_EPS).sqrt())
        })
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |t| t.map(|x| x.clamp(lo, hi)))
    }
}
