use std::cell::RefCell;

use super::{gemm_nn, gemm_nt, gemm_tn, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulConst(usize, Vec<f64>),
    AddConst(usize),
    Relu(usize),
    Gelu(usize),
    Softmax {
        input: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(usize),
    Repeat(usize),
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    SplitHeads(usize, usize),
    MergeHeads(usize, usize),
    Sum(usize),
    Mean(usize),
    #[cfg(test)]
    BrokenSquare(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Dynamic computation record; build a fresh one per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar root with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn add_into(dst: &mut Option<Tensor>, shape: &[usize], src: impl IntoIterator<Item = f64>) {
    let g = dst.get_or_insert_with(|| Tensor::zeros(shape));
    for (d, s) in g.data_mut().iter_mut().zip(src) {
        *d += s;
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
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> Tensor {
        self.nodes.borrow()[var.0].value.clone()
    }

    pub fn shape(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes.borrow()[var.0].requires_grad
    }

    /// Applies `f` to the node's value without cloning it.
    pub fn with_value<T>(&self, var: Var, f: impl FnOnce(&Tensor) -> T) -> T {
        f(&self.nodes.borrow()[var.0].value)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    /// Records a learned parameter as a gradient-tracking leaf.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            requires_grad: true,
            param: Some(id),
        });
        Var(nodes.len() - 1)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (av.shape(), bv.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(TensorError::Shape {
                    op: "matmul",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                });
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![0.0; m * n];
            gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
            Tensor::new(&[m, n], out)?
        };
        Ok(self.push(value, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    /// `[B×m×k] · [B×k×n] → [B×m×n]`
    pub fn bmm(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (av.shape(), bv.shape());
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
                return Err(TensorError::Shape {
                    op: "bmm",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                });
            }
            let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            let mut out = vec![0.0; bs * m * n];
            for i in 0..bs {
                gemm_nn(
                    &av.data()[i * m * k..(i + 1) * m * k],
                    &bv.data()[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            Tensor::new(&[bs, m, n], out)?
        };
        Ok(self.push(value, Op::BatchMatMul(a.0, b.0), &[a.0, b.0]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, a: Var) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let s = av.shape();
            if s.len() < 2 {
                return Err(TensorError::Axis {
                    op: "transpose",
                    axis: 1,
                    shape: s.to_vec(),
                });
            }
            let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
            let batches = av.numel() / (r * c);
            let mut out = vec![0.0; av.numel()];
            for b in 0..batches {
                let src = &av.data()[b * r * c..(b + 1) * r * c];
                let dst = &mut out[b * r * c..(b + 1) * r * c];
                for i in 0..r {
                    for j in 0..c {
                        dst[j * r + i] = src[i * c + j];
                    }
                }
            }
            let mut shape = s.to_vec();
            let n = shape.len();
            shape.swap(n - 2, n - 1);
            Tensor::new(&shape, out)?
        };
        Ok(self.push(value, Op::Transpose(a.0), &[a.0]))
    }

    fn binary(&self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        let nodes = self.nodes.borrow();
        let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(TensorError::Shape {
                op: name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let nodes = self.nodes.borrow();
        let av = &nodes[a.0].value;
        Tensor::new(av.shape(), av.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    /// Hadamard product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let v = self.unary(a, |x| x * s);
        self.push(v, Op::Scale(a.0, s), &[a.0])
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        let v = self.unary(a, |x| x + s);
        self.push(v, Op::AddScalar(a.0), &[a.0])
    }

    /// Elementwise product with a constant of identical shape.
    pub fn mul_const(&self, a: Var, c: &Tensor) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            if av.shape() != c.shape() {
                return Err(TensorError::Shape {
                    op: "mul_const",
                    lhs: av.shape().to_vec(),
                    rhs: c.shape().to_vec(),
                });
            }
            let data = av.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
            Tensor::new(av.shape(), data)?
        };
        Ok(self.push(value, Op::MulConst(a.0, c.data().to_vec()), &[a.0]))
    }

    /// Elementwise sum with a constant of identical shape.
    pub fn add_const(&self, a: Var, c: &Tensor) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            if av.shape() != c.shape() {
                return Err(TensorError::Shape {
                    op: "add_const",
                    lhs: av.shape().to_vec(),
                    rhs: c.shape().to_vec(),
                });
            }
            let data = av.data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
            Tensor::new(av.shape(), data)?
        };
        Ok(self.push(value, Op::AddConst(a.0), &[a.0]))
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.unary(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a.0), &[a.0])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        let v = self.unary(a, gelu);
        self.push(v, Op::Gelu(a.0), &[a.0])
    }

    /// Inverted dropout: zeroes entries where `keep` is false and rescales the rest.
    pub fn dropout(&self, a: Var, p: f64, keep: impl FnMut() -> bool) -> Var {
        if p <= 0.0 {
            return a;
        }
        let mut keep = keep;
        let n = self.with_value(a, Tensor::numel);
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n).map(|_| if keep() { scale } else { 0.0 }).collect();
        let shape = self.shape(a);
        self.mul_const(a, &Tensor::new(&shape, mask).expect("mask shape"))
            .expect("mask matches input")
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let s = av.shape();
            if axis >= s.len() {
                return Err(TensorError::Axis {
                    op: "softmax",
                    axis,
                    shape: s.to_vec(),
                });
            }
            let (outer, len, inner) = axis_split(s, axis);
            let x = av.data();
            let mut out = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let max = (0..len).map(|j| x[base + j * inner]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for j in 0..len {
                        let e = (x[base + j * inner] - max).exp();
                        out[base + j * inner] = e;
                        total += e;
                    }
                    for j in 0..len {
                        out[base + j * inner] /= total;
                    }
                }
            }
            Tensor::new(s, out)?
        };
        Ok(self.push(value, Op::Softmax { input: a.0, axis }, &[a.0]))
    }

    /// Normalizes over the last axis, then applies `gamma * x_hat + beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let (value, normalized, inv_std) = {
            let nodes = self.nodes.borrow();
            let (xv, gv, bv) = (&nodes[x.0].value, &nodes[gamma.0].value, &nodes[beta.0].value);
            let d = *xv.shape().last().expect("non-empty shape");
            for p in [gv, bv] {
                if p.shape() != [d] {
                    return Err(TensorError::Shape {
                        op: "layer_norm",
                        lhs: xv.shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    });
                }
            }
            let rows = xv.numel() / d;
            let mut out = vec![0.0; xv.numel()];
            let mut normalized = vec![0.0; xv.numel()];
            let mut inv_std = vec![0.0; rows];
            for r in 0..rows {
                let row = &xv.data()[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let xh = (row[j] - mean) * is;
                    normalized[r * d + j] = xh;
                    out[r * d + j] = gv.data()[j] * xh + bv.data()[j];
                }
            }
            (Tensor::new(xv.shape(), out)?, normalized, inv_std)
        };
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                normalized,
                inv_std,
            },
            &[x.0, gamma.0, beta.0],
        ))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a.0), &[a.0]))
    }

    /// Stacks `times` copies along a new leading axis.
    pub fn repeat(&self, a: Var, times: usize) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let mut shape = vec![times];
            shape.extend_from_slice(av.shape());
            let mut data = Vec::with_capacity(times * av.numel());
            for _ in 0..times {
                data.extend_from_slice(av.data());
            }
            Tensor::new(&shape, data)?
        };
        Ok(self.push(value, Op::Repeat(a.0), &[a.0]))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts[0].0].value.shape().to_vec();
            if axis >= first.len() {
                return Err(TensorError::Axis {
                    op: "concat",
                    axis,
                    shape: first,
                });
            }
            let mut total = 0;
            for p in parts {
                let s = nodes[p.0].value.shape();
                let compatible =
                    s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(TensorError::Shape {
                        op: "concat",
                        lhs: first,
                        rhs: s.to_vec(),
                    });
                }
                total += s[axis];
            }
            let (outer, _, inner) = axis_split(&first, axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for p in parts {
                    let v = &nodes[p.0].value;
                    let len = v.shape()[axis];
                    data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
                }
            }
            let mut shape = first;
            shape[axis] = total;
            Tensor::new(&shape, data)?
        };
        let inputs: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.clone(),
                axis,
            },
            &inputs,
        ))
    }

    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let s = av.shape();
            if axis >= s.len() || start + len > s[axis] || len == 0 {
                return Err(TensorError::Axis {
                    op: "slice",
                    axis,
                    shape: s.to_vec(),
                });
            }
            let (outer, full, inner) = axis_split(s, axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * full + start) * inner;
                data.extend_from_slice(&av.data()[base..base + len * inner]);
            }
            let mut shape = s.to_vec();
            shape[axis] = len;
            Tensor::new(&shape, data)?
        };
        Ok(self.push(
            value,
            Op::Slice {
                input: a.0,
                axis,
                start,
            },
            &[a.0],
        ))
    }

    /// `[B×n×(h·dh)] → [(B·h)×n×dh]`
    pub fn split_heads(&self, a: Var, heads: usize) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let s = av.shape();
            if s.len() != 3 || heads == 0 || !s[2].is_multiple_of(heads) {
                return Err(TensorError::Shape {
                    op: "split_heads",
                    lhs: s.to_vec(),
                    rhs: vec![heads],
                });
            }
            let (b, n, d) = (s[0], s[1], s[2]);
            let dh = d / heads;
            let mut out = vec![0.0; av.numel()];
            for bi in 0..b {
                for t in 0..n {
                    for h in 0..heads {
                        let src = (bi * n + t) * d + h * dh;
                        let dst = ((bi * heads + h) * n + t) * dh;
                        out[dst..dst + dh].copy_from_slice(&av.data()[src..src + dh]);
                    }
                }
            }
            Tensor::new(&[b * heads, n, dh], out)?
        };
        Ok(self.push(value, Op::SplitHeads(a.0, heads), &[a.0]))
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&self, a: Var, heads: usize) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let s = av.shape();
            if s.len() != 3 || heads == 0 || !s[0].is_multiple_of(heads) {
                return Err(TensorError::Shape {
                    op: "merge_heads",
                    lhs: s.to_vec(),
                    rhs: vec![heads],
                });
            }
            let (b, n, dh) = (s[0] / heads, s[1], s[2]);
            let d = dh * heads;
            let mut out = vec![0.0; av.numel()];
            for bi in 0..b {
                for t in 0..n {
                    for h in 0..heads {
                        let dst = (bi * n + t) * d + h * dh;
                        let src = ((bi * heads + h) * n + t) * dh;
                        out[dst..dst + dh].copy_from_slice(&av.data()[src..src + dh]);
                    }
                }
            }
            Tensor::new(&[b, n, d], out)?
        };
        Ok(self.push(value, Op::MergeHeads(a.0, heads), &[a.0]))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.with_value(a, |v| v.data().iter().sum());
        self.push(Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&self, a: Var) -> Var {
        let s = self.with_value(a, |v| v.data().iter().sum::<f64>() / v.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a.0), &[a.0])
    }

    #[cfg(test)]
    pub(crate) fn broken_square(&self, a: Var) -> Var {
        let v = self.unary(a, |x| x * x);
        self.push(v, Op::BrokenSquare(a.0), &[a.0])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.0].value.shape().to_vec();
        if nodes[root.0].value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(&root_shape));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let gd = g.data();
            let needs = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if needs(*a) {
                        let mut da = vec![0.0; m * k];
                        gemm_nt(gd, bv.data(), &mut da, m, n, k);
                        add_into(&mut grads[*a], av.shape(), da);
                    }
                    if needs(*b) {
                        let mut db = vec![0.0; k * n];
                        gemm_tn(av.data(), gd, &mut db, m, k, n);
                        add_into(&mut grads[*b], bv.shape(), db);
                    }
                }
                Op::BatchMatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                    if needs(*a) {
                        let mut da = vec![0.0; bs * m * k];
                        for i in 0..bs {
                            gemm_nt(
                                &gd[i * m * n..(i + 1) * m * n],
                                &bv.data()[i * k * n..(i + 1) * k * n],
                                &mut da[i * m * k..(i + 1) * m * k],
                                m,
                                n,
                                k,
                            );
                        }
                        add_into(&mut grads[*a], av.shape(), da);
                    }
                    if needs(*b) {
                        let mut db = vec![0.0; bs * k * n];
                        for i in 0..bs {
                            gemm_tn(
                                &av.data()[i * m * k..(i + 1) * m * k],
                                &gd[i * m * n..(i + 1) * m * n],
                                &mut db[i * k * n..(i + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                        add_into(&mut grads[*b], bv.shape(), db);
                    }
                }
                Op::Transpose(a) => {
                    let s = node.value.shape();
                    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                    let batches = node.value.numel() / (r * c);
                    let mut da = vec![0.0; gd.len()];
                    for b in 0..batches {
                        for i in 0..r {
                            for j in 0..c {
                                da[b * r * c + j * r + i] = gd[b * r * c + i * c + j];
                            }
                        }
                    }
                    add_into(&mut grads[*a], nodes[*a].value.shape(), da);
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        add_into(&mut grads[*a], g.shape(), gd.iter().copied());
                    }
                    if needs(*b) {
                        add_into(&mut grads[*b], g.shape(), gd.iter().copied());
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        add_into(&mut grads[*a], g.shape(), gd.iter().copied());
                    }
                    if needs(*b) {
                        add_into(&mut grads[*b], g.shape(), gd.iter().map(|v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if needs(*a) {
                        add_into(&mut grads[*a], g.shape(), gd.iter().zip(bv.data()).map(|(x, y)| x * y));
                    }
                    if needs(*b) {
                        add_into(&mut grads[*b], g.shape(), gd.iter().zip(av.data()).map(|(x, y)| x * y));
                    }
                }
                Op::Scale(a, s) => add_into(&mut grads[*a], g.shape(), gd.iter().map(|v| v * s)),
                Op::AddScalar(a) | Op::AddConst(a) | Op::Reshape(a) => {
                    add_into(&mut grads[*a], nodes[*a].value.shape(), gd.iter().copied())
                }
                Op::MulConst(a, c) => add_into(&mut grads[*a], g.shape(), gd.iter().zip(c).map(|(x, y)| x * y)),
                Op::Relu(a) => {
                    let av = &nodes[*a].value;
                    add_into(
                        &mut grads[*a],
                        g.shape(),
                        gd.iter().zip(av.data()).map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 }),
                    );
                }
                Op::Gelu(a) => {
                    let av = &nodes[*a].value;
                    add_into(
                        &mut grads[*a],
                        g.shape(),
                        gd.iter().zip(av.data()).map(|(gv, &x)| gv * gelu_grad(x)),
                    );
                }
                Op::Softmax { input, axis } => {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: f64 = (0..len).map(|j| gd[base + j * inner] * y[base + j * inner]).sum();
                            for j in 0..len {
                                let idx = base + j * inner;
                                dx[idx] = y[idx] * (gd[idx] - dot);
                            }
                        }
                    }
                    add_into(&mut grads[*input], node.value.shape(), dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let gv = &nodes[*gamma].value;
                    let d = gv.numel();
                    let rows = normalized.len() / d;
                    if needs(*gamma) {
                        let mut dg = vec![0.0; d];
                        for r in 0..rows {
                            for j in 0..d {
                                dg[j] += gd[r * d + j] * normalized[r * d + j];
                            }
                        }
                        add_into(&mut grads[*gamma], &[d], dg);
                    }
                    if needs(*beta) {
                        let mut db = vec![0.0; d];
                        for r in 0..rows {
                            for j in 0..d {
                                db[j] += gd[r * d + j];
                            }
                        }
                        add_into(&mut grads[*beta], &[d], db);
                    }
                    if needs(*x) {
                        let mut dx = vec![0.0; normalized.len()];
                        let nf = d as f64;
                        for r in 0..rows {
                            let mut sum_dxh = 0.0;
                            let mut sum_dxh_xh = 0.0;
                            for j in 0..d {
                                let dxh = gd[r * d + j] * gv.data()[j];
                                sum_dxh += dxh;
                                sum_dxh_xh += dxh * normalized[r * d + j];
                            }
                            for j in 0..d {
                                let dxh = gd[r * d + j] * gv.data()[j];
                                dx[r * d + j] =
                                    inv_std[r] / nf * (nf * dxh - sum_dxh - normalized[r * d + j] * sum_dxh_xh);
                            }
                        }
                        add_into(&mut grads[*x], nodes[*x].value.shape(), dx);
                    }
                }
                Op::Repeat(a) => {
                    let n = nodes[*a].value.numel();
                    let mut da = vec![0.0; n];
                    for chunk in gd.chunks(n) {
                        for (d, c) in da.iter_mut().zip(chunk) {
                            *d += c;
                        }
                    }
                    add_into(&mut grads[*a], nodes[*a].value.shape(), da);
                }
                Op::Concat { inputs, axis } => {
                    let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                    let mut offset = 0;
                    for &p in inputs {
                        let len = nodes[p].value.shape()[*axis];
                        if needs(p) {
                            let mut dp = Vec::with_capacity(outer * len * inner);
                            for o in 0..outer {
                                let base = (o * total + offset) * inner;
                                dp.extend_from_slice(&gd[base..base + len * inner]);
                            }
                            add_into(&mut grads[p], nodes[p].value.shape(), dp);
                        }
                        offset += len;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let src_shape = nodes[*input].value.shape();
                    let (outer, full, inner) = axis_split(src_shape, *axis);
                    let len = node.value.shape()[*axis];
                    let mut dx = vec![0.0; nodes[*input].value.numel()];
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        dx[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                    }
                    add_into(&mut grads[*input], src_shape, dx);
                }
                Op::SplitHeads(a, heads) => {
                    let s = nodes[*a].value.shape();
                    let (b, n, d) = (s[0], s[1], s[2]);
                    let dh = d / heads;
                    let mut da = vec![0.0; gd.len()];
                    for bi in 0..b {
                        for t in 0..n {
                            for h in 0..*heads {
                                let src = (bi * n + t) * d + h * dh;
                                let dst = ((bi * heads + h) * n + t) * dh;
                                da[src..src + dh].copy_from_slice(&gd[dst..dst + dh]);
                            }
                        }
                    }
                    add_into(&mut grads[*a], s, da);
                }
                Op::MergeHeads(a, heads) => {
                    let s = nodes[*a].value.shape();
                    let (b, n, dh) = (s[0] / heads, s[1], s[2]);
                    let d = dh * heads;
                    let mut da = vec![0.0; gd.len()];
                    for bi in 0..b {
                        for t in 0..n {
                            for h in 0..*heads {
                                let dst = (bi * n + t) * d + h * dh;
                                let src = ((bi * heads + h) * n + t) * dh;
                                da[src..src + dh].copy_from_slice(&gd[dst..dst + dh]);
                            }
                        }
                    }
                    add_into(&mut grads[*a], s, da);
                }
                Op::Sum(a) => {
                    let n = nodes[*a].value.numel();
                    add_into(&mut grads[*a], nodes[*a].value.shape(), std::iter::repeat_n(gd[0], n));
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.numel();
                    let v = gd[0] / n as f64;
                    add_into(&mut grads[*a], nodes[*a].value.shape(), std::iter::repeat_n(v, n));
                }
                #[cfg(test)]
                Op::BrokenSquare(a) => {
                    // planted bug: derivative of x^2 written as x
                    let av = &nodes[*a].value;
                    add_into(
                        &mut grads[*a],
                        g.shape(),
                        gd.iter().zip(av.data()).map(|(gv, x)| gv * x),
                    );
                }
            }
            // leaves keep their gradient for the caller
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds every parameter leaf's gradient into `store`.
    pub fn backward_into(&self, root: Var, store: &mut ParamStore) -> Result<Gradients, TensorError> {
        let grads = self.backward(root)?;
        let nodes = self.nodes.borrow();
        for (i, node) in nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, &grads.grads[i]) {
                for (d, s) in store.grad_mut(pid).data_mut().iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let tape = Tape::new();
        let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        assert_eq!(tape.value(tape.matmul(a, b).unwrap()).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
    }

    #[test]
    fn matmul_gradient_of_sum() {
        // frozen from central differences, step 1e-5: d sum(A·B)/dA = 1·Bᵀ
        let tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1.0; 4]), true);
        let b = tape.constant(t(&[2, 2], &[2.0, 0.0, 0.0, 2.0]));
        let loss = tape.sum(tape.matmul(a, b).unwrap());
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn elementwise_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let z = tape.constant(Tensor::zeros(&[3]));
        assert_eq!(tape.value(tape.add(x, z).unwrap()).data(), &[1.0, 2.0, 3.0]);
        let r = tape.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        assert_eq!(tape.value(tape.relu(r)).data(), &[0.0, 0.0, 2.0]);
        let bad = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.add(x, bad).is_err());
    }

    #[test]
    fn gelu_gradient_matches_finite_difference() {
        let x0 = 0.5;
        let h = 1e-5;
        let fd = (gelu(x0 + h) - gelu(x0 - h)) / (2.0 * h);
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![x0]), true);
        let loss = tape.sum(tape.gelu(x));
        let g = tape.backward(loss).unwrap();
        assert_abs_diff_eq!(g.get(x).unwrap().item(), fd, epsilon = 1e-4);
    }

    #[test]
    fn softmax_values_and_guard() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[3]));
        for v in tape.value(tape.softmax(z, 0).unwrap()).data() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let big = tape.constant(Tensor::from_vec(vec![1000.0, 1000.0]));
        assert_eq!(tape.value(tape.softmax(big, 0).unwrap()).data(), &[0.5, 0.5]);
        // reference: exp(k)/sum exp(j), computed by hand in scalar arithmetic
        let s = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let out = tape.value(tape.softmax(s, 0).unwrap());
        for (v, e) in out.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-5);
        }
        assert!(tape.softmax(s, 1).is_err());
    }

    #[test]
    fn softmax_over_middle_axis() {
        let tape = Tape::new();
        let x = tape.constant(t(
            &[2, 3, 2],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0, 0.0, 1.0, -1.0, 2.0, 0.5],
        ));
        let y = tape.value(tape.softmax(x, 1).unwrap());
        for o in 0..2 {
            for i in 0..2 {
                let s: f64 = (0..3).map(|j| y.at3(o, j, i)).sum();
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_cases() {
        let tape = Tape::new();
        let g = tape.constant(Tensor::ones(&[3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        let x = tape.constant(Tensor::ones(&[3]));
        assert_eq!(tape.value(tape.layer_norm(x, g, b, 1e-5).unwrap()).data(), &[0.0; 3]);

        let g2 = tape.constant(Tensor::ones(&[2]));
        let b2 = tape.constant(Tensor::zeros(&[2]));
        let x2 = tape.constant(Tensor::from_vec(vec![0.0, 2.0]));
        let y = tape.value(tape.layer_norm(x2, g2, b2, 1e-12).unwrap());
        assert_abs_diff_eq!(y.data()[0], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y.data()[1], 1.0, epsilon = 1e-9);
        assert!(tape.layer_norm(x2, g, b, 1e-5).is_err());
    }

    #[test]
    fn backward_simple_cases() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, -2.0, 3.0]), true);
        let g = tape.backward(tape.sum(x)).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, -2.0, 3.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let g = tape.backward(tape.sum(sq)).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]), true);
        assert_eq!(tape.backward(x).unwrap_err(), TensorError::NonScalarRoot(vec![2]));
    }

    #[test]
    fn repeated_backward_accumulates_into_store() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.0, 2.0]));
        for _ in 0..2 {
            let tape = Tape::new();
            let w = tape.param(&store, id);
            let loss = tape.sum(tape.scale(w, 3.0));
            tape.backward_into(loss, &mut store).unwrap();
        }
        assert_eq!(store.grad(id).data(), &[6.0, 6.0]);
    }

    #[test]
    fn split_merge_heads_round_trip() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.constant(t(&[2, 3, 4], &data));
        let s = tape.split_heads(x, 2).unwrap();
        assert_eq!(tape.shape(s), vec![4, 3, 2]);
        // batch 0, head 1, token 2 -> columns 2..4 of row (0, 2)
        assert_eq!(tape.value(s).at3(1, 2, 0), 10.0);
        let m = tape.merge_heads(s, 2).unwrap();
        assert_eq!(tape.value(m).data(), &data[..]);
    }

    #[test]
    fn concat_and_slice_invert() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1, 1], &[9.0, 8.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let back = tape.slice(c, 1, 2, 1).unwrap();
        assert_eq!(tape.value(back).data(), &[9.0, 8.0]);
    }
}
