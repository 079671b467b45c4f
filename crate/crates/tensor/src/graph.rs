//! Computation graph with reverse-mode differentiation.
//!
//! Every backward rule is written in terms of ordinary graph operations, so
//! a gradient returned by [`Graph::grad`] with `create_graph = true` is
//! itself a differentiable node. That is what lets an outer loss be
//! differentiated through an inner loop of gradient steps.
//!
//! Nodes whose inputs carry no gradient (constants, or anything computed
//! while recording is off) are stored as detached leaves, so evaluation-only
//! passes cost no more than an eager computation.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Tanh,
    Relu,
    Softplus,
    Sigmoid,
    Square,
    Scale(f64),
    AddConst,
    /// Elementwise product with a constant tensor (masks, fixed weights).
    MulConst(Rc<Tensor>),
    Clamp(f64, f64),
    Huber(f64),
    MatMul,
    /// `a · bᵀ`
    MatMulNT,
    /// `aᵀ · b`
    MatMulTN,
    Transpose,
    SumAll,
    ExpandScalar,
    SumRows,
    ExpandRows,
    SumCols,
    ExpandCols,
    Reshape,
    SliceCols(usize),
    PadCols(usize),
    SliceRows(usize),
    PadRows(usize),
    Conv(ConvGeom),
    ConvInputGrad(ConvGeom),
    ConvKernelGrad(ConvGeom),
}

struct Node {
    op: Op,
    inputs: Vec<Var>,
    value: Rc<Tensor>,
    requires_grad: bool,
}

/// Arena of recorded operations. Not `Sync`; build one graph per thread.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, inputs: &[Var], value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.recording.get() && inputs.iter().any(|v| nodes[v.0].requires_grad);
        let (op, inputs) = if requires_grad {
            (op, inputs.to_vec())
        } else {
            (Op::Leaf, Vec::new())
        };
        nodes.push(Node {
            op,
            inputs,
            value: Rc::new(value),
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value: Rc::new(value),
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// A trainable leaf: gradients may be requested with respect to it.
    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    /// Convenience for one-element nodes.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Evaluates `f` with recording switched off; everything it creates is
    /// a detached constant.
    pub fn no_grad<T>(&self, f: impl FnOnce() -> T) -> T {
        let prev = self.recording.replace(false);
        let out = f();
        self.recording.set(prev);
        out
    }

    /// Copy of `v` cut off from its history.
    pub fn detach(&self, v: Var) -> Var {
        let value = (*self.value(v)).clone();
        self.constant(value)
    }

    fn unary(&self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        self.push(op, &[x], value)
    }

    fn binary(&self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (a, b) = match (va.len(), vb.len()) {
            _ if va.shape() == vb.shape() => (a, b),
            (1, _) => (self.expand_scalar(a, vb.shape())?, b),
            (_, 1) => (a, self.expand_scalar(b, va.shape())?),
            _ => return Err(mismatch(name, &va, &vb)),
        };
        let value = self.value(a).zip_map(&self.value(b), name, f)?;
        Ok(self.push(op, &[a, b], value))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, "add", |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, "sub", |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, "mul", |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(TensorError::Domain { op: "div" });
        }
        self.binary(a, b, Op::Div, "div", |x, y| x / y)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.unary(x, Op::Neg, |v| -v)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, Op::Exp, f64::exp)
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(TensorError::Domain { op: "log" });
        }
        Ok(self.unary(x, Op::Log, f64::ln))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, Op::Tanh, f64::tanh)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, Op::Relu, |v| v.max(0.0))
    }

    pub fn softplus(&self, x: Var) -> Var {
        self.unary(x, Op::Softplus, softplus)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid, sigmoid)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, Op::Square, |v| v * v)
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(c), |v| v * c)
    }

    pub fn add_const(&self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddConst, |v| v + c)
    }

    pub fn mul_const(&self, x: Var, c: Rc<Tensor>) -> Result<Var> {
        let value = self.value(x).zip_map(&c, "mul_const", |a, b| a * b)?;
        Ok(self.push(Op::MulConst(c), &[x], value))
    }

    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(lo, hi), |v| v.clamp(lo, hi))
    }

    /// Elementwise Huber penalty: `x²/2` for `|x| <= delta`, otherwise
    /// `delta·|x| - delta²/2`.
    pub fn huber(&self, x: Var, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(TensorError::Invalid(format!("huber: delta must be positive, got {delta}")));
        }
        Ok(self.unary(x, Op::Huber(delta), |v| huber(v, delta)))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(&self.value(a), &self.value(b))?;
        Ok(self.push(Op::MatMul, &[a, b], value))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul_nt(&self.value(a), &self.value(b))?;
        Ok(self.push(Op::MatMulNT, &[a, b], value))
    }

    /// `aᵀ · b` without materializing the transpose.
    pub fn matmul_tn(&self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul_tn(&self.value(a), &self.value(b))?;
        Ok(self.push(Op::MatMulTN, &[a, b], value))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let value = kernels::transpose(&self.value(x))?;
        Ok(self.push(Op::Transpose, &[x], value))
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum(&self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(Op::SumAll, &[x], value)
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn expand_scalar(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.len() != 1 {
            return Err(TensorError::Invalid(format!(
                "expand_scalar: source must have one element, got {:?}",
                v.shape()
            )));
        }
        let value = Tensor::full(shape.to_vec(), v.item());
        Ok(self.push(Op::ExpandScalar, &[x], value))
    }

    /// `[r, c] -> [c]`
    pub fn sum_rows(&self, x: Var) -> Result<Var> {
        let value = kernels::sum_rows(&self.value(x))?;
        Ok(self.push(Op::SumRows, &[x], value))
    }

    /// `[c] -> [rows, c]`, repeating the vector on every row.
    pub fn expand_rows(&self, x: Var, rows: usize) -> Result<Var> {
        let value = kernels::expand_rows(&self.value(x), rows)?;
        Ok(self.push(Op::ExpandRows, &[x], value))
    }

    /// `[r, c] -> [r]`
    pub fn sum_cols(&self, x: Var) -> Result<Var> {
        let value = kernels::sum_cols(&self.value(x))?;
        Ok(self.push(Op::SumCols, &[x], value))
    }

    /// `[r] -> [r, cols]`
    pub fn expand_cols(&self, x: Var, cols: usize) -> Result<Var> {
        let value = kernels::expand_cols(&self.value(x), cols)?;
        Ok(self.push(Op::ExpandCols, &[x], value))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push(Op::Reshape, &[x], value))
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = kernels::slice_cols(&self.value(x), start, len)?;
        Ok(self.push(Op::SliceCols(start), &[x], value))
    }

    pub fn pad_cols(&self, x: Var, start: usize, total: usize) -> Result<Var> {
        let value = kernels::pad_cols(&self.value(x), start, total)?;
        Ok(self.push(Op::PadCols(start), &[x], value))
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = kernels::slice_rows(&self.value(x), start, len)?;
        Ok(self.push(Op::SliceRows(start), &[x], value))
    }

    pub fn pad_rows(&self, x: Var, start: usize, total: usize) -> Result<Var> {
        let value = kernels::pad_rows(&self.value(x), start, total)?;
        Ok(self.push(Op::PadRows(start), &[x], value))
    }

    /// Side-by-side concatenation of two matrices with equal row counts.
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: sa,
                rhs: sb,
            });
        }
        let total = sa[1] + sb[1];
        let pa = self.pad_cols(a, 0, total)?;
        let pb = self.pad_cols(b, sa[1], total)?;
        self.add(pa, pb)
    }

    /// Stacks matrices with equal widths on top of each other.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let shapes: Vec<Vec<usize>> = parts.iter().map(|&p| self.shape(p)).collect();
        let Some(first) = shapes.first() else {
            return Err(TensorError::Invalid("concat_rows: nothing to concatenate".into()));
        };
        if shapes.iter().any(|s| s.len() != 2 || s[1] != first[1]) {
            return Err(TensorError::Invalid(format!("concat_rows: incompatible shapes {shapes:?}")));
        }
        let total: usize = shapes.iter().map(|s| s[0]).sum();
        let mut offset = 0;
        let mut acc: Option<Var> = None;
        for (&p, s) in parts.iter().zip(&shapes) {
            let padded = self.pad_rows(p, offset, total)?;
            offset += s[0];
            acc = Some(match acc {
                Some(a) => self.add(a, padded)?,
                None => padded,
            });
        }
        Ok(acc.expect("non-empty"))
    }

    /// Zero-padded ("same" before striding) 2-D cross-correlation of a
    /// `[C_in, H, W]` input with `[C_out, C_in, K, K]` kernels.
    pub fn conv2d(&self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(k));
        let geom = kernels::conv_geom(&xv, &kv, stride)?;
        let value = kernels::conv2d(&xv, &kv, &geom)?;
        Ok(self.push(Op::Conv(geom), &[x, k], value))
    }

    /// Transposed convolution: the input-adjoint of [`Graph::conv2d`] for a
    /// forward input of spatial size `out_hw`. Kernels are laid out as in the
    /// forward convolution, i.e. `[C_of_y, C_out_here, K, K]`.
    pub fn conv_transpose2d(&self, y: Var, k: Var, stride: usize, out_hw: (usize, usize)) -> Result<Var> {
        let (yv, kv) = (self.value(y), self.value(k));
        let [o, c, kh, kw] = kv.shape() else {
            return Err(TensorError::Invalid(format!(
                "conv_transpose2d: kernels must be 4-D, got {:?}",
                kv.shape()
            )));
        };
        if kh != kw || kh % 2 == 0 || stride == 0 {
            return Err(TensorError::Invalid("conv_transpose2d: bad kernel or stride".into()));
        }
        let geom = ConvGeom {
            in_channels: *c,
            out_channels: *o,
            height: out_hw.0,
            width: out_hw.1,
            kernel: *kh,
            stride,
        };
        let value = kernels::conv2d_input_grad(&yv, &kv, &geom)?;
        Ok(self.push(Op::ConvInputGrad(geom), &[y, k], value))
    }

    fn conv_kernel_grad(&self, x: Var, gy: Var, geom: ConvGeom) -> Result<Var> {
        let value = kernels::conv2d_kernel_grad(&self.value(x), &self.value(gy), &geom)?;
        Ok(self.push(Op::ConvKernelGrad(geom), &[x, gy], value))
    }

    fn conv_with(&self, x: Var, k: Var, geom: ConvGeom) -> Result<Var> {
        let value = kernels::conv2d(&self.value(x), &self.value(k), &geom)?;
        Ok(self.push(Op::Conv(geom), &[x, k], value))
    }

    fn conv_input_grad_with(&self, gy: Var, k: Var, geom: ConvGeom) -> Result<Var> {
        let value = kernels::conv2d_input_grad(&self.value(gy), &self.value(k), &geom)?;
        Ok(self.push(Op::ConvInputGrad(geom), &[gy, k], value))
    }

    fn mask(&self, x: Var, keep: impl Fn(f64) -> bool) -> Rc<Tensor> {
        Rc::new(self.value(x).map(|v| if keep(v) { 1.0 } else { 0.0 }))
    }

    /// Vector-Jacobian product of node `id` for its `k`-th input, written in
    /// graph operations so the result stays differentiable.
    fn vjp(&self, id: usize, op: &Op, inputs: &[Var], k: usize, gy: Var) -> Result<Var> {
        let out = Var(id);
        let x = inputs[0];
        Ok(match op {
            Op::Leaf => unreachable!("leaves have no inputs"),
            Op::Add => gy,
            Op::Sub => {
                if k == 0 {
                    gy
                } else {
                    self.neg(gy)
                }
            }
            Op::Mul => self.mul(gy, inputs[1 - k])?,
            Op::Div => {
                let b = inputs[1];
                if k == 0 {
                    self.div(gy, b)?
                } else {
                    // -gy * a / b^2 == -(gy * out) / b
                    let t = self.mul(gy, out)?;
                    let t = self.div(t, b)?;
                    self.neg(t)
                }
            }
            Op::Neg => self.neg(gy),
            Op::Exp => self.mul(gy, out)?,
            Op::Log => self.div(gy, x)?,
            Op::Tanh => {
                let sq = self.square(out);
                let d = self.add_const(self.neg(sq), 1.0);
                self.mul(gy, d)?
            }
            Op::Relu => self.mul_const(gy, self.mask(x, |v| v > 0.0))?,
            Op::Softplus => {
                let s = self.sigmoid(x);
                self.mul(gy, s)?
            }
            Op::Sigmoid => {
                let one_minus = self.add_const(self.neg(out), 1.0);
                let d = self.mul(out, one_minus)?;
                self.mul(gy, d)?
            }
            Op::Square => {
                let t = self.mul(gy, x)?;
                self.scale(t, 2.0)
            }
            Op::Scale(c) => self.scale(gy, *c),
            Op::AddConst => gy,
            Op::MulConst(c) => self.mul_const(gy, Rc::clone(c))?,
            Op::Clamp(lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.mul_const(gy, self.mask(x, |v| v >= lo && v <= hi))?
            }
            Op::Huber(delta) => {
                let d = self.clamp(x, -delta, *delta);
                self.mul(gy, d)?
            }
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                if k == 0 {
                    self.matmul_nt(gy, b)?
                } else {
                    self.matmul_tn(a, gy)?
                }
            }
            Op::MatMulNT => {
                let (a, b) = (inputs[0], inputs[1]);
                if k == 0 {
                    self.matmul(gy, b)?
                } else {
                    self.matmul_tn(gy, a)?
                }
            }
            Op::MatMulTN => {
                let (a, b) = (inputs[0], inputs[1]);
                if k == 0 {
                    self.matmul_nt(b, gy)?
                } else {
                    self.matmul(a, gy)?
                }
            }
            Op::Transpose => self.transpose(gy)?,
            Op::SumAll => self.expand_scalar(gy, &self.shape(x))?,
            Op::ExpandScalar => {
                let s = self.sum(gy);
                self.reshape(s, &self.shape(x))?
            }
            Op::SumRows => self.expand_rows(gy, self.shape(x)[0])?,
            Op::ExpandRows => self.sum_rows(gy)?,
            Op::SumCols => self.expand_cols(gy, self.shape(x)[1])?,
            Op::ExpandCols => self.sum_cols(gy)?,
            Op::Reshape => self.reshape(gy, &self.shape(x))?,
            Op::SliceCols(start) => self.pad_cols(gy, *start, self.shape(x)[1])?,
            Op::PadCols(start) => self.slice_cols(gy, *start, self.shape(x)[1])?,
            Op::SliceRows(start) => self.pad_rows(gy, *start, self.shape(x)[0])?,
            Op::PadRows(start) => self.slice_rows(gy, *start, self.shape(x)[0])?,
            Op::Conv(geom) => {
                let (xi, ki) = (inputs[0], inputs[1]);
                if k == 0 {
                    self.conv_input_grad_with(gy, ki, *geom)?
                } else {
                    self.conv_kernel_grad(xi, gy, *geom)?
                }
            }
            Op::ConvInputGrad(geom) => {
                // out = A(y, k) with <A(y,k), u> = <y, conv(u, k)>
                if k == 0 {
                    self.conv_with(gy, inputs[1], *geom)?
                } else {
                    self.conv_kernel_grad(gy, inputs[0], *geom)?
                }
            }
            Op::ConvKernelGrad(geom) => {
                // out = B(x, y) with <B(x,y), v> = <y, conv(x, v)>
                let (xi, yi) = (inputs[0], inputs[1]);
                if k == 0 {
                    self.conv_input_grad_with(yi, gy, *geom)?
                } else {
                    self.conv_with(xi, gy, *geom)?
                }
            }
        })
    }

    /// Gradients of the one-element `y` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned nodes are differentiable, so `grad`
    /// can be applied again to expressions that contain them. Inputs that do
    /// not influence `y` get a zero gradient of matching shape.
    pub fn grad(&self, y: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let yshape = self.shape(y);
        if yshape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(yshape));
        }
        let n = y.0 + 1;
        // Nodes downstream of some `wrt` that also feed into `y`.
        let mut relevant = vec![false; n];
        {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if w.0 < n && nodes[w.0].requires_grad {
                    relevant[w.0] = true;
                }
            }
            for id in 0..n {
                if !relevant[id] && nodes[id].inputs.iter().any(|i| relevant[i.0]) {
                    relevant[id] = true;
                }
            }
        }
        let prev = self.recording.replace(create_graph);
        let result = self.backward(y, n, &relevant);
        self.recording.set(prev);
        let grads = result?;
        Ok(wrt
            .iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(self.shape(w))),
            })
            .collect())
    }

    fn backward(&self, y: Var, n: usize, relevant: &[bool]) -> Result<Vec<Option<Var>>> {
        let mut grads: Vec<Option<Var>> = vec![None; n];
        if !relevant[y.0] {
            return Ok(grads);
        }
        grads[y.0] = Some(self.constant(Tensor::ones(self.shape(y))));
        for id in (0..n).rev() {
            if !relevant[id] {
                continue;
            }
            let Some(gy) = grads[id] else { continue };
            let (op, inputs) = {
                let node = &self.nodes.borrow()[id];
                (node.op.clone(), node.inputs.clone())
            };
            for (k, &input) in inputs.iter().enumerate() {
                if !relevant[input.0] {
                    continue;
                }
                let contrib = self.vjp(id, &op, &inputs, k, gy)?;
                grads[input.0] = Some(match grads[input.0] {
                    Some(acc) => self.add(acc, contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(grads)
    }

    /// Gradient values without recording a differentiable backward graph.
    pub fn grad_values(&self, y: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let grads = self.grad(y, wrt, false)?;
        Ok(grads.into_iter().map(|g| (*self.value(g)).clone()).collect())
    }
}

pub fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Scalar Huber penalty with threshold `delta`.
pub fn huber(v: f64, delta: f64) -> f64 {
    let a = v.abs();
    if a <= delta {
        0.5 * v * v
    } else {
        delta * a - 0.5 * delta * delta
    }
}
