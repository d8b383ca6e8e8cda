//! Dense reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`] as row-major `rows × cols` buffers. Every primitive
//! pushes a node recording its inputs; [`Tape::backward`] walks the nodes in
//! reverse insertion order, which is a valid topological order because a node's
//! inputs always exist before it is created.
//!
//! Learnable parameters are owned by a [`ParamSet`] and bound onto a fresh tape
//! for each forward pass. After the reverse sweep the leaf gradients are added
//! back into the parameter tensors with [`Tape::accumulate_param_grads`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::sparse::CooMatrix;

/// Dense f64 array with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::dim("tensor", &shape, &[values.len()]));
        }
        if shape.len() > 2 {
            return Err(Error::Parameter(format!(
                "tensors have rank at most 2, got shape {shape:?}"
            )));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n]).expect("consistent zeros")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![], vec![value]).expect("scalar")
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor::new(vec![values.len()], values).expect("vector")
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dim("from_rows", &[cols], &[bad.len()]));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.values.len() {
                return Err(Error::dim("set_grad", &self.shape, &[g.len()]));
            }
        }
        self.grad = grad;
        Ok(())
    }

    /// Drops the gradient so the next backward pass starts fresh.
    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.values.len()]);
    }

    /// The tensor viewed as a matrix: scalars are 1×1 and vectors are columns.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Plain matrix product outside any tape.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.rows_cols();
        let (k2, n) = other.rows_cols();
        if k != k2 || self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.values, (k, 1), &other.values, (n, 1), &mut out, 0.0);
        Tensor::matrix(m, n, out)
    }
}

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a sparse constant registered on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparseId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMatMul(SparseId, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    Dropout(Var, Vec<f64>),
    ConcatCols(Var, Var),
    Sum(Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Record of primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sparse: Vec<CooMatrix>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(ParamId, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, tensor: &Tensor, requires_grad: bool) -> Var {
        let (r, c) = tensor.rows_cols();
        self.push(r, c, tensor.values.clone(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Var {
        assert_eq!(rows * cols, values.len(), "constant_matrix shape");
        self.push(rows, cols, values, Op::Leaf, false)
    }

    /// Binds every parameter as a gradient-tracking leaf; the returned vector
    /// is indexed by [`ParamId::index`].
    pub fn bind_params(&mut self, params: &ParamSet) -> Vec<Var> {
        params
            .iter()
            .map(|(id, _, t)| {
                let v = self.leaf(t, true);
                self.bindings.push((id, v));
                v
            })
            .collect()
    }

    pub fn sparse_constant(&mut self, m: CooMatrix) -> SparseId {
        self.sparse.push(m);
        SparseId(self.sparse.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "scalar() on non-scalar node");
        n.value[0]
    }

    /// Accumulated gradient of a leaf after one or more backward sweeps.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::dim("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), (k, 1), self.value(b), (n, 1), &mut out, 0.0);
        let rg = self.needs(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    /// Product of a constant sparse matrix with a dense node.
    pub fn spmm(&mut self, s: SparseId, b: Var) -> Result<Var> {
        let (rows, cols) = self.shape(b);
        let sm = &self.sparse[s.0];
        if sm.n() != rows {
            return Err(Error::dim("spmm", &[sm.n(), sm.n()], &[rows, cols]));
        }
        let mut out = vec![0.0; rows * cols];
        sm.matmul_dense(self.value(b), cols, &mut out);
        let rg = self.needs(&[b]);
        Ok(self.push(rows, cols, out, Op::SpMatMul(s, b), rg))
    }

    /// Adds a `1 × cols` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let (br, bc) = self.shape(bias);
        if br * bc != n {
            return Err(Error::dim("add_bias", &[m, n], &[br, bc]));
        }
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(a)
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let rg = self.needs(&[a, bias]);
        Ok(self.push(m, n, out, Op::AddBias(a, bias), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::dim(op, &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(m, n, out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(m, n, out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * c).collect();
        let rg = self.needs(&[a]);
        self.push(m, n, out, Op::Scale(a, c), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.exp()).collect();
        let rg = self.needs(&[a]);
        self.push(m, n, out, Op::Exp(a), rg)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let (m, n) = self.shape(a);
        let rg = self.needs(&[a]);
        match kind {
            Activation::Relu => {
                let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
                self.push(m, n, out, Op::Relu(a), rg)
            }
            Activation::Sigmoid => {
                let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
                self.push(m, n, out, Op::Sigmoid(a), rg)
            }
        }
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    /// Inverted dropout. In eval mode, or with `p == 0`, the input node is returned as is.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let (m, n) = self.shape(a);
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = zip_map(self.value(a), &mask, |x, k| x * k);
        let rg = self.needs(&[a]);
        Ok(self.push(m, n, out, Op::Dropout(a, mask), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, p) = self.shape(a);
        let (mb, q) = self.shape(b);
        if ma != mb {
            return Err(Error::dim("concat_cols", &[ma, p], &[mb, q]));
        }
        let mut out = Vec::with_capacity(ma * (p + q));
        let (va, vb) = (self.value(a), self.value(b));
        for i in 0..ma {
            out.extend_from_slice(&va[i * p..(i + 1) * p]);
            out.extend_from_slice(&vb[i * q..(i + 1) * q]);
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(ma, p + q, out, Op::ConcatCols(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.needs(&[a]);
        self.push(1, 1, vec![s], Op::Sum(a), rg)
    }

    /// Mean squared error between two nodes with equal element counts.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pr, pc) = self.shape(pred);
        let (tr, tc) = self.shape(target);
        if pr * pc != tr * tc {
            return Err(Error::dim("mse", &[pr, pc], &[tr, tc]));
        }
        let n = pr * pc;
        if n == 0 {
            return Err(Error::EmptyInput("mse over zero elements".into()));
        }
        let s: f64 = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let rg = self.needs(&[pred, target]);
        Ok(self.push(1, 1, vec![s / n as f64], Op::Mse(pred, target), rg))
    }

    /// Reverse sweep from a scalar node. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            let (r, c) = self.shape(loss);
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let (m, n) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => {
                    let slot = self.leaf_grads[idx].get_or_insert_with(|| vec![0.0; g.len()]);
                    add_into(slot, &g);
                }
                Op::MatMul(a, b) => {
                    let (_, k) = self.shape(*a);
                    if self.node(*a).requires_grad {
                        let ga = slot(&mut grads, *a, m * k);
                        // dA += G · Bᵀ
                        gemm(m, n, k, &g, (n, 1), &self.node(*b).value, (1, n), ga, 1.0);
                    }
                    if self.node(*b).requires_grad {
                        let gb = slot(&mut grads, *b, k * n);
                        // dB += Aᵀ · G
                        gemm(k, m, n, &self.node(*a).value, (1, k), &g, (n, 1), gb, 1.0);
                    }
                }
                Op::SpMatMul(s, b) => {
                    let gb = slot(&mut grads, *b, m * n);
                    self.sparse[s.0].transpose_matmul_dense(&g, n, gb);
                }
                Op::AddBias(a, bias) => {
                    if self.node(*a).requires_grad {
                        add_into(slot(&mut grads, *a, m * n), &g);
                    }
                    if self.node(*bias).requires_grad {
                        let gb = slot(&mut grads, *bias, n);
                        for row in g.chunks(n.max(1)) {
                            add_into(gb, row);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.node(v).requires_grad {
                            add_into(slot(&mut grads, v, m * n), &g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.node(*a).requires_grad {
                        let other = &self.node(*b).value;
                        let ga = slot(&mut grads, *a, m * n);
                        for ((d, gi), o) in ga.iter_mut().zip(&g).zip(other) {
                            *d += gi * o;
                        }
                    }
                    if self.node(*b).requires_grad {
                        let other = &self.node(*a).value;
                        let gb = slot(&mut grads, *b, m * n);
                        for ((d, gi), o) in gb.iter_mut().zip(&g).zip(other) {
                            *d += gi * o;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let ga = slot(&mut grads, *a, m * n);
                    for (d, gi) in ga.iter_mut().zip(&g) {
                        *d += gi * c;
                    }
                }
                Op::Exp(a) => {
                    let ga = slot(&mut grads, *a, m * n);
                    for ((d, gi), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *d += gi * y;
                    }
                }
                Op::Relu(a) => {
                    let input = &self.node(*a).value;
                    let ga = slot(&mut grads, *a, m * n);
                    for ((d, gi), x) in ga.iter_mut().zip(&g).zip(input) {
                        if *x > 0.0 {
                            *d += gi;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = slot(&mut grads, *a, m * n);
                    for ((d, gi), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *d += gi * y * (1.0 - y);
                    }
                }
                Op::Dropout(a, mask) => {
                    let ga = slot(&mut grads, *a, m * n);
                    for ((d, gi), k) in ga.iter_mut().zip(&g).zip(mask) {
                        *d += gi * k;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (_, p) = self.shape(*a);
                    let q = n - p;
                    if self.node(*a).requires_grad {
                        let ga = slot(&mut grads, *a, m * p);
                        for i in 0..m {
                            add_into(&mut ga[i * p..(i + 1) * p], &g[i * n..i * n + p]);
                        }
                    }
                    if self.node(*b).requires_grad {
                        let gb = slot(&mut grads, *b, m * q);
                        for i in 0..m {
                            add_into(&mut gb[i * q..(i + 1) * q], &g[i * n + p..(i + 1) * n]);
                        }
                    }
                }
                Op::Sum(a) => {
                    let len = self.node(*a).value.len();
                    let ga = slot(&mut grads, *a, len);
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mse(pred, target) => {
                    let pv = &self.node(*pred).value;
                    let tv = &self.node(*target).value;
                    let scale = 2.0 * g[0] / pv.len() as f64;
                    if self.node(*pred).requires_grad {
                        let gp = slot(&mut grads, *pred, pv.len());
                        for ((d, p), t) in gp.iter_mut().zip(pv).zip(tv) {
                            *d += scale * (p - t);
                        }
                    }
                    if self.node(*target).requires_grad {
                        let gt = slot(&mut grads, *target, tv.len());
                        for ((d, p), t) in gt.iter_mut().zip(pv).zip(tv) {
                            *d -= scale * (p - t);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds the leaf gradients of every bound parameter into the parameter
    /// tensors. Parameters the loss never reached receive exact zeros.
    pub fn accumulate_param_grads(&self, params: &mut ParamSet) {
        for &(id, var) in &self.bindings {
            let t = params.get_mut(id);
            let slot = t.grad.get_or_insert_with(|| vec![0.0; t.values.len()]);
            if let Some(g) = self.grad(var) {
                add_into(slot, g);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = a·b + beta·c` with explicit (row, col) strides for `a` and `b`;
/// `c` is dense row-major `m × n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let max_index = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs;
    assert!(max_index(m, k, a_strides) < a.len());
    assert!(max_index(k, n, b_strides) < b.len());
    // SAFETY: the asserts above bound every index dgemm reads from `a` and `b`,
    // and `c` is exactly `m * n` with row stride `n`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
