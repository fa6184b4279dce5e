//! The tape. A [`Graph`] is an append-only arena of matrix nodes; every
//! constructor runs the forward kernel eagerly and records enough to replay
//! the chain rule in reverse. Nodes are addressed by [`NodeId`] handles that
//! are only meaningful within the graph that issued them.
//!
//! Conventions:
//! - every node is a row-major 2-D buffer; scalars are 1x1, row vectors 1xK;
//! - gradients accumulate across repeated `backward` calls until
//!   [`Graph::zero_grads`] is called;
//! - a node participates in backward only if it (transitively) depends on a
//!   leaf created with `requires_grad = true`.

use crate::kernels::{layer_norm_row, log_sum_exp, matmul_into, sigmoid, silu};
use crate::{Real, TensorError};
use ndarray::{ArrayView2, ArrayViewMut2};
use std::rc::Rc;
use std::sync::Arc;

/// Handle to a node in a [`Graph`]. Indexes the arena that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Storage<R> {
    Owned(Vec<R>),
    Shared(Arc<Vec<R>>),
}

impl<R> Storage<R> {
    fn as_slice(&self) -> &[R] {
        match self {
            Storage::Owned(v) => v,
            Storage::Shared(a) => a,
        }
    }
}

enum Op<R> {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    RowSum(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    LogSumExpRow(NodeId),
    GatherRows(NodeId, Rc<Vec<u32>>),
    ScatterAddRows(NodeId, Rc<Vec<u32>>),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        /// Per-row (mean, 1/std) captured during forward.
        stats: Vec<(R, R)>,
    },
    Silu(NodeId),
    Scale(NodeId, R),
    Transpose(NodeId),
    MaskedFill(NodeId, Rc<Vec<bool>>),
    SoftmaxRow(NodeId),
    ConcatRows(Vec<NodeId>),
}

struct Node<R: Real> {
    rows: usize,
    cols: usize,
    values: Storage<R>,
    grad: Option<Vec<R>>,
    requires_grad: bool,
    op: Op<R>,
}

/// Append-only autodiff arena. See the module docs for conventions.
pub struct Graph<R: Real> {
    nodes: Vec<Node<R>>,
}

fn shape_err(op: &'static str, details: String) -> TensorError {
    TensorError::Shape { op, details }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn values(&self, id: NodeId) -> &[R] {
        self.nodes[id.0].values.as_slice()
    }

    /// Gradient accumulated so far, `None` if backward never reached the node.
    pub fn grad(&self, id: NodeId) -> Option<&[R]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, node: Node<R>) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn interior(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<R>,
        requires_grad: bool,
        op: Op<R>,
    ) -> NodeId {
        debug_assert_eq!(values.len(), rows * cols);
        self.push(Node {
            rows,
            cols,
            values: Storage::Owned(values),
            grad: None,
            requires_grad,
            op,
        })
    }

    // ─── leaves ──────────────────────────────────────────────────────────

    /// Differentiable input owning its buffer.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<R>) -> Result<NodeId, TensorError> {
        self.leaf_inner(rows, cols, Storage::Owned(data), true)
    }

    /// Non-differentiable input (labels, masks-as-values, constants).
    pub fn constant(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<R>,
    ) -> Result<NodeId, TensorError> {
        self.leaf_inner(rows, cols, Storage::Owned(data), false)
    }

    /// Differentiable leaf that borrows a shared buffer (e.g. an embedding
    /// table used by many per-example graphs). The gradient buffer is still
    /// owned by this graph.
    pub fn shared_leaf(
        &mut self,
        rows: usize,
        cols: usize,
        data: Arc<Vec<R>>,
        requires_grad: bool,
    ) -> Result<NodeId, TensorError> {
        self.leaf_inner(rows, cols, Storage::Shared(data), requires_grad)
    }

    fn leaf_inner(
        &mut self,
        rows: usize,
        cols: usize,
        values: Storage<R>,
        requires_grad: bool,
    ) -> Result<NodeId, TensorError> {
        if rows == 0 || cols == 0 {
            return Err(shape_err("leaf", format!("empty shape {rows}x{cols}")));
        }
        if values.as_slice().len() != rows * cols {
            return Err(shape_err(
                "leaf",
                format!(
                    "buffer length {} does not match {rows}x{cols}",
                    values.as_slice().len()
                ),
            ));
        }
        Ok(self.push(Node {
            rows,
            cols,
            values,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        }))
    }

    /// Overwrites a leaf's values in place (used by the gradient checker to
    /// perturb inputs). Only owned leaves may be mutated.
    pub fn set_leaf_values(&mut self, id: NodeId, data: &[R]) -> Result<(), TensorError> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(shape_err("set_leaf_values", "not a leaf".into()));
        }
        match &mut node.values {
            Storage::Owned(v) => {
                if v.len() != data.len() {
                    return Err(shape_err(
                        "set_leaf_values",
                        format!("length {} != {}", data.len(), v.len()),
                    ));
                }
                v.copy_from_slice(data);
                Ok(())
            }
            Storage::Shared(_) => Err(shape_err(
                "set_leaf_values",
                "cannot mutate a shared leaf".into(),
            )),
        }
    }

    // ─── primitives ──────────────────────────────────────────────────────

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(shape_err(
                "matmul",
                format!("inner dims differ: {m}x{ka} * {kb}x{n}"),
            ));
        }
        let mut out = vec![R::ZERO; m * n];
        matmul_into(self.values(a), self.values(b), &mut out, m, ka, n, R::ZERO);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.interior(m, n, out, rg, Op::Matmul(a, b)))
    }

    /// Elementwise sum; `b` may also be a `1 x cols` row broadcast over `a`'s rows.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let (bm, bn) = self.shape(b);
        let broadcast = bm == 1 && bn == n && m != 1;
        if !broadcast && (bm != m || bn != n) {
            return Err(shape_err(
                "add",
                format!("shapes {m}x{n} and {bm}x{bn} are not compatible"),
            ));
        }
        let av = self.values(a);
        let bv = self.values(b);
        let mut out = Vec::with_capacity(m * n);
        if broadcast {
            for i in 0..m {
                for j in 0..n {
                    out.push(av[i * n + j] + bv[j]);
                }
            }
        } else {
            out.extend(av.iter().zip(bv).map(|(&x, &y)| x + y));
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.interior(m, n, out, rg, Op::Add(a, b)))
    }

    /// Elementwise product of same-shape nodes.
    pub fn elementwise_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        if self.shape(b) != (m, n) {
            let (bm, bn) = self.shape(b);
            return Err(shape_err(
                "elementwise_mul",
                format!("shapes {m}x{n} and {bm}x{bn} differ"),
            ));
        }
        let out: Vec<R> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.interior(m, n, out, rg, Op::Mul(a, b)))
    }

    /// Sums each row: `m x n -> m x 1`.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let av = self.values(a);
        let out: Vec<R> = (0..m)
            .map(|i| av[i * n..(i + 1) * n].iter().copied().sum())
            .collect();
        let rg = self.requires_grad(a);
        Ok(self.interior(m, 1, out, rg, Op::RowSum(a)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let out: Vec<R> = self.values(a).iter().map(|&x| sigmoid(x)).collect();
        let rg = self.requires_grad(a);
        Ok(self.interior(m, n, out, rg, Op::Sigmoid(a)))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let out: Vec<R> = self.values(a).iter().map(|&x| x.exp()).collect();
        let rg = self.requires_grad(a);
        Ok(self.interior(m, n, out, rg, Op::Exp(a)))
    }

    /// Natural log; callers are responsible for keeping inputs positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let out: Vec<R> = self.values(a).iter().map(|&x| x.ln()).collect();
        let rg = self.requires_grad(a);
        Ok(self.interior(m, n, out, rg, Op::Log(a)))
    }

    /// Stable `log(sum(exp(row)))` per row: `m x n -> m x 1`.
    pub fn log_sum_exp_row(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let av = self.values(a);
        let out: Vec<R> = (0..m)
            .map(|i| log_sum_exp(&av[i * n..(i + 1) * n]))
            .collect();
        let rg = self.requires_grad(a);
        Ok(self.interior(m, 1, out, rg, Op::LogSumExpRow(a)))
    }

    /// Selects rows of `table` by index; duplicates allowed. Gradients
    /// scatter-add back into the table.
    pub fn gather_rows(&mut self, table: NodeId, indices: &[u32]) -> Result<NodeId, TensorError> {
        let (t_rows, d) = self.shape(table);
        if indices.is_empty() {
            return Err(shape_err("gather_rows", "empty index list".into()));
        }
        for &ix in indices {
            if ix as usize >= t_rows {
                return Err(shape_err(
                    "gather_rows",
                    format!("index {ix} out of range for {t_rows} rows"),
                ));
            }
        }
        let tv = self.values(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &ix in indices {
            let r = ix as usize;
            out.extend_from_slice(&tv[r * d..(r + 1) * d]);
        }
        let rg = self.requires_grad(table);
        Ok(self.interior(
            indices.len(),
            d,
            out,
            rg,
            Op::GatherRows(table, Rc::new(indices.to_vec())),
        ))
    }

    /// Builds an `out_rows x d` zero matrix and adds `src` row `i` into output
    /// row `indices[i]`; duplicate destinations accumulate.
    pub fn scatter_add_rows(
        &mut self,
        src: NodeId,
        indices: &[u32],
        out_rows: usize,
    ) -> Result<NodeId, TensorError> {
        let (m, d) = self.shape(src);
        if indices.len() != m {
            return Err(shape_err(
                "scatter_add_rows",
                format!("{} indices for {m} source rows", indices.len()),
            ));
        }
        for &ix in indices {
            if ix as usize >= out_rows {
                return Err(shape_err(
                    "scatter_add_rows",
                    format!("index {ix} out of range for {out_rows} rows"),
                ));
            }
        }
        let sv = self.values(src);
        let mut out = vec![R::ZERO; out_rows * d];
        for (i, &ix) in indices.iter().enumerate() {
            let dst = ix as usize * d;
            for j in 0..d {
                out[dst + j] += sv[i * d + j];
            }
        }
        let rg = self.requires_grad(src);
        Ok(self.interior(
            out_rows,
            d,
            out,
            rg,
            Op::ScatterAddRows(src, Rc::new(indices.to_vec())),
        ))
    }

    /// Per-row layer normalization with learned `gamma`/`beta` (both `1 x d`).
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: R,
    ) -> Result<NodeId, TensorError> {
        let (m, d) = self.shape(x);
        if self.shape(gamma) != (1, d) || self.shape(beta) != (1, d) {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} must be 1x{d}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        // partial_cmp keeps NaN eps on the error path.
        if eps.partial_cmp(&R::ZERO) != Some(std::cmp::Ordering::Greater) {
            return Err(shape_err("layer_norm", "eps must be positive".into()));
        }
        let xv = self.values(x);
        let gv = self.values(gamma).to_vec();
        let bv = self.values(beta).to_vec();
        let mut out = vec![R::ZERO; m * d];
        let mut stats = Vec::with_capacity(m);
        for i in 0..m {
            let (mean, inv_std) = layer_norm_row(
                &xv[i * d..(i + 1) * d],
                &gv,
                &bv,
                eps,
                &mut out[i * d..(i + 1) * d],
                None,
            );
            stats.push((mean, inv_std));
        }
        let rg = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        Ok(self.interior(
            m,
            d,
            out,
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
        ))
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let out: Vec<R> = self.values(a).iter().map(|&x| silu(x)).collect();
        let rg = self.requires_grad(a);
        Ok(self.interior(m, n, out, rg, Op::Silu(a)))
    }

    /// Multiplies every element by the constant `c` (not a graph node).
    pub fn scale(&mut self, a: NodeId, c: R) -> Result<NodeId, TensorError> {
        if !c.is_finite() {
            return Err(shape_err("scale", format!("non-finite factor {c}")));
        }
        let (m, n) = self.shape(a);
        let out: Vec<R> = self.values(a).iter().map(|&x| x * c).collect();
        let rg = self.requires_grad(a);
        Ok(self.interior(m, n, out, rg, Op::Scale(a, c)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let av = self.values(a);
        let mut out = vec![R::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.interior(n, m, out, rg, Op::Transpose(a)))
    }

    /// Replaces elements where `mask` is true with `value`; gradient is
    /// blocked at masked positions.
    pub fn masked_fill(
        &mut self,
        a: NodeId,
        mask: &[bool],
        value: R,
    ) -> Result<NodeId, TensorError> {
        self.masked_fill_shared(a, Rc::new(mask.to_vec()), value)
    }

    /// `masked_fill` with a caller-owned mask; lets many nodes (every layer
    /// and head of an attention stack) share one allocation.
    pub fn masked_fill_shared(
        &mut self,
        a: NodeId,
        mask: Rc<Vec<bool>>,
        value: R,
    ) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        if mask.len() != m * n {
            return Err(shape_err(
                "masked_fill",
                format!("mask length {} != {m}x{n}", mask.len()),
            ));
        }
        let out: Vec<R> = self
            .values(a)
            .iter()
            .zip(mask.iter())
            .map(|(&x, &hide)| if hide { value } else { x })
            .collect();
        let rg = self.requires_grad(a);
        Ok(self.interior(m, n, out, rg, Op::MaskedFill(a, mask)))
    }

    /// Stable softmax over each row.
    pub fn softmax_row(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.shape(a);
        let mut out = self.values(a).to_vec();
        for i in 0..m {
            crate::kernels::softmax_row_in_place(&mut out[i * n..(i + 1) * n]);
        }
        let rg = self.requires_grad(a);
        Ok(self.interior(m, n, out, rg, Op::SoftmaxRow(a)))
    }

    /// Vertically stacks nodes that share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_rows", "no parts".into()));
        };
        let (_, n) = self.shape(first);
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pn != n {
                return Err(shape_err(
                    "concat_rows",
                    format!("column mismatch: {pn} != {n}"),
                ));
            }
            rows += pm;
        }
        let mut out = Vec::with_capacity(rows * n);
        for &p in parts {
            out.extend_from_slice(self.values(p));
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.interior(rows, n, out, rg, Op::ConcatRows(parts.to_vec())))
    }

    // ─── backward ────────────────────────────────────────────────────────

    /// Clears every accumulated gradient.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Reverse-mode sweep from a scalar node. Gradients accumulate on top of
    /// whatever previous backward calls left behind.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let (m, n) = self.shape(loss);
        if (m, n) != (1, 1) {
            return Err(shape_err(
                "backward",
                format!("loss must be 1x1, got {m}x{n}"),
            ));
        }
        if !self.requires_grad(loss) {
            return Ok(()); // nothing depends on a differentiable leaf
        }
        // Seed in a scratch buffer: `grad` on the loss node may already hold
        // accumulation from a previous sweep, which must not be re-propagated.
        let mut sweep: Vec<Option<Vec<R>>> = (0..=loss.0).map(|_| None).collect();
        sweep[loss.0] = Some(vec![R::ONE]);

        for i in (0..=loss.0).rev() {
            let Some(g_out) = sweep[i].take() else {
                continue;
            };
            self.propagate(i, &g_out, &mut sweep);
            // Fold this sweep's contribution into the persistent accumulator.
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&g_out) {
                        *a += *g;
                    }
                }
                None => node.grad = Some(g_out),
            }
        }
        Ok(())
    }

    /// Adds `g_out ∘ d(node_i)/d(input)` into each input's sweep buffer.
    fn propagate(&mut self, i: usize, g_out: &[R], sweep: &mut [Option<Vec<R>>]) {
        macro_rules! grad_buf {
            ($id:expr) => {{
                let id: NodeId = $id;
                let len = self.nodes[id.0].rows * self.nodes[id.0].cols;
                sweep[id.0].get_or_insert_with(|| vec![R::ZERO; len])
            }};
        }
        let needs = |s: &Self, id: NodeId| s.nodes[id.0].requires_grad;

        // `op` is moved out so `self` can be borrowed freely, then restored.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.shape(*a);
                let (_, n) = self.shape(*b);
                if needs(self, *a) {
                    // dA += dC * B^T
                    let gv = ArrayView2::from_shape((m, n), g_out).unwrap();
                    let bv = ArrayView2::from_shape((k, n), self.values(*b)).unwrap();
                    let buf = grad_buf!(*a);
                    let mut ga = ArrayViewMut2::from_shape((m, k), buf.as_mut_slice()).unwrap();
                    ndarray::linalg::general_mat_mul(R::ONE, &gv, &bv.t(), R::ONE, &mut ga);
                }
                if needs(self, *b) {
                    // dB += A^T * dC
                    let gv = ArrayView2::from_shape((m, n), g_out).unwrap();
                    let av = ArrayView2::from_shape((m, k), self.values(*a)).unwrap();
                    let buf = grad_buf!(*b);
                    let mut gb = ArrayViewMut2::from_shape((k, n), buf.as_mut_slice()).unwrap();
                    ndarray::linalg::general_mat_mul(R::ONE, &av.t(), &gv, R::ONE, &mut gb);
                }
            }
            Op::Add(a, b) => {
                let (m, n) = self.shape(*a);
                let (bm, _) = self.shape(*b);
                if needs(self, *a) {
                    let buf = grad_buf!(*a);
                    for (x, g) in buf.iter_mut().zip(g_out) {
                        *x += *g;
                    }
                }
                if needs(self, *b) {
                    let buf = grad_buf!(*b);
                    if bm == 1 && m != 1 {
                        for i in 0..m {
                            for j in 0..n {
                                buf[j] += g_out[i * n + j];
                            }
                        }
                    } else {
                        for (x, g) in buf.iter_mut().zip(g_out) {
                            *x += *g;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(self, *a) {
                    let bv = self.values(*b).to_vec();
                    let buf = grad_buf!(*a);
                    for k in 0..buf.len() {
                        buf[k] += g_out[k] * bv[k];
                    }
                }
                if needs(self, *b) {
                    let av = self.values(*a).to_vec();
                    let buf = grad_buf!(*b);
                    for k in 0..buf.len() {
                        buf[k] += g_out[k] * av[k];
                    }
                }
            }
            Op::RowSum(a) => {
                if needs(self, *a) {
                    let (m, n) = self.shape(*a);
                    let buf = grad_buf!(*a);
                    for i in 0..m {
                        for j in 0..n {
                            buf[i * n + j] += g_out[i];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if needs(self, *a) {
                    let yv = self.nodes[i].values.as_slice().to_vec();
                    let buf = grad_buf!(*a);
                    for k in 0..buf.len() {
                        buf[k] += g_out[k] * yv[k] * (R::ONE - yv[k]);
                    }
                }
            }
            Op::Exp(a) => {
                if needs(self, *a) {
                    let yv = self.nodes[i].values.as_slice().to_vec();
                    let buf = grad_buf!(*a);
                    for k in 0..buf.len() {
                        buf[k] += g_out[k] * yv[k];
                    }
                }
            }
            Op::Log(a) => {
                if needs(self, *a) {
                    let xv = self.values(*a).to_vec();
                    let buf = grad_buf!(*a);
                    for k in 0..buf.len() {
                        buf[k] += g_out[k] / xv[k];
                    }
                }
            }
            Op::LogSumExpRow(a) => {
                if needs(self, *a) {
                    let (m, n) = self.shape(*a);
                    let xv = self.values(*a).to_vec();
                    let yv = self.nodes[i].values.as_slice().to_vec();
                    let buf = grad_buf!(*a);
                    for r in 0..m {
                        for c in 0..n {
                            buf[r * n + c] += g_out[r] * (xv[r * n + c] - yv[r]).exp();
                        }
                    }
                }
            }
            Op::GatherRows(table, indices) => {
                if needs(self, *table) {
                    let (_, d) = self.shape(*table);
                    let buf = grad_buf!(*table);
                    for (r, &ix) in indices.iter().enumerate() {
                        let dst = ix as usize * d;
                        for j in 0..d {
                            buf[dst + j] += g_out[r * d + j];
                        }
                    }
                }
            }
            Op::ScatterAddRows(src, indices) => {
                if needs(self, *src) {
                    let (_, d) = self.shape(*src);
                    let buf = grad_buf!(*src);
                    for (r, &ix) in indices.iter().enumerate() {
                        let from = ix as usize * d;
                        for j in 0..d {
                            buf[r * d + j] += g_out[from + j];
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let (m, d) = self.shape(*x);
                let xv = self.values(*x).to_vec();
                let gv = self.values(*gamma).to_vec();
                let inv_d = R::ONE / R::from_f64(d as f64);
                if needs(self, *beta) {
                    let buf = grad_buf!(*beta);
                    for r in 0..m {
                        for j in 0..d {
                            buf[j] += g_out[r * d + j];
                        }
                    }
                }
                if needs(self, *gamma) {
                    let buf = grad_buf!(*gamma);
                    for r in 0..m {
                        let (mean, inv_std) = stats[r];
                        for j in 0..d {
                            let xh = (xv[r * d + j] - mean) * inv_std;
                            buf[j] += g_out[r * d + j] * xh;
                        }
                    }
                }
                if needs(self, *x) {
                    let buf = grad_buf!(*x);
                    let mut dxh = vec![R::ZERO; d];
                    for r in 0..m {
                        let (mean, inv_std) = stats[r];
                        let mut m1 = R::ZERO;
                        let mut m2 = R::ZERO;
                        for j in 0..d {
                            let xh = (xv[r * d + j] - mean) * inv_std;
                            let dh = g_out[r * d + j] * gv[j];
                            dxh[j] = dh;
                            m1 += dh;
                            m2 += dh * xh;
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for j in 0..d {
                            let xh = (xv[r * d + j] - mean) * inv_std;
                            buf[r * d + j] += inv_std * (dxh[j] - m1 - xh * m2);
                        }
                    }
                }
            }
            Op::Silu(a) => {
                if needs(self, *a) {
                    let xv = self.values(*a).to_vec();
                    let buf = grad_buf!(*a);
                    for k in 0..buf.len() {
                        let s = sigmoid(xv[k]);
                        buf[k] += g_out[k] * s * (R::ONE + xv[k] * (R::ONE - s));
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs(self, *a) {
                    let c = *c;
                    let buf = grad_buf!(*a);
                    for k in 0..buf.len() {
                        buf[k] += g_out[k] * c;
                    }
                }
            }
            Op::Transpose(a) => {
                if needs(self, *a) {
                    let (m, n) = self.shape(*a);
                    let buf = grad_buf!(*a);
                    for r in 0..m {
                        for c in 0..n {
                            buf[r * n + c] += g_out[c * m + r];
                        }
                    }
                }
            }
            Op::MaskedFill(a, mask) => {
                if needs(self, *a) {
                    let buf = grad_buf!(*a);
                    for k in 0..buf.len() {
                        if !mask[k] {
                            buf[k] += g_out[k];
                        }
                    }
                }
            }
            Op::SoftmaxRow(a) => {
                if needs(self, *a) {
                    let (m, n) = self.shape(*a);
                    let yv = self.nodes[i].values.as_slice().to_vec();
                    let buf = grad_buf!(*a);
                    for r in 0..m {
                        let row = &yv[r * n..(r + 1) * n];
                        let mut dot = R::ZERO;
                        for c in 0..n {
                            dot += g_out[r * n + c] * row[c];
                        }
                        for c in 0..n {
                            buf[r * n + c] += row[c] * (g_out[r * n + c] - dot);
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (pm, pn) = self.shape(p);
                    let len = pm * pn;
                    if needs(self, p) {
                        let buf = grad_buf!(p);
                        for k in 0..len {
                            buf[k] += g_out[offset + k];
                        }
                    }
                    offset += len;
                }
            }
        }
        self.nodes[i].op = op;
    }
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}
