//! A small dense-tensor tape with reverse-mode differentiation.
//!
//! Tensors are 2-D `[rows, cols]` f64 matrices owned by a [`Tape`]; a
//! [`Tensor`] is a handle into that tape. Operations record their parents so
//! [`Tape::backward`] can accumulate exact gradients in reverse creation
//! order. Shape violations are programmer errors and panic with a message.
//!
//! The tape is single-threaded by construction (interior mutability via
//! `RefCell`); forward passes on frozen parameters build independent tapes
//! and may run concurrently.

use crate::math;
use alloc::vec::Vec;
use core::cell::RefCell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor(usize);

struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Matmul(usize, usize),
    MatmulNt(usize, usize),
    Relu(usize),
    SoftmaxRows(usize),
    LayerNormRows { x: usize, gain: usize, bias: usize, eps: f64 },
    Embedding { table: usize, ids: Vec<usize> },
    GatherRows(usize, Vec<usize>),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceCols { src: usize, start: usize, len: usize },
    MeanRows(usize),
    SumAll(usize),
    /// Rows of the output are concatenations of selected source rows.
    UnfoldRows { src: usize, groups: Vec<Vec<usize>> },
    /// Mean over selected rows of `-log(max(p[row, target[row]], floor))`.
    PickLogMean { src: usize, targets: Vec<usize>, mask: Vec<bool>, floor: f64 },
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&self, rows: usize, cols: usize, values: Vec<f64>, op: Op, requires_grad: bool) -> Tensor {
        debug_assert_eq!(values.len(), rows * cols);
        let mut nodes = self.nodes.borrow_mut();
        let grad = alloc::vec![0.0; values.len()];
        nodes.push(Node {
            rows,
            cols,
            values,
            grad,
            requires_grad,
            op,
        });
        Tensor(nodes.len() - 1)
    }

    pub fn leaf(&self, rows: usize, cols: usize, values: Vec<f64>, requires_grad: bool) -> Tensor {
        assert_eq!(values.len(), rows * cols, "leaf data length mismatch");
        self.push(rows, cols, values, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
        self.leaf(rows, cols, values, false)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.leaf(1, 1, alloc::vec![v], false)
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[t.0].rows, nodes[t.0].cols)
    }

    pub fn values(&self, t: Tensor) -> Vec<f64> {
        self.nodes.borrow()[t.0].values.clone()
    }

    pub fn value_scalar(&self, t: Tensor) -> f64 {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[t.0].values.len(), 1, "not a scalar");
        nodes[t.0].values[0]
    }

    pub fn grad(&self, t: Tensor) -> Vec<f64> {
        self.nodes.borrow()[t.0].grad.clone()
    }

    fn same_shape(&self, a: Tensor, b: Tensor, what: &str) -> (usize, usize) {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert!(
            ra == rb && ca == cb,
            "{what}: shape mismatch {ra}x{ca} vs {rb}x{cb}"
        );
        (ra, ca)
    }

    fn grads_needed(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    pub fn add(&self, a: Tensor, b: Tensor) -> Tensor {
        let (r, c) = self.same_shape(a, b, "add");
        let values = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .values
                .iter()
                .zip(&nodes[b.0].values)
                .map(|(x, y)| x + y)
                .collect()
        };
        let rg = self.grads_needed(&[a.0, b.0]);
        self.push(r, c, values, Op::Add(a.0, b.0), rg)
    }

    /// Matrix plus a 1-row vector broadcast over rows (bias add).
    pub fn add_row(&self, a: Tensor, row: Tensor) -> Tensor {
        let (r, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        assert!(rr == 1 && rc == c, "add_row: need 1x{c} row, got {rr}x{rc}");
        let values = {
            let nodes = self.nodes.borrow();
            let rv = &nodes[row.0].values;
            nodes[a.0]
                .values
                .iter()
                .enumerate()
                .map(|(i, x)| x + rv[i % c])
                .collect()
        };
        let rg = self.grads_needed(&[a.0, row.0]);
        self.push(r, c, values, Op::AddRow(a.0, row.0), rg)
    }

    pub fn sub(&self, a: Tensor, b: Tensor) -> Tensor {
        let (r, c) = self.same_shape(a, b, "sub");
        let values = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .values
                .iter()
                .zip(&nodes[b.0].values)
                .map(|(x, y)| x - y)
                .collect()
        };
        let rg = self.grads_needed(&[a.0, b.0]);
        self.push(r, c, values, Op::Sub(a.0, b.0), rg)
    }

    pub fn mul(&self, a: Tensor, b: Tensor) -> Tensor {
        let (r, c) = self.same_shape(a, b, "mul");
        let values = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .values
                .iter()
                .zip(&nodes[b.0].values)
                .map(|(x, y)| x * y)
                .collect()
        };
        let rg = self.grads_needed(&[a.0, b.0]);
        self.push(r, c, values, Op::Mul(a.0, b.0), rg)
    }

    pub fn scale(&self, a: Tensor, k: f64) -> Tensor {
        let (r, c) = self.shape(a);
        let values = {
            let nodes = self.nodes.borrow();
            nodes[a.0].values.iter().map(|x| x * k).collect()
        };
        let rg = self.grads_needed(&[a.0]);
        self.push(r, c, values, Op::Scale(a.0, k), rg)
    }

    /// Add a fixed matrix (e.g. an attention mask of 0 / -1e30 entries).
    pub fn add_const(&self, a: Tensor, addend: &[f64]) -> Tensor {
        let (r, c) = self.shape(a);
        assert_eq!(addend.len(), r * c, "add_const: length mismatch");
        let values = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .values
                .iter()
                .zip(addend)
                .map(|(x, y)| x + y)
                .collect()
        };
        let rg = self.grads_needed(&[a.0]);
        self.push(r, c, values, Op::AddConst(a.0), rg)
    }

    pub fn matmul(&self, a: Tensor, b: Tensor) -> Tensor {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let values = {
            let nodes = self.nodes.borrow();
            matmul_raw(&nodes[a.0].values, &nodes[b.0].values, m, k, n)
        };
        let rg = self.grads_needed(&[a.0, b.0]);
        self.push(m, n, values, Op::Matmul(a.0, b.0), rg)
    }

    /// `A @ B^T` without materializing the transpose.
    pub fn matmul_nt(&self, a: Tensor, b: Tensor) -> Tensor {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt: inner dims {k} vs {k2}");
        let values = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].values;
            let bv = &nodes[b.0].values;
            let mut out = alloc::vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += av[i * k + p] * bv[j * k + p];
                    }
                    out[i * n + j] = acc;
                }
            }
            out
        };
        let rg = self.grads_needed(&[a.0, b.0]);
        self.push(m, n, values, Op::MatmulNt(a.0, b.0), rg)
    }

    pub fn relu(&self, a: Tensor) -> Tensor {
        let (r, c) = self.shape(a);
        let values = {
            let nodes = self.nodes.borrow();
            nodes[a.0].values.iter().map(|x| x.max(0.0)).collect()
        };
        let rg = self.grads_needed(&[a.0]);
        self.push(r, c, values, Op::Relu(a.0), rg)
    }

    /// Softmax along each row.
    pub fn softmax_rows(&self, a: Tensor) -> Tensor {
        let (r, c) = self.shape(a);
        let values = {
            let nodes = self.nodes.borrow();
            let mut out = Vec::with_capacity(r * c);
            for row in nodes[a.0].values.chunks(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|x| math::exp(x - max)).collect();
                let sum: f64 = exps.iter().sum();
                out.extend(exps.iter().map(|e| e / sum));
            }
            out
        };
        let rg = self.grads_needed(&[a.0]);
        self.push(r, c, values, Op::SoftmaxRows(a.0), rg)
    }

    /// Per-row layer normalization with learnable gain and bias (1-row each).
    pub fn layer_norm_rows(&self, x: Tensor, gain: Tensor, bias: Tensor) -> Tensor {
        let (r, c) = self.shape(x);
        let eps = 1e-5;
        for (t, name) in [(gain, "gain"), (bias, "bias")] {
            let (tr, tc) = self.shape(t);
            assert!(tr == 1 && tc == c, "layer_norm {name}: need 1x{c}, got {tr}x{tc}");
        }
        let values = {
            let nodes = self.nodes.borrow();
            let g = &nodes[gain.0].values;
            let b = &nodes[bias.0].values;
            let mut out = Vec::with_capacity(r * c);
            for row in nodes[x.0].values.chunks(c) {
                let mean: f64 = row.iter().sum::<f64>() / c as f64;
                let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let inv = 1.0 / math::sqrt(var + eps);
                for (j, v) in row.iter().enumerate() {
                    out.push((v - mean) * inv * g[j] + b[j]);
                }
            }
            out
        };
        let rg = self.grads_needed(&[x.0, gain.0, bias.0]);
        self.push(
            r,
            c,
            values,
            Op::LayerNormRows { x: x.0, gain: gain.0, bias: bias.0, eps },
            rg,
        )
    }

    /// Look up embedding rows: `table` is `[V, d]`, result `[ids.len(), d]`.
    pub fn embedding(&self, table: Tensor, ids: &[usize]) -> Tensor {
        let (v, d) = self.shape(table);
        assert!(ids.iter().all(|&i| i < v), "embedding: id out of range 0..{v}");
        let values = {
            let nodes = self.nodes.borrow();
            let tv = &nodes[table.0].values;
            let mut out = Vec::with_capacity(ids.len() * d);
            for &i in ids {
                out.extend_from_slice(&tv[i * d..(i + 1) * d]);
            }
            out
        };
        let rg = self.grads_needed(&[table.0]);
        self.push(ids.len(), d, values, Op::Embedding { table: table.0, ids: ids.to_vec() }, rg)
    }

    /// Select rows by index (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&self, a: Tensor, rows: &[usize]) -> Tensor {
        let (r, c) = self.shape(a);
        assert!(rows.iter().all(|&i| i < r), "gather_rows: index out of range 0..{r}");
        let values = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].values;
            let mut out = Vec::with_capacity(rows.len() * c);
            for &i in rows {
                out.extend_from_slice(&av[i * c..(i + 1) * c]);
            }
            out
        };
        let rg = self.grads_needed(&[a.0]);
        self.push(rows.len(), c, values, Op::GatherRows(a.0, rows.to_vec()), rg)
    }

    pub fn concat_rows(&self, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_rows: empty");
        let (_, c) = self.shape(parts[0]);
        let mut rows = 0;
        let mut values = Vec::new();
        {
            let nodes = self.nodes.borrow();
            for t in parts {
                assert_eq!(nodes[t.0].cols, c, "concat_rows: column mismatch");
                rows += nodes[t.0].rows;
                values.extend_from_slice(&nodes[t.0].values);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|t| t.0).collect();
        let rg = self.grads_needed(&ids);
        self.push(rows, c, values, Op::ConcatRows(ids), rg)
    }

    pub fn concat_cols(&self, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_cols: empty");
        let (r, _) = self.shape(parts[0]);
        let mut cols = 0;
        {
            let nodes = self.nodes.borrow();
            for t in parts {
                assert_eq!(nodes[t.0].rows, r, "concat_cols: row mismatch");
                cols += nodes[t.0].cols;
            }
        }
        let values = {
            let nodes = self.nodes.borrow();
            let mut out = Vec::with_capacity(r * cols);
            for i in 0..r {
                for t in parts {
                    let n = &nodes[t.0];
                    out.extend_from_slice(&n.values[i * n.cols..(i + 1) * n.cols]);
                }
            }
            out
        };
        let ids: Vec<usize> = parts.iter().map(|t| t.0).collect();
        let rg = self.grads_needed(&ids);
        self.push(r, cols, values, Op::ConcatCols(ids), rg)
    }

    pub fn slice_cols(&self, a: Tensor, start: usize, len: usize) -> Tensor {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "slice_cols: {start}+{len} > {c}");
        let values = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].values;
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&av[i * c + start..i * c + start + len]);
            }
            out
        };
        let rg = self.grads_needed(&[a.0]);
        self.push(r, len, values, Op::SliceCols { src: a.0, start, len }, rg)
    }

    /// Mean over rows: `[R, C] -> [1, C]`.
    pub fn mean_rows(&self, a: Tensor) -> Tensor {
        let (r, c) = self.shape(a);
        assert!(r > 0, "mean_rows: empty");
        let values = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].values;
            (0..c)
                .map(|j| (0..r).map(|i| av[i * c + j]).sum::<f64>() / r as f64)
                .collect()
        };
        let rg = self.grads_needed(&[a.0]);
        self.push(1, c, values, Op::MeanRows(a.0), rg)
    }

    /// Build `[groups.len(), group_len * C]` by concatenating the selected
    /// source rows of each group; used for patch embedding and merging.
    pub fn unfold_rows(&self, a: Tensor, groups: &[Vec<usize>]) -> Tensor {
        let (r, c) = self.shape(a);
        assert!(!groups.is_empty(), "unfold_rows: empty");
        let glen = groups[0].len();
        assert!(glen > 0, "unfold_rows: empty group");
        for g in groups {
            assert_eq!(g.len(), glen, "unfold_rows: ragged groups");
            assert!(g.iter().all(|&i| i < r), "unfold_rows: index out of range 0..{r}");
        }
        let values = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].values;
            let mut out = Vec::with_capacity(groups.len() * glen * c);
            for g in groups {
                for &i in g {
                    out.extend_from_slice(&av[i * c..(i + 1) * c]);
                }
            }
            out
        };
        let rg = self.grads_needed(&[a.0]);
        self.push(
            groups.len(),
            glen * c,
            values,
            Op::UnfoldRows { src: a.0, groups: groups.to_vec() },
            rg,
        )
    }

    /// Sum of all entries: `[R, C] -> [1, 1]`.
    pub fn sum_all(&self, a: Tensor) -> Tensor {
        let values = {
            let nodes = self.nodes.borrow();
            alloc::vec![nodes[a.0].values.iter().sum()]
        };
        let rg = self.grads_needed(&[a.0]);
        self.push(1, 1, values, Op::SumAll(a.0), rg)
    }

    /// Mean squared error between two same-shape tensors, as a scalar node.
    pub fn mse(&self, pred: Tensor, target: Tensor) -> Tensor {
        let (r, c) = self.same_shape(pred, target, "mse");
        let diff = self.sub(pred, target);
        let sq = self.mul(diff, diff);
        self.scale(self.sum_all(sq), 1.0 / (r * c) as f64)
    }

    /// Cross-entropy of row distributions against target indices, averaged
    /// over positions where `mask` is true; probabilities floored.
    pub fn pick_log_mean(&self, probs: Tensor, targets: &[usize], mask: &[bool], floor: f64) -> Tensor {
        let (r, c) = self.shape(probs);
        assert_eq!(targets.len(), r, "pick_log_mean: target count");
        assert_eq!(mask.len(), r, "pick_log_mean: mask length");
        assert!(targets.iter().all(|&t| t < c), "pick_log_mean: index out of vocab");
        let count = mask.iter().filter(|m| **m).count().max(1);
        let values = {
            let nodes = self.nodes.borrow();
            let pv = &nodes[probs.0].values;
            let mut total = 0.0;
            for i in 0..r {
                if mask[i] {
                    total += -math::ln(pv[i * c + targets[i]].max(floor));
                }
            }
            alloc::vec![total / count as f64]
        };
        let rg = self.grads_needed(&[probs.0]);
        self.push(
            1,
            1,
            values,
            Op::PickLogMean { src: probs.0, targets: targets.to_vec(), mask: mask.to_vec(), floor },
            rg,
        )
    }

    /// Accumulate gradients of a scalar loss into every `requires_grad` node.
    pub fn backward(&self, loss: Tensor) {
        let mut nodes = self.nodes.borrow_mut();
        assert_eq!(nodes[loss.0].values.len(), 1, "backward: loss must be scalar");
        for n in nodes.iter_mut() {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        nodes[loss.0].grad[0] = 1.0;
        for i in (0..nodes.len()).rev() {
            if !nodes[i].requires_grad || nodes[i].grad.iter().all(|g| *g == 0.0) {
                continue;
            }
            // split borrows: detach this node's grad and op while writing
            // into parent nodes, then restore them
            let grad = core::mem::take(&mut nodes[i].grad);
            let op = core::mem::replace(&mut nodes[i].op, Op::Leaf);
            let (rows, cols) = (nodes[i].rows, nodes[i].cols);
            match &op {
                Op::Leaf => {}
                &Op::Add(a, b) => {
                    axpy(&mut nodes[a].grad, &grad, 1.0);
                    axpy(&mut nodes[b].grad, &grad, 1.0);
                }
                &Op::AddRow(a, row) => {
                    axpy(&mut nodes[a].grad, &grad, 1.0);
                    for (j, g) in grad.iter().enumerate() {
                        nodes[row].grad[j % cols] += g;
                    }
                }
                &Op::Sub(a, b) => {
                    axpy(&mut nodes[a].grad, &grad, 1.0);
                    axpy(&mut nodes[b].grad, &grad, -1.0);
                }
                &Op::Mul(a, b) => {
                    let bv = nodes[b].values.clone();
                    let av = nodes[a].values.clone();
                    for (j, g) in grad.iter().enumerate() {
                        nodes[a].grad[j] += g * bv[j];
                        nodes[b].grad[j] += g * av[j];
                    }
                }
                &Op::Scale(a, k) => axpy(&mut nodes[a].grad, &grad, k),
                Op::AddConst(a) => axpy(&mut nodes[*a].grad, &grad, 1.0),
                &Op::Matmul(a, b) => {
                    let (m, k) = (nodes[a].rows, nodes[a].cols);
                    let n = nodes[b].cols;
                    let av = nodes[a].values.clone();
                    let bv = nodes[b].values.clone();
                    // dA = dC @ B^T
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grad[i2 * n + j] * bv[p * n + j];
                            }
                            nodes[a].grad[i2 * k + p] += acc;
                        }
                    }
                    // dB = A^T @ dC
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i2 in 0..m {
                                acc += av[i2 * k + p] * grad[i2 * n + j];
                            }
                            nodes[b].grad[p * n + j] += acc;
                        }
                    }
                }
                &Op::MatmulNt(a, b) => {
                    let (m, k) = (nodes[a].rows, nodes[a].cols);
                    let n = nodes[b].rows;
                    let av = nodes[a].values.clone();
                    let bv = nodes[b].values.clone();
                    // C = A @ B^T: dA = dC @ B ; dB = dC^T @ A
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grad[i2 * n + j] * bv[j * k + p];
                            }
                            nodes[a].grad[i2 * k + p] += acc;
                        }
                    }
                    for j in 0..n {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for i2 in 0..m {
                                acc += grad[i2 * n + j] * av[i2 * k + p];
                            }
                            nodes[b].grad[j * k + p] += acc;
                        }
                    }
                }
                &Op::Relu(a) => {
                    let av = nodes[a].values.clone();
                    for (j, g) in grad.iter().enumerate() {
                        if av[j] > 0.0 {
                            nodes[a].grad[j] += g;
                        }
                    }
                }
                &Op::SoftmaxRows(a) => {
                    let yv = nodes[i].values.clone();
                    for r2 in 0..rows {
                        let y = &yv[r2 * cols..(r2 + 1) * cols];
                        let g = &grad[r2 * cols..(r2 + 1) * cols];
                        let dot: f64 = y.iter().zip(g).map(|(x, d)| x * d).sum();
                        for j in 0..cols {
                            nodes[a].grad[r2 * cols + j] += y[j] * (g[j] - dot);
                        }
                    }
                }
                &Op::LayerNormRows { x, gain, bias, eps } => {
                    let xv = nodes[x].values.clone();
                    let gv = nodes[gain].values.clone();
                    let c = cols;
                    for r2 in 0..rows {
                        let row = &xv[r2 * c..(r2 + 1) * c];
                        let g = &grad[r2 * c..(r2 + 1) * c];
                        let mean: f64 = row.iter().sum::<f64>() / c as f64;
                        let var: f64 =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv = 1.0 / math::sqrt(var + eps);
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        // d gain, d bias
                        for j in 0..c {
                            nodes[gain].grad[j] += g[j] * xhat[j];
                            nodes[bias].grad[j] += g[j];
                        }
                        // d x
                        let gy: Vec<f64> = (0..c).map(|j| g[j] * gv[j]).collect();
                        let sum_gy: f64 = gy.iter().sum();
                        let sum_gy_xhat: f64 = gy.iter().zip(&xhat).map(|(a2, b2)| a2 * b2).sum();
                        for j in 0..c {
                            nodes[x].grad[r2 * c + j] += inv
                                * (gy[j] - sum_gy / c as f64 - xhat[j] * sum_gy_xhat / c as f64);
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let (table, ids) = (*table, ids.clone());
                    let d = cols;
                    for (r2, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            nodes[table].grad[id * d + j] += grad[r2 * d + j];
                        }
                    }
                }
                Op::GatherRows(a, rows_idx) => {
                    let (a, rows_idx) = (*a, rows_idx.clone());
                    for (r2, &src) in rows_idx.iter().enumerate() {
                        for j in 0..cols {
                            nodes[a].grad[src * cols + j] += grad[r2 * cols + j];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p].values.len();
                        axpy(&mut nodes[p].grad, &grad[offset..offset + len], 1.0);
                        offset += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    for r2 in 0..rows {
                        let mut offset = 0;
                        for &p in &parts {
                            let pc = nodes[p].cols;
                            for j in 0..pc {
                                nodes[p].grad[r2 * pc + j] += grad[r2 * cols + offset + j];
                            }
                            offset += pc;
                        }
                    }
                }
                &Op::SliceCols { src, start, len } => {
                    let sc = nodes[src].cols;
                    for r2 in 0..rows {
                        for j in 0..len {
                            nodes[src].grad[r2 * sc + start + j] += grad[r2 * len + j];
                        }
                    }
                }
                &Op::MeanRows(a) => {
                    let r = nodes[a].rows;
                    for i2 in 0..r {
                        for j in 0..cols {
                            nodes[a].grad[i2 * cols + j] += grad[j] / r as f64;
                        }
                    }
                }
                Op::UnfoldRows { src, groups } => {
                    let src = *src;
                    let c = nodes[src].cols;
                    for (r2, g) in groups.iter().enumerate() {
                        for (slot, &i2) in g.iter().enumerate() {
                            for j in 0..c {
                                nodes[src].grad[i2 * c + j] += grad[r2 * cols + slot * c + j];
                            }
                        }
                    }
                }
                &Op::SumAll(a) => {
                    let g = grad[0];
                    nodes[a].grad.iter_mut().for_each(|x| *x += g);
                }
                Op::PickLogMean { src, targets, mask, floor } => {
                    let (src, targets, mask, floor) = (*src, targets.clone(), mask.clone(), *floor);
                    let c = nodes[src].cols;
                    let count = mask.iter().filter(|m| **m).count().max(1) as f64;
                    let pv = nodes[src].values.clone();
                    let g = grad[0];
                    for (r2, (&t, &keep)) in targets.iter().zip(&mask).enumerate() {
                        if keep {
                            let p = pv[r2 * c + t];
                            if p > floor {
                                nodes[src].grad[r2 * c + t] += g * (-1.0 / p) / count;
                            }
                        }
                    }
                }
            }
            nodes[i].grad = grad;
            nodes[i].op = op;
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}
