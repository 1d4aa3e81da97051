//! Wengert tape: operations are recorded in forward order and replayed in
//! reverse to accumulate vector-Jacobian products into every leaf that
//! requires gradients.
//!
//! One tape corresponds to one forward/backward episode. Tapes are not
//! `Sync`; a training step owns its tape exclusively.

use crate::error::{AdError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// out = a @ b, a: [m,k], b: [k,n]
    MatMul { a: usize, b: usize },
    /// out = a @ b^T, a: [m,k], b: [n,k]
    MatMulNT { a: usize, b: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    /// Row-broadcast: out[i,:] = a[i,:] + bias
    AddBias { a: usize, bias: usize },
    /// Row-wise for 2-D (axis 1) or whole-vector for 1-D.
    Softmax { a: usize },
    /// Column-wise max over the listed rows; ties go to the first listed row.
    MaxPoolRows { a: usize, rows: Vec<usize> },
    StopGrad,
    LayerNorm { a: usize, scale: usize, shift: usize },
    Gelu { a: usize },
    Relu { a: usize },
    Log1p { a: usize },
    /// Gather rows of `table` ([v,d]) at `ids`.
    EmbeddingLookup { table: usize, ids: Vec<usize> },
    /// Mean over `positions` of -log softmax(logits[p])[targets[p]].
    MaskedCrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        positions: Vec<usize>,
    },
    /// -log softmax(scores)[target] for a 1-D score vector.
    CrossEntropyIndex { scores: usize, target: usize },
    /// KL(teacher || softmax(scores)) with a fixed teacher distribution.
    KlFromTeacher { scores: usize, teacher: Vec<f64> },
    SliceCols { a: usize, start: usize, len: usize },
    ConcatCols { parts: Vec<usize> },
    SliceRows { a: usize, start: usize, len: usize },
    /// Stack [n_i, m] blocks vertically.
    ConcatRows { parts: Vec<usize> },
    /// Stack 1-D vectors of equal length into a matrix, one per row.
    StackRows { parts: Vec<usize> },
    /// Gather scalar nodes into a 1-D vector.
    StackScalars { parts: Vec<usize> },
    Dot { a: usize, b: usize },
    L1Normalize { a: usize },
    Reshape { a: usize },
    /// Sum over columns of the squared column means of a [b,m] matrix.
    SquaredColumnMeans { a: usize },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op,
}

/// Records a computation graph over dense f64 tensors.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Register a leaf, copying the tensor's buffer. Gradient participation
    /// follows `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor) -> TensorId {
        self.push(
            tensor.data().to_vec(),
            tensor.shape().to_vec(),
            tensor.requires_grad,
            Op::Leaf,
        )
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> TensorId {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "constant: shape/buffer mismatch");
        self.push(data, shape, false, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, value: f64) -> TensorId {
        self.constant(vec![1], vec![value])
    }

    /// Leaf with gradients requested regardless of provenance.
    pub fn variable(&mut self, shape: Vec<usize>, data: Vec<f64>) -> TensorId {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "variable: shape/buffer mismatch");
        self.push(data, shape, true, Op::Leaf)
    }

    // ── Accessors ────────────────────────────────────────────────────

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    /// Gradient accumulated into `id` by the last `backward`, if any flowed.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    // ── Operations ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape2(a, "matmul")?, self.shape2(b, "matmul")?);
        if sa.1 != sb.0 {
            return Err(dim("matmul", format!("[{},{}] x [{},{}]", sa.0, sa.1, sb.0, sb.1)));
        }
        let (m, k, n) = (sa.0, sa.1, sb.1);
        let out = matmul_nn(self.data(a), self.data(b), m, k, n);
        Ok(self.push_op(out, vec![m, n], &[a, b], Op::MatMul { a: a.0, b: b.0 }))
    }

    /// `a @ b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape2(a, "matmul_nt")?, self.shape2(b, "matmul_nt")?);
        if sa.1 != sb.1 {
            return Err(dim(
                "matmul_nt",
                format!("[{},{}] x [{},{}]^T", sa.0, sa.1, sb.0, sb.1),
            ));
        }
        let (m, k, n) = (sa.0, sa.1, sb.0);
        let out = matmul_nt(self.data(a), self.data(b), m, k, n);
        Ok(self.push_op(out, vec![m, n], &[a, b], Op::MatMulNT { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(out, shape, &[a, b], Op::Add { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "mul")?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(out, shape, &[a, b], Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let out: Vec<f64> = self.data(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(out, shape, &[a], Op::Scale { a: a.0, factor })
    }

    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.shape2(a, "add_bias")?;
        let bs = self.shape(bias);
        if bs != [cols] {
            return Err(dim("add_bias", format!("matrix cols {cols}, bias {bs:?}")));
        }
        let av = self.data(a);
        let bv = self.data(bias);
        let mut out = av.to_vec();
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] += bv[c];
            }
        }
        Ok(self.push_op(out, vec![rows, cols], &[a, bias], Op::AddBias { a: a.0, bias: bias.0 }))
    }

    /// Numerically stabilized softmax: over rows for 2-D input, over the
    /// whole vector for 1-D input.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        let (rows, cols) = row_view(&shape).ok_or_else(|| dim("softmax", format!("{shape:?}")))?;
        let mut out = self.data(a).to_vec();
        for r in 0..rows {
            softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
        }
        Ok(self.push_op(out, shape, &[a], Op::Softmax { a: a.0 }))
    }

    /// Column-wise max of a [n,m] matrix over the given rows.
    pub fn max_pool_rows(&mut self, a: TensorId, rows: &[usize]) -> Result<TensorId> {
        let (n, m) = self.shape2(a, "max_pool")?;
        if rows.is_empty() {
            return Err(AdError::EmptyPool);
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(AdError::IndexOutOfRange {
                op: "max_pool",
                index: bad,
                limit: n,
            });
        }
        let av = self.data(a);
        let mut out = vec![f64::NEG_INFINITY; m];
        for &r in rows {
            for c in 0..m {
                let v = av[r * m + c];
                if v > out[c] {
                    out[c] = v;
                }
            }
        }
        Ok(self.push_op(out, vec![m], &[a], Op::MaxPoolRows { a: a.0, rows: rows.to_vec() }))
    }

    /// Identity forward; the backward edge through this node carries exactly
    /// nothing (no zeros are added, the edge is simply never visited).
    pub fn stop_gradient(&mut self, a: TensorId) -> TensorId {
        let out = self.data(a).to_vec();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, false, Op::StopGrad)
    }

    /// Layer normalization over the last axis with learnable scale/shift.
    pub fn layer_norm(&mut self, a: TensorId, scale: TensorId, shift: TensorId) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        let (rows, cols) =
            row_view(&shape).ok_or_else(|| dim("layer_norm", format!("{shape:?}")))?;
        if self.shape(scale) != [cols] || self.shape(shift) != [cols] {
            return Err(dim(
                "layer_norm",
                format!(
                    "scale {:?} / shift {:?} vs feature dim {}",
                    self.shape(scale),
                    self.shape(shift),
                    cols
                ),
            ));
        }
        let av = self.data(a);
        let sv = self.data(scale);
        let bv = self.data(shift);
        let mut out = vec![0.0; av.len()];
        for r in 0..rows {
            let row = &av[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for c in 0..cols {
                out[r * cols + c] = (row[c] - mean) * inv * sv[c] + bv[c];
            }
        }
        Ok(self.push_op(
            out,
            shape,
            &[a, scale, shift],
            Op::LayerNorm { a: a.0, scale: scale.0, shift: shift.0 },
        ))
    }

    /// Tanh-form GELU; forward and backward use the same closed form.
    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self.data(a).iter().map(|&x| gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(out, shape, &[a], Op::Gelu { a: a.0 })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(out, shape, &[a], Op::Relu { a: a.0 })
    }

    pub fn log1p(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self.data(a).iter().map(|&x| x.ln_1p()).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(out, shape, &[a], Op::Log1p { a: a.0 })
    }

    /// Gather rows of an embedding table; backward scatter-adds into the rows.
    pub fn embedding_lookup(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let (v, d) = self.shape2(table, "embedding_lookup")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(AdError::IndexOutOfRange {
                op: "embedding_lookup",
                index: bad,
                limit: v,
            });
        }
        let tv = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push_op(
            out,
            vec![ids.len(), d],
            &[table],
            Op::EmbeddingLookup { table: table.0, ids: ids.to_vec() },
        ))
    }

    /// Mean over `positions` of the per-position negative log likelihood of
    /// `targets` under row-wise softmax of `logits`. Empty `positions` yields
    /// a constant zero loss.
    pub fn masked_cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &[usize],
        positions: &[usize],
    ) -> Result<TensorId> {
        let (n, v) = self.shape2(logits, "masked_cross_entropy")?;
        if targets.len() != n {
            return Err(dim(
                "masked_cross_entropy",
                format!("{} rows, {} targets", n, targets.len()),
            ));
        }
        for &p in positions {
            if p >= n {
                return Err(AdError::IndexOutOfRange { op: "masked_cross_entropy", index: p, limit: n });
            }
            if targets[p] >= v {
                return Err(AdError::IndexOutOfRange {
                    op: "masked_cross_entropy",
                    index: targets[p],
                    limit: v,
                });
            }
        }
        let lv = self.data(logits);
        let mut loss = 0.0;
        for &p in positions {
            let row = &lv[p * v..(p + 1) * v];
            loss += log_sum_exp(row) - row[targets[p]];
        }
        if !positions.is_empty() {
            loss /= positions.len() as f64;
        }
        Ok(self.push_op(
            vec![loss],
            vec![1],
            &[logits],
            Op::MaskedCrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                positions: positions.to_vec(),
            },
        ))
    }

    /// Negative log likelihood of `target` under softmax of a 1-D score vector.
    pub fn cross_entropy_index(&mut self, scores: TensorId, target: usize) -> Result<TensorId> {
        let m = self.vector_len(scores, "cross_entropy_index")?;
        if target >= m {
            return Err(AdError::IndexOutOfRange { op: "cross_entropy_index", index: target, limit: m });
        }
        let sv = self.data(scores);
        let loss = log_sum_exp(sv) - sv[target];
        Ok(self.push_op(
            vec![loss],
            vec![1],
            &[scores],
            Op::CrossEntropyIndex { scores: scores.0, target },
        ))
    }

    /// KL(teacher || softmax(scores)) for a fixed teacher distribution.
    /// Zero-probability teacher entries contribute nothing.
    pub fn kl_from_teacher(&mut self, scores: TensorId, teacher: &[f64]) -> Result<TensorId> {
        let m = self.vector_len(scores, "kl_from_teacher")?;
        if teacher.len() != m {
            return Err(dim(
                "kl_from_teacher",
                format!("{} scores, {} teacher entries", m, teacher.len()),
            ));
        }
        let sv = self.data(scores);
        let lse = log_sum_exp(sv);
        let mut loss = 0.0;
        for (t, s) in teacher.iter().zip(sv) {
            if *t > 0.0 {
                loss += t * (t.ln() - (s - lse));
            }
        }
        Ok(self.push_op(
            vec![loss],
            vec![1],
            &[scores],
            Op::KlFromTeacher { scores: scores.0, teacher: teacher.to_vec() },
        ))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (n, m) = self.shape2(a, "slice_cols")?;
        if start + len > m {
            return Err(dim("slice_cols", format!("{start}..{} of {m} cols", start + len)));
        }
        let av = self.data(a);
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&av[r * m + start..r * m + start + len]);
        }
        Ok(self.push_op(out, vec![n, len], &[a], Op::SliceCols { a: a.0, start, len }))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(dim("concat_cols", "no parts".into()));
        }
        let (n, _) = self.shape2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pm) = self.shape2(p, "concat_cols")?;
            if pn != n {
                return Err(dim("concat_cols", format!("row counts {n} vs {pn}")));
            }
            widths.push(pm);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                let pv = self.data(p);
                out.extend_from_slice(&pv[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push_op(
            out,
            vec![n, total],
            parts,
            Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect() },
        ))
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (n, m) = self.shape2(a, "slice_rows")?;
        if start + len > n {
            return Err(dim("slice_rows", format!("{start}..{} of {n} rows", start + len)));
        }
        let out = self.data(a)[start * m..(start + len) * m].to_vec();
        Ok(self.push_op(out, vec![len, m], &[a], Op::SliceRows { a: a.0, start, len }))
    }

    /// Stack 2-D blocks with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(dim("concat_rows", "no parts".into()));
        }
        let (_, m) = self.shape2(parts[0], "concat_rows")?;
        let mut total_rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pn, pm) = self.shape2(p, "concat_rows")?;
            if pm != m {
                return Err(dim("concat_rows", format!("col counts {m} vs {pm}")));
            }
            total_rows += pn;
            out.extend_from_slice(self.data(p));
        }
        Ok(self.push_op(
            out,
            vec![total_rows, m],
            parts,
            Op::ConcatRows { parts: parts.iter().map(|p| p.0).collect() },
        ))
    }

    /// Stack equal-length 1-D vectors into a [k,m] matrix.
    pub fn stack_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(dim("stack_rows", "no parts".into()));
        }
        let m = self.vector_len(parts[0], "stack_rows")?;
        let mut out = Vec::with_capacity(parts.len() * m);
        for &p in parts {
            let pm = self.vector_len(p, "stack_rows")?;
            if pm != m {
                return Err(dim("stack_rows", format!("lengths {m} vs {pm}")));
            }
            out.extend_from_slice(self.data(p));
        }
        Ok(self.push_op(
            out,
            vec![parts.len(), m],
            parts,
            Op::StackRows { parts: parts.iter().map(|p| p.0).collect() },
        ))
    }

    /// Gather scalar nodes into a 1-D vector.
    pub fn stack_scalars(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(dim("stack_scalars", "no parts".into()));
        }
        let mut out = Vec::with_capacity(parts.len());
        for &p in parts {
            if self.shape(p) != [1] {
                return Err(dim("stack_scalars", format!("part shape {:?}", self.shape(p))));
            }
            out.push(self.data(p)[0]);
        }
        Ok(self.push_op(
            out,
            vec![parts.len()],
            parts,
            Op::StackScalars { parts: parts.iter().map(|p| p.0).collect() },
        ))
    }

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let la = self.vector_len(a, "dot")?;
        let lb = self.vector_len(b, "dot")?;
        if la != lb {
            return Err(dim("dot", format!("lengths {la} vs {lb}")));
        }
        let out: f64 = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        Ok(self.push_op(vec![out], vec![1], &[a, b], Op::Dot { a: a.0, b: b.0 }))
    }

    /// Divide a non-negative vector by its sum. Errors when the sum is not
    /// strictly positive (no distribution exists).
    pub fn l1_normalize(&mut self, a: TensorId) -> Result<TensorId> {
        let _ = self.vector_len(a, "l1_normalize")?;
        let sum: f64 = self.data(a).iter().sum();
        if !(sum > 0.0) {
            return Err(AdError::DegenerateNormalization { sum });
        }
        let out: Vec<f64> = self.data(a).iter().map(|x| x / sum).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(out, shape, &[a], Op::L1Normalize { a: a.0 }))
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.data(a).len() {
            return Err(dim(
                "reshape",
                format!("{:?} -> {:?}", self.shape(a), shape),
            ));
        }
        let out = self.data(a).to_vec();
        Ok(self.push_op(out, shape, &[a], Op::Reshape { a: a.0 }))
    }

    /// Σ_j (mean_i a[i,j])² over a [b,m] matrix: the sparsity pressure term
    /// applied to batches of vocabulary-space activations.
    pub fn squared_column_means(&mut self, a: TensorId) -> Result<TensorId> {
        let (b, m) = self.shape2(a, "squared_column_means")?;
        let av = self.data(a);
        let mut total = 0.0;
        for c in 0..m {
            let mut mean = 0.0;
            for r in 0..b {
                mean += av[r * m + c];
            }
            mean /= b as f64;
            total += mean * mean;
        }
        Ok(self.push_op(vec![total], vec![1], &[a], Op::SquaredColumnMeans { a: a.0 }))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Replay the tape in reverse from a scalar root, accumulating gradients
    /// into every leaf that requires them. Deterministic: identical graphs
    /// produce bit-identical gradients.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.nodes[root.0].data.len() != 1 {
            return Err(AdError::NonScalarRoot { shape: self.nodes[root.0].shape.clone() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad && !matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let op = self.nodes[idx].op.clone();
            self.backward_op(idx, &op, &g, &mut grads);
            // Leaves keep their accumulated gradient for retrieval.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_op(&self, out_idx: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = two(&self.nodes[*a].shape);
                let n = self.nodes[*b].shape[1];
                if self.wants(*a) {
                    // dA = g @ B^T
                    let da = matmul_nt(g, &self.nodes[*b].data, m, n, k);
                    accumulate(grads, *a, &da);
                }
                if self.wants(*b) {
                    // dB = A^T @ g
                    let db = matmul_tn(&self.nodes[*a].data, g, m, k, n);
                    accumulate(grads, *b, &db);
                }
            }
            Op::MatMulNT { a, b } => {
                let (m, k) = two(&self.nodes[*a].shape);
                let n = self.nodes[*b].shape[0];
                if self.wants(*a) {
                    // dA = g @ B
                    let da = matmul_nn(g, &self.nodes[*b].data, m, n, k);
                    accumulate(grads, *a, &da);
                }
                if self.wants(*b) {
                    // dB = g^T @ A
                    let db = matmul_tn(g, &self.nodes[*a].data, m, n, k);
                    accumulate(grads, *b, &db);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Mul { a, b } => {
                if self.wants(*a) {
                    let da: Vec<f64> = g.iter().zip(&self.nodes[*b].data).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, &da);
                }
                if self.wants(*b) {
                    let db: Vec<f64> = g.iter().zip(&self.nodes[*a].data).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, &db);
                }
            }
            Op::Scale { a, factor } => {
                if self.wants(*a) {
                    let da: Vec<f64> = g.iter().map(|x| x * factor).collect();
                    accumulate(grads, *a, &da);
                }
            }
            Op::AddBias { a, bias } => {
                let (rows, cols) = two(&self.nodes[*a].shape);
                if self.wants(*a) {
                    accumulate(grads, *a, g);
                }
                if self.wants(*bias) {
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += g[r * cols + c];
                        }
                    }
                    accumulate(grads, *bias, &db);
                }
            }
            Op::Softmax { a } => {
                if self.wants(*a) {
                    let shape = &self.nodes[out_idx].shape;
                    let (rows, cols) = row_view(shape).expect("softmax shape");
                    let s = &self.nodes[out_idx].data;
                    let mut da = vec![0.0; s.len()];
                    for r in 0..rows {
                        let off = r * cols;
                        let dot: f64 = (0..cols).map(|c| g[off + c] * s[off + c]).sum();
                        for c in 0..cols {
                            da[off + c] = s[off + c] * (g[off + c] - dot);
                        }
                    }
                    accumulate(grads, *a, &da);
                }
            }
            Op::MaxPoolRows { a, rows } => {
                if self.wants(*a) {
                    let m = self.nodes[out_idx].shape[0];
                    let av = &self.nodes[*a].data;
                    let mut da = vec![0.0; av.len()];
                    for c in 0..m {
                        let mut best_row = rows[0];
                        let mut best = av[rows[0] * m + c];
                        for &r in &rows[1..] {
                            let v = av[r * m + c];
                            if v > best {
                                best = v;
                                best_row = r;
                            }
                        }
                        da[best_row * m + c] = g[c];
                    }
                    accumulate(grads, *a, &da);
                }
            }
            Op::StopGrad => {}
            Op::LayerNorm { a, scale, shift } => {
                let shape = &self.nodes[*a].shape;
                let (rows, cols) = row_view(shape).expect("layer_norm shape");
                let av = &self.nodes[*a].data;
                let sv = &self.nodes[*scale].data;
                let want_a = self.wants(*a);
                let want_s = self.wants(*scale);
                let want_b = self.wants(*shift);
                let mut da = vec![0.0; av.len()];
                let mut ds = vec![0.0; cols];
                let mut db = vec![0.0; cols];
                for r in 0..rows {
                    let row = &av[r * cols..(r + 1) * cols];
                    let grow = &g[r * cols..(r + 1) * cols];
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
                    if want_s || want_b {
                        for c in 0..cols {
                            ds[c] += grow[c] * xhat[c];
                            db[c] += grow[c];
                        }
                    }
                    if want_a {
                        let dxhat: Vec<f64> = (0..cols).map(|c| grow[c] * sv[c]).collect();
                        let mean_dx = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dx_xhat =
                            dxhat.iter().zip(&xhat).map(|(d, x)| d * x).sum::<f64>() / cols as f64;
                        for c in 0..cols {
                            da[r * cols + c] = inv * (dxhat[c] - mean_dx - xhat[c] * mean_dx_xhat);
                        }
                    }
                }
                if want_a {
                    accumulate(grads, *a, &da);
                }
                if want_s {
                    accumulate(grads, *scale, &ds);
                }
                if want_b {
                    accumulate(grads, *shift, &db);
                }
            }
            Op::Gelu { a } => {
                if self.wants(*a) {
                    let da: Vec<f64> = self.nodes[*a]
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&x, &gi)| gi * gelu_derivative(x))
                        .collect();
                    accumulate(grads, *a, &da);
                }
            }
            Op::Relu { a } => {
                if self.wants(*a) {
                    let da: Vec<f64> = self.nodes[*a]
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(grads, *a, &da);
                }
            }
            Op::Log1p { a } => {
                if self.wants(*a) {
                    let da: Vec<f64> = self.nodes[*a]
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&x, &gi)| gi / (1.0 + x))
                        .collect();
                    accumulate(grads, *a, &da);
                }
            }
            Op::EmbeddingLookup { table, ids } => {
                if self.wants(*table) {
                    let d = self.nodes[out_idx].shape[1];
                    let mut dt = vec![0.0; self.nodes[*table].data.len()];
                    for (pos, &row) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[row * d + c] += g[pos * d + c];
                        }
                    }
                    accumulate(grads, *table, &dt);
                }
            }
            Op::MaskedCrossEntropy { logits, targets, positions } => {
                if self.wants(*logits) && !positions.is_empty() {
                    let (_, v) = two(&self.nodes[*logits].shape);
                    let lv = &self.nodes[*logits].data;
                    let scale = g[0] / positions.len() as f64;
                    let mut dl = vec![0.0; lv.len()];
                    for &p in positions {
                        let row = &lv[p * v..(p + 1) * v];
                        let mut s = row.to_vec();
                        softmax_in_place(&mut s);
                        for c in 0..v {
                            dl[p * v + c] += s[c] * scale;
                        }
                        dl[p * v + targets[p]] -= scale;
                    }
                    accumulate(grads, *logits, &dl);
                }
            }
            Op::CrossEntropyIndex { scores, target } => {
                if self.wants(*scores) {
                    let mut s = self.nodes[*scores].data.clone();
                    softmax_in_place(&mut s);
                    s[*target] -= 1.0;
                    for x in &mut s {
                        *x *= g[0];
                    }
                    accumulate(grads, *scores, &s);
                }
            }
            Op::KlFromTeacher { scores, teacher } => {
                if self.wants(*scores) {
                    let mut s = self.nodes[*scores].data.clone();
                    softmax_in_place(&mut s);
                    let ds: Vec<f64> = s.iter().zip(teacher).map(|(si, ti)| (si - ti) * g[0]).collect();
                    accumulate(grads, *scores, &ds);
                }
            }
            Op::SliceCols { a, start, len } => {
                if self.wants(*a) {
                    let (n, m) = two(&self.nodes[*a].shape);
                    let mut da = vec![0.0; n * m];
                    for r in 0..n {
                        for c in 0..*len {
                            da[r * m + start + c] = g[r * len + c];
                        }
                    }
                    accumulate(grads, *a, &da);
                }
            }
            Op::ConcatCols { parts } => {
                let n = self.nodes[out_idx].shape[0];
                let total = self.nodes[out_idx].shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].shape[1];
                    if self.wants(p) {
                        let mut dp = vec![0.0; n * w];
                        for r in 0..n {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, p, &dp);
                    }
                    offset += w;
                }
            }
            Op::SliceRows { a, start, len } => {
                if self.wants(*a) {
                    let (n, m) = two(&self.nodes[*a].shape);
                    let mut da = vec![0.0; n * m];
                    da[start * m..(start + len) * m].copy_from_slice(g);
                    accumulate(grads, *a, &da);
                }
            }
            Op::ConcatRows { parts } => {
                let m = self.nodes[out_idx].shape[1];
                let mut offset = 0;
                for &p in parts {
                    let rows = self.nodes[p].shape[0];
                    if self.wants(p) {
                        accumulate(grads, p, &g[offset * m..(offset + rows) * m]);
                    }
                    offset += rows;
                }
            }
            Op::StackRows { parts } => {
                let m = self.nodes[out_idx].shape[1];
                for (i, &p) in parts.iter().enumerate() {
                    if self.wants(p) {
                        accumulate(grads, p, &g[i * m..(i + 1) * m]);
                    }
                }
            }
            Op::StackScalars { parts } => {
                for (i, &p) in parts.iter().enumerate() {
                    if self.wants(p) {
                        accumulate(grads, p, &g[i..i + 1]);
                    }
                }
            }
            Op::Dot { a, b } => {
                if self.wants(*a) {
                    let da: Vec<f64> = self.nodes[*b].data.iter().map(|y| y * g[0]).collect();
                    accumulate(grads, *a, &da);
                }
                if self.wants(*b) {
                    let db: Vec<f64> = self.nodes[*a].data.iter().map(|x| x * g[0]).collect();
                    accumulate(grads, *b, &db);
                }
            }
            Op::L1Normalize { a } => {
                if self.wants(*a) {
                    let sum: f64 = self.nodes[*a].data.iter().sum();
                    let out = &self.nodes[out_idx].data;
                    let gdot: f64 = g.iter().zip(out).map(|(gi, oi)| gi * oi).sum();
                    let da: Vec<f64> = g.iter().map(|gi| (gi - gdot) / sum).collect();
                    accumulate(grads, *a, &da);
                }
            }
            Op::Reshape { a } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::SquaredColumnMeans { a } => {
                if self.wants(*a) {
                    let (b, m) = two(&self.nodes[*a].shape);
                    let av = &self.nodes[*a].data;
                    let mut means = vec![0.0; m];
                    for c in 0..m {
                        for r in 0..b {
                            means[c] += av[r * m + c];
                        }
                        means[c] /= b as f64;
                    }
                    let mut da = vec![0.0; av.len()];
                    for r in 0..b {
                        for c in 0..m {
                            da[r * m + c] = 2.0 * means[c] / b as f64 * g[0];
                        }
                    }
                    accumulate(grads, *a, &da);
                }
            }
        }
    }

    // ── Internals ────────────────────────────────────────────────────

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Node { data, shape, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, data: Vec<f64>, shape: Vec<usize>, inputs: &[TensorId], op: Op) -> TensorId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(data, shape, requires_grad, op)
    }

    fn shape2(&self, id: TensorId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(dim(op, format!("expected 2-D, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn vector_len(&self, id: TensorId, op: &'static str) -> Result<usize> {
        let s = self.shape(id);
        if s.len() != 1 {
            return Err(dim(op, format!("expected 1-D, got {s:?}")));
        }
        Ok(s[0])
    }

    fn same_shape(&self, a: TensorId, b: TensorId, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }
}

fn dim(op: &'static str, detail: String) -> AdError {
    AdError::Dimension { op, detail }
}

fn two(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

/// (rows, cols) treating a 1-D vector as a single row.
fn row_view(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [m] => Some((1, *m)),
        [n, m] => Some((*n, *m)),
        _ => None,
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, delta: &[f64]) {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        None => grads[idx] = Some(delta.to_vec()),
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

const GELU_COEF: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEF * x * x)
}

// Row-major matmul kernels. The (i,k,j) loop order keeps the inner loop
// contiguous on both operands.

fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// a: [m,k], b: [n,k] -> a @ b^T: [m,n]
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// a: [m,k], b: [m,n] -> a^T @ b: [k,n]
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}
