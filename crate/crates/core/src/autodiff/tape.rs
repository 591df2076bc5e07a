use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Primitive operations. Each carries its input node ids plus whatever
/// constant data the adjoint rule needs.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    /// Concatenation along the feature axis (the only axis of a vector,
    /// the column axis of a matrix).
    Concat(Vec<NodeId>),
    /// Contiguous feature-axis slice `[start, start+len)`.
    Slice {
        input: NodeId,
        start: usize,
        len: usize,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Square(NodeId),
    /// Row-broadcast bias addition: `[T,D] + [D]` (or plain `[D] + [D]`).
    AddBias {
        input: NodeId,
        bias: NodeId,
    },
    /// Multiplication by a precomputed dropout mask. The mask already
    /// includes the 1/keep_prob scaling (inverted dropout).
    Dropout {
        input: NodeId,
        mask: Vec<f64>,
    },
    /// Multiplication by a compile-time constant scalar.
    Scale {
        input: NodeId,
        factor: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Square(..) => "square",
            Op::AddBias { .. } => "add_bias",
            Op::Dropout { .. } => "dropout",
            Op::Scale { .. } => "scale",
        }
    }
}

/// Reverse-mode tape. Values are computed eagerly as nodes are recorded
/// (recording *is* the forward pass); `backward` replays the node list in
/// reverse insertion order, which is a valid topological order because an
/// op can only reference earlier nodes.
///
/// A tape is confined to one thread and rebuilt for every optimization
/// step.
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(None);
        id
    }

    fn check(&self, id: NodeId) -> Result<(), AutodiffError> {
        if id.0 < self.ops.len() {
            Ok(())
        } else {
            Err(AutodiffError::InvalidNode(id.0))
        }
    }

    /// Register an input or parameter value.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Cached forward value of `root` (values are computed at recording
    /// time; this validates the handle and returns the cache).
    pub fn forward(&self, root: NodeId) -> Result<&Tensor, AutodiffError> {
        self.check(root)?;
        Ok(&self.values[root.0])
    }

    pub fn scalar_value(&self, id: NodeId) -> Result<f64, AutodiffError> {
        self.forward(id)?.scalar_value()
    }

    /// Gradient accumulated by the last `backward` call, if any reached
    /// this node.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient as a tensor shaped like the node value; zeros if no
    /// gradient flowed to it.
    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        let shape = self.values[id.0].shape().to_vec();
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape matches value"),
            None => Tensor::zeros(shape),
        }
    }

    fn shapes_equal(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa == sb {
            Ok(())
        } else {
            Err(AutodiffError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn zip_elementwise(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        self.shapes_equal(op_name, a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.values[a.0].shape().to_vec();
        Ok(self.push(op, Tensor::new(shape, data).expect("elementwise shape")))
    }

    fn map_unary(
        &mut self,
        input: NodeId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        let data = self.values[input.0].data().iter().map(|&x| f(x)).collect();
        let shape = self.values[input.0].shape().to_vec();
        Ok(self.push(op, Tensor::new(shape, data).expect("unary shape")))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `[m,k] x [k,n] -> [m,n]`, or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: va.shape().to_vec(),
            rhs: vb.shape().to_vec(),
        };
        if va.rank() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (va.shape()[0], va.shape()[1]);
        let value = match vb.rank() {
            1 => {
                if vb.shape()[0] != k {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; m];
                let ad = va.data();
                let bd = vb.data();
                for i in 0..m {
                    let row = &ad[i * k..(i + 1) * k];
                    let mut acc = 0.0;
                    for j in 0..k {
                        acc += row[j] * bd[j];
                    }
                    out[i] = acc;
                }
                Tensor::new(vec![m], out).expect("matvec shape")
            }
            2 => {
                if vb.shape()[0] != k {
                    return Err(mismatch());
                }
                let n = vb.shape()[1];
                let mut out = vec![0.0; m * n];
                let ad = va.data();
                let bd = vb.data();
                for i in 0..m {
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        let brow = &bd[p * n..(p + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for j in 0..n {
                            orow[j] += aip * brow[j];
                        }
                    }
                }
                Tensor::new(vec![m, n], out).expect("matmul shape")
            }
            _ => return Err(mismatch()),
        };
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// Concatenate along the feature axis. All inputs must share rank and,
    /// for matrices, row count.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if inputs.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                lhs: vec![],
                rhs: vec![],
            });
        }
        for &id in inputs {
            self.check(id)?;
        }
        let rank = self.values[inputs[0].0].rank();
        let value = match rank {
            1 => {
                let mut data = Vec::new();
                for &id in inputs {
                    let v = &self.values[id.0];
                    if v.rank() != 1 {
                        return Err(AutodiffError::ShapeMismatch {
                            op: "concat",
                            lhs: self.values[inputs[0].0].shape().to_vec(),
                            rhs: v.shape().to_vec(),
                        });
                    }
                    data.extend_from_slice(v.data());
                }
                Tensor::vector(data)
            }
            2 => {
                let rows = self.values[inputs[0].0].shape()[0];
                let mut cols = 0;
                for &id in inputs {
                    let v = &self.values[id.0];
                    if v.rank() != 2 || v.shape()[0] != rows {
                        return Err(AutodiffError::ShapeMismatch {
                            op: "concat",
                            lhs: self.values[inputs[0].0].shape().to_vec(),
                            rhs: v.shape().to_vec(),
                        });
                    }
                    cols += v.shape()[1];
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &id in inputs {
                        let v = &self.values[id.0];
                        let c = v.shape()[1];
                        data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
                    }
                }
                Tensor::new(vec![rows, cols], data).expect("concat shape")
            }
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: self.values[inputs[0].0].shape().to_vec(),
                    rhs: vec![],
                })
            }
        };
        Ok(self.push(Op::Concat(inputs.to_vec()), value))
    }

    /// Feature-axis slice `[start, start+len)`.
    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        let v = &self.values[input.0];
        let width = v.cols();
        if len == 0 || start + len > width {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice",
                lhs: v.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let value = match v.rank() {
            1 => Tensor::vector(v.data()[start..start + len].to_vec()),
            2 => {
                let rows = v.shape()[0];
                let mut data = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    data.extend_from_slice(&v.data()[r * width + start..r * width + start + len]);
                }
                Tensor::new(vec![rows, len], data).expect("slice shape")
            }
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "slice",
                    lhs: v.shape().to_vec(),
                    rhs: vec![start, len],
                })
            }
        };
        Ok(self.push(Op::Slice { input, start, len }, value))
    }

    pub fn tanh(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        self.map_unary(input, f64::tanh, Op::Tanh(input))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        self.map_unary(input, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(input))
    }

    pub fn exp(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        self.map_unary(input, f64::exp, Op::Exp(input))
    }

    pub fn ln(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        self.map_unary(input, f64::ln, Op::Ln(input))
    }

    pub fn square(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        self.map_unary(input, |x| x * x, Op::Square(input))
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        let total: f64 = self.values[input.0].data().iter().sum();
        Ok(self.push(Op::Sum(input), Tensor::scalar(total)))
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        let v = &self.values[input.0];
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        Ok(self.push(Op::Mean(input), Tensor::scalar(m)))
    }

    /// `[T,D] + [D]` broadcast over rows; degenerates to plain add for
    /// `[D] + [D]`.
    pub fn add_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        self.check(bias)?;
        let (vi, vb) = (&self.values[input.0], &self.values[bias.0]);
        if vb.rank() != 1 || vi.cols() != vb.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                lhs: vi.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let d = vb.shape()[0];
        let mut data = vi.data().to_vec();
        let bd = vb.data();
        for (i, x) in data.iter_mut().enumerate() {
            *x += bd[i % d];
        }
        let shape = vi.shape().to_vec();
        Ok(self.push(
            Op::AddBias { input, bias },
            Tensor::new(shape, data).expect("add_bias shape"),
        ))
    }

    /// Apply a precomputed dropout mask (entries are `0` or `1/keep_prob`).
    pub fn dropout(&mut self, input: NodeId, mask: Vec<f64>) -> Result<NodeId, AutodiffError> {
        self.check(input)?;
        let v = &self.values[input.0];
        if mask.len() != v.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "dropout",
                lhs: v.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = v
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = v.shape().to_vec();
        Ok(self.push(
            Op::Dropout { input, mask },
            Tensor::new(shape, data).expect("dropout shape"),
        ))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        self.map_unary(input, |x| x * factor, Op::Scale { input, factor })
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, contribution: &[f64]) {
        match &mut grads[id.0] {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => grads[id.0] = Some(contribution.to_vec()),
        }
    }

    /// Reverse pass from a scalar root. Gradient accumulators are reset at
    /// the start of every call, so repeated calls produce identical
    /// results. Traversal order is fixed (reverse insertion order), making
    /// gradients bit-reproducible.
    pub fn backward(&mut self, root: NodeId) -> Result<(), AutodiffError> {
        self.check(root)?;
        let root_value = &self.values[root.0];
        if !root_value.is_scalar() {
            return Err(AutodiffError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root.0] = Some(vec![1.0]);

        let values = &self.values;
        let ops = &self.ops;
        let grads = &mut self.grads;

        for idx in (0..=root.0).rev() {
            let upstream = match grads[idx].clone() {
                Some(g) => g,
                None => continue,
            };
            match &ops[idx] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    Self::accumulate(grads, *a, &upstream);
                    Self::accumulate(grads, *b, &upstream);
                }
                Op::Sub(a, b) => {
                    Self::accumulate(grads, *a, &upstream);
                    let neg: Vec<f64> = upstream.iter().map(|g| -g).collect();
                    Self::accumulate(grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = upstream
                        .iter()
                        .zip(values[b.0].data())
                        .map(|(g, y)| g * y)
                        .collect();
                    let db: Vec<f64> = upstream
                        .iter()
                        .zip(values[a.0].data())
                        .map(|(g, x)| g * x)
                        .collect();
                    Self::accumulate(grads, *a, &da);
                    Self::accumulate(grads, *b, &db);
                }
                Op::MatMul(a, b) => {
                    let va = &values[a.0];
                    let vb = &values[b.0];
                    let (m, k) = (va.shape()[0], va.shape()[1]);
                    match vb.rank() {
                        1 => {
                            // y = A x: dA[i,j] = g[i] x[j]; dx[j] = sum_i g[i] A[i,j]
                            let mut da = vec![0.0; m * k];
                            let mut dx = vec![0.0; k];
                            let ad = va.data();
                            let xd = vb.data();
                            for i in 0..m {
                                let gi = upstream[i];
                                for j in 0..k {
                                    da[i * k + j] = gi * xd[j];
                                    dx[j] += gi * ad[i * k + j];
                                }
                            }
                            Self::accumulate(grads, *a, &da);
                            Self::accumulate(grads, *b, &dx);
                        }
                        _ => {
                            // y = A B: dA = G B^T; dB = A^T G
                            let n = vb.shape()[1];
                            let mut da = vec![0.0; m * k];
                            let mut db = vec![0.0; k * n];
                            let ad = va.data();
                            let bd = vb.data();
                            for i in 0..m {
                                for p in 0..k {
                                    let mut acc = 0.0;
                                    for j in 0..n {
                                        acc += upstream[i * n + j] * bd[p * n + j];
                                    }
                                    da[i * k + p] = acc;
                                }
                            }
                            for p in 0..k {
                                for j in 0..n {
                                    let mut acc = 0.0;
                                    for i in 0..m {
                                        acc += ad[i * k + p] * upstream[i * n + j];
                                    }
                                    db[p * n + j] = acc;
                                }
                            }
                            Self::accumulate(grads, *a, &da);
                            Self::accumulate(grads, *b, &db);
                        }
                    }
                }
                Op::Concat(inputs) => {
                    let out = &values[idx];
                    match out.rank() {
                        1 => {
                            let mut offset = 0;
                            for &inp in inputs {
                                let w = values[inp.0].numel();
                                Self::accumulate(grads, inp, &upstream[offset..offset + w]);
                                offset += w;
                            }
                        }
                        _ => {
                            let rows = out.shape()[0];
                            let total = out.shape()[1];
                            let mut offset = 0;
                            for &inp in inputs {
                                let w = values[inp.0].shape()[1];
                                let mut piece = vec![0.0; rows * w];
                                for r in 0..rows {
                                    piece[r * w..(r + 1) * w].copy_from_slice(
                                        &upstream[r * total + offset..r * total + offset + w],
                                    );
                                }
                                Self::accumulate(grads, inp, &piece);
                                offset += w;
                            }
                        }
                    }
                }
                Op::Slice { input, start, len } => {
                    let v = &values[input.0];
                    let width = v.cols();
                    let mut full = vec![0.0; v.numel()];
                    match v.rank() {
                        1 => full[*start..start + len].copy_from_slice(&upstream),
                        _ => {
                            let rows = v.shape()[0];
                            for r in 0..rows {
                                full[r * width + start..r * width + start + len]
                                    .copy_from_slice(&upstream[r * len..(r + 1) * len]);
                            }
                        }
                    }
                    Self::accumulate(grads, *input, &full);
                }
                Op::Tanh(a) => {
                    let d: Vec<f64> = upstream
                        .iter()
                        .zip(values[idx].data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    Self::accumulate(grads, *a, &d);
                }
                Op::Sigmoid(a) => {
                    let d: Vec<f64> = upstream
                        .iter()
                        .zip(values[idx].data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    Self::accumulate(grads, *a, &d);
                }
                Op::Exp(a) => {
                    let d: Vec<f64> = upstream
                        .iter()
                        .zip(values[idx].data())
                        .map(|(g, y)| g * y)
                        .collect();
                    Self::accumulate(grads, *a, &d);
                }
                Op::Ln(a) => {
                    let d: Vec<f64> = upstream
                        .iter()
                        .zip(values[a.0].data())
                        .map(|(g, x)| g / x)
                        .collect();
                    Self::accumulate(grads, *a, &d);
                }
                Op::Sum(a) => {
                    let g = upstream[0];
                    let d = vec![g; values[a.0].numel()];
                    Self::accumulate(grads, *a, &d);
                }
                Op::Mean(a) => {
                    let n = values[a.0].numel();
                    let g = upstream[0] / n as f64;
                    let d = vec![g; n];
                    Self::accumulate(grads, *a, &d);
                }
                Op::Square(a) => {
                    let d: Vec<f64> = upstream
                        .iter()
                        .zip(values[a.0].data())
                        .map(|(g, x)| g * 2.0 * x)
                        .collect();
                    Self::accumulate(grads, *a, &d);
                }
                Op::AddBias { input, bias } => {
                    Self::accumulate(grads, *input, &upstream);
                    let d = values[bias.0].shape()[0];
                    let mut db = vec![0.0; d];
                    for (i, g) in upstream.iter().enumerate() {
                        db[i % d] += g;
                    }
                    Self::accumulate(grads, *bias, &db);
                }
                Op::Dropout { input, mask } => {
                    let d: Vec<f64> = upstream
                        .iter()
                        .zip(mask)
                        .map(|(g, m)| g * m)
                        .collect();
                    Self::accumulate(grads, *input, &d);
                }
                Op::Scale { input, factor } => {
                    let d: Vec<f64> = upstream.iter().map(|g| g * factor).collect();
                    Self::accumulate(grads, *input, &d);
                }
            }
        }
        Ok(())
    }

    /// Name of the primitive that produced a node (diagnostics).
    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.ops[id.0].name()
    }
}
