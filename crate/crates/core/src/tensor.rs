//! Tape-based reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] owns every tensor created during a forward pass and records one
//! [`Op`] per tensor. [`Tape::backward`] replays the record in reverse,
//! accumulating gradients into every tensor created with `requires_grad`.
//! All math is 64-bit and single-threaded; identical inputs give bit-identical
//! outputs.

/// Handle to a tensor stored on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct TensorId(usize);

/// Dense row-major tensor with optional gradient storage.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
    /// True when this tensor depends on some `requires_grad` leaf.
    needs_grad: bool,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// SELU scale constant.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// SELU alpha constant.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    AddRowVec(TensorId, TensorId),
    MulRowVec(TensorId, TensorId),
    MulColVec(TensorId, TensorId),
    MatMul(TensorId, TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    Concat { inputs: Vec<TensorId>, axis: usize },
    GatherRows { input: TensorId, indices: Vec<usize> },
    Selu(TensorId),
    Sigmoid(TensorId),
    Abs(TensorId),
    Clamp { input: TensorId, lo: f64, hi: f64 },
    EMax { a: TensorId, b: TensorId, first_wins: Vec<usize> },
    Softmax { input: TensorId, axis: usize },
    ReduceMax { input: TensorId, argmax: Vec<usize> },
    ReduceMean { input: TensorId, axis: usize },
    Sum(TensorId),
    Conv1d { signal: TensorId, kernels: TensorId },
    Conv2d { input: TensorId, weight: TensorId, pad: (usize, usize) },
    AddChanBias { input: TensorId, bias: TensorId },
    MaxPool2d { input: TensorId, argmax: Vec<usize> },
    BatchNorm {
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        channel_axis: usize,
        eps: f64,
        mean: Vec<f64>,
        var: Vec<f64>,
        train: bool,
    },
    SincKernel { low: TensorId, high: TensorId, sample_rate: f64, kernel_len: usize },
    CrossEntropy { logits: TensorId, label: usize },
}

/// Recording arena for one forward (and optionally backward) pass.
pub struct Tape {
    tensors: Vec<Tensor>,
    ops: Vec<Op>,
    grad_enabled: bool,
    sel_record: Option<Vec<Vec<usize>>>,
    sel_replay: Option<(std::rc::Rc<Vec<Vec<usize>>>, usize)>,
}

/// Discrete selections made during one forward pass — max-pool argmax
/// positions, reduce-max winners, elementwise-max masks, top-k pooling
/// picks, and the branch choices of piecewise activations (selu, abs,
/// clamp) — in op-creation order.
///
/// A piecewise-smooth loss is differentiable only within the region where
/// these selections are constant, and the backward pass computes exactly
/// that region's derivative. Replaying a recorded trace on a perturbed
/// forward keeps a finite-difference probe inside the region, so the probe
/// measures the branch the gradient claims to differentiate instead of
/// stepping across selection boundaries.
#[derive(Clone, Debug, Default)]
pub struct SelectionTrace {
    events: std::rc::Rc<Vec<Vec<usize>>>,
}

impl SelectionTrace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for shape {shape:?}");
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Tape that records backward rules; use for training and grad checks.
    pub fn new() -> Self {
        Tape {
            tensors: Vec::new(),
            ops: Vec::new(),
            grad_enabled: true,
            sel_record: None,
            sel_replay: None,
        }
    }

    /// Forward-only tape. Gradients are unavailable, and intermediate
    /// buffers may be reclaimed with [`Tape::free_data`].
    pub fn new_inference() -> Self {
        Tape {
            tensors: Vec::new(),
            ops: Vec::new(),
            grad_enabled: false,
            sel_record: None,
            sel_replay: None,
        }
    }

    /// Log every discrete selection the forward pass makes from here on.
    pub fn record_selections(&mut self) {
        self.sel_record = Some(Vec::new());
    }

    /// The selections logged since [`Tape::record_selections`].
    pub fn take_selections(&mut self) -> SelectionTrace {
        SelectionTrace { events: std::rc::Rc::new(self.sel_record.take().unwrap_or_default()) }
    }

    /// Pin every discrete selection of the upcoming forward pass to a
    /// previously recorded trace instead of recomputing argmaxes.
    pub fn replay_selections(&mut self, trace: &SelectionTrace) {
        self.sel_replay = Some((trace.events.clone(), 0));
    }

    pub(crate) fn replayed_selection(&mut self) -> Option<Vec<usize>> {
        let (events, cursor) = self.sel_replay.as_mut()?;
        let v = events
            .get(*cursor)
            .unwrap_or_else(|| panic!("selection replay exhausted at event {cursor}"))
            .clone();
        *cursor += 1;
        Some(v)
    }

    pub(crate) fn log_selection(&mut self, indices: &[usize]) {
        if let Some(log) = self.sel_record.as_mut() {
            log.push(indices.to_vec());
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.tensors[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.tensors[id.0].grad.as_deref()
    }

    /// Scalar value of a one-element tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        assert_eq!(self.tensors[id.0].numel(), 1, "tensor is not scalar");
        self.tensors[id.0].data[0]
    }

    pub fn all_finite(&self, id: TensorId) -> bool {
        self.tensors[id.0].data.iter().all(|v| v.is_finite())
    }

    /// Drop the value buffer of an intermediate on a forward-only tape.
    pub fn free_data(&mut self, id: TensorId) {
        assert!(!self.grad_enabled, "cannot free buffers on a recording tape");
        self.tensors[id.0].data = Vec::new();
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        debug_assert!(
            matches!(op, Op::SincKernel { .. }) || data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        let needs_grad = self.grad_enabled
            && (requires_grad
                || self.op_inputs(&op).iter().any(|i| self.tensors[i.0].needs_grad));
        self.tensors.push(Tensor { data, shape, requires_grad, grad: None, needs_grad });
        self.ops.push(op);
        TensorId(self.tensors.len() - 1)
    }

    fn op_inputs(&self, op: &Op) -> Vec<TensorId> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Mul(a, b)
            | Op::AddRowVec(a, b)
            | Op::MulRowVec(a, b)
            | Op::MulColVec(a, b)
            | Op::MatMul(a, b) => vec![*a, *b],
            Op::EMax { a, b, .. } => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Selu(a)
            | Op::Sigmoid(a)
            | Op::Abs(a)
            | Op::Sum(a) => vec![*a],
            Op::Clamp { input, .. }
            | Op::Softmax { input, .. }
            | Op::ReduceMax { input, .. }
            | Op::ReduceMean { input, .. }
            | Op::GatherRows { input, .. }
            | Op::MaxPool2d { input, .. }
            | Op::CrossEntropy { logits: input, .. } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Conv1d { signal, kernels } => vec![*signal, *kernels],
            Op::Conv2d { input, weight, .. } => vec![*input, *weight],
            Op::AddChanBias { input, bias } => vec![*input, *bias],
            Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::SincKernel { low, high, .. } => vec![*low, *high],
        }
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    /// Constant input; never receives a gradient.
    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>) -> TensorId {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        self.push(data, shape, false, Op::Leaf)
    }

    /// Trainable input; `backward` fills its `grad`.
    pub fn leaf_grad(&mut self, data: Vec<f64>, shape: Vec<usize>) -> TensorId {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        self.push(data, shape, true, Op::Leaf)
    }

    // ── Elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let data: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(data, shape, false, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let data: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(data, shape, false, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(data, shape, false, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x + c).collect();
        let shape = self.shape(a).to_vec();
        self.push(data, shape, false, Op::AddScalar(a))
    }

    /// `[N, D] + [D]`, broadcast over rows.
    pub fn add_row_vec(&mut self, a: TensorId, v: TensorId) -> TensorId {
        let (n, d) = self.expect_2d(a);
        assert_eq!(self.shape(v), &[d], "add_row_vec: vector length mismatch");
        let vd = self.data(v);
        let mut data = self.data(a).to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] += vd[c];
            }
        }
        self.push(data, vec![n, d], false, Op::AddRowVec(a, v))
    }

    /// `[N, D] * [D]`, broadcast over rows.
    pub fn mul_row_vec(&mut self, a: TensorId, v: TensorId) -> TensorId {
        let (n, d) = self.expect_2d(a);
        assert_eq!(self.shape(v), &[d], "mul_row_vec: vector length mismatch");
        let vd = self.data(v);
        let mut data = self.data(a).to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] *= vd[c];
            }
        }
        self.push(data, vec![n, d], false, Op::MulRowVec(a, v))
    }

    /// `[N, D] * [N]`, scales each row by a scalar.
    pub fn mul_col_vec(&mut self, a: TensorId, v: TensorId) -> TensorId {
        let (n, d) = self.expect_2d(a);
        assert_eq!(self.shape(v), &[n], "mul_col_vec: vector length mismatch");
        let vd = self.data(v);
        let mut data = self.data(a).to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] *= vd[r];
            }
        }
        self.push(data, vec![n, d], false, Op::MulColVec(a, v))
    }

    pub fn selu(&mut self, a: TensorId) -> TensorId {
        let n = self.data(a).len();
        let branch: Vec<usize> = match self.replayed_selection() {
            Some(m) => {
                assert_eq!(m.len(), n, "selu: replayed branch mask mismatch");
                m
            }
            None => self.data(a).iter().map(|&x| usize::from(x > 0.0)).collect(),
        };
        self.log_selection(&branch);
        let data: Vec<f64> = branch
            .iter()
            .zip(self.data(a))
            .map(|(&pos, &x)| {
                if pos == 1 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
                }
            })
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(data, shape, false, Op::Selu(a))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let shape = self.shape(a).to_vec();
        self.push(data, shape, false, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let n = self.data(a).len();
        // 2 = positive branch, 0 = negative branch, 1 = exactly zero
        // (where the gradient is defined as 0); mirrors the backward rule.
        let branch: Vec<usize> = match self.replayed_selection() {
            Some(m) => {
                assert_eq!(m.len(), n, "abs: replayed branch mask mismatch");
                m
            }
            None => self
                .data(a)
                .iter()
                .map(|&x| if x > 0.0 { 2 } else if x < 0.0 { 0 } else { 1 })
                .collect(),
        };
        self.log_selection(&branch);
        let data: Vec<f64> = branch
            .iter()
            .zip(self.data(a))
            .map(|(&b, &x)| match b {
                2 => x,
                0 => -x,
                _ => 0.0,
            })
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(data, shape, false, Op::Abs(a))
    }

    pub fn clamp(&mut self, a: TensorId, lo: f64, hi: f64) -> TensorId {
        assert!(lo <= hi, "clamp: lo > hi");
        let n = self.data(a).len();
        // 1 = inside [lo, hi] (boundaries included, where the gradient
        // passes through), 0 = pinned to lo, 2 = pinned to hi.
        let branch: Vec<usize> = match self.replayed_selection() {
            Some(m) => {
                assert_eq!(m.len(), n, "clamp: replayed branch mask mismatch");
                m
            }
            None => self
                .data(a)
                .iter()
                .map(|&x| {
                    if x < lo {
                        0
                    } else if x > hi {
                        2
                    } else {
                        1
                    }
                })
                .collect(),
        };
        self.log_selection(&branch);
        let data: Vec<f64> = branch
            .iter()
            .zip(self.data(a))
            .map(|(&b, &x)| match b {
                1 => x,
                0 => lo,
                _ => hi,
            })
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(data, shape, false, Op::Clamp { input: a, lo, hi })
    }

    /// Elementwise maximum. On exact ties the gradient goes to the first
    /// argument.
    pub fn elementwise_max(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "elementwise_max: shape mismatch");
        let n = self.data(a).len();
        let first_wins: Vec<usize> = match self.replayed_selection() {
            Some(mask) => {
                assert_eq!(mask.len(), n, "elementwise_max: replayed mask length mismatch");
                mask
            }
            None => self
                .data(a)
                .iter()
                .zip(self.data(b))
                .map(|(&x, &y)| usize::from(x >= y))
                .collect(),
        };
        self.log_selection(&first_wins);
        let data: Vec<f64> = {
            let (ad, bd) = (self.data(a), self.data(b));
            first_wins
                .iter()
                .zip(ad.iter().zip(bd))
                .map(|(&w, (&x, &y))| if w == 1 { x } else { y })
                .collect()
        };
        let shape = self.shape(a).to_vec();
        self.push(data, shape, false, Op::EMax { a, b, first_wins })
    }

    // ── Linear algebra / shape ──────────────────────────────────────────

    fn expect_2d(&self, a: TensorId) -> (usize, usize) {
        let s = self.shape(a);
        assert_eq!(s.len(), 2, "expected rank-2 tensor, got shape {s:?}");
        (s[0], s[1])
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = self.expect_2d(a);
        let (k2, n) = self.expect_2d(b);
        assert_eq!(k, k2, "matmul: inner dimensions {k} vs {k2}");
        let data = matmul2d(self.data(a), self.data(b), m, k, n);
        self.push(data, vec![m, n], false, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.expect_2d(a);
        let ad = self.data(a);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = ad[i * c + j];
            }
        }
        self.push(data, vec![c, r], false, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> TensorId {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.tensor(a).numel(),
            "reshape: element count mismatch"
        );
        let data = self.data(a).to_vec();
        self.push(data, shape, false, Op::Reshape(a))
    }

    pub fn concat(&mut self, inputs: &[TensorId], axis: usize) -> TensorId {
        assert!(!inputs.is_empty(), "concat: no inputs");
        let base = self.shape(inputs[0]).to_vec();
        assert!(axis < base.len(), "concat: axis out of range");
        let mut axis_total = 0;
        for &id in inputs {
            let s = self.shape(id);
            assert_eq!(s.len(), base.len(), "concat: rank mismatch");
            for (d, (&x, &y)) in s.iter().zip(base.iter()).enumerate() {
                assert!(d == axis || x == y, "concat: shape mismatch off-axis");
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = outer_inner(&out_shape, axis);
        let mut data = vec![0.0; outer * axis_total * inner];
        for o in 0..outer {
            let mut offset = 0;
            for &id in inputs {
                let len = self.shape(id)[axis];
                let slab = len * inner;
                let src = &self.data(id)[o * slab..(o + 1) * slab];
                let dst_start = (o * axis_total + offset) * inner;
                data[dst_start..dst_start + slab].copy_from_slice(src);
                offset += len;
            }
        }
        self.push(data, out_shape, false, Op::Concat { inputs: inputs.to_vec(), axis })
    }

    /// Select rows of a `[N, D]` tensor. Discarded rows receive no gradient.
    pub fn gather_rows(&mut self, a: TensorId, indices: &[usize]) -> TensorId {
        let (n, d) = self.expect_2d(a);
        let ad = self.data(a);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < n, "gather_rows: index {i} out of range for {n} rows");
            data.extend_from_slice(&ad[i * d..(i + 1) * d]);
        }
        self.push(data, vec![indices.len(), d], false, Op::GatherRows {
            input: a,
            indices: indices.to_vec(),
        })
    }

    // ── Reductions / normalization ──────────────────────────────────────

    pub fn softmax(&mut self, a: TensorId, axis: usize) -> TensorId {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = outer_inner(&shape, axis);
        assert!(len > 0, "softmax: empty axis");
        let ad = self.data(a);
        let mut data = vec![0.0; ad.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut m = f64::NEG_INFINITY;
                for j in 0..len {
                    m = m.max(ad[idx(j)]);
                }
                let mut z = 0.0;
                for j in 0..len {
                    let e = (ad[idx(j)] - m).exp();
                    data[idx(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    data[idx(j)] /= z;
                }
            }
        }
        self.push(data, shape, false, Op::Softmax { input: a, axis })
    }

    /// Maximum over `axis` (axis removed). Ties resolve to the lowest index.
    pub fn reduce_max(&mut self, a: TensorId, axis: usize) -> TensorId {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = outer_inner(&shape, axis);
        assert!(len > 0, "reduce_max: empty axis");
        let argmax: Vec<usize> = match self.replayed_selection() {
            Some(idx) => {
                assert_eq!(idx.len(), outer * inner, "reduce_max: replayed argmax mismatch");
                idx
            }
            None => {
                let ad = self.data(a);
                let mut argmax = vec![0usize; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_j = 0;
                        for j in 0..len {
                            let v = ad[(o * len + j) * inner + i];
                            if v > best {
                                best = v;
                                best_j = j;
                            }
                        }
                        argmax[o * inner + i] = (o * len + best_j) * inner + i;
                    }
                }
                argmax
            }
        };
        self.log_selection(&argmax);
        let data: Vec<f64> = {
            let ad = self.data(a);
            argmax.iter().map(|&src| ad[src]).collect()
        };
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        self.push(data, out_shape, false, Op::ReduceMax { input: a, argmax })
    }

    pub fn reduce_mean(&mut self, a: TensorId, axis: usize) -> TensorId {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = outer_inner(&shape, axis);
        assert!(len > 0, "reduce_mean: empty axis");
        let ad = self.data(a);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut s = 0.0;
                for j in 0..len {
                    s += ad[(o * len + j) * inner + i];
                }
                data[o * inner + i] = s / len as f64;
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        self.push(data, out_shape, false, Op::ReduceMean { input: a, axis })
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.data(a).iter().sum();
        self.push(vec![s], vec![1], false, Op::Sum(a))
    }

    // ── Convolutions / pooling ──────────────────────────────────────────

    /// Valid 1-D correlation of a signal `[L]` with a filter bank `[F, K]`,
    /// stride 1: output `[F, L-K+1]`.
    pub fn conv1d(&mut self, signal: TensorId, kernels: TensorId) -> TensorId {
        let s = self.shape(signal);
        assert_eq!(s.len(), 1, "conv1d: signal must be rank 1");
        let l = s[0];
        let (f, k) = self.expect_2d(kernels);
        assert!(l >= k, "conv1d: signal shorter than kernel");
        let out_len = l - k + 1;
        let sd = self.data(signal);
        let kd = self.data(kernels);
        let mut data = vec![0.0; f * out_len];
        for fi in 0..f {
            let ker = &kd[fi * k..(fi + 1) * k];
            let out = &mut data[fi * out_len..(fi + 1) * out_len];
            for (i, &w) in ker.iter().enumerate() {
                let src = &sd[i..i + out_len];
                for (o, x) in out.iter_mut().zip(src) {
                    *o += w * x;
                }
            }
        }
        self.push(data, vec![f, out_len], false, Op::Conv1d { signal, kernels })
    }

    /// 2-D convolution, stride 1, zero padding `(ph, pw)`:
    /// `[C, H, W] * [O, C, kh, kw] -> [O, H+2ph-kh+1, W+2pw-kw+1]`.
    pub fn conv2d(&mut self, input: TensorId, weight: TensorId, pad: (usize, usize)) -> TensorId {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        assert_eq!(ishape.len(), 3, "conv2d: input must be [C, H, W]");
        assert_eq!(wshape.len(), 4, "conv2d: weight must be [O, C, kh, kw]");
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (o, c2, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
        assert_eq!(c, c2, "conv2d: channel mismatch");
        let (ph, pw) = pad;
        assert!(h + 2 * ph >= kh && w + 2 * pw >= kw, "conv2d: kernel larger than padded input");
        let oh = h + 2 * ph - kh + 1;
        let ow = w + 2 * pw - kw + 1;
        let data = conv2d_forward(self.data(input), self.data(weight), c, h, w, o, kh, kw, ph, pw);
        self.push(data, vec![o, oh, ow], false, Op::Conv2d { input, weight, pad })
    }

    /// `[C, H, W] + [C]`, one bias per channel.
    pub fn add_chan_bias(&mut self, input: TensorId, bias: TensorId) -> TensorId {
        let ishape = self.shape(input).to_vec();
        assert_eq!(ishape.len(), 3, "add_chan_bias: input must be [C, H, W]");
        let c = ishape[0];
        assert_eq!(self.shape(bias), &[c], "add_chan_bias: bias length mismatch");
        let plane = ishape[1] * ishape[2];
        let bd = self.data(bias);
        let mut data = self.data(input).to_vec();
        for ch in 0..c {
            let b = bd[ch];
            for v in &mut data[ch * plane..(ch + 1) * plane] {
                *v += b;
            }
        }
        self.push(data, ishape, false, Op::AddChanBias { input, bias })
    }

    /// Max pooling over `[C, H, W]`, no padding; ties route the gradient to
    /// the first (lowest-index) maximum.
    pub fn maxpool2d(
        &mut self,
        input: TensorId,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> TensorId {
        let ishape = self.shape(input).to_vec();
        assert_eq!(ishape.len(), 3, "maxpool2d: input must be [C, H, W]");
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        assert!(kh > 0 && kw > 0 && sh > 0 && sw > 0, "maxpool2d: zero kernel or stride");
        assert!(h >= kh && w >= kw, "maxpool2d: window larger than input");
        let oh = (h - kh) / sh + 1;
        let ow = (w - kw) / sw + 1;
        let argmax: Vec<usize> = match self.replayed_selection() {
            Some(idx) => {
                assert_eq!(idx.len(), c * oh * ow, "maxpool2d: replayed argmax mismatch");
                idx
            }
            None => {
                let ad = self.data(input);
                let mut argmax = vec![0usize; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0;
                            for dy in 0..kh {
                                let y = oy * sh + dy;
                                for dx in 0..kw {
                                    let x = ox * sw + dx;
                                    let idx = (ch * h + y) * w + x;
                                    if ad[idx] > best {
                                        best = ad[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            argmax[(ch * oh + oy) * ow + ox] = best_idx;
                        }
                    }
                }
                argmax
            }
        };
        self.log_selection(&argmax);
        let data: Vec<f64> = {
            let ad = self.data(input);
            argmax.iter().map(|&src| ad[src]).collect()
        };
        self.push(data, vec![c, oh, ow], false, Op::MaxPool2d { input, argmax })
    }

    // ── Normalization / model-specific ──────────────────────────────────

    /// Batch normalization over every axis except `channel_axis`.
    ///
    /// In training mode the statistics come from the input itself (biased
    /// variance); pass the running statistics for inference via
    /// [`Tape::batchnorm_eval`].
    pub fn batchnorm_train(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        channel_axis: usize,
        eps: f64,
    ) -> TensorId {
        let shape = self.shape(input).to_vec();
        let (outer, ch, inner) = outer_inner(&shape, channel_axis);
        assert_eq!(self.shape(gamma), &[ch], "batchnorm: gamma length mismatch");
        assert_eq!(self.shape(beta), &[ch], "batchnorm: beta length mismatch");
        let m = outer * inner;
        assert!(m > 0, "batchnorm: empty normalization set");
        let ad = self.data(input);
        let mut mean = vec![0.0; ch];
        let mut var = vec![0.0; ch];
        for c in 0..ch {
            let mut s = 0.0;
            for o in 0..outer {
                for i in 0..inner {
                    s += ad[(o * ch + c) * inner + i];
                }
            }
            let mu = s / m as f64;
            let mut v = 0.0;
            for o in 0..outer {
                for i in 0..inner {
                    let d = ad[(o * ch + c) * inner + i] - mu;
                    v += d * d;
                }
            }
            mean[c] = mu;
            var[c] = v / m as f64;
        }
        self.batchnorm_apply(input, gamma, beta, channel_axis, eps, mean, var, true)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batchnorm_eval(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        channel_axis: usize,
        eps: f64,
        mean: Vec<f64>,
        var: Vec<f64>,
    ) -> TensorId {
        let shape = self.shape(input).to_vec();
        let (_, ch, _) = outer_inner(&shape, channel_axis);
        assert_eq!(mean.len(), ch, "batchnorm_eval: mean length mismatch");
        assert_eq!(var.len(), ch, "batchnorm_eval: var length mismatch");
        self.batchnorm_apply(input, gamma, beta, channel_axis, eps, mean, var, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn batchnorm_apply(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        channel_axis: usize,
        eps: f64,
        mean: Vec<f64>,
        var: Vec<f64>,
        train: bool,
    ) -> TensorId {
        let shape = self.shape(input).to_vec();
        let (outer, ch, inner) = outer_inner(&shape, channel_axis);
        let ad = self.data(input);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let mut data = vec![0.0; ad.len()];
        for c in 0..ch {
            let inv_std = 1.0 / (var[c] + eps).sqrt();
            let (g, b, mu) = (gd[c], bd[c], mean[c]);
            for o in 0..outer {
                for i in 0..inner {
                    let idx = (o * ch + c) * inner + i;
                    data[idx] = g * (ad[idx] - mu) * inv_std + b;
                }
            }
        }
        self.push(data, shape, false, Op::BatchNorm {
            input,
            gamma,
            beta,
            channel_axis,
            eps,
            mean,
            var,
            train,
        })
    }

    /// Batch statistics recorded by the most recent train-mode batchnorm
    /// that produced `id`.
    pub fn batchnorm_stats(&self, id: TensorId) -> (&[f64], &[f64]) {
        match &self.ops[id.0] {
            Op::BatchNorm { mean, var, .. } => (mean, var),
            other => panic!("tensor was not produced by batchnorm: {other:?}"),
        }
    }

    /// Bank of Hamming-windowed band-pass sinc kernels, one per
    /// (low, high) cutoff pair in Hz. Kernels are DC-corrected so every
    /// band-pass sums to exactly zero. Differentiable w.r.t. both cutoffs.
    pub fn sinc_kernel(
        &mut self,
        low: TensorId,
        high: TensorId,
        sample_rate: f64,
        kernel_len: usize,
    ) -> TensorId {
        let f = self.shape(low).to_vec();
        assert_eq!(f.len(), 1, "sinc_kernel: cutoffs must be rank 1");
        assert_eq!(self.shape(high), &f[..], "sinc_kernel: cutoff banks differ in length");
        assert!(kernel_len % 2 == 1, "sinc_kernel: kernel length must be odd");
        let nf = f[0];
        let ld = self.data(low);
        let hd = self.data(high);
        for i in 0..nf {
            assert!(
                0.0 < ld[i] && ld[i] < hd[i] && hd[i] < sample_rate / 2.0,
                "sinc_kernel: invalid cutoffs ({}, {}) at filter {i}",
                ld[i],
                hd[i]
            );
        }
        let mut data = vec![0.0; nf * kernel_len];
        let window = hamming(kernel_len);
        let half = (kernel_len / 2) as isize;
        for fi in 0..nf {
            let fl = ld[fi] / sample_rate;
            let fh = hd[fi] / sample_rate;
            let row = &mut data[fi * kernel_len..(fi + 1) * kernel_len];
            for (i, tap) in row.iter_mut().enumerate() {
                let n = i as isize - half;
                let g = if n == 0 {
                    2.0 * (fh - fl)
                } else {
                    let x = n as f64;
                    ((2.0 * std::f64::consts::PI * fh * x).sin()
                        - (2.0 * std::f64::consts::PI * fl * x).sin())
                        / (std::f64::consts::PI * x)
                };
                *tap = g * window[i];
            }
            let dc: f64 = row.iter().sum::<f64>() / kernel_len as f64;
            for tap in row.iter_mut() {
                *tap -= dc;
            }
        }
        self.push(data, vec![nf, kernel_len], false, Op::SincKernel {
            low,
            high,
            sample_rate,
            kernel_len,
        })
    }

    /// Numerically stable `-log softmax(logits)[label]`, a `[1]` tensor.
    pub fn cross_entropy(&mut self, logits: TensorId, label: usize) -> TensorId {
        let n = self.tensor(logits).numel();
        assert!(label < n, "cross_entropy: label {label} out of range for {n} logits");
        let ld = self.data(logits);
        let m = ld.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + ld.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let loss = lse - ld[label];
        self.push(vec![loss], vec![1], false, Op::CrossEntropy { logits, label })
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`, seeding `d loss/d loss = seed`.
    ///
    /// Every tensor reachable from a `requires_grad` leaf accumulates its
    /// gradient; `requires_grad` leaves never touched by the forward pass
    /// end up with an all-zero gradient.
    pub fn backward_seeded(&mut self, loss: TensorId, seed: f64) {
        assert!(self.grad_enabled, "backward on an inference tape");
        assert!(!self.tensors.is_empty(), "backward on an empty tape");
        assert_eq!(self.tensors[loss.0].numel(), 1, "loss must be scalar");
        for t in &mut self.tensors {
            if t.needs_grad || t.requires_grad {
                t.grad = Some(vec![0.0; t.data.len()]);
            }
        }
        if let Some(g) = self.tensors[loss.0].grad.as_mut() {
            g[0] = seed;
        } else {
            return; // loss does not depend on any trainable leaf
        }
        for i in (0..self.tensors.len()).rev() {
            if !self.tensors[i].needs_grad {
                continue;
            }
            let g = match &self.tensors[i].grad {
                Some(g) if g.iter().any(|&v| v != 0.0) => g.clone(),
                _ => continue,
            };
            let op = self.ops[i].clone();
            self.backprop_op(TensorId(i), &op, &g);
        }
    }

    pub fn backward(&mut self, loss: TensorId) {
        self.backward_seeded(loss, 1.0);
    }

    fn accumulate(&mut self, id: TensorId, delta: &[f64]) {
        if let Some(g) = self.tensors[id.0].grad.as_mut() {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += b;
            }
        }
    }

    fn wants(&self, id: TensorId) -> bool {
        self.tensors[id.0].needs_grad
    }

    fn backprop_op(&mut self, out: TensorId, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d: Vec<f64> = g.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect();
                    self.accumulate(*a, &d);
                }
                if self.wants(*b) {
                    let d: Vec<f64> = g.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect();
                    self.accumulate(*b, &d);
                }
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.iter().map(|g| g * c).collect();
                self.accumulate(*a, &d);
            }
            Op::AddScalar(a) => self.accumulate(*a, g),
            Op::AddRowVec(a, v) => {
                self.accumulate(*a, g);
                if self.wants(*v) {
                    let d = self.shape(*v)[0];
                    let n = self.shape(*a)[0];
                    let mut dv = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            dv[c] += g[r * d + c];
                        }
                    }
                    self.accumulate(*v, &dv);
                }
            }
            Op::MulRowVec(a, v) => {
                let (n, d) = self.expect_2d(*a);
                if self.wants(*a) {
                    let vd = self.data(*v);
                    let mut da = g.to_vec();
                    for r in 0..n {
                        for c in 0..d {
                            da[r * d + c] *= vd[c];
                        }
                    }
                    self.accumulate(*a, &da);
                }
                if self.wants(*v) {
                    let ad = self.data(*a);
                    let mut dv = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            dv[c] += g[r * d + c] * ad[r * d + c];
                        }
                    }
                    self.accumulate(*v, &dv);
                }
            }
            Op::MulColVec(a, v) => {
                let (n, d) = self.expect_2d(*a);
                if self.wants(*a) {
                    let vd = self.data(*v);
                    let mut da = g.to_vec();
                    for r in 0..n {
                        for c in 0..d {
                            da[r * d + c] *= vd[r];
                        }
                    }
                    self.accumulate(*a, &da);
                }
                if self.wants(*v) {
                    let ad = self.data(*a);
                    let mut dv = vec![0.0; n];
                    for r in 0..n {
                        for c in 0..d {
                            dv[r] += g[r * d + c] * ad[r * d + c];
                        }
                    }
                    self.accumulate(*v, &dv);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.expect_2d(*a);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    // dA = G * B^T
                    let bd = self.data(*b);
                    let mut bt = vec![0.0; n * k];
                    for i in 0..k {
                        for j in 0..n {
                            bt[j * k + i] = bd[i * n + j];
                        }
                    }
                    let da = matmul2d(g, &bt, m, n, k);
                    self.accumulate(*a, &da);
                }
                if self.wants(*b) {
                    // dB = A^T * G
                    let ad = self.data(*a);
                    let mut at = vec![0.0; k * m];
                    for i in 0..m {
                        for j in 0..k {
                            at[j * m + i] = ad[i * k + j];
                        }
                    }
                    let db = matmul2d(&at, g, k, m, n);
                    self.accumulate(*b, &db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = {
                    let s = self.shape(out);
                    (s[0], s[1])
                };
                let mut d = vec![0.0; g.len()];
                for i in 0..r {
                    for j in 0..c {
                        d[j * r + i] = g[i * c + j];
                    }
                }
                self.accumulate(*a, &d);
            }
            Op::Reshape(a) => self.accumulate(*a, g),
            Op::Concat { inputs, axis } => {
                let out_shape = self.shape(out).to_vec();
                let (outer, total, inner) = outer_inner(&out_shape, *axis);
                let mut offset = 0;
                for &id in inputs {
                    let len = self.shape(id)[*axis];
                    if self.wants(id) {
                        let slab = len * inner;
                        let mut d = vec![0.0; self.tensor(id).numel()];
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            d[o * slab..(o + 1) * slab].copy_from_slice(&g[src..src + slab]);
                        }
                        self.accumulate(id, &d);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { input, indices } => {
                if self.wants(*input) {
                    let d = self.shape(*input)[1];
                    let mut di = vec![0.0; self.tensor(*input).numel()];
                    for (r, &i) in indices.iter().enumerate() {
                        for c in 0..d {
                            di[i * d + c] += g[r * d + c];
                        }
                    }
                    self.accumulate(*input, &di);
                }
            }
            Op::Selu(a) => {
                let ad = self.data(*a);
                let d: Vec<f64> = g
                    .iter()
                    .zip(ad)
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            g * SELU_LAMBDA
                        } else {
                            g * SELU_LAMBDA * SELU_ALPHA * x.exp()
                        }
                    })
                    .collect();
                self.accumulate(*a, &d);
            }
            Op::Sigmoid(a) => {
                let od = self.data(out);
                let d: Vec<f64> = g.iter().zip(od).map(|(g, &y)| g * y * (1.0 - y)).collect();
                self.accumulate(*a, &d);
            }
            Op::Abs(a) => {
                let ad = self.data(*a);
                let d: Vec<f64> = g
                    .iter()
                    .zip(ad)
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(*a, &d);
            }
            Op::Clamp { input, lo, hi } => {
                let ad = self.data(*input);
                let d: Vec<f64> = g
                    .iter()
                    .zip(ad)
                    .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(*input, &d);
            }
            Op::EMax { a, b, first_wins } => {
                if self.wants(*a) {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(first_wins)
                        .map(|(g, &win)| if win == 1 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(*a, &d);
                }
                if self.wants(*b) {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(first_wins)
                        .map(|(g, &win)| if win == 1 { 0.0 } else { *g })
                        .collect();
                    self.accumulate(*b, &d);
                }
            }
            Op::Softmax { input, axis } => {
                let shape = self.shape(out).to_vec();
                let (outer, len, inner) = outer_inner(&shape, *axis);
                let od = self.data(out);
                let mut d = vec![0.0; od.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let mut dot = 0.0;
                        for j in 0..len {
                            dot += g[idx(j)] * od[idx(j)];
                        }
                        for j in 0..len {
                            d[idx(j)] = od[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                self.accumulate(*input, &d);
            }
            Op::ReduceMax { input, argmax, .. } => {
                if self.wants(*input) {
                    let mut d = vec![0.0; self.tensor(*input).numel()];
                    for (oi, &src) in argmax.iter().enumerate() {
                        d[src] += g[oi];
                    }
                    self.accumulate(*input, &d);
                }
            }
            Op::ReduceMean { input, axis } => {
                let in_shape = self.shape(*input).to_vec();
                let (outer, len, inner) = outer_inner(&in_shape, *axis);
                let mut d = vec![0.0; self.tensor(*input).numel()];
                let inv = 1.0 / len as f64;
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            d[(o * len + j) * inner + i] = g[o * inner + i] * inv;
                        }
                    }
                }
                self.accumulate(*input, &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; self.tensor(*a).numel()];
                self.accumulate(*a, &d);
            }
            Op::Conv1d { signal, kernels } => {
                let l = self.shape(*signal)[0];
                let (f, k) = self.expect_2d(*kernels);
                let out_len = l - k + 1;
                if self.wants(*kernels) {
                    let sd = self.data(*signal);
                    let mut dk = vec![0.0; f * k];
                    for fi in 0..f {
                        let go = &g[fi * out_len..(fi + 1) * out_len];
                        for i in 0..k {
                            let src = &sd[i..i + out_len];
                            let mut s = 0.0;
                            for (gv, xv) in go.iter().zip(src) {
                                s += gv * xv;
                            }
                            dk[fi * k + i] = s;
                        }
                    }
                    self.accumulate(*kernels, &dk);
                }
                if self.wants(*signal) {
                    let kd = self.data(*kernels);
                    let mut ds = vec![0.0; l];
                    for fi in 0..f {
                        let go = &g[fi * out_len..(fi + 1) * out_len];
                        for (i, &w) in kd[fi * k..(fi + 1) * k].iter().enumerate() {
                            let dst = &mut ds[i..i + out_len];
                            for (dv, gv) in dst.iter_mut().zip(go) {
                                *dv += w * gv;
                            }
                        }
                    }
                    self.accumulate(*signal, &ds);
                }
            }
            Op::Conv2d { input, weight, pad } => {
                let ishape = self.shape(*input).to_vec();
                let wshape = self.shape(*weight).to_vec();
                let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
                let (o, kh, kw) = (wshape[0], wshape[2], wshape[3]);
                let (ph, pw) = *pad;
                let ow = w + 2 * pw - kw + 1;
                let oh = h + 2 * ph - kh + 1;
                if self.wants(*weight) {
                    let id = self.data(*input);
                    let dw = conv2d_backward_weight(id, g, c, h, w, o, kh, kw, ph, pw, oh, ow);
                    self.accumulate(*weight, &dw);
                }
                if self.wants(*input) {
                    let wd = self.data(*weight);
                    let di = conv2d_backward_input(wd, g, c, h, w, o, kh, kw, ph, pw, oh, ow);
                    self.accumulate(*input, &di);
                }
            }
            Op::AddChanBias { input, bias } => {
                self.accumulate(*input, g);
                if self.wants(*bias) {
                    let ishape = self.shape(*input);
                    let (c, plane) = (ishape[0], ishape[1] * ishape[2]);
                    let mut db = vec![0.0; c];
                    for ch in 0..c {
                        db[ch] = g[ch * plane..(ch + 1) * plane].iter().sum();
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Op::MaxPool2d { input, argmax, .. } => {
                if self.wants(*input) {
                    let mut d = vec![0.0; self.tensor(*input).numel()];
                    for (oi, &src) in argmax.iter().enumerate() {
                        d[src] += g[oi];
                    }
                    self.accumulate(*input, &d);
                }
            }
            Op::BatchNorm { input, gamma, beta, channel_axis, eps, mean, var, train } => {
                let shape = self.shape(*input).to_vec();
                let (outer, ch, inner) = outer_inner(&shape, *channel_axis);
                let m = (outer * inner) as f64;
                let ad = self.data(*input);
                let gd = self.data(*gamma);
                let wants_in = self.wants(*input);
                let wants_gamma = self.wants(*gamma);
                let wants_beta = self.wants(*beta);
                let mut din = if wants_in { vec![0.0; ad.len()] } else { Vec::new() };
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for c in 0..ch {
                    let inv_std = 1.0 / (var[c] + eps).sqrt();
                    let mu = mean[c];
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = (o * ch + c) * inner + i;
                            let xh = (ad[idx] - mu) * inv_std;
                            sum_g += g[idx];
                            sum_gx += g[idx] * xh;
                        }
                    }
                    dgamma[c] = sum_gx;
                    dbeta[c] = sum_g;
                    if wants_in {
                        let gc = gd[c];
                        if *train {
                            for o in 0..outer {
                                for i in 0..inner {
                                    let idx = (o * ch + c) * inner + i;
                                    let xh = (ad[idx] - mu) * inv_std;
                                    din[idx] =
                                        gc * inv_std * (g[idx] - sum_g / m - xh * sum_gx / m);
                                }
                            }
                        } else {
                            for o in 0..outer {
                                for i in 0..inner {
                                    let idx = (o * ch + c) * inner + i;
                                    din[idx] = gc * inv_std * g[idx];
                                }
                            }
                        }
                    }
                }
                if wants_in {
                    self.accumulate(*input, &din);
                }
                if wants_gamma {
                    self.accumulate(*gamma, &dgamma);
                }
                if wants_beta {
                    self.accumulate(*beta, &dbeta);
                }
            }
            Op::SincKernel { low, high, sample_rate, kernel_len } => {
                let nf = self.shape(*low)[0];
                let k = *kernel_len;
                let window = hamming(k);
                let half = (k / 2) as isize;
                let ld = self.data(*low);
                let hd = self.data(*high);
                let mut dlow = vec![0.0; nf];
                let mut dhigh = vec![0.0; nf];
                for fi in 0..nf {
                    let fl = ld[fi] / sample_rate;
                    let fh = hd[fi] / sample_rate;
                    let grow = &g[fi * k..(fi + 1) * k];
                    let gbar: f64 = grow.iter().sum::<f64>() / k as f64;
                    let mut dl = 0.0;
                    let mut dh = 0.0;
                    for (i, &gv) in grow.iter().enumerate() {
                        let n = (i as isize - half) as f64;
                        let two_pi_n = 2.0 * std::f64::consts::PI * n;
                        // d tap/d f, before DC correction, per unit of
                        // normalized frequency
                        let dh_tap = 2.0 * (two_pi_n * fh).cos() * window[i];
                        let dl_tap = -2.0 * (two_pi_n * fl).cos() * window[i];
                        let w = gv - gbar;
                        dh += w * dh_tap;
                        dl += w * dl_tap;
                    }
                    dlow[fi] = dl / sample_rate;
                    dhigh[fi] = dh / sample_rate;
                }
                self.accumulate(*low, &dlow);
                self.accumulate(*high, &dhigh);
            }
            Op::CrossEntropy { logits, label } => {
                let ld = self.data(*logits);
                let m = ld.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = ld.iter().map(|&x| (x - m).exp()).sum();
                let d: Vec<f64> = ld
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let p = (x - m).exp() / z;
                        g[0] * (p - if i == *label { 1.0 } else { 0.0 })
                    })
                    .collect();
                self.accumulate(*logits, &d);
            }
        }
    }
}

fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos()
        })
        .collect()
}

fn matmul2d(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    input: &[f64],
    weight: &[f64],
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
) -> Vec<f64> {
    let oh = h + 2 * ph - kh + 1;
    let ow = w + 2 * pw - kw + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for ic in 0..c {
            let wbase = ((oc * c + ic) * kh) * kw;
            let ibase = ic * h * w;
            for ky in 0..kh {
                for oy in 0..oh {
                    let iy = (oy + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let irow = &input[ibase + iy as usize * w..ibase + (iy as usize + 1) * w];
                    let orow = &mut out[(oc * oh + oy) * ow..(oc * oh + oy + 1) * ow];
                    for kx in 0..kw {
                        let wv = weight[wbase + ky * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        // valid output columns: 0 <= ox+kx-pw < w
                        let ox0 = pw.saturating_sub(kx);
                        let ox1 = (w + pw - kx).min(ow);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let src = &irow[ox0 + kx - pw..ox1 + kx - pw];
                        let dst = &mut orow[ox0..ox1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_weight(
    input: &[f64],
    g: &[f64],
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut dw = vec![0.0; o * c * kh * kw];
    for oc in 0..o {
        for ic in 0..c {
            let ibase = ic * h * w;
            for ky in 0..kh {
                for kx in 0..kw {
                    // four independent accumulators so the row dot product
                    // vectorizes despite float addition being non-associative
                    let mut acc = [0.0f64; 4];
                    for oy in 0..oh {
                        let iy = (oy + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let irow =
                            &input[ibase + iy as usize * w..ibase + (iy as usize + 1) * w];
                        let grow = &g[(oc * oh + oy) * ow..(oc * oh + oy + 1) * ow];
                        let ox0 = pw.saturating_sub(kx);
                        let ox1 = (w + pw - kx).min(ow);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let src = &irow[ox0 + kx - pw..ox1 + kx - pw];
                        let gs = &grow[ox0..ox1];
                        let mut gc = gs.chunks_exact(4);
                        let mut sc = src.chunks_exact(4);
                        for (gq, iq) in (&mut gc).zip(&mut sc) {
                            acc[0] += gq[0] * iq[0];
                            acc[1] += gq[1] * iq[1];
                            acc[2] += gq[2] * iq[2];
                            acc[3] += gq[3] * iq[3];
                        }
                        for (gv, iv) in gc.remainder().iter().zip(sc.remainder()) {
                            acc[0] += gv * iv;
                        }
                    }
                    dw[((oc * c + ic) * kh + ky) * kw + kx] =
                        (acc[0] + acc[1]) + (acc[2] + acc[3]);
                }
            }
        }
    }
    dw
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_input(
    weight: &[f64],
    g: &[f64],
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut di = vec![0.0; c * h * w];
    for oc in 0..o {
        for ic in 0..c {
            let wbase = ((oc * c + ic) * kh) * kw;
            let ibase = ic * h * w;
            for ky in 0..kh {
                for oy in 0..oh {
                    let iy = (oy + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let irow =
                        &mut di[ibase + iy as usize * w..ibase + (iy as usize + 1) * w];
                    let grow = &g[(oc * oh + oy) * ow..(oc * oh + oy + 1) * ow];
                    for kx in 0..kw {
                        let wv = weight[wbase + ky * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let ox0 = pw.saturating_sub(kx);
                        let ox1 = (w + pw - kx).min(ow);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let dst = &mut irow[ox0 + kx - pw..ox1 + kx - pw];
                        let gs = &grow[ox0..ox1];
                        for (d, gv) in dst.iter_mut().zip(gs) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
    }
    di
}
