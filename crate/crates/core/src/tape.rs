//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every forward pass records its operations on a [`Tape`]; [`Tape::backward`]
//! then accumulates gradients for all recorded variables in one reverse sweep.
//! Layers are composed from a small primitive set (matmul, broadcasts,
//! activations, softmax families, 1D convolution, batch normalization), so a
//! single backward implementation per primitive covers every model.
//!
//! Shape violations are programmer errors and panic; fallible validation
//! happens at the model boundary.

use ndarray::{Array2, Axis, s};

/// Handle to one recorded variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Var(usize);

impl Var {
    /// Position in the tape's gradient vector.
    pub fn index(&self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// (n,m) op (n,1), broadcast over columns.
    AddColVec(Var, Var),
    MulColVec(Var, Var),
    /// (n,m) op (1,m), broadcast over rows.
    AddRowVec(Var, Var),
    MulRowVec(Var, Var),
    /// (g*c,m) op (c,1): row r pairs with channel r mod c.
    AddChannelVec(Var, Var, usize),
    MulChannelVec(Var, Var, usize),
    Scale(Var, f64),
    AddScalar(Var),
    PowConst(Var, f64),
    MeanCols(Var),
    SumAll(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    RowSoftmax(Var),
    MaskedRowSoftmax(Var, Array2<f64>),
    RowLogSoftmax(Var),
    LeakyRelu(Var, f64),
    Elu(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MulMask(Var, Array2<f64>),
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
        cin: usize,
        cout: usize,
        ksize: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        channels: usize,
        mean: Vec<f64>,
        istd: Vec<f64>,
    },
    MeanRowGroups(Var, usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation graph and runs reverse-mode differentiation over it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 variable.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "scalar() on non-scalar variable");
        a[[0, 0]]
    }

    /// A differentiable leaf (a model parameter).
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable leaf (input data or a fixed matrix).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim());
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim());
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim());
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn add_col_vec(&mut self, a: Var, v: Var) -> Var {
        assert_eq!(self.value(v).dim(), (self.value(a).nrows(), 1));
        let value = self.value(a) + self.value(v);
        let rg = self.rg(a) || self.rg(v);
        self.push(value, Op::AddColVec(a, v), rg)
    }

    pub fn mul_col_vec(&mut self, a: Var, v: Var) -> Var {
        assert_eq!(self.value(v).dim(), (self.value(a).nrows(), 1));
        let value = self.value(a) * self.value(v);
        let rg = self.rg(a) || self.rg(v);
        self.push(value, Op::MulColVec(a, v), rg)
    }

    pub fn add_row_vec(&mut self, a: Var, v: Var) -> Var {
        assert_eq!(self.value(v).dim(), (1, self.value(a).ncols()));
        let value = self.value(a) + self.value(v);
        let rg = self.rg(a) || self.rg(v);
        self.push(value, Op::AddRowVec(a, v), rg)
    }

    pub fn mul_row_vec(&mut self, a: Var, v: Var) -> Var {
        assert_eq!(self.value(v).dim(), (1, self.value(a).ncols()));
        let value = self.value(a) * self.value(v);
        let rg = self.rg(a) || self.rg(v);
        self.push(value, Op::MulRowVec(a, v), rg)
    }

    fn channel_of(row: usize, channels: usize) -> usize {
        row % channels
    }

    pub fn add_channel_vec(&mut self, a: Var, v: Var, channels: usize) -> Var {
        assert_eq!(self.value(v).dim(), (channels, 1));
        assert_eq!(self.value(a).nrows() % channels, 0);
        let mut value = self.value(a).clone();
        let vv = self.value(v).clone();
        for (r, mut row) in value.outer_iter_mut().enumerate() {
            let c = Self::channel_of(r, channels);
            row.mapv_inplace(|x| x + vv[[c, 0]]);
        }
        let rg = self.rg(a) || self.rg(v);
        self.push(value, Op::AddChannelVec(a, v, channels), rg)
    }

    pub fn mul_channel_vec(&mut self, a: Var, v: Var, channels: usize) -> Var {
        assert_eq!(self.value(v).dim(), (channels, 1));
        assert_eq!(self.value(a).nrows() % channels, 0);
        let mut value = self.value(a).clone();
        let vv = self.value(v).clone();
        for (r, mut row) in value.outer_iter_mut().enumerate() {
            let c = Self::channel_of(r, channels);
            row.mapv_inplace(|x| x * vv[[c, 0]]);
        }
        let rg = self.rg(a) || self.rg(v);
        self.push(value, Op::MulChannelVec(a, v, channels), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// Elementwise power with constant exponent; inputs must stay in the
    /// domain where `x^p` is differentiable (positive for fractional `p`).
    pub fn pow_const(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).mapv(|x| x.powf(p));
        let rg = self.rg(a);
        self.push(value, Op::PowConst(a, p), rg)
    }

    pub fn mean_cols(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(1))
            .expect("non-empty")
            .insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::MeanCols(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut value = Array2::zeros((n, total));
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.nrows(), n);
            value
                .slice_mut(s![.., offset..offset + pv.ncols()])
                .assign(pv);
            offset += pv.ncols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start, len), rg)
    }

    /// Row-major reinterpretation to `(rows, cols)`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), rows * cols);
        let value = Array2::from_shape_vec((rows, cols), av.iter().cloned().collect())
            .expect("element count checked");
        let rg = self.rg(a);
        self.push(value, Op::Reshape(a), rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.outer_iter_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let rg = self.rg(a);
        self.push(value, Op::RowSoftmax(a), rg)
    }

    /// Row-wise softmax restricted to entries where `mask != 0`; excluded
    /// entries produce 0. Rows with an all-zero mask yield all zeros.
    pub fn masked_row_softmax(&mut self, a: Var, mask: &Array2<f64>) -> Var {
        let av = self.value(a);
        assert_eq!(av.dim(), mask.dim());
        let mut value = Array2::zeros(av.dim());
        for (i, row) in av.outer_iter().enumerate() {
            let mut max = f64::NEG_INFINITY;
            for (j, &x) in row.iter().enumerate() {
                if mask[[i, j]] != 0.0 {
                    max = max.max(x);
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                if mask[[i, j]] != 0.0 {
                    let e = (x - max).exp();
                    value[[i, j]] = e;
                    sum += e;
                }
            }
            for j in 0..row.len() {
                value[[i, j]] /= sum;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::MaskedRowSoftmax(a, mask.clone()), rg)
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.outer_iter_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let rg = self.rg(a);
        self.push(value, Op::RowLogSoftmax(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Var {
        let value = self
            .value(a)
            .mapv(|x| if x > 0.0 { x } else { alpha * (x.exp() - 1.0) });
        let rg = self.rg(a);
        self.push(value, Op::Elu(a, alpha), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    /// Elementwise multiply by a fixed mask (dropout masks, one-hot picks).
    pub fn mul_mask(&mut self, a: Var, mask: &Array2<f64>) -> Var {
        assert_eq!(self.value(a).dim(), mask.dim());
        let value = self.value(a) * mask;
        let rg = self.rg(a);
        self.push(value, Op::MulMask(a, mask.clone()), rg)
    }

    /// Grouped same-padding 1D convolution.
    ///
    /// `x` is `(groups * cin, w)`: each consecutive block of `cin` rows is one
    /// multichannel signal. `kernel` is `(cout, cin * ksize)` and `bias`
    /// `(cout, 1)`; both are shared across groups. Output is
    /// `(groups * cout, w)`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var, cin: usize, cout: usize) -> Var {
        let xv = self.value(x);
        let kv = self.value(kernel);
        let bv = self.value(bias);
        assert_eq!(xv.nrows() % cin, 0);
        assert_eq!(kv.nrows(), cout);
        assert_eq!(kv.ncols() % cin, 0);
        let ksize = kv.ncols() / cin;
        assert!(ksize % 2 == 1, "same padding needs an odd kernel size");
        assert_eq!(bv.dim(), (cout, 1));
        let groups = xv.nrows() / cin;
        let w = xv.ncols();
        let pad = (ksize - 1) / 2;
        let mut out = Array2::zeros((groups * cout, w));
        for g in 0..groups {
            for o in 0..cout {
                for t in 0..w {
                    let mut acc = bv[[o, 0]];
                    for ci in 0..cin {
                        for k in 0..ksize {
                            let src = t + k;
                            if src < pad || src - pad >= w {
                                continue;
                            }
                            acc += xv[[g * cin + ci, src - pad]] * kv[[o, ci * ksize + k]];
                        }
                    }
                    out[[g * cout + o, t]] = acc;
                }
            }
        }
        let rg = self.rg(x) || self.rg(kernel) || self.rg(bias);
        self.push(
            out,
            Op::Conv1d {
                x,
                kernel,
                bias,
                cin,
                cout,
                ksize,
            },
            rg,
        )
    }

    /// Training-mode batch normalization over channel `row % channels`,
    /// statistics taken across all rows of that channel and all columns.
    ///
    /// Returns the normalized output plus the per-channel batch mean and
    /// (biased) variance for running-statistics updates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        channels: usize,
        eps: f64,
    ) -> (Var, Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        assert_eq!(xv.nrows() % channels, 0);
        assert_eq!(self.value(gamma).dim(), (channels, 1));
        assert_eq!(self.value(beta).dim(), (channels, 1));
        let (rows, cols) = xv.dim();
        let per_channel = (rows / channels) * cols;
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for r in 0..rows {
            let c = Self::channel_of(r, channels);
            for j in 0..cols {
                mean[c] += xv[[r, j]];
            }
        }
        for m in mean.iter_mut() {
            *m /= per_channel as f64;
        }
        for r in 0..rows {
            let c = Self::channel_of(r, channels);
            for j in 0..cols {
                let d = xv[[r, j]] - mean[c];
                var[c] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= per_channel as f64;
        }
        let istd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let mut out = Array2::zeros((rows, cols));
        let xv = self.value(x);
        for r in 0..rows {
            let c = Self::channel_of(r, channels);
            for j in 0..cols {
                let xhat = (xv[[r, j]] - mean[c]) * istd[c];
                out[[r, j]] = gv[[c, 0]] * xhat + bv[[c, 0]];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                channels,
                mean: mean.clone(),
                istd,
            },
            rg,
        );
        (v, mean, var)
    }

    /// Mean over each consecutive block of `group_size` rows.
    pub fn mean_row_groups(&mut self, a: Var, group_size: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.nrows() % group_size, 0);
        let out_rows = av.nrows() / group_size;
        let mut value = Array2::zeros((out_rows, av.ncols()));
        for r in 0..out_rows {
            for k in 0..group_size {
                for j in 0..av.ncols() {
                    value[[r, j]] += av[[r * group_size + k, j]];
                }
            }
        }
        value.mapv_inplace(|x| x / group_size as f64);
        let rg = self.rg(a);
        self.push(value, Op::MeanRowGroups(a, group_size), rg)
    }

    /// Reverse sweep from `loss` (a 1x1 variable), seeding `d loss / d loss`
    /// with `seed`. Returns one gradient slot per recorded variable; slots for
    /// variables that do not require gradients (or that `loss` does not depend
    /// on) are `None`.
    pub fn backward(&self, loss: Var, seed: f64) -> Vec<Option<Array2<f64>>> {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), seed));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads
    }

    fn add_grad(&self, grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn accumulate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.add_grad(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    self.add_grad(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.add_grad(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    self.add_grad(grads, *b, g * self.value(*a));
                }
            }
            Op::AddColVec(a, v) => {
                self.add_grad(grads, *a, g.clone());
                if self.rg(*v) {
                    self.add_grad(grads, *v, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::MulColVec(a, v) => {
                if self.rg(*a) {
                    self.add_grad(grads, *a, g * self.value(*v));
                }
                if self.rg(*v) {
                    let prod = g * self.value(*a);
                    self.add_grad(grads, *v, prod.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::AddRowVec(a, v) => {
                self.add_grad(grads, *a, g.clone());
                if self.rg(*v) {
                    self.add_grad(grads, *v, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRowVec(a, v) => {
                if self.rg(*a) {
                    self.add_grad(grads, *a, g * self.value(*v));
                }
                if self.rg(*v) {
                    let prod = g * self.value(*a);
                    self.add_grad(grads, *v, prod.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::AddChannelVec(a, v, channels) => {
                self.add_grad(grads, *a, g.clone());
                if self.rg(*v) {
                    let mut dv = Array2::zeros((*channels, 1));
                    for (r, row) in g.outer_iter().enumerate() {
                        dv[[Self::channel_of(r, *channels), 0]] += row.sum();
                    }
                    self.add_grad(grads, *v, dv);
                }
            }
            Op::MulChannelVec(a, v, channels) => {
                if self.rg(*a) {
                    let vv = self.value(*v);
                    let mut da = g.clone();
                    for (r, mut row) in da.outer_iter_mut().enumerate() {
                        let c = Self::channel_of(r, *channels);
                        row.mapv_inplace(|x| x * vv[[c, 0]]);
                    }
                    self.add_grad(grads, *a, da);
                }
                if self.rg(*v) {
                    let av = self.value(*a);
                    let mut dv = Array2::zeros((*channels, 1));
                    for r in 0..g.nrows() {
                        let c = Self::channel_of(r, *channels);
                        for j in 0..g.ncols() {
                            dv[[c, 0]] += g[[r, j]] * av[[r, j]];
                        }
                    }
                    self.add_grad(grads, *v, dv);
                }
            }
            Op::Scale(a, c) => self.add_grad(grads, *a, g * *c),
            Op::AddScalar(a) => self.add_grad(grads, *a, g.clone()),
            Op::PowConst(a, p) => {
                let av = self.value(*a);
                let da = g * &av.mapv(|x| p * x.powf(p - 1.0));
                self.add_grad(grads, *a, da);
            }
            Op::MeanCols(a) => {
                let av = self.value(*a);
                let m = av.ncols() as f64;
                let mut da = Array2::zeros(av.dim());
                for (i, mut row) in da.outer_iter_mut().enumerate() {
                    row.fill(g[[i, 0]] / m);
                }
                self.add_grad(grads, *a, da);
            }
            Op::SumAll(a) => {
                let da = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                self.add_grad(grads, *a, da);
            }
            Op::Transpose(a) => self.add_grad(grads, *a, g.t().to_owned()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.rg(p) {
                        let dp = g.slice(s![.., offset..offset + w]).to_owned();
                        self.add_grad(grads, p, dp);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start, len) => {
                let av = self.value(*a);
                let mut da = Array2::zeros(av.dim());
                da.slice_mut(s![.., *start..*start + *len]).assign(g);
                self.add_grad(grads, *a, da);
            }
            Op::Reshape(a) => {
                let av = self.value(*a);
                let da = Array2::from_shape_vec(av.dim(), g.iter().cloned().collect())
                    .expect("same element count");
                self.add_grad(grads, *a, da);
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[idx].value;
                let mut da = Array2::zeros(y.dim());
                for i in 0..y.nrows() {
                    let dot: f64 = (0..y.ncols()).map(|j| g[[i, j]] * y[[i, j]]).sum();
                    for j in 0..y.ncols() {
                        da[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::MaskedRowSoftmax(a, mask) => {
                let y = &self.nodes[idx].value;
                let mut da = Array2::zeros(y.dim());
                for i in 0..y.nrows() {
                    let dot: f64 = (0..y.ncols())
                        .filter(|&j| mask[[i, j]] != 0.0)
                        .map(|j| g[[i, j]] * y[[i, j]])
                        .sum();
                    for j in 0..y.ncols() {
                        if mask[[i, j]] != 0.0 {
                            da[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::RowLogSoftmax(a) => {
                let y = &self.nodes[idx].value;
                let mut da = Array2::zeros(y.dim());
                for i in 0..y.nrows() {
                    let gsum: f64 = (0..y.ncols()).map(|j| g[[i, j]]).sum();
                    for j in 0..y.ncols() {
                        da[[i, j]] = g[[i, j]] - y[[i, j]].exp() * gsum;
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                let da = g * &av.mapv(|x| if x > 0.0 { 1.0 } else { *slope });
                self.add_grad(grads, *a, da);
            }
            Op::Elu(a, alpha) => {
                let av = self.value(*a);
                let y = &self.nodes[idx].value;
                let mut da = g.clone();
                for i in 0..da.nrows() {
                    for j in 0..da.ncols() {
                        if av[[i, j]] <= 0.0 {
                            da[[i, j]] *= y[[i, j]] + alpha;
                        }
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let da = g * &av.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                self.add_grad(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let da = g * &y.mapv(|v| v * (1.0 - v));
                self.add_grad(grads, *a, da);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                let da = g * &y.mapv(|v| 1.0 - v * v);
                self.add_grad(grads, *a, da);
            }
            Op::MulMask(a, mask) => {
                self.add_grad(grads, *a, g * mask);
            }
            Op::Conv1d {
                x,
                kernel,
                bias,
                cin,
                cout,
                ksize,
            } => {
                let xv = self.value(*x);
                let kv = self.value(*kernel);
                let groups = xv.nrows() / cin;
                let w = xv.ncols();
                let pad = (ksize - 1) / 2;
                if self.rg(*x) {
                    let mut dx = Array2::zeros(xv.dim());
                    for gi in 0..groups {
                        for o in 0..*cout {
                            for t in 0..w {
                                let go = g[[gi * cout + o, t]];
                                if go == 0.0 {
                                    continue;
                                }
                                for ci in 0..*cin {
                                    for k in 0..*ksize {
                                        let src = t + k;
                                        if src < pad || src - pad >= w {
                                            continue;
                                        }
                                        dx[[gi * cin + ci, src - pad]] +=
                                            go * kv[[o, ci * ksize + k]];
                                    }
                                }
                            }
                        }
                    }
                    self.add_grad(grads, *x, dx);
                }
                if self.rg(*kernel) {
                    let mut dk = Array2::zeros(kv.dim());
                    for gi in 0..groups {
                        for o in 0..*cout {
                            for t in 0..w {
                                let go = g[[gi * cout + o, t]];
                                if go == 0.0 {
                                    continue;
                                }
                                for ci in 0..*cin {
                                    for k in 0..*ksize {
                                        let src = t + k;
                                        if src < pad || src - pad >= w {
                                            continue;
                                        }
                                        dk[[o, ci * ksize + k]] +=
                                            go * xv[[gi * cin + ci, src - pad]];
                                    }
                                }
                            }
                        }
                    }
                    self.add_grad(grads, *kernel, dk);
                }
                if self.rg(*bias) {
                    let mut db = Array2::zeros((*cout, 1));
                    for gi in 0..groups {
                        for o in 0..*cout {
                            for t in 0..w {
                                db[[o, 0]] += g[[gi * cout + o, t]];
                            }
                        }
                    }
                    self.add_grad(grads, *bias, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                channels,
                mean,
                istd,
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let (rows, cols) = xv.dim();
                let per_channel = ((rows / channels) * cols) as f64;
                // per-channel reductions over g and g * xhat
                let mut sum_g = vec![0.0; *channels];
                let mut sum_gx = vec![0.0; *channels];
                for r in 0..rows {
                    let c = Self::channel_of(r, *channels);
                    for j in 0..cols {
                        let xhat = (xv[[r, j]] - mean[c]) * istd[c];
                        sum_g[c] += g[[r, j]];
                        sum_gx[c] += g[[r, j]] * xhat;
                    }
                }
                if self.rg(*x) {
                    let mut dx = Array2::zeros((rows, cols));
                    for r in 0..rows {
                        let c = Self::channel_of(r, *channels);
                        for j in 0..cols {
                            let xhat = (xv[[r, j]] - mean[c]) * istd[c];
                            dx[[r, j]] = gv[[c, 0]] * istd[c]
                                * (g[[r, j]]
                                    - sum_g[c] / per_channel
                                    - xhat * sum_gx[c] / per_channel);
                        }
                    }
                    self.add_grad(grads, *x, dx);
                }
                if self.rg(*gamma) {
                    let dgamma =
                        Array2::from_shape_vec((*channels, 1), sum_gx.clone()).expect("shape");
                    self.add_grad(grads, *gamma, dgamma);
                }
                if self.rg(*beta) {
                    let dbeta =
                        Array2::from_shape_vec((*channels, 1), sum_g.clone()).expect("shape");
                    self.add_grad(grads, *beta, dbeta);
                }
            }
            Op::MeanRowGroups(a, group_size) => {
                let av = self.value(*a);
                let mut da = Array2::zeros(av.dim());
                let gs = *group_size as f64;
                for r in 0..g.nrows() {
                    for k in 0..*group_size {
                        for j in 0..g.ncols() {
                            da[[r * group_size + k, j]] = g[[r, j]] / gs;
                        }
                    }
                }
                self.add_grad(grads, *a, da);
            }
        }
    }
}
