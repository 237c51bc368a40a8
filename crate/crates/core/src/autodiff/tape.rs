use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Grl(Var, f64),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Mse(Var, Var),
    Sum(Var),
    Add(Var, Var),
    Scale(Var, f64),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
///
/// Parameters live outside the tape: each training step binds them as
/// leaves, runs the forward pass, calls [`Tape::backward`] once and drops
/// the tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    dims: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient buffer for `v`, or `None` when no path reached it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v` as a tensor; unreachable nodes yield zeros.
    pub fn wrt(&self, v: Var) -> Tensor {
        let dims = &self.dims[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(dims.clone(), g.to_vec()).expect("gradient matches node dims"),
            None => Tensor::zeros(dims),
        }
    }
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

    /// Records a leaf whose gradient is wanted (a parameter or probed input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient (data, labels).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let d = self.value(v).dims();
        if d.len() != 2 {
            return Err(Error::Shape(format!("{what} expects a matrix, got dims {d:?}")));
        }
        Ok((d[0], d[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul lhs")?;
        let (k2, n) = self.matrix_dims(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul inner dims differ: [{m}x{k}] x [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        gemm_acc(m, k, n, ad, (k, 1), bd, (n, 1), &mut out);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "add_bias")?;
        let bias = self.value(b);
        if bias.dims() != [n] {
            return Err(Error::Shape(format!(
                "add_bias: bias dims {:?} do not match trailing dim {n} of [{m}x{n}]",
                bias.dims()
            )));
        }
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(bias.data()) {
                *o += bv;
            }
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddBias(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::new(x.dims().to_vec(), data).expect("same dims");
        let rg = self.needs(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(x.dims().to_vec(), data).expect("same dims");
        let rg = self.needs(a);
        self.push(t, Op::Tanh(a), rg)
    }

    /// Gradient reversal: identity forward, `-lambda` times the upstream
    /// gradient backward.
    pub fn grl(&mut self, a: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(Error::Argument(format!("grl lambda must be >= 0, got {lambda}")));
        }
        let t = self.value(a).clone();
        let rg = self.needs(a);
        Ok(self.push(t, Op::Grl(a, lambda), rg))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (m, c) = self.matrix_dims(logits, "softmax_cross_entropy")?;
        if m == 0 {
            return Err(Error::Argument("softmax_cross_entropy needs at least one row".into()));
        }
        if labels.len() != m {
            return Err(Error::Shape(format!("{} labels for {m} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Argument(format!("label {bad} out of range for {c} classes")));
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; m * c];
        let mut total = 0.0;
        for i in 0..m {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            total += log_z - row[labels[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - log_z).exp();
            }
        }
        let rg = self.needs(logits);
        let op = Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push(Tensor::scalar(total / m as f64), op, rg))
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims() != y.dims() {
            return Err(Error::Shape(format!("mse operands differ: {:?} vs {:?}", x.dims(), y.dims())));
        }
        let n = x.len().max(1) as f64;
        let s: f64 = x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims() != y.dims() {
            return Err(Error::Shape(format!("add operands differ: {:?} vs {:?}", x.dims(), y.dims())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.dims().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(x.dims().to_vec(), data).expect("same dims");
        let rg = self.needs(a);
        self.push(t, Op::Scale(a, factor), rg)
    }

    /// Picks rows (repeats allowed) out of a matrix.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, _) = self.matrix_dims(a, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::Shape(format!("gather_rows index {bad} out of range for {m} rows")));
        }
        let t = self.value(a).select_rows(idx);
        let rg = self.needs(a);
        Ok(self.push(t, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`. Each node is visited once, in
    /// reverse insertion order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Argument(format!("node {} is not on this tape", loss.0)));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        let dims = self.nodes.iter().map(|n| n.value.dims().to_vec()).collect();
        Ok(Gradients { grads, dims })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.dims()[0], av.dims()[1], bv.dims()[1]);
                let (ad, bd) = (av.data(), bv.data());
                // dL/da = g . b^T
                self.accumulate(grads, *a, |ga| gemm_acc(m, n, k, g, (n, 1), bd, (1, n), ga));
                // dL/db = a^T . g
                self.accumulate(grads, *b, |gb| gemm_acc(k, m, n, ad, (1, k), g, (n, 1), gb));
            }
            Op::AddBias(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                let n = self.value(*b).len();
                self.accumulate(grads, *b, |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gv), &xv) in ga.iter_mut().zip(g).zip(x) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *o += gv * (1.0 - y * y);
                    }
                });
            }
            Op::Grl(a, lambda) => {
                let neg = -*lambda;
                self.accumulate(grads, *a, |ga| {
                    for (o, &gv) in ga.iter_mut().zip(g) {
                        *o += neg * gv;
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let m = labels.len();
                let c = probs.len() / m;
                let scale = g[0] / m as f64;
                self.accumulate(grads, *logits, |gl| {
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let scale = 2.0 * g[0] / x.len().max(1) as f64;
                self.accumulate(grads, *a, |ga| {
                    for ((o, p), q) in ga.iter_mut().zip(x).zip(y) {
                        *o += scale * (p - q);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, p), q) in gb.iter_mut().zip(x).zip(y) {
                        *o -= scale * (p - q);
                    }
                });
            }
            Op::Sum(a) => {
                let s = g[0];
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += s));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, |ga| {
                    for (o, &gv) in ga.iter_mut().zip(g) {
                        *o += factor * gv;
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let c = self.value(*a).cols();
                self.accumulate(grads, *a, |ga| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut ga[src * c..(src + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                });
            }
        }
    }
}

/// `c += a · b` for row-major `c: [m, n]`; `a: [m, k]` and `b: [k, n]` are
/// addressed through (row, col) strides so transposes cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: strides and extents describe in-bounds views of `a`, `b` and `c`;
    // `c` is exclusively borrowed and does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
