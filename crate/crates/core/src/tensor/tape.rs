use super::{same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<F: Scalar> {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Cos(usize),
    Softmax(usize, usize),
    Concat(usize, usize, usize),
    Scale(usize, F),
    Sum(usize),
    Gather(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node<F: Scalar> {
    op: Op<F>,
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
}

/// Record of primitive operations. Inputs of every operation precede it,
/// so a single reverse sweep propagates gradients.
#[derive(Debug, Default)]
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

fn stable_sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn stable_softplus<F: Scalar>(x: F) -> F {
    // max(x, 0) + ln(1 + exp(-|x|))
    x.max(F::zero()) + (F::one() + (-x.abs()).exp()).ln()
}

// C = A (m×k) · B (k×n)
fn mm_nn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for t in 0..k {
            let av = a[i * k + t];
            if av == F::zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[t * n + j];
            }
        }
    }
    out
}

// C = A (m×n) · Bᵀ where B is (k×n); result m×k
fn mm_nt<F: Scalar>(a: &[F], b: &[F], m: usize, n: usize, k: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * k];
    for i in 0..m {
        for j in 0..k {
            let mut acc = F::zero();
            for t in 0..n {
                acc += a[i * n + t] * b[j * n + t];
            }
            out[i * k + j] = acc;
        }
    }
    out
}

// C = Aᵀ · B where A is (m×k), B is (m×n); result k×n
fn mm_tn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); k * n];
    for t in 0..m {
        for i in 0..k {
            let av = a[t * k + i];
            if av == F::zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[t * n + j];
            }
        }
    }
    out
}

/// Shape of a var viewed as a matrix: rank-1 `[k]` acts as `[1, k]` on the
/// left of a matmul and `[k, 1]` on the right.
fn mat_dims(shape: &[usize], right: bool) -> (usize, usize) {
    match shape {
        [k] => {
            if right {
                (*k, 1)
            } else {
                (1, *k)
            }
        }
        [m, n] => (*m, *n),
        _ => unreachable!("tensors are rank 1 or 2"),
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor as a leaf (input or parameter).
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = mat_dims(ta.shape(), false);
        let (k2, n) = mat_dims(tb.shape(), true);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = mm_nn(ta.data(), tb.data(), m, k, n);
        let shape: Vec<usize> = match (ta.rank(), tb.rank()) {
            (1, 1) => vec![1],
            (1, 2) => vec![n],
            (2, 1) => vec![m],
            _ => vec![m, n],
        };
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(Op::Matmul(a.0, b.0), value))
    }

    /// Elementwise add. Also accepts `b` of shape `[m]` against `a` of shape
    /// `[n, m]` (bias broadcast over the leading dimension).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| x + y)
                .collect();
            Tensor::from_vec(ta.shape(), data)?
        } else if ta.rank() == 2 && tb.rank() == 1 && ta.cols() == tb.len() {
            let m = tb.len();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + tb.data()[i % m])
                .collect();
            Tensor::from_vec(ta.shape(), data)?
        } else {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        Ok(self.push(Op::Add(a.0, b.0), value))
    }

    /// Elementwise multiply. Either side may be a scalar (`[1]`).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| x * y)
                .collect();
            Tensor::from_vec(ta.shape(), data)?
        } else if ta.len() == 1 {
            let s = ta.data()[0];
            tb.map(|x| x * s)
        } else if tb.len() == 1 {
            let s = tb.data()[0];
            ta.map(|x| x * s)
        } else {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        Ok(self.push(Op::Mul(a.0, b.0), value))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| -x);
        self.push(Op::Neg(a.0), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(stable_sigmoid);
        self.push(Op::Sigmoid(a.0), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.tanh());
        self.push(Op::Tanh(a.0), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.max(F::zero()));
        self.push(Op::Relu(a.0), value)
    }

    /// ln(1 + exp(x)), the stable building block for logit-space losses.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(stable_softplus);
        self.push(Op::Softplus(a.0), value)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.cos());
        self.push(Op::Cos(a.0), value)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.nodes[a.0].value.map(|x| x * c);
        self.push(Op::Scale(a.0, c), value)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if axis >= ta.rank() {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                lhs: ta.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let value = softmax_forward(ta, axis);
        Ok(self.push(Op::Softmax(a.0, axis), value))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mismatch = || Error::ShapeMismatch {
            op: "concat",
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        if ta.rank() != tb.rank() || axis >= ta.rank() {
            return Err(mismatch());
        }
        let value = match (ta.rank(), axis) {
            (1, 0) => {
                let mut data = ta.data().to_vec();
                data.extend_from_slice(tb.data());
                Tensor::vector(data)
            }
            (2, 0) => {
                if ta.cols() != tb.cols() {
                    return Err(mismatch());
                }
                let mut data = ta.data().to_vec();
                data.extend_from_slice(tb.data());
                Tensor::from_vec(&[ta.rows() + tb.rows(), ta.cols()], data)?
            }
            (2, 1) => {
                if ta.rows() != tb.rows() {
                    return Err(mismatch());
                }
                let (ca, cb) = (ta.cols(), tb.cols());
                let mut data = Vec::with_capacity(ta.len() + tb.len());
                for r in 0..ta.rows() {
                    data.extend_from_slice(ta.row(r));
                    data.extend_from_slice(tb.row(r));
                }
                Tensor::from_vec(&[ta.rows(), ca + cb], data)?
            }
            _ => return Err(mismatch()),
        };
        Ok(self.push(Op::Concat(a.0, b.0, axis), value))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = F::zero();
        for &x in self.nodes[a.0].value.data() {
            acc += x;
        }
        self.push(Op::Sum(a.0), Tensor::scalar(acc))
    }

    /// Arithmetic mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let s = self.sum(a);
        self.scale(s, F::one() / F::from_f64(n as f64))
    }

    /// Select elements (rank 1) or rows (rank 2) by index.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let bound = if ta.rank() == 1 { ta.len() } else { ta.rows() };
        if let Some(&bad) = indices.iter().find(|&&i| i >= bound) {
            return Err(Error::InvalidArgument(format!(
                "gather index {bad} out of bounds for {bound}"
            )));
        }
        let value = if ta.rank() == 1 {
            Tensor::vector(indices.iter().map(|&i| ta.data()[i]).collect())
        } else {
            let c = ta.cols();
            let mut data = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                data.extend_from_slice(ta.row(i));
            }
            Tensor::from_vec(&[indices.len(), c], data)?
        };
        Ok(self.push(Op::Gather(a.0, indices.to_vec()), value))
    }

    /// Dot product of two equal-length rank-1 vars, shape `[1]`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("dot", &self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Reverse sweep from a scalar loss. Gradients land on every node the
    /// loss depends on, retrievable with [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<F>>> = vec![None; n];
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            let shape = self.nodes[i].value.shape().to_vec();
            self.nodes[i].grad = Some(Tensor::from_vec(&shape, g).expect("grad shape"));
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        fn acc<F: Scalar>(grads: &mut [Option<Vec<F>>], idx: usize, len: usize) -> &mut Vec<F> {
            grads[idx].get_or_insert_with(|| vec![F::zero(); len])
        }
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k) = mat_dims(ta.shape(), false);
                let (_, nn) = mat_dims(tb.shape(), true);
                let da = mm_nt(g, tb.data(), m, nn, k);
                let db = mm_tn(ta.data(), g, m, k, nn);
                let ga = acc(grads, *a, ta.len());
                for (d, s) in ga.iter_mut().zip(da) {
                    *d += s;
                }
                let gb = acc(grads, *b, tb.len());
                for (d, s) in gb.iter_mut().zip(db) {
                    *d += s;
                }
            }
            Op::Add(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let ga = acc(grads, *a, ta.len());
                for (d, &s) in ga.iter_mut().zip(g) {
                    *d += s;
                }
                let gb = acc(grads, *b, tb.len());
                if ta.shape() == tb.shape() {
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d += s;
                    }
                } else {
                    // bias broadcast: sum over leading dim
                    let m = tb.len();
                    for (j, &s) in g.iter().enumerate() {
                        gb[j % m] += s;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if ta.shape() == tb.shape() {
                    let da: Vec<F> = g.iter().zip(tb.data()).map(|(&s, &y)| s * y).collect();
                    let db: Vec<F> = g.iter().zip(ta.data()).map(|(&s, &x)| s * x).collect();
                    let ga = acc(grads, *a, ta.len());
                    for (d, s) in ga.iter_mut().zip(da) {
                        *d += s;
                    }
                    let gb = acc(grads, *b, tb.len());
                    for (d, s) in gb.iter_mut().zip(db) {
                        *d += s;
                    }
                } else if ta.len() == 1 {
                    let s0 = ta.data()[0];
                    let mut da = F::zero();
                    for (&s, &y) in g.iter().zip(tb.data()) {
                        da += s * y;
                    }
                    acc(grads, *a, 1)[0] += da;
                    let gb = acc(grads, *b, tb.len());
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d += s * s0;
                    }
                } else {
                    let s0 = tb.data()[0];
                    let ga = acc(grads, *a, ta.len());
                    for (d, &s) in ga.iter_mut().zip(g) {
                        *d += s * s0;
                    }
                    let mut db = F::zero();
                    for (&s, &x) in g.iter().zip(ta.data()) {
                        db += s * x;
                    }
                    acc(grads, *b, 1)[0] += db;
                }
            }
            Op::Neg(a) => {
                let ga = acc(grads, *a, g.len());
                for (d, &s) in ga.iter_mut().zip(g) {
                    *d = *d - s;
                }
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data();
                let ga = acc(grads, *a, g.len());
                for ((d, &s), &yv) in ga.iter_mut().zip(g).zip(y) {
                    *d += s * yv * (F::one() - yv);
                }
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data();
                let ga = acc(grads, *a, g.len());
                for ((d, &s), &yv) in ga.iter_mut().zip(g).zip(y) {
                    *d += s * (F::one() - yv * yv);
                }
            }
            Op::Relu(a) => {
                let x = self.nodes[*a].value.data();
                let ga = acc(grads, *a, g.len());
                for ((d, &s), &xv) in ga.iter_mut().zip(g).zip(x) {
                    if xv > F::zero() {
                        *d += s;
                    }
                }
            }
            Op::Softplus(a) => {
                let x = self.nodes[*a].value.data();
                let ga = acc(grads, *a, g.len());
                for ((d, &s), &xv) in ga.iter_mut().zip(g).zip(x) {
                    *d += s * stable_sigmoid(xv);
                }
            }
            Op::Cos(a) => {
                let x = self.nodes[*a].value.data();
                let ga = acc(grads, *a, g.len());
                for ((d, &s), &xv) in ga.iter_mut().zip(g).zip(x) {
                    *d = *d - s * xv.sin();
                }
            }
            Op::Scale(a, c) => {
                let ga = acc(grads, *a, g.len());
                for (d, &s) in ga.iter_mut().zip(g) {
                    *d += s * *c;
                }
            }
            Op::Softmax(a, axis) => {
                let y = &self.nodes[i].value;
                let da = softmax_backward(y, g, *axis);
                let ga = acc(grads, *a, y.len());
                for (d, s) in ga.iter_mut().zip(da) {
                    *d += s;
                }
            }
            Op::Sum(a) => {
                let s = g[0];
                let len = self.nodes[*a].value.len();
                let ga = acc(grads, *a, len);
                for d in ga.iter_mut() {
                    *d += s;
                }
            }
            Op::Concat(a, b, axis) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                match (ta.rank(), *axis) {
                    (_, 0) => {
                        let ga = acc(grads, *a, ta.len());
                        for (d, &s) in ga.iter_mut().zip(&g[..ta.len()]) {
                            *d += s;
                        }
                        let gb = acc(grads, *b, tb.len());
                        for (d, &s) in gb.iter_mut().zip(&g[ta.len()..]) {
                            *d += s;
                        }
                    }
                    (2, 1) => {
                        let (ca, cb) = (ta.cols(), tb.cols());
                        let ga = acc(grads, *a, ta.len());
                        for r in 0..ta.rows() {
                            for j in 0..ca {
                                ga[r * ca + j] += g[r * (ca + cb) + j];
                            }
                        }
                        let gb = acc(grads, *b, tb.len());
                        for r in 0..tb.rows() {
                            for j in 0..cb {
                                gb[r * cb + j] += g[r * (ca + cb) + ca + j];
                            }
                        }
                    }
                    _ => unreachable!("concat shapes validated at forward time"),
                }
            }
            Op::Gather(a, indices) => {
                let ta = &self.nodes[*a].value;
                let ga = acc(grads, *a, ta.len());
                if ta.rank() == 1 {
                    for (j, &idx) in indices.iter().enumerate() {
                        ga[idx] += g[j];
                    }
                } else {
                    let c = ta.cols();
                    for (j, &idx) in indices.iter().enumerate() {
                        for t in 0..c {
                            ga[idx * c + t] += g[j * c + t];
                        }
                    }
                }
            }
        }
    }

    /// Drop all recorded nodes and gradients.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }
}

fn softmax_forward<F: Scalar>(t: &Tensor<F>, axis: usize) -> Tensor<F> {
    let mut out = t.clone();
    for_each_slice(t.shape(), axis, |idxs| {
        let mut max = F::neg_infinity();
        for &i in &idxs {
            max = max.max(t.data()[i]);
        }
        let mut z = F::zero();
        for &i in &idxs {
            let e = (t.data()[i] - max).exp();
            out.data_mut()[i] = e;
            z += e;
        }
        for &i in &idxs {
            out.data_mut()[i] = out.data()[i] / z;
        }
    });
    out
}

fn softmax_backward<F: Scalar>(y: &Tensor<F>, g: &[F], axis: usize) -> Vec<F> {
    let mut out = vec![F::zero(); y.len()];
    for_each_slice(y.shape(), axis, |idxs| {
        let mut inner = F::zero();
        for &i in &idxs {
            inner += g[i] * y.data()[i];
        }
        for &i in &idxs {
            out[i] = y.data()[i] * (g[i] - inner);
        }
    });
    out
}

/// Visit every 1-D slice of `shape` along `axis` as a list of flat indices.
fn for_each_slice(shape: &[usize], axis: usize, mut f: impl FnMut(Vec<usize>)) {
    match (shape.len(), axis) {
        (1, 0) => f((0..shape[0]).collect()),
        (2, 1) => {
            let (r, c) = (shape[0], shape[1]);
            for i in 0..r {
                f((i * c..(i + 1) * c).collect());
            }
        }
        (2, 0) => {
            let (r, c) = (shape[0], shape[1]);
            for j in 0..c {
                f((0..r).map(|i| i * c + j).collect());
            }
        }
        _ => unreachable!("softmax axis validated at forward time"),
    }
}
