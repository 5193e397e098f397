use super::{NumericError, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    BatchMatmul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize, Vec<usize>),
    SoftmaxLast(usize),
    LayerNormLast(usize, f64),
    BroadcastMulLast(usize, usize),
    BroadcastAddLast(usize, usize),
    Gelu(usize),
    LogSigmoid(usize),
    Clamp(usize, f64, f64),
    SumAll(usize),
    MeanAll(usize),
    Gather(usize, Vec<usize>),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every graph node that needs one.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads[v.0].take()
    }
}

/// Eager tape: every operation computes its value on construction and records
/// enough structure for an exact reverse pass.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// As [`Self::push`] for operations that can overflow on finite inputs;
    /// those report non-finite results as errors in every build.
    fn push_checked(
        &mut self,
        value: Tensor<F>,
        op: Op,
        requires_grad: bool,
        what: &'static str,
    ) -> Result<Var, NumericError> {
        if !value.all_finite() {
            return Err(NumericError::NonFinite(what));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, a: Var) -> bool {
        self.nodes[a.0].requires_grad
    }

    /// Node that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Differentiable input (parameter or probe point).
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.check_same_shape(a, b, "add")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.needs(a) || self.needs(b);
        self.push_checked(data, Op::Add(a.0, b.0), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.check_same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.needs(a) || self.needs(b);
        self.push_checked(data, Op::Sub(a.0, b.0), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.check_same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.needs(a) || self.needs(b);
        self.push_checked(data, Op::Mul(a.0, b.0), rg, "mul")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let cf = F::from_f64(c);
        let value = self.value(a).map(|x| x + cf);
        let rg = self.needs(a);
        self.push(value, Op::AddScalar(a.0), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cf = F::from_f64(c);
        let value = self.value(a).map(|x| x * cf);
        let rg = self.needs(a);
        self.push(value, Op::Scale(a.0, c), rg)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericError::ShapeMismatch(format!(
                "matmul {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        mm_nn(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.needs(a) || self.needs(b);
        self.push_checked(value, Op::Matmul(a.0, b.0), rg, "matmul")
    }

    /// `[b,m,k] x [b,k,n] -> [b,m,n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(NumericError::ShapeMismatch(format!(
                "batch_matmul {sa:?} x {sb:?}"
            )));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![F::zero(); bs * m * n];
        for i in 0..bs {
            mm_nn(
                &self.value(a).data()[i * m * k..(i + 1) * m * k],
                &self.value(b).data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Tensor::new(vec![bs, m, n], out)?;
        let rg = self.needs(a) || self.needs(b);
        self.push_checked(value, Op::BatchMatmul(a.0, b.0), rg, "batch_matmul")
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, NumericError> {
        let shape = self.shape(a).to_vec();
        if perm.len() != shape.len() {
            return Err(NumericError::ShapeMismatch(format!(
                "permute {perm:?} on rank-{} tensor",
                shape.len()
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(NumericError::InvalidArgument(format!(
                    "invalid permutation {perm:?}"
                )));
            }
            seen[p] = true;
        }
        let value = permute_tensor(self.value(a), perm);
        let rg = self.needs(a);
        Ok(self.push(value, Op::Permute(a.0, perm.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericError> {
        let old = self.shape(a).to_vec();
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Reshape(a.0, old), rg))
    }

    /// Softmax over the last dimension.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let d = *t.shape().last().expect("softmax on rank >= 1");
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row
                .iter()
                .copied()
                .fold(F::from_f64(f64::NEG_INFINITY), F::maximum);
            let mut sum = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out).expect("same length");
        let rg = self.needs(a);
        self.push(value, Op::SoftmaxLast(a.0), rg)
    }

    /// Normalize each vector along the last dimension to mean 0, variance 1.
    /// Learned gain/bias, when wanted, are composed via the broadcast ops.
    pub fn layer_norm_last(&mut self, a: Var, eps: f64) -> Result<Var, NumericError> {
        let t = self.value(a);
        let d = *t
            .shape()
            .last()
            .ok_or_else(|| NumericError::ShapeMismatch("layer_norm on rank-0".into()))?;
        if d == 0 {
            return Err(NumericError::ShapeMismatch(
                "layer_norm over width 0".into(),
            ));
        }
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let (mean, var) = mean_var(row);
            let denom = (var + F::from_f64(eps)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) / denom;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out).expect("same length");
        let rg = self.needs(a);
        Ok(self.push(value, Op::LayerNormLast(a.0, eps), rg))
    }

    /// `a[..., d] * v[d]` with `v` broadcast over all leading dimensions.
    pub fn broadcast_mul_last(&mut self, a: Var, v: Var) -> Result<Var, NumericError> {
        let d = self.check_broadcast(a, v, "broadcast_mul_last")?;
        let vd = self.value(v).data().to_vec();
        let t = self.value(a);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            for (x, &w) in row.iter_mut().zip(&vd) {
                *x *= w;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out).expect("same length");
        let rg = self.needs(a) || self.needs(v);
        Ok(self.push(value, Op::BroadcastMulLast(a.0, v.0), rg))
    }

    /// `a[..., d] + v[d]`, the bias-add.
    pub fn broadcast_add_last(&mut self, a: Var, v: Var) -> Result<Var, NumericError> {
        let d = self.check_broadcast(a, v, "broadcast_add_last")?;
        let vd = self.value(v).data().to_vec();
        let t = self.value(a);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            for (x, &w) in row.iter_mut().zip(&vd) {
                *x += w;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out).expect("same length");
        let rg = self.needs(a) || self.needs(v);
        Ok(self.push(value, Op::BroadcastAddLast(a.0, v.0), rg))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu_forward);
        let rg = self.needs(a);
        self.push(value, Op::Gelu(a.0), rg)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(log_sigmoid_forward);
        let rg = self.needs(a);
        self.push(value, Op::LogSigmoid(a.0), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lf, hf) = (F::from_f64(lo), F::from_f64(hi));
        let value = self.value(a).map(|x| x.maximum(lf).minimum(hf));
        let rg = self.needs(a);
        self.push(value, Op::Clamp(a.0, lo, hi), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut acc = F::zero();
        for &v in self.value(a).data() {
            acc += v;
        }
        let rg = self.needs(a);
        self.push(Tensor::scalar(acc), Op::SumAll(a.0), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let mut acc = F::zero();
        for &v in self.value(a).data() {
            acc += v;
        }
        let value = Tensor::scalar(acc / F::from_f64(n as f64));
        let rg = self.needs(a);
        self.push(value, Op::MeanAll(a.0), rg)
    }

    /// Pick flat indices out of `a`, producing a rank-1 tensor.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>) -> Result<Var, NumericError> {
        let t = self.value(a);
        let mut out = Vec::with_capacity(indices.len());
        for &i in &indices {
            if i >= t.len() {
                return Err(NumericError::InvalidArgument(format!(
                    "gather index {i} out of bounds for {} elements",
                    t.len()
                )));
            }
            out.push(t.data()[i]);
        }
        let value = Tensor::new(vec![indices.len()], out)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Gather(a.0, indices), rg))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, NumericError> {
        if self.value(loss).len() != 1 {
            return Err(NumericError::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(F::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.accumulate(idx, &gout, &mut grads);
            // Leaves keep their gradient for the caller.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(gout);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, idx: usize, gout: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Constant | Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(*a, gout.clone(), grads);
                self.add_grad(*b, gout.clone(), grads);
            }
            Op::Sub(a, b) => {
                self.add_grad(*a, gout.clone(), grads);
                self.add_grad(*b, gout.map(|v| -v), grads);
            }
            Op::Mul(a, b) => {
                if self.nodes[*a].requires_grad {
                    self.add_grad(
                        *a,
                        zip_map(gout, &self.nodes[*b].value, |g, y| g * y),
                        grads,
                    );
                }
                if self.nodes[*b].requires_grad {
                    self.add_grad(
                        *b,
                        zip_map(gout, &self.nodes[*a].value, |g, x| g * x),
                        grads,
                    );
                }
            }
            Op::AddScalar(a) => self.add_grad(*a, gout.clone(), grads),
            Op::Scale(a, c) => {
                let cf = F::from_f64(*c);
                self.add_grad(*a, gout.map(|g| g * cf), grads);
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.nodes[*a].requires_grad {
                    let mut da = vec![F::zero(); m * k];
                    mm_nt(gout.data(), tb.data(), &mut da, m, n, k);
                    self.add_grad(*a, Tensor::new(vec![m, k], da).expect("shape"), grads);
                }
                if self.nodes[*b].requires_grad {
                    let mut db = vec![F::zero(); k * n];
                    mm_tn(ta.data(), gout.data(), &mut db, m, k, n);
                    self.add_grad(*b, Tensor::new(vec![k, n], db).expect("shape"), grads);
                }
            }
            Op::BatchMatmul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (bs, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
                if self.nodes[*a].requires_grad {
                    let mut da = vec![F::zero(); bs * m * k];
                    for i in 0..bs {
                        mm_nt(
                            &gout.data()[i * m * n..(i + 1) * m * n],
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            &mut da[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.add_grad(*a, Tensor::new(vec![bs, m, k], da).expect("shape"), grads);
                }
                if self.nodes[*b].requires_grad {
                    let mut db = vec![F::zero(); bs * k * n];
                    for i in 0..bs {
                        mm_tn(
                            &ta.data()[i * m * k..(i + 1) * m * k],
                            &gout.data()[i * m * n..(i + 1) * m * n],
                            &mut db[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    self.add_grad(*b, Tensor::new(vec![bs, k, n], db).expect("shape"), grads);
                }
            }
            Op::Permute(a, perm) => {
                let inv = invert_perm(perm);
                self.add_grad(*a, permute_tensor(gout, &inv), grads);
            }
            Op::Reshape(a, old_shape) => {
                let g = gout.clone().reshaped(old_shape.clone()).expect("shape");
                self.add_grad(*a, g, grads);
            }
            Op::SoftmaxLast(a) => {
                let y = &node.value;
                let d = *y.shape().last().expect("rank >= 1");
                let mut dx = gout.data().to_vec();
                for (row, yrow) in dx.chunks_mut(d).zip(y.data().chunks(d)) {
                    let mut dot = F::zero();
                    for (g, &yv) in row.iter().zip(yrow) {
                        dot += *g * yv;
                    }
                    for (g, &yv) in row.iter_mut().zip(yrow) {
                        *g = yv * (*g - dot);
                    }
                }
                self.add_grad(
                    *a,
                    Tensor::new(y.shape().to_vec(), dx).expect("shape"),
                    grads,
                );
            }
            Op::LayerNormLast(a, eps) => {
                let x = &self.nodes[*a].value;
                let xhat = &node.value;
                let d = *x.shape().last().expect("rank >= 1");
                let dn = F::from_f64(d as f64);
                let mut dx = gout.data().to_vec();
                for ((row, xrow), hrow) in dx
                    .chunks_mut(d)
                    .zip(x.data().chunks(d))
                    .zip(xhat.data().chunks(d))
                {
                    let (_, var) = mean_var(xrow);
                    let denom = (var + F::from_f64(*eps)).sqrt();
                    let mut g_mean = F::zero();
                    let mut gh_mean = F::zero();
                    for (g, &h) in row.iter().zip(hrow) {
                        g_mean += *g;
                        gh_mean += *g * h;
                    }
                    g_mean = g_mean / dn;
                    gh_mean = gh_mean / dn;
                    for (g, &h) in row.iter_mut().zip(hrow) {
                        *g = (*g - g_mean - h * gh_mean) / denom;
                    }
                }
                self.add_grad(
                    *a,
                    Tensor::new(x.shape().to_vec(), dx).expect("shape"),
                    grads,
                );
            }
            Op::BroadcastMulLast(a, v) => {
                let (ta, tv) = (&self.nodes[*a].value, &self.nodes[*v].value);
                let d = tv.len();
                if self.nodes[*a].requires_grad {
                    let mut da = gout.data().to_vec();
                    for row in da.chunks_mut(d) {
                        for (g, &w) in row.iter_mut().zip(tv.data()) {
                            *g *= w;
                        }
                    }
                    self.add_grad(
                        *a,
                        Tensor::new(ta.shape().to_vec(), da).expect("shape"),
                        grads,
                    );
                }
                if self.nodes[*v].requires_grad {
                    let mut dv = vec![F::zero(); d];
                    for (grow, arow) in gout.data().chunks(d).zip(ta.data().chunks(d)) {
                        for ((acc, &g), &x) in dv.iter_mut().zip(grow).zip(arow) {
                            *acc += g * x;
                        }
                    }
                    self.add_grad(*v, Tensor::new(vec![d], dv).expect("shape"), grads);
                }
            }
            Op::BroadcastAddLast(a, v) => {
                let d = self.nodes[*v].value.len();
                if self.nodes[*a].requires_grad {
                    self.add_grad(*a, gout.clone(), grads);
                }
                if self.nodes[*v].requires_grad {
                    let mut dv = vec![F::zero(); d];
                    for grow in gout.data().chunks(d) {
                        for (acc, &g) in dv.iter_mut().zip(grow) {
                            *acc += g;
                        }
                    }
                    self.add_grad(*v, Tensor::new(vec![d], dv).expect("shape"), grads);
                }
            }
            Op::Gelu(a) => {
                let x = &self.nodes[*a].value;
                let dx = zip_map(gout, x, |g, xv| g * gelu_backward(xv));
                self.add_grad(*a, dx, grads);
            }
            Op::LogSigmoid(a) => {
                let x = &self.nodes[*a].value;
                // d/dx log sigma(x) = sigma(-x)
                let dx = zip_map(gout, x, |g, xv| g * sigmoid(-xv));
                self.add_grad(*a, dx, grads);
            }
            Op::Clamp(a, lo, hi) => {
                let x = &self.nodes[*a].value;
                let (lf, hf) = (F::from_f64(*lo), F::from_f64(*hi));
                let dx = zip_map(
                    gout,
                    x,
                    |g, xv| {
                        if xv >= lf && xv <= hf {
                            g
                        } else {
                            F::zero()
                        }
                    },
                );
                self.add_grad(*a, dx, grads);
            }
            Op::SumAll(a) => {
                let g = gout.item();
                let shape = self.nodes[*a].value.shape().to_vec();
                self.add_grad(*a, Tensor::full(shape, g), grads);
            }
            Op::MeanAll(a) => {
                let n = self.nodes[*a].value.len().max(1);
                let g = gout.item() / F::from_f64(n as f64);
                let shape = self.nodes[*a].value.shape().to_vec();
                self.add_grad(*a, Tensor::full(shape, g), grads);
            }
            Op::Gather(a, indices) => {
                let mut dx = Tensor::zeros(self.nodes[*a].value.shape().to_vec());
                for (&i, &g) in indices.iter().zip(gout.data()) {
                    dx.data_mut()[i] += g;
                }
                self.add_grad(*a, dx, grads);
            }
        }
    }

    fn add_grad(&self, target: usize, g: Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match &mut grads[target] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn check_same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), NumericError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericError::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn check_broadcast(&self, a: Var, v: Var, op: &str) -> Result<usize, NumericError> {
        let d = *self
            .shape(a)
            .last()
            .ok_or_else(|| NumericError::ShapeMismatch(format!("{op} on rank-0")))?;
        if self.shape(v) != [d] {
            return Err(NumericError::ShapeMismatch(format!(
                "{op}: vector {:?} vs last dim {d}",
                self.shape(v)
            )));
        }
        Ok(d)
    }
}

fn zip_map<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same length")
}

fn mean_var<F: Scalar>(row: &[F]) -> (F, F) {
    let n = F::from_f64(row.len() as f64);
    let mut mean = F::zero();
    for &v in row {
        mean += v;
    }
    mean = mean / n;
    let mut var = F::zero();
    for &v in row {
        let d = v - mean;
        var += d * d;
    }
    (mean, var / n)
}

/// `out[m,n] += a[m,k] * b[k,n]`, ikj order for contiguous inner loops.
fn mm_nn<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[m,k] += a[m,n] * b^T` where `b` is `[k,n]`: rows of `a` dotted with rows of `b`.
fn mm_nt<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o += acc;
        }
    }
}

/// `out[k,n] += a^T * b` where `a` is `[m,k]`, `b` is `[m,n]`: rank-1 updates.
fn mm_tn<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

fn permute_tensor<F: Scalar>(t: &Tensor<F>, perm: &[usize]) -> Tensor<F> {
    let in_shape = t.shape();
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let data = t.data();
    let mut out = vec![F::zero(); t.len()];

    // Hot attention layouts get contiguous copy loops.
    match (rank, perm) {
        (2, [1, 0]) => {
            let (r, c) = (in_shape[0], in_shape[1]);
            for i in 0..r {
                let row = &data[i * c..(i + 1) * c];
                for (j, &v) in row.iter().enumerate() {
                    out[j * r + i] = v;
                }
            }
        }
        (3, [0, 2, 1]) => {
            let (b, r, c) = (in_shape[0], in_shape[1], in_shape[2]);
            for k in 0..b {
                let src = &data[k * r * c..(k + 1) * r * c];
                let dst = &mut out[k * r * c..(k + 1) * r * c];
                for i in 0..r {
                    for j in 0..c {
                        dst[j * r + i] = src[i * c + j];
                    }
                }
            }
        }
        (3, [1, 0, 2]) => {
            let (a, b, c) = (in_shape[0], in_shape[1], in_shape[2]);
            for i in 0..a {
                for j in 0..b {
                    let src = &data[(i * b + j) * c..(i * b + j + 1) * c];
                    out[(j * a + i) * c..(j * a + i + 1) * c].copy_from_slice(src);
                }
            }
        }
        (4, [0, 2, 1, 3]) => {
            let (a, b, c, d) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
            for i in 0..a {
                for j in 0..b {
                    for k in 0..c {
                        let src = &data[((i * b + j) * c + k) * d..((i * b + j) * c + k + 1) * d];
                        let dst_base = ((i * c + k) * b + j) * d;
                        out[dst_base..dst_base + d].copy_from_slice(src);
                    }
                }
            }
        }
        _ => {
            // General case: walk input linearly, track the output index with
            // an odometer over the input coordinates.
            let mut out_strides = vec![1usize; rank];
            for i in (0..rank.saturating_sub(1)).rev() {
                out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
            }
            let mut axis_out_stride = vec![0usize; rank];
            for (q, &p) in perm.iter().enumerate() {
                axis_out_stride[p] = out_strides[q];
            }
            let mut coords = vec![0usize; rank];
            let mut out_idx = 0usize;
            for &v in data {
                out[out_idx] = v;
                for ax in (0..rank).rev() {
                    coords[ax] += 1;
                    out_idx += axis_out_stride[ax];
                    if coords[ax] < in_shape[ax] {
                        break;
                    }
                    coords[ax] = 0;
                    out_idx -= in_shape[ax] * axis_out_stride[ax];
                }
            }
        }
    }
    Tensor::new(out_shape, out).expect("same length")
}

fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn gelu_forward<F: Scalar>(x: F) -> F {
    // x * Phi(x), exact erf form
    let half = F::from_f64(0.5);
    let inv_sqrt2 = F::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    x * half * (F::one() + (x * inv_sqrt2).erf())
}

fn gelu_backward<F: Scalar>(x: F) -> F {
    let half = F::from_f64(0.5);
    let inv_sqrt2 = F::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let phi_cdf = half * (F::one() + (x * inv_sqrt2).erf());
    let inv_sqrt_2pi = F::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let pdf = inv_sqrt_2pi * (-(x * x) * half).exp();
    phi_cdf + x * pdf
}

fn log_sigmoid_forward<F: Scalar>(x: F) -> F {
    // -ln(1 + e^-x), split on sign for stability
    if x >= F::zero() {
        -((-x).exp().ln_1p())
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        let e = (-x).exp();
        F::one() / (F::one() + e)
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
