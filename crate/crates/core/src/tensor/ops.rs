use super::tape::{CustomOp, Node, NodeId, Var};
use super::{gemm, Tensor};
use crate::error::{shape_err, Error, Result};

pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[.., n] + [n]`, the one broadcast the tape supports.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Sum(NodeId),
    Mean(Vec<NodeId>),
    Dot(NodeId, NodeId),
    Cosine(NodeId, NodeId),
    Magnitude(NodeId),
    ComplexMask(NodeId, NodeId),
    Custom(Vec<NodeId>, Box<dyn CustomOp>),
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | AddRow(a, b)
            | MatMul(a, b)
            | Dot(a, b)
            | Cosine(a, b)
            | ComplexMask(a, b) => vec![*a, *b],
            Scale(a, _) | Tanh(a) | Sigmoid(a) | Relu(a) | Sum(a) | Magnitude(a) => vec![*a],
            Mean(ids) | Custom(ids, _) => ids.clone(),
        }
    }

    /// Vector-Jacobian products for each parent.
    pub(crate) fn backward(&self, g: &Tensor, out: &Tensor, nodes: &[Node]) -> Result<Vec<(NodeId, Tensor)>> {
        let val = |id: &NodeId| &*nodes[id.0].value;
        let needs = |id: &NodeId| nodes[id.0].requires_grad;
        let mut res = Vec::with_capacity(2);
        match self {
            Op::Leaf => {}
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    res.push((*a, g.zip_map(val(b), |gv, bv| gv * bv)));
                }
                if needs(b) {
                    res.push((*b, g.zip_map(val(a), |gv, av| gv * av)));
                }
            }
            Op::AddRow(a, b) => {
                let n = val(b).numel();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks_exact(n) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                res.push((*a, g.clone()));
                res.push((*b, Tensor::vector(gb)));
            }
            Op::Scale(a, c) => res.push((*a, g.map(|v| v * c))),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(g.data(), bv.data(), &mut ga, m, n, k, false, true);
                    res.push((*a, Tensor::matrix(m, k, ga)?));
                }
                if needs(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(av.data(), g.data(), &mut gb, k, m, n, true, false);
                    res.push((*b, Tensor::matrix(k, n, gb)?));
                }
            }
            Op::Tanh(a) => res.push((*a, g.zip_map(out, |gv, y| gv * (1.0 - y * y)))),
            Op::Sigmoid(a) => res.push((*a, g.zip_map(out, |gv, y| gv * y * (1.0 - y)))),
            Op::Relu(a) => res.push((*a, g.zip_map(val(a), |gv, x| if x > 0.0 { gv } else { 0.0 }))),
            Op::Sum(a) => {
                let gv = g.data()[0];
                res.push((*a, Tensor::full(val(a).shape(), gv)));
            }
            Op::Mean(ids) => {
                let scaled = g.map(|v| v / ids.len() as f64);
                for id in ids {
                    res.push((*id, scaled.clone()));
                }
            }
            Op::Dot(a, b) => {
                let gv = g.data()[0];
                if needs(a) {
                    res.push((*a, val(b).map(|v| v * gv)));
                }
                if needs(b) {
                    res.push((*b, val(a).map(|v| v * gv)));
                }
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (na2, nb2) = (av.sum_squares(), bv.sum_squares());
                if na2 > 0.0 && nb2 > 0.0 {
                    let gv = g.data()[0];
                    let denom = (na2 * nb2).sqrt();
                    let c = out.data()[0];
                    // d cos / d a = b / (|a||b|) - cos * a / |a|^2
                    if needs(a) {
                        res.push((*a, bv.zip_map(av, |bi, ai| gv * (bi / denom - c * ai / na2))));
                    }
                    if needs(b) {
                        res.push((*b, av.zip_map(bv, |ai, bi| gv * (ai / denom - c * bi / nb2))));
                    }
                }
            }
            Op::Magnitude(a) => {
                let z = val(a);
                let mut gz = vec![0.0; z.numel()];
                for ((pair, gp), (&gm, &m)) in z
                    .data()
                    .chunks_exact(2)
                    .zip(gz.chunks_exact_mut(2))
                    .zip(g.data().iter().zip(out.data()))
                {
                    if m > 0.0 {
                        gp[0] = gm * pair[0] / m;
                        gp[1] = gm * pair[1] / m;
                    }
                }
                res.push((*a, Tensor::new(z.shape().to_vec(), gz)?));
            }
            Op::ComplexMask(mask, spec) => {
                let (mv, sv) = (val(mask), val(spec));
                if needs(mask) {
                    let gm: Vec<f64> = g
                        .data()
                        .chunks_exact(2)
                        .zip(sv.data().chunks_exact(2))
                        .map(|(gp, sp)| gp[0] * sp[0] + gp[1] * sp[1])
                        .collect();
                    res.push((*mask, Tensor::new(mv.shape().to_vec(), gm)?));
                }
                if needs(spec) {
                    let mut gs = g.clone();
                    for (gp, &m) in gs.data_mut().chunks_exact_mut(2).zip(mv.data()) {
                        gp[0] *= m;
                        gp[1] *= m;
                    }
                    res.push((*spec, gs));
                }
            }
            Op::Custom(ids, op) => {
                let inputs: Vec<&Tensor> = ids.iter().map(val).collect();
                let need: Vec<bool> = ids.iter().map(needs).collect();
                let grads = op.backward(g, &inputs, out, &need)?;
                if grads.len() != ids.len() {
                    return Err(Error::InvalidArgument(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        grads.len(),
                        ids.len()
                    )));
                }
                for (id, grad) in ids.iter().zip(grads) {
                    if let Some(grad) = grad {
                        if grad.shape() != val(id).shape() {
                            return Err(shape_err(
                                "custom backward",
                                format!("{}: {:?} vs {:?}", op.name(), grad.shape(), val(id).shape()),
                            ));
                        }
                        res.push((*id, grad));
                    }
                }
            }
        }
        Ok(res)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

// Fallible shape-checked ops cannot implement the std operator traits.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(NodeId, NodeId) -> Op,
    ) -> Result<Var<'t>> {
        self.tape.check(other)?;
        let (a, b) = (self.value(), other.value());
        same_shape(name, &a, &b)?;
        Ok(self.tape.push(a.zip_map(&b, f), op(self.id, other.id)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    /// Adds a rank-1 `bias` to every row of `self` (last dimension must match).
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(bias)?;
        let (a, b) = (self.value(), bias.value());
        let n = b.numel();
        if b.rank() != 1 || a.rank() == 0 || a.shape()[a.rank() - 1] != n {
            return Err(shape_err("add_row", format!("{:?} + {:?}", a.shape(), b.shape())));
        }
        let mut data = a.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        let t = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape.push(t, Op::AddRow(self.id, bias.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let t = self.value().map(|v| v * c);
        self.tape.push(t, Op::Scale(self.id, c))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(other)?;
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        gemm(a.data(), b.data(), &mut c, m, k, n, false, false);
        Ok(self.tape.push(Tensor::matrix(m, n, c)?, Op::MatMul(self.id, other.id)))
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value().map(f64::tanh);
        self.tape.push(t, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let t = self.value().map(sigmoid);
        self.tape.push(t, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        let t = self.value().map(|v| v.max(0.0));
        self.tape.push(t, Op::Relu(self.id))
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn sum_squares(self) -> Var<'t> {
        let sq = self.mul(self).expect("a tensor always matches its own shape");
        sq.sum()
    }

    /// Inner product over all entries.
    pub fn dot(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(other)?;
        let (a, b) = (self.value(), other.value());
        same_shape("dot", &a, &b)?;
        let d = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        Ok(self.tape.push(Tensor::scalar(d), Op::Dot(self.id, other.id)))
    }

    /// `aᵀb / (‖a‖‖b‖)` over all entries, clamped to `[-1, 1]`.
    ///
    /// Defined as 0 (with zero gradient) when either side has zero norm.
    pub fn cosine(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(other)?;
        let (a, b) = (self.value(), other.value());
        same_shape("cosine", &a, &b)?;
        let (na2, nb2) = (a.sum_squares(), b.sum_squares());
        let c = if na2 > 0.0 && nb2 > 0.0 {
            let d: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
            (d / (na2 * nb2).sqrt()).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        Ok(self.tape.push(Tensor::scalar(c), Op::Cosine(self.id, other.id)))
    }

    /// `|z|` for a `[.., 2]` complex tensor. The gradient at `z = 0` is 0.
    pub fn magnitude(self) -> Result<Var<'t>> {
        let z = self.value();
        if z.rank() == 0 || z.shape()[z.rank() - 1] != 2 {
            return Err(shape_err(
                "magnitude",
                format!("expected trailing (re, im) axis, got {:?}", z.shape()),
            ));
        }
        let mag = z.data().chunks_exact(2).map(|p| p[0].hypot(p[1])).collect();
        let shape = z.shape()[..z.rank() - 1].to_vec();
        Ok(self.tape.push(Tensor::new(shape, mag)?, Op::Magnitude(self.id)))
    }

    /// Scales each complex entry of `spec` (`[.., 2]`) by the real `self` (`[..]`).
    pub fn complex_mask(self, spec: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(spec)?;
        let (m, s) = (self.value(), spec.value());
        let mut expected = m.shape().to_vec();
        expected.push(2);
        if s.shape() != expected.as_slice() {
            return Err(shape_err(
                "complex_mask",
                format!("mask {:?} vs spectrogram {:?}", m.shape(), s.shape()),
            ));
        }
        let mut out = s.as_ref().clone();
        for (pair, &mv) in out.data_mut().chunks_exact_mut(2).zip(m.data()) {
            pair[0] *= mv;
            pair[1] *= mv;
        }
        Ok(self.tape.push(out, Op::ComplexMask(self.id, spec.id)))
    }

    /// Elementwise mean of equally shaped nodes.
    pub fn mean_of(vars: &[Var<'t>]) -> Result<Var<'t>> {
        let first = *vars
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero tensors".into()))?;
        let tape = first.tape;
        let mut acc = first.value().as_ref().clone();
        for v in &vars[1..] {
            tape.check(*v)?;
            let t = v.value();
            same_shape("mean_of", &acc, &t)?;
            acc.accumulate(&t);
        }
        let n = vars.len() as f64;
        let acc = acc.map(|v| v / n);
        Ok(tape.push(acc, Op::Mean(vars.iter().map(|v| v.id).collect())))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
