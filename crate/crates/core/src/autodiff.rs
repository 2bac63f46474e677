//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value and the handles of its inputs. [`Tape::backward`] walks the nodes in
//! exact reverse order of recording and returns the gradient of a scalar output
//! with respect to every registered parameter.
//!
//! All tape operations work on matrix views (see [`Tensor::dims2`]). Binary
//! element-wise operations broadcast any axis of extent one, so a `[1, n]`
//! bias row or an `[m, 1]` per-row scale combine with an `[m, n]` operand.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{gemm, logsumexp, Tensor};

/// Floor applied to row norms so that normalized directions stay finite.
pub const NORM_FLOOR: f64 = 1e-12;

/// Largest `f64` below one; `tanh` saturates here so outputs stay inside (-1, 1).
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum UnOp {
    Tanh,
    Exp,
    Log,
    Square,
    LeakyRelu(f64),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Binary(BinOp, Var, Var),
    Unary(UnOp, Var),
    Scale(Var, f64),
    Offset(Var),
    RowNorm(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumCols(Var),
    LogSumExpRows(Var),
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    Pick(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder for a single forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients of a scalar with respect to the registered parameters.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_param.get(&var)
    }

    /// Gradient for `var`, or zeros shaped like `like` when the output did not
    /// depend on it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.by_param
            .get(&var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: Gradients) {
        for (var, g) in other.by_param {
            match self.by_param.get_mut(&var) {
                Some(acc) => {
                    for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                        *a += b;
                    }
                }
                None => {
                    self.by_param.insert(var, g);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

fn broadcast_dims(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    let axis = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (axis(a.0, b.0), axis(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Shape {
            op,
            lhs: vec![a.0, a.1],
            rhs: vec![b.0, b.1],
        }),
    }
}

#[inline]
fn bidx(dims: (usize, usize), i: usize, j: usize) -> usize {
    let r = if dims.0 == 1 { 0 } else { i };
    let c = if dims.1 == 1 { 0 } else { j };
    r * dims.1 + c
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Registers a trainable leaf; [`Tape::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        let var = self.push(value, Op::Leaf, true);
        self.params.push(var);
        var
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn dims(&self, var: Var) -> Result<(usize, usize)> {
        self.nodes[var.0].value.dims2()
    }

    fn record(&mut self, rows: usize, cols: usize, values: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        let requires_grad = inputs.iter().any(|&v| self.rg(v));
        let value = Tensor::matrix(rows, cols, values)?;
        Ok(self.push(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).values(),
            false,
            self.value(b).values(),
            false,
            &mut out,
            0.0,
        );
        self.record(m, n, out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        let (r, c) = t.dims2()?;
        self.record(r, c, t.into_values(), Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a);
        if v.len() != rows * cols {
            return Err(Error::Shape {
                op: "reshape",
                lhs: v.shape().to_vec(),
                rhs: vec![rows, cols],
            });
        }
        let values = v.values().to_vec();
        self.record(rows, cols, values, Op::Reshape(a), &[a])
    }

    fn binary(&mut self, op: BinOp, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let da = self.dims(a)?;
        let db = self.dims(b)?;
        let (r, c) = broadcast_dims(name, da, db)?;
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                let x = av[bidx(da, i, j)];
                let y = bv[bidx(db, i, j)];
                out.push(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                });
            }
        }
        self.record(r, c, out, Op::Binary(op, a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Div, "div", a, b)
    }

    fn unary(&mut self, op: UnOp, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let out = self
            .value(a)
            .values()
            .iter()
            .map(|&x| match op {
                UnOp::Tanh => x.tanh().clamp(-BELOW_ONE, BELOW_ONE),
                UnOp::Exp => x.exp(),
                UnOp::Log => x.ln(),
                UnOp::Square => x * x,
                UnOp::LeakyRelu(s) => {
                    if x > 0.0 {
                        x
                    } else {
                        s * x
                    }
                }
            })
            .collect();
        self.record(r, c, out, Op::Unary(op, a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnOp::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnOp::Exp, a)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(UnOp::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnOp::Square, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(UnOp::LeakyRelu(slope), a)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let out = self.value(a).values().iter().map(|x| x * s).collect();
        self.record(r, c, out, Op::Scale(a, s), &[a])
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let out = self.value(a).values().iter().map(|x| x + s).collect();
        self.record(r, c, out, Op::Offset(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Euclidean norm of each row (`r×1`), floored at [`NORM_FLOOR`].
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let out = self
            .value(a)
            .values()
            .chunks(c)
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR))
            .collect();
        self.record(r, 1, out, Op::RowNorm(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).values().iter().sum();
        self.record(1, 1, vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let m = v.values().iter().sum::<f64>() / v.len() as f64;
        self.record(1, 1, vec![m], Op::Mean(a), &[a])
    }

    /// Column means over all rows (`1×c`).
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let mut out = vec![0.0; c];
        for row in self.value(a).values().chunks(c) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        self.record(1, c, out, Op::MeanRows(a), &[a])
    }

    /// Sum of each row (`r×1`).
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let out = self
            .value(a)
            .values()
            .chunks(c)
            .map(|row| row.iter().sum())
            .collect();
        self.record(r, 1, out, Op::SumCols(a), &[a])
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let out = self.value(a).values().chunks(c).map(logsumexp).collect();
        self.record(r, 1, out, Op::LogSumExpRows(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let s = crate::tensor::softmax_rows(self.value(a))?;
        let (r, c) = s.dims2()?;
        self.record(r, c, s.into_values(), Op::SoftmaxRows(a), &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a)?;
        let (rb, cb) = self.dims(b)?;
        if ra != rb {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: vec![ra, ca],
                rhs: vec![rb, cb],
            });
        }
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        self.record(ra, ca + cb, out, Op::ConcatCols(a, b), &[a, b])
    }

    /// Selects column `idx[i]` from row `i` (`r×1`).
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if idx.len() != r || idx.iter().any(|&k| k >= c) {
            return Err(Error::contract(format!(
                "pick needs one index < {c} per row of a {r}x{c} tensor"
            )));
        }
        let v = self.value(a).values();
        let out = idx.iter().enumerate().map(|(i, &k)| v[i * c + k]).collect();
        self.record(r, 1, out, Op::Pick(a, idx.to_vec()), &[a])
    }

    /// Gradients of the scalar `output` with respect to every parameter.
    /// Accumulators start from zero.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let mut grads = Gradients::default();
        self.backward_into(output, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but adds into existing accumulators.
    pub fn backward_into(&self, output: Var, acc: &mut Gradients) -> Result<()> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut fresh = Gradients::default();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, g, Var(i), &mut grads, &mut fresh)?;
        }
        acc.accumulate(fresh);
        Ok(())
    }

    fn add_grad(&self, grads: &mut [Option<Vec<f64>>], var: Var, contribution: Vec<f64>) {
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(
        &self,
        node: &Node,
        g: Vec<f64>,
        this: Var,
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {
                let shape = node.value.shape().to_vec();
                out.by_param.insert(this, Tensor::new(shape, g)?);
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a)?;
                let (_, n) = self.dims(*b)?;
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &g, false, self.value(*b).values(), true, &mut da, 0.0);
                    self.add_grad(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).values(), true, &g, false, &mut db, 0.0);
                    self.add_grad(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = node.value.dims2()?;
                let gt = Tensor::matrix(r, c, g)?.transpose()?;
                self.add_grad(grads, *a, gt.into_values());
            }
            Op::Reshape(a) | Op::Offset(a) => self.add_grad(grads, *a, g),
            Op::Scale(a, s) => self.add_grad(grads, *a, g.iter().map(|x| x * s).collect()),
            Op::Binary(op, a, b) => {
                let da_dims = self.dims(*a)?;
                let db_dims = self.dims(*b)?;
                let (r, c) = node.value.dims2()?;
                let av = self.value(*a).values();
                let bv = self.value(*b).values();
                let mut ga = self.rg(*a).then(|| vec![0.0; av.len()]);
                let mut gb = self.rg(*b).then(|| vec![0.0; bv.len()]);
                for i in 0..r {
                    for j in 0..c {
                        let gij = g[i * c + j];
                        let ia = bidx(da_dims, i, j);
                        let ib = bidx(db_dims, i, j);
                        let (x, y) = (av[ia], bv[ib]);
                        let (dx, dy) = match op {
                            BinOp::Add => (gij, gij),
                            BinOp::Sub => (gij, -gij),
                            BinOp::Mul => (gij * y, gij * x),
                            BinOp::Div => (gij / y, -gij * x / (y * y)),
                        };
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += dx;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += dy;
                        }
                    }
                }
                if let Some(ga) = ga {
                    self.add_grad(grads, *a, ga);
                }
                if let Some(gb) = gb {
                    self.add_grad(grads, *b, gb);
                }
            }
            Op::Unary(op, a) => {
                let x = self.value(*a).values();
                let y = node.value.values();
                let d = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(gi, (&xi, &yi))| {
                        gi * match op {
                            UnOp::Tanh => 1.0 - yi * yi,
                            UnOp::Exp => yi,
                            UnOp::Log => 1.0 / xi,
                            UnOp::Square => 2.0 * xi,
                            UnOp::LeakyRelu(s) => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    *s
                                }
                            }
                        }
                    })
                    .collect();
                self.add_grad(grads, *a, d);
            }
            Op::RowNorm(a) => {
                let (_, c) = self.dims(*a)?;
                let x = self.value(*a).values();
                let norms = node.value.values();
                let mut d = vec![0.0; x.len()];
                for (i, (row, drow)) in x.chunks(c).zip(d.chunks_mut(c)).enumerate() {
                    let raw = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if raw > NORM_FLOOR {
                        for (dv, xv) in drow.iter_mut().zip(row) {
                            *dv = g[i] * xv / norms[i];
                        }
                    }
                }
                self.add_grad(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.add_grad(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.add_grad(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::MeanRows(a) => {
                let (r, _) = self.dims(*a)?;
                let scaled: Vec<f64> = g.iter().map(|x| x / r as f64).collect();
                self.add_grad(grads, *a, scaled.repeat(r));
            }
            Op::SumCols(a) => {
                let (_, c) = self.dims(*a)?;
                let d = g.iter().flat_map(|&gi| std::iter::repeat_n(gi, c)).collect();
                self.add_grad(grads, *a, d);
            }
            Op::LogSumExpRows(a) => {
                let (_, c) = self.dims(*a)?;
                let x = self.value(*a).values();
                let lse = node.value.values();
                let mut d = Vec::with_capacity(x.len());
                for (i, row) in x.chunks(c).enumerate() {
                    d.extend(row.iter().map(|v| g[i] * (v - lse[i]).exp()));
                }
                self.add_grad(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let (_, c) = node.value.dims2()?;
                let y = node.value.values();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(c).zip(g.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    d.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
                }
                self.add_grad(grads, *a, d);
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = self.dims(*a)?;
                let (_, cb) = self.dims(*b)?;
                let c = ca + cb;
                let mut ga = Vec::with_capacity(r * ca);
                let mut gb = Vec::with_capacity(r * cb);
                for i in 0..r {
                    ga.extend_from_slice(&g[i * c..i * c + ca]);
                    gb.extend_from_slice(&g[i * c + ca..(i + 1) * c]);
                }
                if self.rg(*a) {
                    self.add_grad(grads, *a, ga);
                }
                if self.rg(*b) {
                    self.add_grad(grads, *b, gb);
                }
            }
            Op::Pick(a, idx) => {
                let (r, c) = self.dims(*a)?;
                let mut d = vec![0.0; r * c];
                for (i, &k) in idx.iter().enumerate() {
                    d[i * c + k] = g[i];
                }
                self.add_grad(grads, *a, d);
            }
        }
        Ok(())
    }
}

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` records a scalar function of the parameters on a fresh tape each time it
/// is called; it must be deterministic. Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(params: &[Tensor], epsilon: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::contract(format!(
            "grad_check epsilon must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (p, &var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var, &params[p]);
        for k in 0..params[p].len() {
            let orig = work[p].values()[k];
            work[p].values_mut()[k] = orig + epsilon;
            let up = eval(&work)?;
            work[p].values_mut()[k] = orig - epsilon;
            let down = eval(&work)?;
            work[p].values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = (analytic.values()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), rng::standard_normals(&mut rng::seeded(seed), n)).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let p = tape.param(random(&[3, 4], 1));
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(p).unwrap().values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_square_gradient_is_identity() {
        let mut tape = Tape::new();
        let value = random(&[5], 2);
        let p = tape.param(value.clone());
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq).unwrap();
        let h = tape.scale(s, 0.5).unwrap();
        let g = tape.backward(h).unwrap();
        assert_eq!(g.get(p).unwrap().values(), value.values());
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let a = random(&[3, 3], 11);
        let b = random(&[3, 3], 12);
        let err = grad_check(&[a, b], 1e-6, |t, v| {
            let m = t.matmul(v[0], v[1])?;
            t.sum(m)
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn grad_check_reference_functions() {
        let p = random(&[4], 3);
        let quad = grad_check(std::slice::from_ref(&p), 1e-4, |t, v| {
            let s = t.square(v[0])?;
            let s = t.scale(s, 3.0)?;
            t.sum(s)
        })
        .unwrap();
        assert!(quad < 1e-8, "{quad}");

        let chain = grad_check(std::slice::from_ref(&p), 1e-5, |t, v| {
            let a = t.tanh(v[0])?;
            let a = t.scale(a, 1.7)?;
            let a = t.tanh(a)?;
            t.sum(a)
        })
        .unwrap();
        assert!(chain < 1e-5, "{chain}");

        let constant = grad_check(&[p], 1e-5, |t, _| Ok(t.constant(Tensor::scalar(4.0)))).unwrap();
        assert_eq!(constant, 0.0);
    }

    #[test]
    fn grad_check_rejects_bad_epsilon() {
        let p = Tensor::scalar(1.0);
        assert!(grad_check(std::slice::from_ref(&p), 0.0, |t, v| t.sum(v[0])).is_err());
        assert!(grad_check(&[p], 0.1, |t, v| t.sum(v[0])).is_err());
    }

    #[test]
    fn broadcast_ops_gradients() {
        let a = random(&[3, 4], 21);
        let row = random(&[1, 4], 22);
        let col = random(&[3, 1], 23).map(|v| v.abs() + 0.5);
        let err = grad_check(&[a, row, col], 1e-5, |t, v| {
            let x = t.add(v[0], v[1])?;
            let x = t.mul(x, v[2])?;
            let x = t.div(x, v[2])?;
            let x = t.mul(x, v[2])?;
            let x = t.sub(x, v[1])?;
            let x = t.leaky_relu(x, 0.2)?;
            let x = t.square(x)?;
            t.mean(x)
        })
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn reduction_and_row_ops_gradients() {
        let a = random(&[4, 3], 31);
        let err = grad_check(&[a], 1e-5, |t, v| {
            let n = t.row_norm(v[0])?;
            let u = t.div(v[0], n)?;
            let ut = t.transpose(u)?;
            let gram = t.matmul(u, ut)?;
            let sm = t.softmax_rows(gram)?;
            let lse = t.logsumexp_rows(sm)?;
            let m = t.mean_rows(v[0])?;
            let m = t.exp(m)?;
            let s = t.sum_cols(m)?;
            let r = t.reshape(lse, 1, 4)?;
            let r = t.sum(r)?;
            let p = t.pick(v[0], &[0, 2, 1, 1])?;
            let p = t.sum(p)?;
            let total = t.add(r, s)?;
            let total = t.add(total, p)?;
            let z = t.constant(Tensor::zeros(&[4, 1]));
            let cat = t.concat_cols(v[0], z)?;
            let cat = t.logsumexp_rows(cat)?;
            let cat = t.ln(cat)?;
            let cat = t.sum(cat)?;
            let total = t.add(total, cat)?;
            t.offset(total, 1.0)
        })
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn backward_is_deterministic() {
        let mut tape = Tape::new();
        let w = tape.param(random(&[4, 3], 41));
        let x = tape.constant(random(&[5, 4], 42));
        let h = tape.matmul(x, w).unwrap();
        let h = tape.tanh(h).unwrap();
        let s = tape.mean(h).unwrap();
        let a = tape.backward(s).unwrap();
        let b = tape.backward(s).unwrap();
        assert_eq!(a.get(w).unwrap().values(), b.get(w).unwrap().values());

        let mut acc = Gradients::default();
        tape.backward_into(s, &mut acc).unwrap();
        tape.backward_into(s, &mut acc).unwrap();
        for (x, y) in acc.get(w).unwrap().values().iter().zip(a.get(w).unwrap().values()) {
            assert_eq!(*x, 2.0 * y);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(random(&[2, 2], 5));
        let p = tape.param(random(&[2, 2], 6));
        let m = tape.mul(c, p).unwrap();
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().values(), tape.value(c).values());
    }
}
