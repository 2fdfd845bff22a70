//! Reverse-mode differentiation over a per-example tape.
//!
//! A [`Graph`] borrows the parameter set read-only; parameters enter the tape
//! through `lookup` and `affine`, and their gradients land in a [`Gradients`]
//! buffer when [`Graph::backward`] runs. One graph per example keeps the
//! batch gradient embarrassingly parallel.

use super::params::{Gradients, ParamId, ParameterSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Precomputed local gradient of a scalar node with respect to its inputs.
#[derive(Debug)]
pub struct LocalGrad {
    pub inputs: Vec<(Var, Vec<f64>)>,
    pub params: Vec<(ParamId, Vec<f64>)>,
}

#[derive(Debug)]
enum Op {
    Constant,
    Lookup { param: ParamId, row: usize },
    Affine { w: ParamId, b: Option<ParamId>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    MaxPool { inputs: Vec<Var>, argmax: Vec<usize> },
    SumScalars(Vec<Var>),
    Scalar(Box<LocalGrad>),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![0.0; n])
    }

    /// One row of a 2-D parameter (embedding lookup). A 1-D parameter is a single row.
    pub fn lookup(&mut self, param: ParamId, row: usize) -> Var {
        let t = self.params.get(param);
        let value = t.row(row).to_vec();
        self.push(value, Op::Lookup { param, row })
    }

    /// `w · x + b` with `w` of shape `[out, in]`.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Result<Var> {
        let wt = self.params.get(w);
        let (rows, cols) = (wt.rows(), wt.cols());
        let xv = &self.nodes[x.0].value;
        if xv.len() != cols {
            return Err(Error::config(format!(
                "affine {}: input dim {} but weight expects {cols}",
                self.params.name(w),
                xv.len()
            )));
        }
        let wd = wt.data();
        let mut out: Vec<f64> = match b {
            Some(b) => {
                let bv = self.params.value(b);
                if bv.len() != rows {
                    return Err(Error::config(format!(
                        "affine bias {} has dim {} but output is {rows}",
                        self.params.name(b),
                        bv.len()
                    )));
                }
                bv.to_vec()
            }
            None => vec![0.0; rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let wr = &wd[r * cols..(r + 1) * cols];
            *o += wr.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.push(out, Op::Affine { w, b, x }))
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if la != lb {
            return Err(Error::config(format!("{what}: operand lengths {la} and {lb} differ")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let v = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let v = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let v = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|&x| x.max(0.0)).collect();
        self.push(v, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(v, Op::Scale(a, c))
    }

    /// Elementwise product with a constant vector (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.nodes[a.0].value.len() {
            return Err(Error::config("mask length differs from operand"));
        }
        let v = zip_map(&self.nodes[a.0].value, &mask, |x, m| x * m);
        Ok(self.push(v, Op::MulConst(a, mask)))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let n = parts.iter().map(|p| self.nodes[p.0].value.len()).sum();
        let mut v = Vec::with_capacity(n);
        for p in parts {
            v.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start })
    }

    /// Elementwise maximum over equally sized vectors. Ties go to the earliest input.
    pub fn max_pool(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::input("max_pool over an empty sequence"))?;
        let n = self.nodes[first.0].value.len();
        let mut best = self.nodes[first.0].value.clone();
        let mut argmax = vec![0usize; n];
        for (k, v) in inputs.iter().enumerate().skip(1) {
            let vals = &self.nodes[v.0].value;
            if vals.len() != n {
                return Err(Error::config("max_pool operands differ in length"));
            }
            for i in 0..n {
                if vals[i] > best[i] {
                    best[i] = vals[i];
                    argmax[i] = k;
                }
            }
        }
        Ok(self.push(
            best,
            Op::MaxPool {
                inputs: inputs.to_vec(),
                argmax,
            },
        ))
    }

    /// Sum of scalar nodes. An empty list yields zero.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Var {
        let s = terms.iter().map(|t| self.nodes[t.0].value[0]).sum();
        self.push(vec![s], Op::SumScalars(terms.to_vec()))
    }

    /// A scalar node whose derivative with respect to its inputs was computed
    /// in closed form by the caller (cross-entropy, CRF likelihood).
    pub fn custom_scalar(&mut self, value: f64, grad: LocalGrad) -> Var {
        self.push(vec![value], Op::Scalar(Box::new(grad)))
    }

    /// Back-propagate from a scalar root, accumulating parameter gradients into `grads`.
    pub fn backward(&self, root: Var, grads: &mut Gradients) {
        self.backward_scaled(root, 1.0, grads)
    }

    pub fn backward_scaled(&self, root: Var, seed: f64, grads: &mut Gradients) {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward needs a scalar root");
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); root.0 + 1];
        adj[root.0] = vec![seed];
        for i in (0..=root.0).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Lookup { param, row } => {
                    let t = self.params.get(*param);
                    let c = t.cols();
                    let slot = grads.slot_mut(*param, t.len());
                    slot[row * c..(row + 1) * c]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, s)| *d += s);
                }
                Op::Affine { w, b, x } => {
                    let wt = self.params.get(*w);
                    let cols = wt.cols();
                    let xv = &self.nodes[x.0].value;
                    {
                        let dw = grads.slot_mut(*w, wt.len());
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                dw[r * cols..(r + 1) * cols]
                                    .iter_mut()
                                    .zip(xv)
                                    .for_each(|(d, xi)| *d += gr * xi);
                            }
                        }
                    }
                    if let Some(b) = b {
                        let db = grads.slot_mut(*b, g.len());
                        db.iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                    }
                    let dx = ensure(&mut adj, *x, cols);
                    let wd = wt.data();
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            dx.iter_mut()
                                .zip(&wd[r * cols..(r + 1) * cols])
                                .for_each(|(d, wi)| *d += gr * wi);
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g, |_, gi| gi);
                    accumulate(&mut adj, *b, &g, |_, gi| gi);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, &g, |_, gi| gi);
                    accumulate(&mut adj, *b, &g, |_, gi| -gi);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut adj, *a, &g, |k, gi| gi * bv[k]);
                    accumulate(&mut adj, *b, &g, |k, gi| gi * av[k]);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    accumulate(&mut adj, *a, &g, |k, gi| gi * y[k] * (1.0 - y[k]));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    accumulate(&mut adj, *a, &g, |k, gi| gi * (1.0 - y[k] * y[k]));
                }
                Op::Relu(a) => {
                    let xv = &self.nodes[a.0].value;
                    accumulate(&mut adj, *a, &g, |k, gi| if xv[k] > 0.0 { gi } else { 0.0 });
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, &g, |_, gi| gi * c),
                Op::MulConst(a, m) => accumulate(&mut adj, *a, &g, |k, gi| gi * m[k]),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        accumulate(&mut adj, *p, &g[off..off + n], |_, gi| gi);
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.nodes[x.0].value.len();
                    let dx = ensure(&mut adj, *x, n);
                    dx[*start..start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, s)| *d += s);
                }
                Op::MaxPool { inputs, argmax } => {
                    for (k, &src) in argmax.iter().enumerate() {
                        let v = inputs[src];
                        let n = self.nodes[v.0].value.len();
                        ensure(&mut adj, v, n)[k] += g[k];
                    }
                }
                Op::SumScalars(terms) => {
                    for t in terms {
                        ensure(&mut adj, *t, 1)[0] += g[0];
                    }
                }
                Op::Scalar(local) => {
                    let s = g[0];
                    for (v, lg) in &local.inputs {
                        accumulate(&mut adj, *v, lg, |_, gi| gi * s);
                    }
                    for (p, lg) in &local.params {
                        let slot = grads.slot_mut(*p, lg.len());
                        slot.iter_mut().zip(lg).for_each(|(d, l)| *d += l * s);
                    }
                }
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn ensure(adj: &mut [Vec<f64>], v: Var, n: usize) -> &mut Vec<f64> {
    let slot = &mut adj[v.0];
    if slot.is_empty() {
        slot.resize(n, 0.0);
    }
    slot
}

fn accumulate(adj: &mut [Vec<f64>], v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
    let slot = ensure(adj, v, g.len());
    for (k, (d, &gi)) in slot.iter_mut().zip(g).enumerate() {
        *d += f(k, gi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tensor::Tensor;

    #[test]
    fn affine_forward_and_backward() {
        let mut p = ParameterSet::new();
        let w = p
            .add("w", Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap(), true)
            .unwrap();
        let b = p.add("b", Tensor::new(vec![2], vec![0.5, -0.5]).unwrap(), true).unwrap();
        let mut g = Graph::new(&p);
        let x = g.constant(vec![1.0, 0.0, -1.0]);
        let y = g.affine(w, Some(b), x).unwrap();
        assert_eq!(g.value(y), &[-1.5, -2.5]);
        let a = g.slice(y, 0, 1);
        let c = g.slice(y, 1, 1);
        let s = g.sum_scalars(&[a, c]);
        let mut grads = Gradients::for_params(&p);
        g.backward(s, &mut grads);
        assert_eq!(grads.get(w).unwrap(), &[1.0, 0.0, -1.0, 1.0, 0.0, -1.0]);
        assert_eq!(grads.get(b).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn affine_rejects_bad_dims() {
        let mut p = ParameterSet::new();
        let w = p.add("w", Tensor::zeros(&[2, 3]), true).unwrap();
        let mut g = Graph::new(&p);
        let x = g.constant(vec![1.0, 2.0]);
        assert!(matches!(g.affine(w, None, x), Err(Error::Config(_))));
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let mut p = ParameterSet::new();
        let e = p
            .add("e", Tensor::new(vec![2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap(), true)
            .unwrap();
        let mut g = Graph::new(&p);
        let a = g.lookup(e, 0);
        let b = g.lookup(e, 1);
        let m = g.max_pool(&[a, b]).unwrap();
        assert_eq!(g.value(m), &[3.0, 5.0]);
        let s0 = g.slice(m, 0, 1);
        let s1 = g.slice(m, 1, 1);
        let s = g.sum_scalars(&[s0, s1]);
        let mut grads = Gradients::for_params(&p);
        g.backward(s, &mut grads);
        assert_eq!(grads.get(e).unwrap(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
