//! Define-by-run computation graph with reverse-mode gradients.
//!
//! A [`Graph`] is built by pushing primitive operations; forward values are
//! computed eagerly at push time, so node indices are in topological order by
//! construction. Graphs are rebuilt per forward pass and never mutated after
//! building, which keeps gradient evaluation pure and deterministic.

use crate::conv;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node inside one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sum(NodeId),
    SqNorm(NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Computation graph over [`Tensor`] values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "node {} does not belong to this graph (len {})",
                id.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    /// Inserts an input node holding `value`.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check_id(a)?;
        let value = self.value(a).scale(c);
        Ok(self.push(Op::Scale(a, c), value))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        let value = self.value(a).map(|v| v.max(0.0));
        Ok(self.push(Op::Relu(a), value))
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        let value = Tensor::scalar(self.value(a).sum());
        Ok(self.push(Op::Sum(a), value))
    }

    /// Scalar squared L2 norm.
    pub fn sq_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        let value = Tensor::scalar(self.value(a).sq_norm());
        Ok(self.push(Op::SqNorm(a), value))
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        self.check_id(input)?;
        self.check_id(kernel)?;
        if let Some(b) = bias {
            self.check_id(b)?;
        }
        let value = conv::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
        )?;
        Ok(self.push(Op::Conv2d { input, kernel, bias }, value))
    }

    /// Reverse-mode gradient of the scalar `output` with respect to each
    /// requested leaf. Leaves the graph never touched by `output` get a zero
    /// gradient of their own shape.
    pub fn grad(&self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        self.check_id(output)?;
        let out_val = self.value(output);
        if !out_val.is_scalar() {
            return Err(Error::NotScalarOutput { len: out_val.len() });
        }
        for &id in wrt {
            self.check_id(id)?;
            if !self.is_leaf(id) {
                return Err(Error::NotALeaf { node: id.0 });
            }
        }

        let mut adjoint: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoint[output.0] = Some(Tensor::scalar(1.0));

        // Node indices are topologically ordered, so a single reverse sweep
        // visits every node after all of its consumers.
        for idx in (0..=output.0).rev() {
            let g = match adjoint[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    adjoint[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adjoint, *a, &g)?;
                    accumulate(&mut adjoint, *b, &g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoint, *a, &g)?;
                    accumulate(&mut adjoint, *b, &g.scale(-1.0))?;
                }
                Op::Scale(a, c) => {
                    accumulate(&mut adjoint, *a, &g.scale(*c))?;
                }
                Op::Relu(a) => {
                    // Subgradient 0 at the kink: only strictly positive
                    // inputs pass the adjoint through.
                    let src = self.value(*a);
                    let masked = Tensor::new(
                        src.shape().to_vec(),
                        src.data()
                            .iter()
                            .zip(g.data())
                            .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                            .collect(),
                    )?;
                    accumulate(&mut adjoint, *a, &masked)?;
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut adjoint, *a, &Tensor::full(&shape, g.item()))?;
                }
                Op::SqNorm(a) => {
                    let contrib = self.value(*a).scale(2.0 * g.item());
                    accumulate(&mut adjoint, *a, &contrib)?;
                }
                Op::Conv2d { input, kernel, bias } => {
                    let din = conv::conv2d_grad_input(&g, self.value(*kernel))?;
                    accumulate(&mut adjoint, *input, &din)?;
                    let k = self.value(*kernel).shape()[2];
                    let dk = conv::conv2d_grad_kernel(&g, self.value(*input), k)?;
                    accumulate(&mut adjoint, *kernel, &dk)?;
                    if let Some(b) = bias {
                        let db = conv::conv2d_grad_bias(&g)?;
                        accumulate(&mut adjoint, *b, &db)?;
                    }
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|&id| match adjoint[id.0].take() {
                Some(t) => t,
                None => Tensor::zeros(self.value(id).shape()),
            })
            .collect())
    }

    /// Re-runs the forward pass with some leaf values replaced, returning the
    /// recomputed value of `output`. The graph itself is left untouched.
    pub fn eval_with(&self, output: NodeId, overrides: &[(NodeId, &Tensor)]) -> Result<Tensor> {
        self.check_id(output)?;
        for &(id, t) in overrides {
            self.check_id(id)?;
            if !self.is_leaf(id) {
                return Err(Error::NotALeaf { node: id.0 });
            }
            if t.shape() != self.value(id).shape() {
                return Err(Error::ShapeMismatch {
                    op: "eval_with override",
                    lhs: self.value(id).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(output.0 + 1);
        for idx in 0..=output.0 {
            let v = match &self.nodes[idx].op {
                Op::Leaf => overrides
                    .iter()
                    .find(|(id, _)| id.0 == idx)
                    .map(|(_, t)| (*t).clone())
                    .unwrap_or_else(|| self.nodes[idx].value.clone()),
                Op::Add(a, b) => values[a.0].add(&values[b.0])?,
                Op::Sub(a, b) => values[a.0].sub(&values[b.0])?,
                Op::Scale(a, c) => values[a.0].scale(*c),
                Op::Relu(a) => values[a.0].map(|v| v.max(0.0)),
                Op::Sum(a) => Tensor::scalar(values[a.0].sum()),
                Op::SqNorm(a) => Tensor::scalar(values[a.0].sq_norm()),
                Op::Conv2d { input, kernel, bias } => conv::conv2d(
                    &values[input.0],
                    &values[kernel.0],
                    bias.map(|b| &values[b.0]),
                )?,
            };
            values.push(v);
        }
        Ok(values.pop().expect("output evaluated"))
    }
}

fn accumulate(adjoint: &mut [Option<Tensor>], id: NodeId, contrib: &Tensor) -> Result<()> {
    adjoint[id.0] = Some(match adjoint[id.0].take() {
        Some(existing) => existing.add(contrib)?,
        None => contrib.clone(),
    });
    Ok(())
}

/// Compares the analytic gradient of `output` w.r.t. `leaf` against central
/// finite differences, returning the worst element-wise error
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn gradcheck(graph: &Graph, output: NodeId, leaf: NodeId, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gradcheck eps must be positive, got {eps}"
        )));
    }
    let analytic = graph.grad(output, &[leaf])?.remove(0);
    let base = graph.value(leaf).clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus.data_mut()[i] += eps;
        let mut minus = base.clone();
        minus.data_mut()[i] -= eps;
        let f_plus = graph.eval_with(output, &[(leaf, &plus)])?.item();
        let f_minus = graph.eval_with(output, &[(leaf, &minus)])?.item();
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Default step for [`gradcheck`].
pub const GRADCHECK_EPS: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn sq_norm_grad_is_2z() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let out = g.sq_norm(z).unwrap();
        assert_eq!(g.value(out).item(), 1.0 + 4.0 + 0.25);
        let grads = g.grad(out, &[z]).unwrap();
        assert_eq!(grads[0].data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = g.relu(z).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let out = g.sum(r).unwrap();
        let grads = g.grad(out, &[z]).unwrap();
        // Subgradient at 0 is defined as 0.
        assert_eq!(grads[0].data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::zeros(&[4]));
        let r = g.relu(z).unwrap();
        assert!(matches!(
            g.grad(r, &[z]),
            Err(Error::NotScalarOutput { len: 4 })
        ));
    }

    #[test]
    fn interior_node_not_a_leaf() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::zeros(&[2]));
        let r = g.relu(z).unwrap();
        let out = g.sum(r).unwrap();
        assert!(matches!(g.grad(out, &[r]), Err(Error::NotALeaf { .. })));
    }

    #[test]
    fn constant_graph_has_zero_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let unused = g.leaf(Tensor::zeros(&[3]));
        let out = g.sq_norm(a).unwrap();
        let grads = g.grad(out, &[unused]).unwrap();
        assert!(grads[0].data().iter().all(|&v| v == 0.0));
        let err = gradcheck(&g, out, unused, GRADCHECK_EPS).unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn gradcheck_exact_for_quadratic() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let out = g.sq_norm(z).unwrap();
        let err = gradcheck(&g, out, z, GRADCHECK_EPS).unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn gradcheck_two_layer_conv_net() {
        let mut rng = Rng::seed(11);
        let mut g = Graph::new();
        let x = g.leaf(random_tensor(&[1, 6, 6], &mut rng));
        let k1 = g.leaf(random_tensor(&[4, 1, 3, 3], &mut rng));
        let b1 = g.leaf(random_tensor(&[4], &mut rng));
        let k2 = g.leaf(random_tensor(&[1, 4, 3, 3], &mut rng));
        let b2 = g.leaf(random_tensor(&[1], &mut rng));
        let h = g.conv2d(x, k1, Some(b1)).unwrap();
        let h = g.relu(h).unwrap();
        let h = g.conv2d(h, k2, Some(b2)).unwrap();
        let out = g.sq_norm(h).unwrap();
        for leaf in [x, k1, b1, k2, b2] {
            let err = gradcheck(&g, out, leaf, GRADCHECK_EPS).unwrap();
            assert!(err < 1e-5, "leaf {leaf:?} err {err}");
        }
    }

    #[test]
    fn grad_is_linear_in_the_loss() {
        // grad(a*L1 + b*L2) == a*grad(L1) + b*grad(L2) element-wise.
        let mut rng = Rng::seed(13);
        for _ in 0..20 {
            let mut g = Graph::new();
            let z = g.leaf(random_tensor(&[5], &mut rng));
            let w = g.leaf(random_tensor(&[5], &mut rng));
            let r = g.relu(z).unwrap();
            let d = g.sub(r, w).unwrap();
            let l1 = g.sq_norm(d).unwrap();
            let s = g.add(z, w).unwrap();
            let l2 = g.sum(s).unwrap();
            let (a, b) = (rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0));
            let sa = g.scale(l1, a).unwrap();
            let sb = g.scale(l2, b).unwrap();
            let combined = g.add(sa, sb).unwrap();

            let g1 = g.grad(l1, &[z]).unwrap().remove(0);
            let g2 = g.grad(l2, &[z]).unwrap().remove(0);
            let gc = g.grad(combined, &[z]).unwrap().remove(0);
            let expect = g1.scale(a).add(&g2.scale(b)).unwrap();
            for (u, v) in gc.data().iter().zip(expect.data()) {
                assert!((u - v).abs() < 1e-12, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn eval_with_override_changes_output() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let out = g.sq_norm(z).unwrap();
        assert_eq!(g.value(out).item(), 25.0);
        let repl = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let v = g.eval_with(out, &[(z, &repl)]).unwrap();
        assert_eq!(v.item(), 1.0);
        // Graph itself is untouched.
        assert_eq!(g.value(out).item(), 25.0);
    }
}
