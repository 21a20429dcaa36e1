//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Backward
//! rules are themselves written with graph operations, so
//! [`Graph::grad`] with `create_graph = true` yields gradients that can be
//! differentiated again (needed by the critic's gradient penalty). With
//! `create_graph = false` each rule runs on a throwaway scratch graph and
//! intermediate gradients are freed as soon as they have been propagated.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::ops;
use std::rc::Rc;

use crate::tensor::{self, ConvGeometry, Tensor};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulConst(usize, Rc<Tensor>),
    Recip(usize),
    RecipSafe(usize),
    Sqrt(usize),
    Ln(usize),
    Sigmoid(usize),
    SumAll(usize),
    BroadcastScalar(usize),
    SumPerSample(usize),
    BroadcastPerSample(usize),
    ChannelSum(usize),
    ChannelBroadcast(usize),
    Conv(usize, usize, ConvGeometry),
    ConvInputGrad(usize, usize, ConvGeometry),
    ConvWeightGrad(usize, usize, ConvGeometry),
    PixelShuffle(usize, usize),
    PixelUnshuffle(usize, usize),
    Reshape(usize),
    MatMul(usize, usize),
    Transpose(usize),
    /// Elementwise op whose derivative is a fixed per-element factor.
    LocalLinear(usize, Rc<Tensor>),
    StraightThrough(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Conv(a, b, _) | ConvInputGrad(a, b, _)
            | ConvWeightGrad(a, b, _) | MatMul(a, b) => vec![a, b],
            Neg(a) | Scale(a, _) | AddScalar(a) | MulConst(a, _) | Recip(a) | RecipSafe(a) | Sqrt(a)
            | Ln(a) | Sigmoid(a) | SumAll(a) | BroadcastScalar(a) | SumPerSample(a)
            | BroadcastPerSample(a) | ChannelSum(a) | ChannelBroadcast(a)
            | PixelShuffle(a, _) | PixelUnshuffle(a, _) | Reshape(a) | Transpose(a)
            | LocalLinear(a, _) | StraightThrough(a) => vec![a],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// An append-only computation record.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.nodes.borrow().len())
    }
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push_shared(&self, value: Rc<Tensor>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that gradients never flow into.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn value_rc(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn unary(&self, a: usize, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.tracked(a);
        self.push(value, op, rg)
    }

    fn binary(&self, a: usize, b: usize, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.tracked(a) || self.tracked(b);
        self.push(value, op, rg)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Entries are `None` when `output` does not depend on that variable.
    /// With `create_graph` the returned gradients are recorded in this graph
    /// and may be differentiated again.
    pub fn grad<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>], create_graph: bool) -> Vec<Option<Var<'g>>> {
        assert!(std::ptr::eq(output.graph, self), "output belongs to another graph");
        assert_eq!(output.value().len(), 1, "grad() needs a scalar output");
        if create_graph {
            self.grad_recorded(output, wrt)
        } else {
            self.grad_detached(output, wrt)
                .into_iter()
                .map(|t| t.map(|t| self.constant(t)))
                .collect()
        }
    }

    /// Like [`Graph::grad`] without recording, returning plain tensors.
    pub fn grad_tensors<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>]) -> Vec<Option<Tensor>> {
        assert_eq!(output.value().len(), 1, "grad() needs a scalar output");
        self.grad_detached(output, wrt)
    }

    fn grad_recorded<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>]) -> Vec<Option<Var<'g>>> {
        let n = output.id + 1;
        let mut grads: Vec<Option<Var<'g>>> = vec![None; n];
        let seed = Tensor::full(&output.shape(), 1.0);
        grads[output.id] = Some(self.constant(seed));
        for id in (0..n).rev() {
            let Some(g) = grads[id] else { continue };
            let (op, tracked) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].requires_grad)
            };
            if !tracked {
                continue;
            }
            let inputs = op.inputs();
            let need: Vec<bool> = inputs.iter().map(|&i| self.tracked(i)).collect();
            let vars: Vec<Var<'g>> = inputs.iter().map(|&i| Var { graph: self, id: i }).collect();
            let out = Var { graph: self, id };
            let contribs = backward_rule(&op, &vars, out, g, &need);
            for ((&i, c), need) in inputs.iter().zip(contribs).zip(need) {
                if let (Some(c), true) = (c, need) {
                    grads[i] = Some(match grads[i] {
                        Some(prev) => prev + c,
                        None => c,
                    });
                }
            }
        }
        wrt.iter().map(|v| grads.get(v.id).copied().flatten()).collect()
    }

    fn grad_detached(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Vec<Option<Tensor>> {
        let n = output.id + 1;
        let mut keep = vec![false; n];
        for v in wrt {
            if v.id < n {
                keep[v.id] = true;
            }
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let mut results: Vec<Option<Tensor>> = vec![None; n];
        grads[output.id] = Some(Tensor::full(output.value().shape(), 1.0));
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let (op, tracked) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].requires_grad)
            };
            if keep[id] {
                results[id] = Some(g.clone());
            }
            if !tracked || matches!(op, Op::Leaf) {
                continue;
            }
            let inputs = op.inputs();
            let need: Vec<bool> = inputs.iter().map(|&i| self.tracked(i)).collect();
            let scratch = Graph::new();
            let vars: Vec<Var<'_>> = inputs.iter().map(|&i| scratch.push_shared(self.value_rc(i))).collect();
            let out = scratch.push_shared(self.value_rc(id));
            let gv = scratch.constant(g);
            let contribs = backward_rule(&op, &vars, out, gv, &need);
            for ((&i, c), need) in inputs.iter().zip(contribs).zip(need) {
                if let (Some(c), true) = (c, need) {
                    let c = c.value().clone();
                    grads[i] = Some(match grads[i].take() {
                        Some(prev) => prev.zip_map(&c, |a, b| a + b),
                        None => c,
                    });
                }
            }
        }
        wrt.iter().map(|v| results.get(v.id).cloned().flatten()).collect()
    }
}

/// Vector-Jacobian products for one recorded op, expressed as graph ops on
/// whichever graph `out`/`g` live in.
fn backward_rule<'g>(op: &Op, x: &[Var<'g>], out: Var<'g>, g: Var<'g>, need: &[bool]) -> Vec<Option<Var<'g>>> {
    use Op::*;
    let one = |v: Var<'g>| vec![Some(v)];
    match op {
        Leaf => vec![],
        Add(..) => vec![Some(g), Some(g)],
        Sub(..) => vec![Some(g), need[1].then(|| -g)],
        Mul(..) => vec![need[0].then(|| g * x[1]), need[1].then(|| g * x[0])],
        Neg(_) => one(-g),
        Scale(_, c) => one(g.scale(*c)),
        AddScalar(_) => one(g),
        MulConst(_, m) => one(g.mul_const(Rc::clone(m))),
        Recip(_) => one(-(g * out * out)),
        RecipSafe(_) => one(-(g * out * out)),
        Sqrt(_) => one(g * out.recip_safe().scale(0.5)),
        Ln(_) => one(g * x[0].recip()),
        Sigmoid(_) => one(g * (out * (-out).add_scalar(1.0))),
        SumAll(_) => one(g.broadcast_scalar(&x[0].shape())),
        BroadcastScalar(..) => one(g.sum_all()),
        SumPerSample(_) => one(g.broadcast_per_sample(x[0].shape().as_slice())),
        BroadcastPerSample(..) => one(g.sum_per_sample()),
        ChannelSum(_) => one(g.channel_broadcast(x[0].shape().as_slice())),
        ChannelBroadcast(..) => one(g.channel_sum()),
        Conv(_, _, geo) => {
            let s = x[0].shape();
            vec![
                need[0].then(|| g.conv2d_input_grad(x[1], *geo, (s[2], s[3]))),
                need[1].then(|| x[0].conv2d_weight_grad(g, *geo)),
            ]
        }
        ConvInputGrad(_, _, geo) => vec![
            need[0].then(|| g.conv2d(x[1], *geo)),
            need[1].then(|| g.conv2d_weight_grad(x[0], *geo)),
        ],
        ConvWeightGrad(_, _, geo) => {
            let s = x[0].shape();
            vec![
                need[0].then(|| x[1].conv2d_input_grad(g, *geo, (s[2], s[3]))),
                need[1].then(|| x[0].conv2d(g, *geo)),
            ]
        }
        PixelShuffle(_, r) => one(g.pixel_unshuffle(*r)),
        PixelUnshuffle(_, r) => one(g.pixel_shuffle(*r)),
        Reshape(_) => one(g.reshape(&x[0].shape())),
        MatMul(..) => vec![
            need[0].then(|| g.matmul(x[1].transpose())),
            need[1].then(|| x[0].transpose().matmul(g)),
        ],
        Transpose(_) => one(g.transpose()),
        LocalLinear(_, d) => one(g.mul_const(Rc::clone(d))),
        StraightThrough(_) => one(g),
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| n[self.id].value.as_ref())
    }

    /// A shared handle to the value, independent of the graph borrow.
    pub fn tensor(&self) -> Rc<Tensor> {
        self.graph.value_rc(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.tracked(self.id)
    }

    /// Same value, cut off from gradient flow.
    pub fn detach(&self) -> Var<'g> {
        self.graph.push_shared(self.tensor())
    }

    fn map_unary(self, f: impl Fn(&Tensor) -> Tensor, op: Op) -> Var<'g> {
        let v = f(&self.value());
        self.graph.unary(self.id, v, op)
    }

    fn map_binary(self, other: Var<'g>, f: impl Fn(&Tensor, &Tensor) -> Tensor, op: Op) -> Var<'g> {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
        let v = f(&self.value(), &other.value());
        self.graph.binary(self.id, other.id, v, op)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.map_unary(|t| t.map(|v| v * c), Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.map_unary(|t| t.map(|v| v + c), Op::AddScalar(self.id))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(self, m: Rc<Tensor>) -> Var<'g> {
        let v = self.value().zip_map(&m, |a, b| a * b);
        self.graph.unary(self.id, v, Op::MulConst(self.id, m))
    }

    pub fn recip(self) -> Var<'g> {
        self.map_unary(|t| t.map(|v| 1.0 / v), Op::Recip(self.id))
    }

    /// `1/x`, defined as 0 where `x == 0`.
    pub fn recip_safe(self) -> Var<'g> {
        self.map_unary(|t| t.map(|v| if v == 0.0 { 0.0 } else { 1.0 / v }), Op::RecipSafe(self.id))
    }

    /// Square root whose derivative is taken as 0 at the origin.
    pub fn sqrt(self) -> Var<'g> {
        self.map_unary(|t| t.map(f64::sqrt), Op::Sqrt(self.id))
    }

    pub fn ln(self) -> Var<'g> {
        self.map_unary(|t| t.map(f64::ln), Op::Ln(self.id))
    }

    pub fn square(self) -> Var<'g> {
        self * self
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.map_unary(|t| t.map(sigmoid), Op::Sigmoid(self.id))
    }

    pub fn sum_all(self) -> Var<'g> {
        self.map_unary(|t| Tensor::scalar(t.sum()), Op::SumAll(self.id))
    }

    pub fn mean_all(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    pub fn broadcast_scalar(self, shape: &[usize]) -> Var<'g> {
        self.map_unary(
            |t| Tensor::full(shape, t.item()),
            Op::BroadcastScalar(self.id),
        )
    }

    pub fn sum_per_sample(self) -> Var<'g> {
        self.map_unary(Tensor::sum_per_sample, Op::SumPerSample(self.id))
    }

    pub fn broadcast_per_sample(self, shape: &[usize]) -> Var<'g> {
        self.map_unary(
            |t| t.broadcast_per_sample(shape),
            Op::BroadcastPerSample(self.id),
        )
    }

    pub fn channel_sum(self) -> Var<'g> {
        self.map_unary(Tensor::channel_sum, Op::ChannelSum(self.id))
    }

    pub fn channel_broadcast(self, shape: &[usize]) -> Var<'g> {
        self.map_unary(
            |t| t.channel_broadcast(shape),
            Op::ChannelBroadcast(self.id),
        )
    }

    /// Adds a per-channel bias (axis 1).
    pub fn add_channel_bias(self, bias: Var<'g>) -> Var<'g> {
        let shape = self.shape();
        self + bias.channel_broadcast(&shape)
    }

    pub fn conv2d(self, w: Var<'g>, geo: ConvGeometry) -> Var<'g> {
        self.map_binary(w, |x, w| tensor::conv2d(x, w, geo), Op::Conv(self.id, w.id, geo))
    }

    pub fn conv2d_input_grad(self, w: Var<'g>, geo: ConvGeometry, input_hw: (usize, usize)) -> Var<'g> {
        self.map_binary(
            w,
            |g, w| tensor::conv2d_input_grad(g, w, geo, input_hw),
            Op::ConvInputGrad(self.id, w.id, geo),
        )
    }

    pub fn conv2d_weight_grad(self, gy: Var<'g>, geo: ConvGeometry) -> Var<'g> {
        self.map_binary(
            gy,
            |x, g| tensor::conv2d_weight_grad(x, g, geo),
            Op::ConvWeightGrad(self.id, gy.id, geo),
        )
    }

    pub fn pixel_shuffle(self, r: usize) -> Var<'g> {
        self.map_unary(|t| tensor::pixel_shuffle(t, r), Op::PixelShuffle(self.id, r))
    }

    pub fn pixel_unshuffle(self, r: usize) -> Var<'g> {
        self.map_unary(|t| tensor::pixel_unshuffle(t, r), Op::PixelUnshuffle(self.id, r))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        self.map_unary(|t| t.clone().reshape(shape), Op::Reshape(self.id))
    }

    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        self.map_binary(other, Tensor::matmul, Op::MatMul(self.id, other.id))
    }

    pub fn transpose(self) -> Var<'g> {
        self.map_unary(Tensor::transpose2d, Op::Transpose(self.id))
    }

    /// Records `value` as a function of `self` whose local derivative is the
    /// constant elementwise factor `derivative`.
    pub fn local_linear(self, value: Tensor, derivative: Rc<Tensor>) -> Var<'g> {
        assert_eq!(value.shape(), derivative.shape());
        self.graph.unary(self.id, value, Op::LocalLinear(self.id, derivative))
    }

    /// Records `value` in place of `self` in the forward pass while passing
    /// gradients through unchanged.
    pub fn straight_through(self, value: Tensor) -> Var<'g> {
        assert_eq!(value.shape(), self.value().shape());
        self.graph.unary(self.id, value, Op::StraightThrough(self.id))
    }

    /// `max(x, 0) + slope·min(x, 0)` with a fixed slope.
    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        let mask = self.value().map(|v| if v > 0.0 { 1.0 } else { slope });
        self.mul_const(Rc::new(mask))
    }

    /// Parametric rectifier with a learnable negative slope per channel.
    pub fn prelu(self, slopes: Var<'g>) -> Var<'g> {
        let (pos, neg) = {
            let v = self.value();
            (
                v.map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
                v.map(|x| if x > 0.0 { 0.0 } else { 1.0 }),
            )
        };
        let shape = self.shape();
        let negative = self.mul_const(Rc::new(neg));
        self.mul_const(Rc::new(pos)) + slopes.channel_broadcast(&shape) * negative
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl<'g> ops::Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: Var<'g>) -> Var<'g> {
        self.map_binary(rhs, |a, b| a.zip_map(b, |x, y| x + y), Op::Add(self.id, rhs.id))
    }
}

impl<'g> ops::Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: Var<'g>) -> Var<'g> {
        self.map_binary(rhs, |a, b| a.zip_map(b, |x, y| x - y), Op::Sub(self.id, rhs.id))
    }
}

impl<'g> ops::Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: Var<'g>) -> Var<'g> {
        self.map_binary(rhs, |a, b| a.zip_map(b, |x, y| x * y), Op::Mul(self.id, rhs.id))
    }
}

impl<'g> ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.map_unary(|t| t.map(|v| -v), Op::Neg(self.id))
    }
}
