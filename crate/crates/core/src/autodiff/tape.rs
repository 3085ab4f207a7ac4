use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::conv::{self, ConvGeometry, Plan};
use super::Tensor;
use crate::error::{Error, Result};

type Derivative = Rc<dyn Fn(f64) -> f64>;

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ScalarMul(usize, f64),
    AddScalar(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Abs(usize),
    Log(usize),
    Square(usize),
    Mean(usize),
    Sum(usize),
    Concat(usize, usize),
    Conv {
        x: usize,
        k: usize,
        b: usize,
        n: usize,
        plan: Plan,
    },
    ConvTranspose {
        y: usize,
        k: usize,
        b: usize,
        n: usize,
        plan: Plan,
    },
    Bce(usize, f64),
    Map(usize, Derivative),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution order so gradients can be replayed in
/// exact reverse order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    leaf_grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op: op.to_string() })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a leaf. Its gradient is tracked when `t.requires_grad` is set.
    pub fn leaf(&self, t: &Tensor) -> Result<Var<'_>> {
        check_finite("leaf", t.data())?;
        let value = Tensor {
            grad: None,
            ..t.clone()
        };
        let needs = t.requires_grad;
        Ok(self.push(value, Op::Leaf, needs))
    }

    /// Records a trainable leaf regardless of the tensor's own flag.
    pub fn param(&self, t: &Tensor) -> Result<Var<'_>> {
        let v = self.leaf(t)?;
        self.nodes.borrow_mut()[v.id].needs_grad = true;
        Ok(v)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, t: &Tensor) -> Result<Var<'_>> {
        let v = self.leaf(t)?;
        self.nodes.borrow_mut()[v.id].needs_grad = false;
        Ok(v)
    }

    fn unary(&self, a: Var<'_>, name: &str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'_>> {
        let (shape, data, needs) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.id];
            (
                n.value.shape().to_vec(),
                n.value.data().iter().map(|&v| f(v)).collect::<Vec<_>>(),
                n.needs_grad,
            )
        };
        check_finite(name, &data)?;
        Ok(self.push(Tensor::new(&shape, data)?, op, needs))
    }

    fn binary(
        &self,
        a: Var<'_>,
        b: Var<'_>,
        name: &str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'_>> {
        let (shape, data, needs) = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.id], &nodes[b.id]);
            let (xs, ys) = (x.value.shape(), y.value.shape());
            let needs = x.needs_grad || y.needs_grad;
            if xs == ys {
                let d: Vec<f64> = x.value.data().iter().zip(y.value.data()).map(|(&p, &q)| f(p, q)).collect();
                (xs.to_vec(), d, needs)
            } else if y.value.numel() == 1 {
                let q = y.value.data()[0];
                (xs.to_vec(), x.value.data().iter().map(|&p| f(p, q)).collect(), needs)
            } else if x.value.numel() == 1 {
                let p = x.value.data()[0];
                (ys.to_vec(), y.value.data().iter().map(|&q| f(p, q)).collect(), needs)
            } else {
                return Err(Error::Shape(format!("{name} of {xs:?} and {ys:?}")));
            }
        };
        check_finite(name, &data)?;
        Ok(self.push(Tensor::new(&shape, data)?, op, needs))
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates in reverse recording order.
    /// Leaf gradients accumulate across repeated calls.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if loss.id >= nodes.len() {
            return Err(Error::validation("loss does not belong to this tape"));
        }
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            check_finite("backward", &g)?;
            if let Op::Leaf = node.op {
                let mut lg = self.leaf_grads.borrow_mut();
                if lg.len() < nodes.len() {
                    lg.resize(nodes.len(), None);
                }
                match &mut lg[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            propagate(&nodes, node, &g, &mut grads);
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let lg = self.leaf_grads.borrow();
        let g = lg.get(v.id)?.as_ref()?;
        let shape = self.nodes.borrow()[v.id].value.shape().to_vec();
        Tensor::new(&shape, g.clone()).ok()
    }

    /// Forgets accumulated leaf gradients.
    pub fn zero_grads(&self) {
        self.leaf_grads.borrow_mut().clear();
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

/// Reduces a gradient computed at the output shape down to an operand that
/// may have been broadcast from a single element.
fn unbroadcast(g: Vec<f64>, operand_len: usize) -> Vec<f64> {
    if g.len() == operand_len {
        g
    } else {
        vec![g.iter().sum()]
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: usize| nodes[id].value.data();
    let out = node.value.data();
    let elementwise = |a: usize, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        val(a).iter().zip(g).map(|(&x, &gi)| f(x, gi)).collect()
    };
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let (la, lb) = (val(*a).len(), val(*b).len());
            accumulate(grads, nodes, *a, unbroadcast(g.to_vec(), la));
            accumulate(grads, nodes, *b, unbroadcast(g.iter().map(|v| sign * v).collect(), lb));
        }
        Op::Mul(a, b) => {
            let (xa, xb) = (val(*a), val(*b));
            let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
            if nodes[*a].needs_grad {
                let ga = g.iter().enumerate().map(|(i, gi)| gi * pick(xb, i)).collect();
                accumulate(grads, nodes, *a, unbroadcast(ga, xa.len()));
            }
            if nodes[*b].needs_grad {
                let gb = g.iter().enumerate().map(|(i, gi)| gi * pick(xa, i)).collect();
                accumulate(grads, nodes, *b, unbroadcast(gb, xb.len()));
            }
        }
        Op::ScalarMul(a, s) => {
            accumulate(grads, nodes, *a, g.iter().map(|v| v * s).collect());
        }
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::Relu(a) => {
            let d = elementwise(*a, &|x, gi| if x > 0.0 { gi } else { 0.0 });
            accumulate(grads, nodes, *a, d);
        }
        Op::LeakyRelu(a, slope) => {
            let d = elementwise(*a, &|x, gi| if x > 0.0 { gi } else { slope * gi });
            accumulate(grads, nodes, *a, d);
        }
        Op::Tanh(a) => {
            let d = out.iter().zip(g).map(|(y, gi)| gi * (1.0 - y * y)).collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::Sigmoid(a) => {
            let d = out.iter().zip(g).map(|(y, gi)| gi * y * (1.0 - y)).collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::Abs(a) => {
            let d = elementwise(*a, &|x, gi| {
                if x > 0.0 {
                    gi
                } else if x < 0.0 {
                    -gi
                } else {
                    0.0
                }
            });
            accumulate(grads, nodes, *a, d);
        }
        Op::Log(a) => accumulate(grads, nodes, *a, elementwise(*a, &|x, gi| gi / x)),
        Op::Square(a) => accumulate(grads, nodes, *a, elementwise(*a, &|x, gi| 2.0 * x * gi)),
        Op::Mean(a) => {
            let n = val(*a).len();
            accumulate(grads, nodes, *a, vec![g[0] / n as f64; n]);
        }
        Op::Sum(a) => {
            let n = val(*a).len();
            accumulate(grads, nodes, *a, vec![g[0]; n]);
        }
        Op::Concat(a, b) => {
            let (n, ca, h, w) = conv::split_batch(nodes[*a].value.shape()).expect("validated");
            let cb = nodes[*b].value.shape()[nodes[*b].value.rank() - 3];
            let plane = h * w;
            let mut ga = Vec::with_capacity(n * ca * plane);
            let mut gb = Vec::with_capacity(n * cb * plane);
            for chunk in g.chunks((ca + cb) * plane) {
                ga.extend_from_slice(&chunk[..ca * plane]);
                gb.extend_from_slice(&chunk[ca * plane..]);
            }
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *b, gb);
        }
        Op::Conv { x, k, b, n, plan } => {
            let mut dx = nodes[*x].needs_grad.then(|| vec![0.0; val(*x).len()]);
            let mut dk = nodes[*k].needs_grad.then(|| vec![0.0; val(*k).len()]);
            let mut db = nodes[*b].needs_grad.then(|| vec![0.0; val(*b).len()]);
            conv::conv_backward(
                val(*x),
                val(*k),
                g,
                *n,
                plan,
                dx.as_deref_mut(),
                dk.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (id, d) in [(*x, dx), (*k, dk), (*b, db)] {
                if let Some(d) = d {
                    accumulate(grads, nodes, id, d);
                }
            }
        }
        Op::ConvTranspose { y, k, b, n, plan } => {
            let mut dy = nodes[*y].needs_grad.then(|| vec![0.0; val(*y).len()]);
            let mut dk = nodes[*k].needs_grad.then(|| vec![0.0; val(*k).len()]);
            let mut db = nodes[*b].needs_grad.then(|| vec![0.0; val(*b).len()]);
            conv::transpose_backward(
                val(*y),
                val(*k),
                g,
                *n,
                plan,
                dy.as_deref_mut(),
                dk.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (id, d) in [(*y, dy), (*k, dk), (*b, db)] {
                if let Some(d) = d {
                    accumulate(grads, nodes, id, d);
                }
            }
        }
        Op::Bce(a, t) => {
            let z = val(*a);
            let scale = g[0] / z.len() as f64;
            let d = z.iter().map(|&zi| (stable_sigmoid(zi) - t) * scale).collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::Map(a, deriv) => {
            let d = elementwise(*a, &|x, gi| gi * deriv(x));
            accumulate(grads, nodes, *a, d);
        }
    }
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    /// Same value, cut off from the gradient path.
    pub fn detach(&self) -> Result<Var<'t>> {
        self.tape.constant(&self.value())
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(self, rhs, "add", Op::Add(self.id, rhs.id), |a, b| a + b)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(self, rhs, "sub", Op::Sub(self.id, rhs.id), |a, b| a - b)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(self, rhs, "mul", Op::Mul(self.id, rhs.id), |a, b| a * b)
    }

    pub fn scalar_mul(self, s: f64) -> Result<Var<'t>> {
        self.tape.unary(self, "scalar_mul", Op::ScalarMul(self.id, s), |a| a * s)
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>> {
        self.tape.unary(self, "add_scalar", Op::AddScalar(self.id), |a| a + s)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.tape.unary(self, "relu", Op::Relu(self.id), |a| a.max(0.0))
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        self.tape.unary(self, "leaky_relu", Op::LeakyRelu(self.id, slope), |a| {
            if a > 0.0 {
                a
            } else {
                slope * a
            }
        })
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.tape.unary(self, "tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.tape.unary(self, "sigmoid", Op::Sigmoid(self.id), stable_sigmoid)
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.tape.unary(self, "abs", Op::Abs(self.id), f64::abs)
    }

    pub fn log(self) -> Result<Var<'t>> {
        {
            let nodes = self.tape.nodes.borrow();
            if nodes[self.id].value.data().iter().any(|&v| v <= 0.0) {
                return Err(Error::validation("log of a non-positive value"));
            }
        }
        self.tape.unary(self, "log", Op::Log(self.id), f64::ln)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.tape.unary(self, "square", Op::Square(self.id), |a| a * a)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let (m, needs) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            let d = n.value.data();
            (d.iter().sum::<f64>() / d.len() as f64, n.needs_grad)
        };
        check_finite("mean", &[m])?;
        Ok(self.tape.push(Tensor::scalar(m), Op::Mean(self.id), needs))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let (s, needs) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.value.data().iter().sum::<f64>(), n.needs_grad)
        };
        check_finite("sum", &[s])?;
        Ok(self.tape.push(Tensor::scalar(s), Op::Sum(self.id), needs))
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map(
        self,
        f: impl Fn(f64) -> f64,
        derivative: impl Fn(f64) -> f64 + 'static,
    ) -> Result<Var<'t>> {
        self.tape.unary(self, "map", Op::Map(self.id, Rc::new(derivative)), f)
    }

    /// Concatenates along the channel axis of `[C,H,W]` or `[N,C,H,W]` values.
    pub fn concat_channels(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (shape, data, needs) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[rhs.id]);
            let (n, ca, h, w) = conv::split_batch(a.value.shape())?;
            let (nb, cb, hb, wb) = conv::split_batch(b.value.shape())?;
            if (n, h, w) != (nb, hb, wb) || a.value.rank() != b.value.rank() {
                return Err(Error::Shape(format!(
                    "concat of {:?} and {:?}",
                    a.value.shape(),
                    b.value.shape()
                )));
            }
            let plane = h * w;
            let mut data = Vec::with_capacity(n * (ca + cb) * plane);
            for i in 0..n {
                data.extend_from_slice(&a.value.data()[i * ca * plane..(i + 1) * ca * plane]);
                data.extend_from_slice(&b.value.data()[i * cb * plane..(i + 1) * cb * plane]);
            }
            let mut shape = a.value.shape().to_vec();
            let r = shape.len();
            shape[r - 3] = ca + cb;
            (shape, data, a.needs_grad || b.needs_grad)
        };
        Ok(self.tape.push(Tensor::new(&shape, data)?, Op::Concat(self.id, rhs.id), needs))
    }

    /// Cross-correlation with zero padding. `self` is `[C_in,H,W]` or
    /// `[N,C_in,H,W]`; `kernel` is `[C_out,C_in,kH,kW]`; `bias` is `[C_out]`.
    pub fn conv2d(self, kernel: Var<'t>, bias: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        let (value, op, needs) = {
            let nodes = self.tape.nodes.borrow();
            let (x, k, b) = (&nodes[self.id], &nodes[kernel.id], &nodes[bias.id]);
            let (n, plan) = conv::conv_plan(x.value.shape(), k.value.shape(), ConvGeometry::new(0, 0, stride, pad))?;
            if b.value.numel() != plan.c_out {
                return Err(Error::Shape(format!(
                    "bias of {} for {} output channels",
                    b.value.numel(),
                    plan.c_out
                )));
            }
            let data = conv::conv_forward(x.value.data(), k.value.data(), b.value.data(), n, &plan);
            let shape = if x.value.rank() == 3 {
                vec![plan.c_out, plan.oh, plan.ow]
            } else {
                vec![n, plan.c_out, plan.oh, plan.ow]
            };
            check_finite("conv2d", &data)?;
            (
                Tensor::new(&shape, data)?,
                Op::Conv {
                    x: self.id,
                    k: kernel.id,
                    b: bias.id,
                    n,
                    plan,
                },
                x.needs_grad || k.needs_grad || b.needs_grad,
            )
        };
        Ok(self.tape.push(value, op, needs))
    }

    /// Transposed convolution; `kernel` is `[C_in,C_out,kH,kW]` and output
    /// spatial size is `(H-1)*stride - 2*pad + kH`.
    pub fn conv2d_transpose(
        self,
        kernel: Var<'t>,
        bias: Var<'t>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t>> {
        let (value, op, needs) = {
            let nodes = self.tape.nodes.borrow();
            let (y, k, b) = (&nodes[self.id], &nodes[kernel.id], &nodes[bias.id]);
            let (n, plan) =
                conv::transpose_plan(y.value.shape(), k.value.shape(), ConvGeometry::new(0, 0, stride, pad))?;
            if b.value.numel() != plan.c_in {
                return Err(Error::Shape(format!(
                    "bias of {} for {} output channels",
                    b.value.numel(),
                    plan.c_in
                )));
            }
            let data = conv::transpose_forward(y.value.data(), k.value.data(), b.value.data(), n, &plan);
            let shape = if y.value.rank() == 3 {
                vec![plan.c_in, plan.h, plan.w]
            } else {
                vec![n, plan.c_in, plan.h, plan.w]
            };
            check_finite("conv2d_transpose", &data)?;
            (
                Tensor::new(&shape, data)?,
                Op::ConvTranspose {
                    y: self.id,
                    k: kernel.id,
                    b: bias.id,
                    n,
                    plan,
                },
                y.needs_grad || k.needs_grad || b.needs_grad,
            )
        };
        Ok(self.tape.push(value, op, needs))
    }

    /// Mean binary cross-entropy of `self` as logits against a constant
    /// target, in the overflow-free form max(z,0) - z*t + ln(1 + e^-|z|).
    pub fn bce_with_logits(self, target: f64) -> Result<Var<'t>> {
        let (loss, needs) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            let z = n.value.data();
            let total: f64 = z
                .iter()
                .map(|&zi| zi.max(0.0) - zi * target + (-zi.abs()).exp().ln_1p())
                .sum();
            (total / z.len() as f64, n.needs_grad)
        };
        check_finite("bce_with_logits", &[loss])?;
        Ok(self.tape.push(Tensor::scalar(loss), Op::Bce(self.id, target), needs))
    }

    /// Mean absolute difference.
    pub fn l1_loss(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_shape(rhs, "l1_loss")?;
        self.sub(rhs)?.abs()?.mean()
    }

    /// Mean squared difference.
    pub fn mse_loss(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_same_shape(rhs, "mse_loss")?;
        self.sub(rhs)?.square()?.mean()
    }

    fn check_same_shape(&self, rhs: Var<'t>, name: &str) -> Result<()> {
        let (a, b) = (self.shape(), rhs.shape());
        if a != b {
            return Err(Error::Shape(format!("{name} of {a:?} and {b:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor {
        Tensor::new(shape, d.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_values() {
        let tape = Tape::new();
        let z = tape.constant(&Tensor::scalar(0.0)).unwrap();
        assert_eq!(z.tanh().unwrap().item(), 0.0);
        assert_eq!(z.sigmoid().unwrap().item(), 0.5);
        let x = tape.constant(&t(&[4], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(x.mean().unwrap().item(), 2.5);
        assert_eq!(x.sum().unwrap().item(), 10.0);
    }

    #[test]
    fn mean_square_gradient() {
        let tape = Tape::new();
        let x = tape.param(&t(&[2], &[1.0, 2.0])).unwrap();
        let loss = x.square().unwrap().mean().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[2], &[1.0, 0.0])).unwrap();
        assert!(x.log().is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let tape = Tape::new();
        let a = tape.constant(&t(&[2], &[1.0, 2.0])).unwrap();
        let b = tape.constant(&t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(a.add(b), Err(Error::Shape(_))));
        assert!(a.l1_loss(b).is_err());
        let s = tape.constant(&Tensor::scalar(2.0)).unwrap();
        assert_eq!(a.mul(s).unwrap().value().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let tape = Tape::new();
        let a = tape.constant(&t(&[1], &[1e308])).unwrap();
        assert!(matches!(a.scalar_mul(10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn backward_needs_scalar_loss() {
        let tape = Tape::new();
        let a = tape.param(&t(&[2], &[1.0, 2.0])).unwrap();
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn grads_independent_and_ones() {
        let tape = Tape::new();
        let p = tape.param(&t(&[3], &[1.0, -2.0, 0.5])).unwrap();
        let q = tape.param(&t(&[3], &[0.0, 0.0, 0.0])).unwrap();
        let loss = p.sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert!(tape.grad(q).is_none());
        // repeated backward accumulates
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[2.0, 2.0, 2.0]);
        tape.zero_grads();
        assert!(tape.grad(p).is_none());
    }

    #[test]
    fn bce_examples() {
        let tape = Tape::new();
        let z0 = tape.constant(&Tensor::scalar(0.0)).unwrap();
        assert!((z0.bce_with_logits(1.0).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-15);
        let z40 = tape.constant(&Tensor::scalar(40.0)).unwrap();
        assert!(z40.bce_with_logits(1.0).unwrap().item() <= 1e-15);
        let z = tape.constant(&Tensor::scalar(1.5)).unwrap();
        // -ln(1 - sigmoid(1.5)) evaluated directly
        let direct = -(1.0 - 1.0 / (1.0 + (-1.5f64).exp())).ln();
        let got = z.bce_with_logits(0.0).unwrap().item();
        assert!((got - direct).abs() < 1e-12);
        assert!((got - 1.7014).abs() < 1e-4);
        let huge = tape.constant(&t(&[2], &[1e6, -1e6])).unwrap();
        assert!(huge.bce_with_logits(1.0).unwrap().item().is_finite());
    }

    #[test]
    fn l1_examples() {
        let tape = Tape::new();
        let a = tape.constant(&t(&[2], &[1.0, 0.0])).unwrap();
        let b = tape.constant(&t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(a.l1_loss(b).unwrap().item(), 0.5);
        assert_eq!(a.l1_loss(a).unwrap().item(), 0.0);
        let c = tape.constant(&t(&[2], &[1.5, 0.5])).unwrap();
        assert_eq!(c.l1_loss(a).unwrap().item(), 0.5);
    }

    #[test]
    fn abs_subgradient_zero_at_tie() {
        let tape = Tape::new();
        let a = tape.param(&t(&[2], &[1.0, 2.0])).unwrap();
        let b = tape.constant(&t(&[2], &[1.0, 0.0])).unwrap();
        let loss = a.l1_loss(b).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn conv_examples() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[1, 3, 3], 1.0)).unwrap();
        let k = tape.constant(&Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        let b = tape.constant(&Tensor::zeros(&[1])).unwrap();
        let y = x.conv2d(k, b, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 2]);
        assert_eq!(y.value().data(), &[4.0; 4]);

        let one = tape.constant(&Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        let img = tape.constant(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(img.conv2d(one, b, 1, 0).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(img.conv2d_transpose(one, b, 1, 0).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);

        let unit = tape.constant(&Tensor::full(&[1, 1, 1], 1.0)).unwrap();
        let up = unit.conv2d_transpose(k, b, 2, 0).unwrap();
        assert_eq!(up.shape(), vec![1, 2, 2]);
        assert_eq!(up.value().data(), &[1.0; 4]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[2, 3, 3], 1.0)).unwrap();
        let k = tape.constant(&Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        let b = tape.constant(&Tensor::zeros(&[1])).unwrap();
        assert!(x.conv2d(k, b, 1, 0).is_err());
    }

    #[test]
    fn concat_and_batch() {
        let tape = Tape::new();
        let a = tape.param(&Tensor::full(&[2, 1, 2, 2], 1.0)).unwrap();
        let b = tape.param(&Tensor::full(&[2, 2, 2, 2], 2.0)).unwrap();
        let c = a.concat_channels(b).unwrap();
        assert_eq!(c.shape(), vec![2, 3, 2, 2]);
        assert_eq!(&c.value().data()[..8], &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let loss = c.sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().numel(), 8);
        assert_eq!(tape.grad(b).unwrap().numel(), 16);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let tape = Tape::new();
            let x = tape.param(&t(&[1, 3, 3], &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8, -0.9])).unwrap();
            let k = tape.param(&t(&[2, 1, 2, 2], &[0.3, -0.1, 0.2, 0.5, -0.4, 0.1, 0.9, -0.2])).unwrap();
            let b = tape.param(&t(&[2], &[0.01, -0.02])).unwrap();
            let loss = x.conv2d(k, b, 1, 0).unwrap().tanh().unwrap().square().unwrap().mean().unwrap();
            tape.backward(loss).unwrap();
            (tape.grad(x).unwrap(), tape.grad(k).unwrap(), tape.grad(b).unwrap())
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a, b);
    }
}
