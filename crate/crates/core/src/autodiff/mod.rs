//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] then walks the tape in reverse and returns
//! the gradient of a scalar root with respect to every node that requires
//! one. One tape serves exactly one forward/backward step; a second call to
//! `backward` on the same tape is rejected.
//!
//! ```
//! use minet_core::autodiff::Tape;
//! use minet_core::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let y = tape.sum(x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
//! ```

mod conv;
mod gemm;
mod simd;
pub mod layout;
pub mod linalg;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use layout::{pixel_shuffle, pixel_unshuffle};

/// Pre-activation clamp for the sigmoid; `exp(40)` is far from overflow and
/// `sigmoid(40)` is already 1 to double precision.
pub const SIGMOID_CLAMP: f64 = 40.0;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, padding: usize },
    Conv3d { input: Var, weight: Var, bias: Var, padding: [usize; 3] },
    MatMul { a: Var, b: Var },
    SoftmaxRows { a: Var },
    PixelShuffle { a: Var, r: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    ScaleBy { a: Var, s: Var },
    ScaleChannels { a: Var, s: Var },
    Sigmoid { a: Var },
    Relu { a: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape { a: Var },
    Transpose { a: Var, perm: Vec<usize> },
    GlobalAvgPool { a: Var },
    L1Loss { pred: Var, target: Var },
    Sum { a: Var },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`, if `var` requires a
    /// gradient and the root depends on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn stable_sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    /// A trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(input), self.value(weight), self.value(bias), stride, padding)?;
        Ok(self.push(Op::Conv2d { input, weight, bias, stride, padding }, out, &[input, weight, bias]))
    }

    /// Same-padded single-channel 3-D convolution on `[B,1,D,H,W]`.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, padding: [usize; 3]) -> Result<Var> {
        let out = conv::conv3d_forward(self.value(input), self.value(weight), self.value(bias), padding)?;
        Ok(self.push(Op::Conv3d { input, weight, bias, padding }, out, &[input, weight, bias]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = linalg::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul { a, b }, out, &[a, b]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = linalg::softmax_rows(self.value(a))?;
        Ok(self.push(Op::SoftmaxRows { a }, out, &[a]))
    }

    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let out = layout::pixel_shuffle(self.value(a), r)?;
        Ok(self.push(Op::PixelShuffle { a, r }, out, &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, out, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, out, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, out, &[a, b]))
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        self.push(Op::Scale { a, c }, out, &[a])
    }

    /// Multiplication by a single-element tensor on the tape (a learnable gate).
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", format!("gate must hold one element, got {:?}", self.shape(s))));
        }
        let c = self.value(s).item();
        let out = self.value(a).map(|x| c * x);
        Ok(self.push(Op::ScaleBy { a, s }, out, &[a, s]))
    }

    /// `a[B,C,H,W] * s[B,C,1,1]`, one factor per channel.
    pub fn scale_channels(&mut self, a: Var, s: Var) -> Result<Var> {
        let (xa, xs) = (self.value(a), self.value(s));
        let &[b, c, h, w] = xa.shape() else {
            return Err(Error::shape("scale_channels", format!("input must be rank 4, got {:?}", xa.shape())));
        };
        if xs.shape() != [b, c, 1, 1] {
            return Err(Error::shape(
                "scale_channels",
                format!("scale must be [{b},{c},1,1], got {:?}", xs.shape()),
            ));
        }
        let hw = h * w;
        let mut out = xa.data().to_vec();
        for (plane, &f) in out.chunks_mut(hw.max(1)).zip(xs.data()) {
            for v in plane {
                *v *= f;
            }
        }
        let out = Tensor::new(xa.shape().to_vec(), out)?;
        Ok(self.push(Op::ScaleChannels { a, s }, out, &[a, s]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(stable_sigmoid);
        self.push(Op::Sigmoid { a }, out, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu { a }, out, &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = layout::concat(&values, axis)?;
        Ok(self.push(Op::Concat { parts: parts.to_vec(), axis }, out, parts))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        Ok(self.push(Op::Reshape { a }, out, &[a]))
    }

    /// Permutes axes; output axis `k` is input axis `perm[k]`.
    pub fn transpose(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let out = layout::transpose(self.value(a), perm)?;
        Ok(self.push(Op::Transpose { a, perm: perm.to_vec() }, out, &[a]))
    }

    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let &[b, c, h, w] = x.shape() else {
            return Err(Error::shape("global_avg_pool", format!("input must be rank 4, got {:?}", x.shape())));
        };
        if h == 0 || w == 0 {
            return Err(Error::shape("global_avg_pool", "empty spatial extent"));
        }
        let hw = (h * w) as f64;
        let means: Vec<f64> = x.data().chunks(h * w).map(|p| p.iter().sum::<f64>() / hw).collect();
        let out = Tensor::new(vec![b, c, 1, 1], means)?;
        Ok(self.push(Op::GlobalAvgPool { a }, out, &[a]))
    }

    /// Mean absolute error, a one-element tensor.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("l1_loss", self.value(pred), self.value(target))?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = p.len().max(1) as f64;
        let total: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum();
        let out = Tensor::scalar(total / n);
        Ok(self.push(Op::L1Loss { pred, target }, out, &[pred, target]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum { a }, out, &[a])
    }

    /// Hash of every branch taken by the non-smooth ops on this tape: the ReLU
    /// activity masks and the signs inside L1 losses. Two evaluations with the
    /// same signature lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        use std::hash::{DefaultHasher, Hasher};
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu { a } => {
                    h.write_usize(i);
                    for &x in self.value(*a).data() {
                        h.write_u8(u8::from(x > 0.0));
                    }
                }
                Op::L1Loss { pred, target } => {
                    h.write_usize(i);
                    for (&p, &t) in self.value(*pred).data().iter().zip(self.value(*target).data()) {
                        h.write_i8(i8::from(p > t) - i8::from(p < t));
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Propagates gradients from the one-element `root` back through the tape.
    ///
    /// The returned [`Gradients`] hold an entry for every node that requires a
    /// gradient and that `root` depends on. A tape supports a single backward
    /// pass; calling this again returns [`Error::Usage`].
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Usage("backward already ran on this tape; record a new tape".into()));
        }
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward root must be a scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::ones(root_value.shape()));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let ig = self.input_grads(idx, g)?;
            for (input, gi) in ig {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn input_grads(&self, idx: usize, g: Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let need = |v: &Var| self.nodes[v.0].requires_grad;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { input, weight, bias, stride, padding } => {
                let gr = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    &g,
                    *stride,
                    *padding,
                    need(input),
                )?;
                let mut v = vec![(*weight, gr.weight), (*bias, gr.bias)];
                if let Some(dx) = gr.input {
                    v.push((*input, dx));
                }
                v
            }
            Op::Conv3d { input, weight, bias, padding } => {
                let gr = conv::conv3d_backward(self.value(*input), self.value(*weight), &g, *padding, need(input))?;
                let mut v = vec![(*weight, gr.weight), (*bias, gr.bias)];
                if let Some(dx) = gr.input {
                    v.push((*input, dx));
                }
                v
            }
            Op::MatMul { a, b } => {
                let mut v = Vec::with_capacity(2);
                if need(a) {
                    v.push((*a, linalg::matmul_ex(&g, false, self.value(*b), true)?));
                }
                if need(b) {
                    v.push((*b, linalg::matmul_ex(self.value(*a), true, &g, false)?));
                }
                v
            }
            Op::SoftmaxRows { a } => vec![(*a, linalg::softmax_rows_backward(&node.value, &g))],
            Op::PixelShuffle { a, r } => vec![(*a, layout::pixel_unshuffle(&g, *r)?)],
            Op::Add { a, b } => match (need(a), need(b)) {
                (true, true) => vec![(*a, g.clone()), (*b, g)],
                (true, false) => vec![(*a, g)],
                (false, _) => vec![(*b, g)],
            },
            Op::Sub { a, b } => {
                let mut v = Vec::with_capacity(2);
                if need(b) {
                    v.push((*b, g.map(|x| -x)));
                }
                v.push((*a, g));
                v
            }
            Op::Mul { a, b } => vec![
                (*a, g.zip_map(self.value(*b), |x, y| x * y)?),
                (*b, g.zip_map(self.value(*a), |x, y| x * y)?),
            ],
            Op::Scale { a, c } => vec![(*a, g.map(|x| c * x))],
            Op::ScaleBy { a, s } => {
                let c = self.value(*s).item();
                let ds: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                vec![
                    (*a, g.map(|x| c * x)),
                    (*s, Tensor::new(self.value(*s).shape().to_vec(), vec![ds])?),
                ]
            }
            Op::ScaleChannels { a, s } => {
                let xa = self.value(*a);
                let xs = self.value(*s);
                let hw = xa.shape()[2] * xa.shape()[3];
                let mut da = g.data().to_vec();
                let mut dsv = Vec::with_capacity(xs.len());
                for ((gp, xp), &f) in da.chunks_mut(hw.max(1)).zip(xa.data().chunks(hw.max(1))).zip(xs.data()) {
                    dsv.push(gp.iter().zip(xp).map(|(p, q)| p * q).sum());
                    for v in gp.iter_mut() {
                        *v *= f;
                    }
                }
                vec![
                    (*a, Tensor::new(xa.shape().to_vec(), da)?),
                    (*s, Tensor::new(xs.shape().to_vec(), dsv)?),
                ]
            }
            Op::Sigmoid { a } => vec![(*a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y))?)],
            Op::Relu { a } => vec![(*a, g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 })?)],
            Op::Concat { parts, axis } => {
                let sizes: Vec<usize> = parts.iter().map(|p| self.shape(*p)[*axis]).collect();
                parts.iter().copied().zip(layout::split(&g, *axis, &sizes)).collect()
            }
            Op::Reshape { a } => vec![(*a, Tensor::new(self.shape(*a).to_vec(), g.into_data())?)],
            Op::Transpose { a, perm } => vec![(*a, layout::transpose(&g, &layout::inverse_permutation(perm))?)],
            Op::GlobalAvgPool { a } => {
                let shape = self.shape(*a).to_vec();
                let hw = shape[2] * shape[3];
                let inv = 1.0 / hw as f64;
                let mut da = Vec::with_capacity(hw * g.len());
                for &gv in g.data() {
                    da.extend(std::iter::repeat_n(gv * inv, hw));
                }
                vec![(*a, Tensor::new(shape, da)?)]
            }
            Op::L1Loss { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = g.item() / p.len().max(1) as f64;
                // subgradient 0 at exact ties
                let dp = p.zip_map(t, |x, y| {
                    if x > y {
                        scale
                    } else if x < y {
                        -scale
                    } else {
                        0.0
                    }
                })?;
                let dt = dp.map(|x| -x);
                vec![(*pred, dp), (*target, dt)]
            }
            Op::Sum { a } => vec![(*a, Tensor::full(self.shape(*a), g.item()))],
        };
        Ok(out)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let y = tape.sum(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn backward_twice_is_usage_error() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(&[2]));
        let y = tape.sum(x);
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn non_scalar_root_is_usage_error() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(&[2]));
        let c = tape.constant(Tensor::full(&[2], 3.0));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn unreached_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(&[2]));
        let unused = tape.param(Tensor::ones(&[2]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(unused).is_none());
    }

    #[test]
    fn sigmoid_is_half_at_zero_and_saturates_finitely() {
        assert_eq!(stable_sigmoid(0.0), 0.5);
        assert!(stable_sigmoid(1e6).is_finite() && stable_sigmoid(-1e6) >= 0.0);
        assert_eq!(stable_sigmoid(-1e6), stable_sigmoid(-SIGMOID_CLAMP));
    }

    #[test]
    fn l1_hand_value_and_tie_subgradient() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::new(vec![3], vec![1.0, 3.0, 2.0]).unwrap());
        let t = tape.constant(Tensor::new(vec![3], vec![0.0, 0.0, 2.0]).unwrap());
        let l = tape.l1_loss(p, t).unwrap();
        assert!((tape.value(l).item() - 4.0 / 3.0).abs() < 1e-15);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[1.0 / 3.0, 1.0 / 3.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::ones(&[2]));
        let b = tape.param(Tensor::ones(&[3]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
        assert!(tape.l1_loss(a, b).is_err());
    }
}
