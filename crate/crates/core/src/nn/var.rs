//! Reverse-mode differentiation over a dynamically built graph.
//!
//! A [`Var`] records its parents only when at least one of them needs a
//! gradient, so inference on constant parameters keeps nothing alive beyond
//! the tensors the caller still holds.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvSpec, PoolSpec};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &Tensor<T>, &[Var<T>]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

#[derive(Clone)]
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    /// A leaf whose gradient is collected by [`Var::backward`].
    pub fn param(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Self(Rc::new(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    fn from_op(value: Tensor<T>, parents: Vec<Var<T>>, backward: BackwardFn<T>) -> Self {
        if parents.iter().any(Var::requires_grad) {
            Self(Rc::new(Node {
                value,
                requires_grad: true,
                parents,
                backward: Some(backward),
            }))
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> [usize; 4] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    fn key(&self) -> *const () {
        Rc::as_ptr(&self.0) as *const ()
    }

    /// Backpropagates from this node, seeding it with ones.
    pub fn backward(&self) -> Gradients<T> {
        let seed = Tensor::full(self.shape(), T::one());
        self.backward_with(seed)
    }

    pub fn backward_with(&self, seed: Tensor<T>) -> Gradients<T> {
        let mut grads: HashMap<*const (), Tensor<T>> = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads };
        }
        let order = self.topo_order();
        grads.insert(self.key(), seed);
        for node in order.iter().rev() {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads.remove(&node.key()) else {
                continue;
            };
            let parent_grads = backward(&node.0.value, &g, &node.0.parents);
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                match grads.get_mut(&parent.key()) {
                    Some(acc) => acc.add_assign(&pg),
                    None => {
                        grads.insert(parent.key(), pg);
                    }
                }
            }
            // Interior gradients are dropped once consumed; leaves keep theirs.
        }
        Gradients { grads }
    }

    fn topo_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.0.parents {
                if p.requires_grad() && !seen.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

/// Gradients of leaf parameters, looked up by the [`Var`] handle.
pub struct Gradients<T> {
    grads: HashMap<*const (), Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&v.key())
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        self.grads.remove(&v.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tanh => "tanh",
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
        })
    }
}

pub fn activation<T: Scalar>(x: &Var<T>, kind: Activation) -> Var<T> {
    match kind {
        Activation::Tanh => tanh(x),
        Activation::Relu => relu(x),
        Activation::Sigmoid => sigmoid(x),
    }
}

pub fn tanh<T: Scalar>(x: &Var<T>) -> Var<T> {
    let y = x.value().map(T::tanh);
    Var::from_op(
        y,
        vec![x.clone()],
        Box::new(|y, g, _| vec![Some(g.zip_map(y, |g, y| g * (T::one() - y * y)))]),
    )
}

pub fn sigmoid<T: Scalar>(x: &Var<T>) -> Var<T> {
    let y = x.value().map(|v| T::one() / (T::one() + (-v).exp()));
    Var::from_op(
        y,
        vec![x.clone()],
        Box::new(|y, g, _| vec![Some(g.zip_map(y, |g, y| g * y * (T::one() - y)))]),
    )
}

/// Rectifier with derivative 0 at exactly 0.
pub fn relu<T: Scalar>(x: &Var<T>) -> Var<T> {
    let y = x.value().map(|v| if v > T::zero() { v } else { T::zero() });
    Var::from_op(
        y,
        vec![x.clone()],
        Box::new(|y, g, _| {
            vec![Some(g.zip_map(y, |g, y| if y > T::zero() { g } else { T::zero() }))]
        }),
    )
}

pub fn add<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("add {:?} + {:?}", a.shape(), b.shape())));
    }
    let y = a.value().zip_map(b.value(), |x, y| x + y);
    Ok(Var::from_op(
        y,
        vec![a.clone(), b.clone()],
        Box::new(|_, g, ps| {
            vec![
                ps[0].requires_grad().then(|| g.clone()),
                ps[1].requires_grad().then(|| g.clone()),
            ]
        }),
    ))
}

pub fn conv2d<T: Scalar>(x: &Var<T>, w: &Var<T>, b: &Var<T>, spec: ConvSpec) -> Result<Var<T>> {
    let y = kernels::conv2d_forward(x.value(), w.value(), b.value(), &spec)?;
    Ok(Var::from_op(
        y,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |_, g, ps| {
            let gr = kernels::conv2d_backward(ps[0].value(), ps[1].value(), g, &spec, ps[0].requires_grad())
                .expect("geometry validated in forward");
            vec![gr.dx, Some(gr.dw), Some(gr.db)]
        }),
    ))
}

pub fn conv_transpose2d<T: Scalar>(x: &Var<T>, w: &Var<T>, b: &Var<T>, stride: usize) -> Result<Var<T>> {
    let y = kernels::conv_transpose2d_forward(x.value(), w.value(), b.value(), stride)?;
    Ok(Var::from_op(
        y,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |_, g, ps| {
            let gr = kernels::conv_transpose2d_backward(
                ps[0].value(),
                ps[1].value(),
                g,
                stride,
                ps[0].requires_grad(),
            );
            vec![gr.dx, Some(gr.dw), Some(gr.db)]
        }),
    ))
}

/// Affine map on `(n, 1, 1, in)` vectors with `(1, 1, in, out)` weights.
pub fn dense<T: Scalar>(x: &Var<T>, w: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    if x.value().h() != 1 || x.value().w() != 1 {
        return Err(Error::Shape(format!("dense expects vectors, got {:?}", x.shape())));
    }
    conv2d(x, w, b, ConvSpec::pointwise())
}

pub fn pool2d<T: Scalar>(x: &Var<T>, spec: PoolSpec) -> Result<Var<T>> {
    let (y, cache) = kernels::pool2d_forward(x.value(), &spec)?;
    let x_shape = x.shape();
    Ok(Var::from_op(
        y,
        vec![x.clone()],
        Box::new(move |_, g, _| vec![Some(kernels::pool2d_backward(x_shape, g, &spec, &cache))]),
    ))
}

/// Concatenates along channels; all inputs share batch and spatial dims.
pub fn concat_channels<T: Scalar>(xs: &[Var<T>]) -> Result<Var<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Shape("concat of nothing".into()))?
        .shape();
    let widths: Vec<usize> = xs.iter().map(|v| v.shape()[3]).collect();
    for v in xs {
        let s = v.shape();
        if s[..3] != first[..3] {
            return Err(Error::Shape(format!("concat {:?} with {:?}", first, s)));
        }
    }
    let total: usize = widths.iter().sum();
    let cells = first[0] * first[1] * first[2];
    let mut out = Vec::with_capacity(cells * total);
    for cell in 0..cells {
        for (v, &c) in xs.iter().zip(&widths) {
            out.extend_from_slice(&v.value().data()[cell * c..(cell + 1) * c]);
        }
    }
    let y = Tensor::from_vec([first[0], first[1], first[2], total], out)?;
    Ok(Var::from_op(
        y,
        xs.to_vec(),
        Box::new(move |_, g, ps| {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(ps.len());
            for (p, &c) in ps.iter().zip(&widths) {
                if p.requires_grad() {
                    let mut d = Vec::with_capacity(cells * c);
                    for cell in 0..cells {
                        let start = cell * total + offset;
                        d.extend_from_slice(&g.data()[start..start + c]);
                    }
                    grads.push(Some(Tensor::from_vec(p.shape(), d).expect("shape")));
                } else {
                    grads.push(None);
                }
                offset += c;
            }
            grads
        }),
    ))
}

/// Multiplies each channel of `x` by the matching entry of the `(n, 1, 1, c)`
/// vector `s`.
pub fn scale_channels<T: Scalar>(x: &Var<T>, s: &Var<T>) -> Result<Var<T>> {
    let [n, h, w, c] = x.shape();
    if s.shape() != [n, 1, 1, c] {
        return Err(Error::Shape(format!("scale {:?} by {:?}", x.shape(), s.shape())));
    }
    let hw = h * w;
    let mut y = x.value().clone();
    for (cell, chunk) in y.data_mut().chunks_exact_mut(c).enumerate() {
        let sv = &s.value().data()[(cell / hw) * c..][..c];
        for (v, &f) in chunk.iter_mut().zip(sv) {
            *v *= f;
        }
    }
    Ok(Var::from_op(
        y,
        vec![x.clone(), s.clone()],
        Box::new(move |_, g, ps| {
            let (xv, sv) = (ps[0].value(), ps[1].value());
            let dx = ps[0].requires_grad().then(|| {
                let mut d = g.clone();
                for (cell, chunk) in d.data_mut().chunks_exact_mut(c).enumerate() {
                    let f = &sv.data()[(cell / hw) * c..][..c];
                    for (v, &f) in chunk.iter_mut().zip(f) {
                        *v *= f;
                    }
                }
                d
            });
            let ds = ps[1].requires_grad().then(|| {
                let mut d = Tensor::zeros([n, 1, 1, c]);
                for (cell, (gc, xc)) in g.data().chunks_exact(c).zip(xv.data().chunks_exact(c)).enumerate() {
                    let acc = &mut d.data_mut()[(cell / hw) * c..][..c];
                    for ((a, &gv), &xv) in acc.iter_mut().zip(gc).zip(xc) {
                        *a += gv * xv;
                    }
                }
                d
            });
            vec![dx, ds]
        }),
    ))
}

/// Sums over channels: `(n, h, w, c) -> (n, h, w, 1)`.
pub fn channel_sum<T: Scalar>(x: &Var<T>) -> Var<T> {
    let [n, h, w, c] = x.shape();
    let data = x.value().data().chunks_exact(c).map(|ch| ch.iter().copied().sum()).collect();
    let y = Tensor::from_vec([n, h, w, 1], data).expect("shape");
    Var::from_op(
        y,
        vec![x.clone()],
        Box::new(move |_, g, _| {
            let mut d = Vec::with_capacity(n * h * w * c);
            for &gv in g.data() {
                d.extend(std::iter::repeat(gv).take(c));
            }
            vec![Some(Tensor::from_vec([n, h, w, c], d).expect("shape"))]
        }),
    )
}

/// Spatial mean per channel: `(n, h, w, c) -> (n, 1, 1, c)`.
pub fn global_avg_pool<T: Scalar>(x: &Var<T>) -> Var<T> {
    let [n, h, w, c] = x.shape();
    let hw = h * w;
    let inv = T::one() / T::from_usize(hw).expect("count");
    let mut y = Tensor::zeros([n, 1, 1, c]);
    for (cell, chunk) in x.value().data().chunks_exact(c).enumerate() {
        let acc = &mut y.data_mut()[(cell / hw) * c..][..c];
        for (a, &v) in acc.iter_mut().zip(chunk) {
            *a += v;
        }
    }
    for v in y.data_mut() {
        *v *= inv;
    }
    Var::from_op(
        y,
        vec![x.clone()],
        Box::new(move |_, g, _| {
            let mut d = Tensor::zeros([n, h, w, c]);
            for (cell, chunk) in d.data_mut().chunks_exact_mut(c).enumerate() {
                let gv = &g.data()[(cell / hw) * c..][..c];
                for (v, &gg) in chunk.iter_mut().zip(gv) {
                    *v = gg * inv;
                }
            }
            vec![Some(d)]
        }),
    )
}

/// `sum(x * weights)` as a `(1, 1, 1, 1)` scalar.
pub fn weighted_sum<T: Scalar>(x: &Var<T>, weights: &Tensor<T>) -> Result<Var<T>> {
    if x.shape() != weights.shape() {
        return Err(Error::Shape(format!("weights {:?} for {:?}", weights.shape(), x.shape())));
    }
    let s: T = x.value().data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
    let weights = weights.clone();
    Ok(Var::from_op(
        Tensor::scalar(s),
        vec![x.clone()],
        Box::new(move |_, g, _| {
            let gv = g.data()[0];
            vec![Some(weights.map(|w| w * gv))]
        }),
    ))
}

/// Pointwise Huber penalty: `½δ²` for `|δ| ≤ θ`, else `θ|δ| − ½θ²`.
pub fn huber<T: Scalar>(delta: T, theta: T) -> T {
    let half = T::from_f64_lossy(0.5);
    if delta.abs() <= theta {
        half * delta * delta
    } else {
        theta * delta.abs() - half * theta * theta
    }
}

fn huber_grad<T: Scalar>(delta: T, theta: T) -> T {
    if delta.abs() <= theta {
        delta
    } else {
        theta * delta.signum()
    }
}

/// Mean Huber penalty over cells where `mask` is nonzero. Shapes of `pred`,
/// `target` and `mask` must agree.
pub fn masked_huber<T: Scalar>(pred: &Var<T>, target: &Tensor<T>, mask: &Tensor<T>, theta: T) -> Result<Var<T>> {
    if pred.shape() != target.shape() || pred.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "huber over {:?}, target {:?}, mask {:?}",
            pred.shape(),
            target.shape(),
            mask.shape()
        )));
    }
    let count = mask.data().iter().filter(|&&m| m != T::zero()).count();
    if count == 0 {
        return Err(Error::Numeric("loss mask selects no cells".into()));
    }
    let inv = T::one() / T::from_usize(count).expect("count");
    let mut total = T::zero();
    for ((&p, &t), &m) in pred.value().data().iter().zip(target.data()).zip(mask.data()) {
        if m != T::zero() {
            total += huber(p - t, theta);
        }
    }
    let (target, mask) = (target.clone(), mask.clone());
    Ok(Var::from_op(
        Tensor::scalar(total * inv),
        vec![pred.clone()],
        Box::new(move |_, g, ps| {
            let scale = g.data()[0] * inv;
            let mut d = Tensor::zeros(ps[0].shape());
            let pv = ps[0].value().data();
            for (i, v) in d.data_mut().iter_mut().enumerate() {
                if mask.data()[i] != T::zero() {
                    *v = scale * huber_grad(pv[i] - target.data()[i], theta);
                }
            }
            vec![Some(d)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(shape: [usize; 4], data: &[f64]) -> Var<f64> {
        Var::param(Tensor::from_vec(shape, data.to_vec()).unwrap())
    }

    #[test]
    fn activations_at_reference_points() {
        let x = Var::constant(Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
        assert_eq!(relu(&x).value().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(tanh(&x).value().data()[1], 0.0);
        assert_eq!(sigmoid(&x).value().data()[1], 0.5);
        assert!(matches!("gelu".parse::<Activation>(), Err(Error::Config(_))));
        assert_eq!("tanh".parse::<Activation>().unwrap(), Activation::Tanh);
    }

    #[test]
    fn relu_gradient_is_zero_at_zero() {
        let x = v([1, 1, 1, 3], &[-1.0, 0.0, 2.0]);
        let g = relu(&x).backward();
        assert_eq!(g.get(&x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shared_inputs_accumulate() {
        let x = v([1, 1, 1, 2], &[1.0, 2.0]);
        let y = add(&x, &x).unwrap();
        let y = add(&y, &x).unwrap();
        let g = y.backward();
        assert_eq!(g.get(&x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn dense_identity() {
        let x = Var::constant(Tensor::from_vec([1, 1, 1, 3], vec![1.0, -2.0, 3.0]).unwrap());
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        for i in 0..3 {
            let idx = w.index(0, 0, i, i);
            w.data_mut()[idx] = 1.0;
        }
        let y = dense(&x, &Var::constant(w), &Var::constant(Tensor::zeros([1, 1, 1, 3]))).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn constants_do_not_retain_parents() {
        let x = Var::constant(Tensor::<f64>::zeros([1, 2, 2, 1]));
        let y = tanh(&x);
        assert!(!y.requires_grad());
        assert!(y.0.parents.is_empty());
    }

    #[test]
    fn concat_and_split_gradients() {
        let a = v([1, 1, 2, 1], &[1.0, 2.0]);
        let b = v([1, 1, 2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = Tensor::from_vec([1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = weighted_sum(&c, &w).unwrap().backward();
        assert_eq!(g.get(&a).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(g.get(&b).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn huber_reference_values() {
        assert_eq!(huber(0.0, 0.5), 0.0);
        assert_eq!(huber(0.5, 0.5), 0.125);
        assert_eq!(huber(2.0, 0.5), 0.875);
        assert_eq!(huber(-2.0, 0.5), 0.875);
    }

    #[test]
    fn masked_huber_ignores_unmasked() {
        let p = v([1, 1, 3, 1], &[2.5, 9.0, 1.0]);
        let t = Tensor::from_vec([1, 1, 3, 1], vec![0.5, 0.0, 1.0]).unwrap();
        let m = Tensor::from_vec([1, 1, 3, 1], vec![1.0, 0.0, 1.0]).unwrap();
        let l = masked_huber(&p, &t, &m, 0.5).unwrap();
        assert!((l.value().data()[0] - 0.875 / 2.0).abs() < 1e-15);
        let g = l.backward();
        assert_eq!(g.get(&p).unwrap().data(), &[0.25, 0.0, 0.0]);
        let empty = Tensor::zeros([1, 1, 3, 1]);
        assert!(masked_huber(&p, &t, &empty, 0.5).is_err());
    }
}
