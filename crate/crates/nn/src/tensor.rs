//! Reverse-mode automatic differentiation over dynamically shaped arrays.
//!
//! A [`Tensor`] is a shared handle to a graph node holding a value, a
//! gradient buffer and a backward closure. Operations build the graph
//! eagerly; [`Tensor::backward`] walks it once in reverse topological
//! order. Graphs are single-use: after backward the closures are consumed
//! and only leaf gradients remain meaningful.

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use ndarray::{concatenate, ArrayD, ArrayViewD, Axis, Ix2, IxDyn};

use crate::real::Real;
use crate::{NnError, Result};

type BackwardFn<F> = Box<dyn FnMut(&ArrayD<F>)>;

struct Node<F: Real> {
    value: ArrayD<F>,
    grad: ArrayD<F>,
    grad_seen: bool,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
}

/// Differentiable array handle. Cloning is cheap and aliases the node.
pub struct Tensor<F: Real>(Rc<RefCell<Node<F>>>);

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

/// Panics in debug builds if `a` contains a NaN or infinity.
pub(crate) fn debug_check_finite<F: Real>(a: &ArrayD<F>, op: &str) {
    if cfg!(debug_assertions) {
        debug_assert!(
            a.iter().all(|v| v.is_finite()),
            "non-finite value produced by op `{op}`"
        );
    }
}

impl<F: Real> Tensor<F> {
    fn new(value: ArrayD<F>, parents: Vec<Tensor<F>>, backward: Option<BackwardFn<F>>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Tensor(Rc::new(RefCell::new(Node {
            value,
            grad,
            grad_seen: false,
            parents,
            backward,
        })))
    }

    /// Leaf node (input or parameter); participates in gradient flow.
    pub fn leaf(value: ArrayD<F>) -> Self {
        Self::new(value, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(ArrayD::zeros(IxDyn(shape)))
    }

    pub(crate) fn from_op(
        value: ArrayD<F>,
        parents: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
        op: &str,
    ) -> Self {
        debug_check_finite(&value, op);
        Self::new(value, parents, Some(backward))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.0.borrow().value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Borrowed view of the value; do not hold across op construction.
    pub fn value_ref(&self) -> Ref<'_, ArrayD<F>> {
        Ref::map(self.0.borrow(), |n| &n.value)
    }

    pub fn value(&self) -> ArrayD<F> {
        self.0.borrow().value.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        let n = self.0.borrow();
        assert_eq!(n.value.len(), 1, "item() on tensor with {} elements", n.value.len());
        *n.value.iter().next().unwrap()
    }

    pub fn grad(&self) -> ArrayD<F> {
        self.0.borrow().grad.clone()
    }

    pub fn grad_seen(&self) -> bool {
        self.0.borrow().grad_seen
    }

    /// Overwrites the value in place (optimizer updates). Shape must match.
    pub fn set_value(&self, value: ArrayD<F>) {
        let mut n = self.0.borrow_mut();
        assert_eq!(n.value.shape(), value.shape(), "set_value shape changed");
        n.value = value;
    }

    pub fn zero_grad(&self) {
        let mut n = self.0.borrow_mut();
        n.grad.fill(F::zero());
        n.grad_seen = false;
    }

    pub(crate) fn accumulate(&self, delta: ArrayViewD<'_, F>) {
        let mut n = self.0.borrow_mut();
        debug_assert_eq!(n.grad.shape(), delta.shape(), "gradient shape mismatch");
        n.grad += &delta;
        n.grad_seen = true;
    }

    fn ptr(&self) -> *const () {
        Rc::as_ptr(&self.0) as *const ()
    }

    /// Runs reverse-mode accumulation from this scalar. Consumes the
    /// backward closures, so a graph can only be walked once.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward requires a scalar loss");
        {
            let mut n = self.0.borrow_mut();
            n.grad.fill(F::one());
            n.grad_seen = true;
        }
        let order = self.topo_order();
        for node in order.iter().rev() {
            let (backward, grad) = {
                let mut n = node.0.borrow_mut();
                (n.backward.take(), n.grad.clone())
            };
            if let Some(mut f) = backward {
                f(&grad);
            }
        }
    }

    /// Parents-first ordering via iterative postorder DFS.
    fn topo_order(&self) -> Vec<Tensor<F>> {
        enum Frame<F: Real> {
            Enter(Tensor<F>),
            Exit(Tensor<F>),
        }
        let mut order = Vec::new();
        let mut visited: HashSet<*const ()> = HashSet::new();
        let mut stack = vec![Frame::Enter(self.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    if !visited.insert(t.ptr()) {
                        continue;
                    }
                    let parents = t.0.borrow().parents.clone();
                    stack.push(Frame::Exit(t));
                    for p in parents {
                        stack.push(Frame::Enter(p));
                    }
                }
                Frame::Exit(t) => order.push(t),
            }
        }
        order
    }
}

/// Sums `g` down to `shape`, undoing broadcast along leading axes.
fn reduce_to_shape<F: Real>(g: &ArrayD<F>, shape: &[usize]) -> ArrayD<F> {
    let mut out = g.clone();
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for (axis, (&have, &want)) in out.shape().to_vec().iter().zip(shape).enumerate() {
        if have != want {
            debug_assert_eq!(want, 1);
            out = out
                .sum_axis(Axis(axis))
                .insert_axis(Axis(axis))
                .into_dimensionality()
                .unwrap();
        }
    }
    out
}

fn bias_broadcastable(a: &[usize], b: &[usize]) -> bool {
    b.len() == 1 && !a.is_empty() && a[a.len() - 1] == b[0]
}

impl<F: Real> Tensor<F> {
    /// Elementwise sum. `rhs` may be a 1-D bias broadcast along the last axis.
    pub fn add(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let (a, b) = (self.value(), rhs.value());
        let out = if a.shape() == b.shape() {
            &a + &b
        } else if bias_broadcastable(a.shape(), b.shape()) {
            &a + &b.broadcast(a.raw_dim()).unwrap()
        } else {
            return Err(NnError::ShapeMismatch {
                op: "add",
                details: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        let bshape: Vec<usize> = b.shape().to_vec();
        Ok(Tensor::from_op(
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                pa.accumulate(g.view());
                let gb = reduce_to_shape(g, &bshape);
                pb.accumulate(gb.view());
            }),
            "add",
        ))
    }

    /// Elementwise difference; shapes must match.
    pub fn sub(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let (a, b) = (self.value(), rhs.value());
        if a.shape() != b.shape() {
            return Err(NnError::ShapeMismatch {
                op: "sub",
                details: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            &a - &b,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                pa.accumulate(g.view());
                pb.accumulate(g.mapv(|v| -v).view());
            }),
            "sub",
        ))
    }

    /// Elementwise product. `rhs` may be a 1-D vector broadcast along the
    /// last axis (affine scale).
    pub fn mul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let (a, b) = (self.value(), rhs.value());
        let out = if a.shape() == b.shape() {
            &a * &b
        } else if bias_broadcastable(a.shape(), b.shape()) {
            &a * &b.broadcast(a.raw_dim()).unwrap()
        } else {
            return Err(NnError::ShapeMismatch {
                op: "mul",
                details: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        let bshape: Vec<usize> = b.shape().to_vec();
        Ok(Tensor::from_op(
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let (av, bv) = (pa.value(), pb.value());
                if bv.shape() == av.shape() {
                    pa.accumulate((g * &bv).view());
                    pb.accumulate((g * &av).view());
                } else {
                    let bb = bv.broadcast(av.raw_dim()).unwrap().to_owned();
                    pa.accumulate((g * &bb).view());
                    let gb = reduce_to_shape(&(g * &av), &bshape);
                    pb.accumulate(gb.view());
                }
            }),
            "mul",
        ))
    }

    pub fn neg(&self) -> Tensor<F> {
        let p = self.clone();
        Tensor::from_op(
            -self.value(),
            vec![self.clone()],
            Box::new(move |g| p.accumulate(g.mapv(|v| -v).view())),
            "neg",
        )
    }

    pub fn scale(&self, c: F) -> Tensor<F> {
        let p = self.clone();
        Tensor::from_op(
            self.value() * c,
            vec![self.clone()],
            Box::new(move |g| p.accumulate((g * c).view())),
            "scale",
        )
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let a = self.value();
        let b = rhs.value();
        let (a2, b2) = match (
            a.view().into_dimensionality::<Ix2>(),
            b.view().into_dimensionality::<Ix2>(),
        ) {
            (Ok(a2), Ok(b2)) if a2.ncols() == b2.nrows() => (a2, b2),
            _ => {
                return Err(NnError::ShapeMismatch {
                    op: "matmul",
                    details: format!("{:?} x {:?}", a.shape(), b.shape()),
                })
            }
        };
        let out = a2.dot(&b2).into_dyn();
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let av = pa.value();
                let bv = pb.value();
                let a2 = av.view().into_dimensionality::<Ix2>().unwrap();
                let b2 = bv.view().into_dimensionality::<Ix2>().unwrap();
                pa.accumulate(g2.dot(&b2.t()).into_dyn().view());
                pb.accumulate(a2.t().dot(&g2).into_dyn().view());
            }),
            "matmul",
        ))
    }

    pub fn relu(&self) -> Tensor<F> {
        let out = self.value().mapv(|v| if v > F::zero() { v } else { F::zero() });
        let p = self.clone();
        Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mask = p.value().mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
                p.accumulate((g * &mask).view());
            }),
            "relu",
        )
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        let out = self.value().mapv(|v| F::one() / (F::one() + (-v).exp()));
        let p = self.clone();
        let cached = out.clone();
        Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let ds = cached.mapv(|s| s * (F::one() - s));
                p.accumulate((g * &ds).view());
            }),
            "sigmoid",
        )
    }

    pub fn tanh(&self) -> Tensor<F> {
        let out = self.value().mapv(|v| v.tanh());
        let p = self.clone();
        let cached = out.clone();
        Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let dt = cached.mapv(|t| F::one() - t * t);
                p.accumulate((g * &dt).view());
            }),
            "tanh",
        )
    }

    /// Numerically stable softmax along the last axis.
    pub fn softmax(&self) -> Tensor<F> {
        let mut out = self.value();
        let last = Axis(out.ndim() - 1);
        for mut lane in out.lanes_mut(last) {
            let max = lane.iter().cloned().fold(F::neg_infinity(), F::max);
            lane.mapv_inplace(|v| (v - max).exp());
            let sum = lane.sum();
            lane.mapv_inplace(|v| v / sum);
        }
        let p = self.clone();
        let cached = out.clone();
        Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = g.clone();
                let last = Axis(dx.ndim() - 1);
                for (mut dlane, alane) in dx.lanes_mut(last).into_iter().zip(cached.lanes(last)) {
                    let dot = dlane
                        .iter()
                        .zip(alane.iter())
                        .fold(F::zero(), |acc, (&d, &a)| acc + d * a);
                    for (d, &a) in dlane.iter_mut().zip(alane.iter()) {
                        *d = a * (*d - dot);
                    }
                }
                p.accumulate(dx.view());
            }),
            "softmax",
        )
    }

    /// Normalizes the last axis to zero mean, unit variance (no affine).
    pub fn layer_norm(&self) -> Tensor<F> {
        let eps = F::from_f64(1e-5);
        let mut out = self.value();
        let last = Axis(out.ndim() - 1);
        let mut inv_sd = Vec::with_capacity(out.len() / out.shape()[out.ndim() - 1]);
        for mut lane in out.lanes_mut(last) {
            let n = F::from_f64(lane.len() as f64);
            let mean = lane.sum() / n;
            let var = lane.iter().fold(F::zero(), |acc, &v| {
                let d = v - mean;
                acc + d * d
            }) / n;
            let isd = F::one() / (var + eps).sqrt();
            lane.mapv_inplace(|v| (v - mean) * isd);
            inv_sd.push(isd);
        }
        let p = self.clone();
        let cached = out.clone();
        Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                // dx = isd * (dy - mean(dy) - y * mean(dy * y)) per lane
                let mut dx = g.clone();
                let last = Axis(dx.ndim() - 1);
                for ((mut dlane, ylane), &isd) in dx
                    .lanes_mut(last)
                    .into_iter()
                    .zip(cached.lanes(last))
                    .zip(inv_sd.iter())
                {
                    let n = F::from_f64(dlane.len() as f64);
                    let mean_dy = dlane.sum() / n;
                    let mean_dyy = dlane
                        .iter()
                        .zip(ylane.iter())
                        .fold(F::zero(), |acc, (&d, &y)| acc + d * y)
                        / n;
                    for (d, &y) in dlane.iter_mut().zip(ylane.iter()) {
                        *d = isd * (*d - mean_dy - y * mean_dyy);
                    }
                }
                p.accumulate(dx.view());
            }),
            "layer_norm",
        )
    }

    pub fn sum(&self) -> Tensor<F> {
        let total = self.value().sum();
        let p = self.clone();
        let shape = self.shape();
        Tensor::from_op(
            ArrayD::from_elem(IxDyn(&[]), total),
            vec![self.clone()],
            Box::new(move |g| {
                let gv = *g.iter().next().unwrap();
                p.accumulate(ArrayD::from_elem(IxDyn(&shape), gv).view());
            }),
            "sum",
        )
    }

    pub fn mean(&self) -> Tensor<F> {
        let n = F::from_f64(self.len() as f64);
        self.sum().scale(F::one() / n)
    }

    /// Sum of squared entries, as a scalar node.
    pub fn sumsq(&self) -> Tensor<F> {
        let total = self.value().iter().fold(F::zero(), |acc, &v| acc + v * v);
        let p = self.clone();
        Tensor::from_op(
            ArrayD::from_elem(IxDyn(&[]), total),
            vec![self.clone()],
            Box::new(move |g| {
                let gv = *g.iter().next().unwrap();
                let two = F::from_f64(2.0);
                p.accumulate((p.value() * (two * gv)).view());
            }),
            "sumsq",
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        let v = self.value();
        if v.len() != shape.iter().product::<usize>() {
            return Err(NnError::ShapeMismatch {
                op: "reshape",
                details: format!("{:?} -> {:?}", v.shape(), shape),
            });
        }
        let old_shape = v.shape().to_vec();
        let out = v.to_shape(IxDyn(shape)).unwrap().to_owned();
        let p = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let back = g.to_shape(IxDyn(&old_shape)).unwrap().to_owned();
                p.accumulate(back.view());
            }),
            "reshape",
        ))
    }

    /// Contiguous slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<F>> {
        let v = self.value();
        if axis >= v.ndim() || start + len > v.shape()[axis] {
            return Err(NnError::ShapeMismatch {
                op: "narrow",
                details: format!("axis {axis} range {start}..{} of {:?}", start + len, v.shape()),
            });
        }
        let out = v
            .slice_axis(Axis(axis), ndarray::Slice::from(start as isize..(start + len) as isize))
            .to_owned();
        let p = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut n = p.0.borrow_mut();
                let mut slot = n.grad.slice_axis_mut(
                    Axis(axis),
                    ndarray::Slice::from(start as isize..(start + len) as isize),
                );
                slot += g;
                n.grad_seen = true;
            }),
            "narrow",
        ))
    }

    /// Concatenates tensors along `axis`.
    pub fn concat(axis: usize, parts: &[Tensor<F>]) -> Result<Tensor<F>> {
        if parts.is_empty() {
            return Err(NnError::LengthMismatch("concat of zero tensors".into()));
        }
        let values: Vec<ArrayD<F>> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = concatenate(Axis(axis), &views).map_err(|e| NnError::ShapeMismatch {
            op: "concat",
            details: e.to_string(),
        })?;
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let parents: Vec<Tensor<F>> = parts.to_vec();
        let back_parents = parents.clone();
        Ok(Tensor::from_op(
            out,
            parents,
            Box::new(move |g| {
                let mut offset = 0usize;
                for (p, &w) in back_parents.iter().zip(widths.iter()) {
                    let piece = g.slice_axis(
                        Axis(axis),
                        ndarray::Slice::from(offset as isize..(offset + w) as isize),
                    );
                    p.accumulate(piece);
                    offset += w;
                }
            }),
            "concat",
        ))
    }
}
