//! N-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Storage is a flat row-major buffer (NCHW for images). The operation
//! graph is define-by-run: each op output optionally carries a backward
//! closure plus handles to its inputs, and the record is rebuilt on every
//! forward pass. Gradients accumulate additively into the `grad` slot of
//! every tensor that wants one.

mod autograd;
pub mod gradcheck;

pub use autograd::{backward, backward_params};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use parking_lot::{RwLock, RwLockReadGuard};
use std::cell::Cell;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether op outputs currently record backward closures (per thread).
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Disables graph recording until the guard is dropped.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    NoGradGuard { prev }
}

pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

pub(crate) struct Node<F: Scalar> {
    parents: Vec<Tensor<F>>,
    /// Receives d(loss)/d(output) and accumulates into the parents' grads.
    backward: Box<dyn Fn(&[F]) + Send + Sync>,
}

struct Inner<F: Scalar> {
    id: u64,
    shape: Box<[usize]>,
    data: Arc<RwLock<Vec<F>>>,
    grad: RwLock<Option<Vec<F>>>,
    requires_grad: AtomicBool,
    node: Option<Node<F>>,
}

/// Shared handle to a tensor. Cloning is cheap and aliases the same
/// storage and gradient slot.
pub struct Tensor<F: Scalar> {
    inner: Arc<Inner<F>>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<F: Scalar> std::fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id,
            self.shape(),
            self.requires_grad()
        )
    }
}

pub(crate) fn fmt_shape(shape: &[usize]) -> String {
    format!("{shape:?}")
}

impl<F: Scalar> Tensor<F> {
    fn new_inner(
        data: Arc<RwLock<Vec<F>>>,
        shape: Box<[usize]>,
        requires_grad: bool,
        node: Option<Node<F>>,
    ) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                grad: RwLock::new(None),
                requires_grad: AtomicBool::new(requires_grad),
                node,
            }),
        }
    }

    /// Leaf tensor from a flat row-major buffer.
    pub fn from_vec(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("positive extents with product {}", data.len()),
                fmt_shape(shape),
            ));
        }
        Ok(Self::new_inner(
            Arc::new(RwLock::new(data)),
            shape.into(),
            false,
            None,
        ))
    }

    /// Leaf parameter tensor (requires a gradient).
    pub fn param(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn scalar(v: F) -> Self {
        Self::from_vec(vec![v], &[1]).expect("scalar shape")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_vec(vec![F::zero(); numel], shape).expect("zeros shape")
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_vec(vec![F::one(); numel], shape).expect("ones shape")
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        let numel = shape.iter().product();
        Self::from_vec(vec![v; numel], shape).expect("full shape")
    }

    /// Op output. Records a backward closure when grad mode is on and any
    /// parent wants a gradient; otherwise the result is a plain leaf.
    pub(crate) fn from_op(
        data: Vec<F>,
        shape: &[usize],
        parents: Vec<Tensor<F>>,
        backward: impl Fn(&[F]) + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let record = is_grad_enabled() && parents.iter().any(|p| p.wants_grad());
        let node = record.then(|| Node {
            parents,
            backward: Box::new(backward) as Box<dyn Fn(&[F]) + Send + Sync>,
        });
        Self::new_inner(Arc::new(RwLock::new(data)), shape.into(), record, node)
    }

    /// [`Tensor::from_op`] over storage the backward closure also holds.
    /// Lets an op save its own output values without creating a reference
    /// cycle (the closure captures the data arc, never the tensor handle).
    pub(crate) fn from_op_arc(
        data: Arc<RwLock<Vec<F>>>,
        shape: &[usize],
        parents: Vec<Tensor<F>>,
        backward: impl Fn(&[F]) + Send + Sync + 'static,
    ) -> Self {
        let record = is_grad_enabled() && parents.iter().any(|p| p.wants_grad());
        let node = record.then(|| Node {
            parents,
            backward: Box::new(backward) as Box<dyn Fn(&[F]) + Send + Sync>,
        });
        Self::new_inner(data, shape.into(), record, node)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    /// (N, C, H, W) of a 4-D tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape("dims4", "4-D NCHW", fmt_shape(self.shape()))),
        }
    }

    /// (rows, cols) of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape("dims2", "2-D", fmt_shape(self.shape()))),
        }
    }

    /// Read access to the flat data buffer.
    pub fn data(&self) -> RwLockReadGuard<'_, Vec<F>> {
        self.inner.data.read()
    }

    pub(crate) fn data_mut(&self) -> parking_lot::RwLockWriteGuard<'_, Vec<F>> {
        self.inner.data.write()
    }

    pub(crate) fn data_arc(&self) -> Arc<RwLock<Vec<F>>> {
        Arc::clone(&self.inner.data)
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<F> {
        if self.len() != 1 {
            return Err(Error::NotScalarLoss { len: self.len() });
        }
        Ok(self.data()[0])
    }

    /// Overwrites the data buffer in place (shape unchanged).
    pub fn copy_from(&self, values: &[F]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::shape(
                "Tensor::copy_from",
                self.len().to_string(),
                values.len().to_string(),
            ));
        }
        self.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.load(Ordering::Relaxed)
    }

    /// Toggles gradient tracking; freezing a parameter group flips this off.
    pub fn set_requires_grad(&self, v: bool) {
        self.inner.requires_grad.store(v, Ordering::Relaxed);
    }

    /// Whether backward should deposit a gradient here.
    pub(crate) fn wants_grad(&self) -> bool {
        self.requires_grad()
    }

    pub(crate) fn node(&self) -> Option<&Node<F>> {
        self.inner.node.as_ref()
    }

    pub(crate) fn num_parents(&self) -> usize {
        self.inner.node.as_ref().map_or(0, |n| n.parents.len())
    }

    pub(crate) fn parent(&self, i: usize) -> Tensor<F> {
        self.inner.node.as_ref().expect("node")[i].clone()
    }

    /// Clone of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.grad.read().clone()
    }

    /// Accumulated gradient, or zeros for a parameter backward never reached.
    pub fn grad_or_zeros(&self) -> Vec<F> {
        self.grad().unwrap_or_else(|| vec![F::zero(); self.len()])
    }

    pub(crate) fn grad_guard(&self) -> RwLockReadGuard<'_, Option<Vec<F>>> {
        self.inner.grad.read()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.write() = None;
    }

    pub(crate) fn seed_grad_ones(&self) {
        *self.inner.grad.write() = Some(vec![F::one(); self.len()]);
    }

    pub(crate) fn set_grad(&self, g: Vec<F>) {
        debug_assert_eq!(g.len(), self.len());
        *self.inner.grad.write() = Some(g);
    }

    /// Adds `delta` into the gradient slot.
    pub(crate) fn accum_grad(&self, delta: &[F]) {
        debug_assert_eq!(delta.len(), self.len());
        let mut g = self.inner.grad.write();
        match g.as_mut() {
            Some(buf) => {
                for (a, d) in buf.iter_mut().zip(delta) {
                    *a += *d;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    pub(crate) fn accum_grad_owned(&self, delta: Vec<F>) {
        debug_assert_eq!(delta.len(), self.len());
        let mut g = self.inner.grad.write();
        match g.as_mut() {
            Some(buf) => {
                for (a, d) in buf.iter_mut().zip(&delta) {
                    *a += *d;
                }
            }
            None => *g = Some(delta),
        }
    }

    /// New leaf sharing this tensor's storage, cut off from the graph.
    pub fn detach(&self) -> Tensor<F> {
        Self::new_inner(self.data_arc(), self.inner.shape.clone(), false, None)
    }

    /// View with a new shape over the same storage (element count preserved).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        let numel: usize = shape.iter().product();
        if numel != self.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "Tensor::reshape",
                format!("product {}", self.len()),
                fmt_shape(shape),
            ));
        }
        if is_grad_enabled() && self.wants_grad() {
            let parent = self.clone();
            let p = parent.clone();
            let node = Node {
                parents: vec![parent],
                backward: Box::new(move |g: &[F]| p.accum_grad(g)),
            };
            Ok(Self::new_inner(
                self.data_arc(),
                shape.into(),
                true,
                Some(node),
            ))
        } else {
            Ok(Self::new_inner(self.data_arc(), shape.into(), false, None))
        }
    }

    /// Runs reverse-mode differentiation from this scalar.
    pub fn backward(&self) -> Result<()> {
        autograd::backward(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// Max |a - b| against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<F>) -> F {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape");
        let a = self.data();
        let b = other.data();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (*x - *y).abs())
            .fold(F::zero(), F::max)
    }
}

impl<F: Scalar> std::ops::Index<usize> for Node<F> {
    type Output = Tensor<F>;
    fn index(&self, i: usize) -> &Tensor<F> {
        &self.parents[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_shape() {
        assert!(Tensor::<f32>::from_vec(vec![1.0, 2.0], &[3]).is_err());
        assert!(Tensor::<f32>::from_vec(vec![], &[0]).is_err());
        let t = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn reshape_is_a_view() {
        let t = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let v = t.reshape(&[4]).unwrap();
        t.data_mut()[0] = 9.0;
        assert_eq!(v.to_vec(), vec![9.0, 2.0, 3.0, 4.0]);
        assert!(t.reshape(&[3]).is_err());
    }

    #[test]
    fn detach_shares_data_but_not_grad() {
        let t = Tensor::<f32>::param(vec![1.0], &[1]).unwrap();
        let d = t.detach();
        assert!(!d.requires_grad());
        assert_eq!(d.to_vec(), vec![1.0]);
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = Tensor::<f64>::param(vec![2.0], &[1]).unwrap();
        let _g = no_grad();
        let y = crate::ops::mul(&x, &x).unwrap();
        assert!(!y.requires_grad());
        assert!(y.inner.node.is_none());
    }
}
