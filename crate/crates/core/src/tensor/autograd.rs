//! Reverse-mode sweep over the recorded operation graph.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::HashSet;

/// Tensors in reverse topological order starting from `root`: every tensor
/// appears before all of its parents, so each backward closure runs after
/// the full gradient of its output has accumulated.
fn reverse_topo<F: Scalar>(root: &Tensor<F>) -> Vec<Tensor<F>> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor<F>, usize)> = Vec::new();
    visited.insert(root.id());
    stack.push((root.clone(), 0));
    while let Some((t, idx)) = stack.pop() {
        if idx < t.num_parents() {
            let p = t.parent(idx);
            stack.push((t, idx + 1));
            if visited.insert(p.id()) {
                stack.push((p, 0));
            }
        } else {
            order.push(t);
        }
    }
    order.reverse();
    order
}

/// Populates `grad` for every gradient-tracking tensor reachable from
/// `loss` through recorded operations. `loss` must be a single element.
///
/// Gradients accumulate additively: a tensor consumed by several branches
/// receives the sum of the branch contributions, and repeated backward
/// calls keep accumulating until [`Tensor::zero_grad`] clears the slot.
pub fn backward<F: Scalar>(loss: &Tensor<F>) -> Result<()> {
    if loss.len() != 1 {
        return Err(Error::NotScalarLoss { len: loss.len() });
    }
    loss.seed_grad_ones();
    for t in reverse_topo(loss) {
        let Some(node) = t.node() else { continue };
        if !t.wants_grad() {
            continue;
        }
        let guard = t.grad_guard();
        if let Some(g) = guard.as_ref() {
            (node.backward)(g);
        }
    }
    Ok(())
}

/// [`backward`] plus the parameter-set contract: every listed parameter
/// ends up with a gradient, zeros if it is disconnected from the loss.
pub fn backward_params<F: Scalar>(loss: &Tensor<F>, params: &[Tensor<F>]) -> Result<()> {
    backward(loss)?;
    for p in params {
        if p.requires_grad() && p.grad().is_none() {
            p.set_grad(vec![F::zero(); p.len()]);
        }
    }
    Ok(())
}
