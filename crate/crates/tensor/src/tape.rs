//! Wengert-list reverse-mode autodiff.
//!
//! Operations append nodes to a [`Tape`] during the forward pass; [`Tape::backward`]
//! walks them in exact reverse recording order, applying each node's backward
//! rule, then clears the tape.

use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorId};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs handed to a backward rule.
pub struct BackwardCtx<'a, E: Scalar> {
    pub inputs: &'a [&'a Tensor<E>],
    pub output: &'a Tensor<E>,
    pub grad: &'a Tensor<E>,
    /// `needs[i]` is false when input `i` does not take part in differentiation;
    /// rules may return `None` for such inputs.
    pub needs: &'a [bool],
}

pub type BackwardFn<E> = Box<dyn Fn(&BackwardCtx<'_, E>) -> Result<Vec<Option<Tensor<E>>>>>;

struct Node<E: Scalar> {
    value: Tensor<E>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<E>>,
    requires_grad: bool,
    /// Set for leaves bound from a `requires_grad` tensor.
    source: Option<TensorId>,
}

/// Ordered operation record for one forward/backward step.
pub struct Tape<E: Scalar = f32> {
    nodes: RefCell<Vec<Node<E>>>,
    grad_enabled: bool,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: true }
    }

    /// A tape that records values only. Every leaf is treated as constant and
    /// no backward rules are stored.
    pub fn no_grad() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Number of recorded nodes carrying a backward rule.
    pub fn differentiable_len(&self) -> usize {
        self.nodes.borrow().iter().filter(|n| n.backward.is_some()).count()
    }

    /// Records a copy of `t`. Gradients flow back to `t.id()` when `t` requires grad.
    pub fn leaf(&self, t: &Tensor<E>) -> Var {
        let requires_grad = self.grad_enabled && t.requires_grad();
        let source = requires_grad.then(|| t.id());
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        self.push(Node { value, inputs: Vec::new(), backward: None, requires_grad, source })
    }

    /// Records an owned value that never receives gradient.
    pub fn constant(&self, t: Tensor<E>) -> Var {
        self.push(Node { value: t, inputs: Vec::new(), backward: None, requires_grad: false, source: None })
    }

    fn push(&self, node: Node<E>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<E>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    /// Owned copy of a recorded value.
    pub fn tensor(&self, v: Var) -> Tensor<E> {
        let t = self.value(v);
        Tensor::from_parts(t.shape().to_vec(), t.data().to_vec())
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub(crate) fn check(&self, vars: &[Var]) -> Result<()> {
        let len = self.nodes.borrow().len();
        match vars.iter().find(|v| v.0 >= len) {
            Some(v) => Err(TensorError::UnknownVar(v.0)),
            None => Ok(()),
        }
    }

    /// Runs `forward` on the input values and records the result together with
    /// `backward`. The rule is dropped when no input requires grad.
    pub fn record<F, B>(&self, inputs: &[Var], forward: F, backward: B) -> Result<Var>
    where
        F: FnOnce(&[&Tensor<E>]) -> Result<Tensor<E>>,
        B: Fn(&BackwardCtx<'_, E>) -> Result<Vec<Option<Tensor<E>>>> + 'static,
    {
        self.check(inputs)?;
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor<E>> = inputs.iter().map(|v| &nodes[v.0].value).collect();
            let rg = self.grad_enabled && inputs.iter().any(|v| nodes[v.0].requires_grad);
            (forward(&vals)?, rg)
        };
        let backward: Option<BackwardFn<E>> = if requires_grad { Some(Box::new(backward)) } else { None };
        Ok(self.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward,
            requires_grad,
            source: None,
        }))
    }

    /// Back-propagates from a scalar `loss` and clears the tape.
    ///
    /// Every recorded leaf bound from a `requires_grad` tensor receives an
    /// entry, zero-filled when the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        if loss.0 >= nodes.len() {
            return Err(TensorError::UnknownVar(loss.0));
        }
        let loss_shape = nodes[loss.0].value.shape().to_vec();
        if nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NotScalar(loss_shape));
        }

        let mut grads: Vec<Option<Tensor<E>>> = (0..nodes.len()).map(|_| None).collect();
        let mut out = Gradients { by_id: BTreeMap::new() };
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::from_parts(loss_shape, vec![E::one()]));
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if let Some(id) = node.source {
                out.accumulate(id, g);
                continue;
            }
            let Some(rule) = &node.backward else { continue };
            let inputs: Vec<&Tensor<E>> = node.inputs.iter().map(|&j| &nodes[j].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&j| nodes[j].requires_grad).collect();
            let ctx = BackwardCtx { inputs: &inputs, output: &node.value, grad: &g, needs: &needs };
            let input_grads = rule(&ctx)?;
            for (&j, gj) in node.inputs.iter().zip(input_grads) {
                let Some(gj) = gj else { continue };
                if !nodes[j].requires_grad {
                    continue;
                }
                if gj.shape() != nodes[j].value.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "backward",
                        lhs: nodes[j].value.shape().to_vec(),
                        rhs: gj.shape().to_vec(),
                    });
                }
                match &mut grads[j] {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(gj.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(gj),
                }
            }
        }

        for node in nodes.iter() {
            if let Some(id) = node.source {
                out.by_id.entry(id).or_insert_with(|| Tensor::from_parts(node.value.shape().to_vec(), vec![E::zero(); node.value.numel()]));
            }
        }
        nodes.clear();
        Ok(out)
    }
}

/// Gradients produced by one backward pass, keyed by source tensor identity.
#[derive(Debug)]
pub struct Gradients<E: Scalar> {
    by_id: BTreeMap<TensorId, Tensor<E>>,
}

impl<E: Scalar> Gradients<E> {
    fn accumulate(&mut self, id: TensorId, g: Tensor<E>) {
        match self.by_id.get_mut(&id) {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => {
                self.by_id.insert(id, g);
            }
        }
    }

    pub fn get(&self, t: &Tensor<E>) -> Option<&Tensor<E>> {
        self.by_id.get(&t.id())
    }

    pub fn take(&mut self, t: &Tensor<E>) -> Option<Tensor<E>> {
        self.by_id.remove(&t.id())
    }

    /// Moves this tensor's gradient into `t.grad` (replacing any previous one).
    pub fn assign(&mut self, t: &mut Tensor<E>) -> Result<()> {
        if let Some(g) = self.by_id.remove(&t.id()) {
            t.set_grad(g)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}
