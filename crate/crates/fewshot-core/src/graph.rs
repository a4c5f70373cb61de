//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A [`Graph`] records one forward computation. Each op pushes a node holding
//! its output value and, when the graph is recording and a parent needs a
//! gradient, a backward closure that maps the upstream gradient to per-parent
//! gradients. `backward()` walks the tape in reverse, accumulating gradients
//! for every node on a differentiable path, so intermediate activations
//! (e.g. the feature map a CAM needs) can be queried afterwards just like
//! parameter leaves.
//!
//! Graphs are single-threaded by construction; disjoint graphs may live on
//! different threads. Tensors are immutable once pushed, so replaying the
//! tape is always consistent with the forward pass.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{CoreError, Result};
use crate::params::Parameter;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Backward closure: upstream gradient and a per-parent "is needed" mask in,
/// per-parent gradients out (entries may be `None` where masked off).
pub(crate) type BackwardFn<S> = Box<dyn Fn(&Tensor<S>, &[bool]) -> Vec<Option<Tensor<S>>>>;

struct Node<S: Scalar> {
    value: Tensor<S>,
    needs_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn<S>>,
    param_id: Option<u64>,
}

pub struct Graph<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    grads: RefCell<Vec<Option<Tensor<S>>>>,
    bindings: RefCell<HashMap<u64, Var>>,
    recording: bool,
}

impl<S: Scalar> Graph<S> {
    /// A graph that records backward closures for training.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            bindings: RefCell::new(HashMap::new()),
            recording: true,
        }
    }

    /// A forward-only graph: same values, no backward machinery.
    pub fn inference() -> Self {
        Graph { recording: false, ..Graph::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Insert a tensor that never needs a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var {
        self.push_raw(value, false, None)
    }

    /// Insert an input tensor, optionally tracked for gradients.
    pub fn leaf(&self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push_raw(value, requires_grad && self.recording, None)
    }

    /// Bind a parameter as a leaf. Binding is memoized per graph so a
    /// parameter used several times (e.g. a shared encoder applied to both
    /// support and query batches) accumulates one gradient.
    pub fn bind(&self, param: &Rc<Parameter<S>>) -> Var {
        if let Some(&v) = self.bindings.borrow().get(&param.id()) {
            return v;
        }
        let v = {
            let value = param.value();
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value,
                needs_grad: self.recording,
                parents: Vec::new(),
                backward: None,
                param_id: Some(param.id()),
            });
            Var(nodes.len() - 1)
        };
        self.bindings.borrow_mut().insert(param.id(), v);
        v
    }

    fn push_raw(&self, value: Tensor<S>, needs_grad: bool, param_id: Option<u64>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, needs_grad, parents: Vec::new(), backward: None, param_id });
        Var(nodes.len() - 1)
    }

    /// Central entry point for ops: validates finiteness, wires parents,
    /// and stores the backward closure only when it can ever be called.
    pub(crate) fn push_op(
        &self,
        op: &'static str,
        value: Tensor<S>,
        parents: &[Var],
        make_backward: impl FnOnce() -> BackwardFn<S>,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(CoreError::NonFinite { op });
        }
        let needs_grad = {
            let nodes = self.nodes.borrow();
            self.recording && parents.iter().any(|p| nodes[p.0].needs_grad)
        };
        let backward = if needs_grad { Some(make_backward()) } else { None };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            needs_grad,
            parents: parents.to_vec(),
            backward,
            param_id: None,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Value of a node (cheap clone: tensors are reference-counted).
    pub fn value(&self, v: Var) -> Tensor<S> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// Reverse pass from a scalar output. Gradients for every node on a
    /// differentiable path are retained and queryable via [`Graph::grad`].
    pub fn backward(&self, output: Var) -> Result<()> {
        if !self.recording {
            return Err(CoreError::State("backward() on an inference graph".into()));
        }
        let nodes = self.nodes.borrow();
        let out_node = &nodes[output.0];
        if out_node.value.numel() != 1 {
            return Err(CoreError::Shape {
                op: "backward",
                msg: format!("output must be scalar, got shape {:?}", out_node.value.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; nodes.len()];
        grads[output.0] = Some(Tensor::full(out_node.value.shape(), S::ONE));

        for i in (0..=output.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            let node = &nodes[i];
            let Some(backward) = &node.backward else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|p| nodes[p.0].needs_grad).collect();
            let upstream = grads[i].as_ref().expect("grad present");
            let parent_grads = backward(upstream, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, grad) in node.parents.iter().zip(parent_grads) {
                let Some(grad) = grad else { continue };
                debug_assert_eq!(
                    grad.shape(),
                    nodes[parent.0].value.shape(),
                    "gradient shape mismatch at node {}",
                    parent.0
                );
                grads[parent.0] = Some(match grads[parent.0].take() {
                    Some(existing) => existing.add(&grad),
                    None => grad,
                });
            }
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    /// Gradient of the last `backward()` output w.r.t. this node, if any.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        self.grads.borrow().get(v.0).and_then(|g| g.clone())
    }

    /// Gradient reaching a bound parameter, if it participated in the graph.
    pub fn param_grad(&self, param: &Rc<Parameter<S>>) -> Option<Tensor<S>> {
        let v = *self.bindings.borrow().get(&param.id())?;
        debug_assert_eq!(self.nodes.borrow()[v.0].param_id, Some(param.id()));
        self.grad(v)
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Graph::new()
    }
}
