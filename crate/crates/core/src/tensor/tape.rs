use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::ops::Op;
use super::Tensor;
use crate::error::{Error, Result};

/// Index of a recorded entry on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside the tensor module.
///
/// The tape stores the forward value itself; implementors only provide the
/// vector-Jacobian product. `needs[i]` is false for inputs that do not
/// require a gradient, and the corresponding output slot may be `None`.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        grad_out: &Tensor,
        inputs: &[&Tensor],
        output: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

pub(crate) struct Node {
    pub(crate) value: Rc<Tensor>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) is_param: bool,
}

/// Records operations in execution order so they can be replayed backwards.
///
/// Entries are append-only, so every entry's parents precede it.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id.0)
            .field("shape", &self.value().shape())
            .finish()
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

    /// A trainable leaf. Its gradient is always reported by [`Tape::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad: true,
            is_param: true,
        })
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad: false,
            is_param: false,
        })
    }

    /// Records a custom operation whose forward value was computed by the caller.
    pub fn custom<'t>(&'t self, inputs: &[Var<'t>], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var<'t>> {
        for v in inputs {
            self.check(*v)?;
        }
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(output, Op::Custom(ids, op)))
    }

    pub(crate) fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|p| nodes[p.0].requires_grad)
        };
        self.push_node(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            is_param: false,
        })
    }

    fn push_node(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(node);
        Var { tape: self, id }
    }

    pub(crate) fn value_of(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id.0].value)
    }

    pub(crate) fn check(&self, v: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, v.tape) && v.id.0 < self.len() {
            Ok(())
        } else {
            Err(Error::ForeignNode(v.id.0))
        }
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Every parameter leaf gets an entry in the result, zero-filled when the
    /// loss does not depend on it. Contributions from multiple consumers of a
    /// node are summed.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check(loss)?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id.0];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }

        let mut pending: Vec<Option<Tensor>> = vec![None; loss.id.0 + 1];
        pending[loss.id.0] = Some(Tensor::full(root.value.shape(), 1.0));
        let mut out = HashMap::new();

        for idx in (0..=loss.id.0).rev() {
            let Some(grad) = pending[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            if node.requires_grad && !matches!(node.op, Op::Leaf) {
                for (parent, contribution) in node.op.backward(&grad, &node.value, &nodes)? {
                    if !nodes[parent.0].requires_grad {
                        continue;
                    }
                    match &mut pending[parent.0] {
                        Some(acc) => acc.accumulate(&contribution),
                        slot => *slot = Some(contribution),
                    }
                }
            }
            if node.is_param || idx == loss.id.0 {
                out.insert(NodeId(idx), grad);
            }
        }

        for (idx, node) in nodes.iter().enumerate() {
            if node.is_param {
                out.entry(NodeId(idx))
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Result of [`Tape::backward`]: gradients for parameters and the loss itself.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(&v.id)
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a one-element node.
    pub fn item(self) -> Option<f64> {
        self.value().item()
    }
}
