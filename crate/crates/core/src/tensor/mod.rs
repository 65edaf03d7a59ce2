//! Dense tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are row-major `Vec<T>` buffers tagged with a shape. Every
//! operation that depends on a gradient-requiring tensor records itself
//! into an implicit DAG (the result holds `Rc` handles to its inputs plus
//! a backward closure). [`backward`] walks that DAG once in reverse
//! topological order and accumulates gradients into the leaves.
//!
//! Backward closures are themselves written in terms of tensor ops, so a
//! backward pass run with `create_graph` (see [`grad_wrt`]) produces new
//! graph nodes and second-order gradients work — this is what the WGAN
//! gradient penalty needs.
//!
//! Graphs are single-owner and single-threaded (`Rc`, not `Arc`); batch
//! parallelism happens inside individual kernels over disjoint output
//! slices, which keeps results bit-identical regardless of thread count.
//!
//! Shape mismatches are treated as programming errors and panic with a
//! descriptive message; data-dependent failures (non-finite losses,
//! malformed files) are surfaced as `Result`s by the higher-level modules.

mod conv;
mod losses;
mod nn;
pub mod optim;
pub mod params;
mod ops;

pub use conv::conv2d;
pub use losses::{one_hot, soft_dice_loss, softmax_channels, softmax_cross_entropy};
pub use nn::{instance_norm, minibatch_stddev, pixel_norm};

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

/// Element type of a tensor: `f32` for training, `f64` for the
/// finite-difference test mode.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// Element width in bytes, doubling as the checkpoint dtype tag.
    const BYTE_WIDTH: usize;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Append the little-endian bit pattern (bit-exact, NaN-preserving).
    fn write_le(self, out: &mut Vec<u8>);
    /// Decode from exactly `BYTE_WIDTH` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const BYTE_WIDTH: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 needs 4 bytes"))
    }
}

impl Scalar for f64 {
    const BYTE_WIDTH: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 needs 8 bytes"))
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {op}: {detail}")]
    NonFinite { op: String, detail: String },
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Is op recording currently enabled on this thread?
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` with op recording disabled (constant-only results).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

/// Backward closure of a recorded op: given the cotangent of the output,
/// produce cotangents for the parents marked `wanted`.
type VjpFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: Cell<bool>,
    parents: Vec<Tensor<T>>,
    vjp: Option<VjpFn<T>>,
}

/// Shared handle to one node of the differentiation graph.
pub struct Tensor<T: Scalar = f32> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn from_parts(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(requires_grad),
                parents: Vec::new(),
                vjp: None,
            }),
        }
    }

    /// Constant leaf.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        Self::from_parts(data, shape.to_vec(), false)
    }

    /// Trainable leaf: participates in gradients.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Self {
        Self::from_parts(data, shape.to_vec(), true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_vec(vec![value; shape.iter().product()], shape)
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(vec![value], &[1])
    }

    /// Result of a recorded op. Records parents + vjp only when grad mode
    /// is on and some parent participates in a gradient.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        vjp: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Self {
        let record = grad_enabled() && parents.iter().any(Tensor::needs_grad);
        if !record {
            return Self::from_parts(data, shape, false);
        }
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "op produced shape {:?} for data length {}",
            shape,
            data.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
                parents,
                vjp: Some(Box::new(vjp)),
            }),
        }
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

    /// Borrow the value buffer.
    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data.borrow()[0]
    }

    /// Overwrite the value buffer in place (leaves only: optimizers and
    /// checkpoint loading). Graph nodes are immutable.
    pub fn set_data(&self, values: &[T]) {
        assert!(
            self.inner.parents.is_empty(),
            "set_data on a non-leaf graph node"
        );
        assert_eq!(values.len(), self.len(), "set_data length mismatch");
        self.inner.data.borrow_mut().copy_from_slice(values);
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Toggle participation of a leaf in future graphs. Existing recorded
    /// graphs are unaffected; toggle between graph builds only.
    pub fn set_requires_grad(&self, value: bool) {
        assert!(
            self.inner.parents.is_empty(),
            "set_requires_grad on a non-leaf graph node"
        );
        self.inner.requires_grad.set(value);
    }

    fn is_graph_node(&self) -> bool {
        !self.inner.parents.is_empty()
    }

    /// True when gradients must flow to or through this tensor.
    pub fn needs_grad(&self) -> bool {
        self.is_graph_node() || self.inner.requires_grad.get()
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn accumulate_into_grad(&self, contrib: &[T]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e = *e + *c;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    /// Constant copy of this tensor, cut off from the graph.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(self.to_vec(), &self.inner.shape)
    }

    /// Largest absolute value (0 for empty tensors).
    pub fn max_abs(&self) -> T {
        self.inner
            .data
            .borrow()
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Error unless every element is finite.
    pub fn check_finite(&self, op: &str) -> Result<(), TensorError> {
        if self.all_finite() {
            Ok(())
        } else {
            let data = self.inner.data.borrow();
            let bad = data.iter().position(|v| !v.is_finite()).unwrap_or(0);
            Err(TensorError::NonFinite {
                op: op.to_string(),
                detail: format!(
                    "element {} of shape {:?} is {}",
                    bad,
                    self.shape(),
                    data[bad]
                ),
            })
        }
    }
}

/// Reverse topological order (root first) of the recorded graph under `root`.
fn reverse_topo<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut postorder: Vec<Tensor<T>> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // Iterative postorder DFS: (node, parents_pushed).
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            postorder.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for parent in node.inner.parents.iter().rev() {
            if parent.needs_grad() && !visited.contains(&parent.id()) {
                stack.push((parent.clone(), false));
            }
        }
    }
    postorder.reverse();
    postorder
}

/// Core backward walk. Returns the cotangent map keyed by node id.
fn backward_map<T: Scalar>(
    root: &Tensor<T>,
    extra_wanted: &HashSet<u64>,
) -> Result<HashMap<u64, Tensor<T>>, TensorError> {
    if root.len() != 1 {
        return Err(TensorError::NonScalarLoss(root.shape().to_vec()));
    }
    let order = reverse_topo(root);
    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
    grads.insert(root.id(), Tensor::full(root.shape(), T::one()));
    for node in &order {
        let Some(gout) = grads.get(&node.id()).cloned() else {
            continue;
        };
        let Some(vjp) = node.inner.vjp.as_ref() else {
            continue;
        };
        let wanted: Vec<bool> = node
            .inner
            .parents
            .iter()
            .map(|p| p.is_graph_node() || p.requires_grad() || extra_wanted.contains(&p.id()))
            .collect();
        let contribs = vjp(&gout, &wanted);
        assert_eq!(
            contribs.len(),
            node.inner.parents.len(),
            "vjp returned {} contributions for {} parents",
            contribs.len(),
            node.inner.parents.len()
        );
        for (parent, contrib) in node.inner.parents.iter().zip(contribs) {
            let Some(contrib) = contrib else { continue };
            assert_eq!(
                contrib.shape(),
                parent.shape(),
                "vjp contribution shape {:?} != parent shape {:?}",
                contrib.shape(),
                parent.shape()
            );
            match grads.get(&parent.id()) {
                Some(existing) => {
                    let sum = existing.add(&contrib);
                    grads.insert(parent.id(), sum);
                }
                None => {
                    grads.insert(parent.id(), contrib);
                }
            }
        }
    }
    Ok(grads)
}

/// Populate `.grad` on every reachable `requires_grad` leaf of the graph
/// under `loss`. Gradients accumulate; call [`Tensor::zero_grad`] (or the
/// optimizers' `zero_grads`) between steps.
pub fn backward<T: Scalar>(loss: &Tensor<T>) -> Result<(), TensorError> {
    no_grad(|| {
        let grads = backward_map(loss, &HashSet::new())?;
        for node in reverse_topo(loss) {
            if !node.is_graph_node() && node.requires_grad() {
                if let Some(g) = grads.get(&node.id()) {
                    node.accumulate_into_grad(&g.data());
                }
            }
        }
        Ok(())
    })
}

/// Functional gradients of `loss` w.r.t. `inputs`, without touching `.grad`.
///
/// With `create_graph` the returned tensors are themselves graph nodes, so
/// an expression built from them can be differentiated again (second-order
/// gradients, as in the WGAN gradient penalty).
pub fn grad_wrt<T: Scalar>(
    loss: &Tensor<T>,
    inputs: &[&Tensor<T>],
    create_graph: bool,
) -> Result<Vec<Tensor<T>>, TensorError> {
    let wanted: HashSet<u64> = inputs.iter().map(|t| t.id()).collect();
    let run = |wanted: &HashSet<u64>| -> Result<Vec<Tensor<T>>, TensorError> {
        let grads = backward_map(loss, wanted)?;
        Ok(inputs
            .iter()
            .map(|t| match grads.get(&t.id()) {
                Some(g) => g.clone(),
                None => Tensor::zeros(t.shape()),
            })
            .collect())
    };
    if create_graph {
        run(&wanted)
    } else {
        no_grad(|| run(&wanted))
    }
}
