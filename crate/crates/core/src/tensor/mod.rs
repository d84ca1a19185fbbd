//! Minimal differentiable N-d array engine.
//!
//! Exactly the operations the model needs: conv2d, a handful of elementwise
//! and reduction ops, channel concat, 2x average pooling / nearest upsampling,
//! and a per-channel bias add. Values are computed eagerly; when an operand is
//! attached to a [`Graph`] the operation is also recorded so that
//! [`backward`] can replay the tape in reverse.
//!
//! Precision is generic: `f32` for training, `f64` for finite-difference
//! verification.

mod backward;
pub mod check;
mod conv;
mod ops;

pub use backward::{backward, Gradients};
pub use check::finite_diff_check;
pub use conv::{col2im, im2col, matmul_nn, matmul_nt};
pub use ops::{conv2d, linear};

use std::cell::RefCell;
use std::fmt;
use std::iter::Sum;
use std::rc::Rc;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Element type of the engine: `f32` for training, `f64` for checks.
pub trait Scalar: Float + Sum + fmt::Debug + fmt::Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// One standard-normal draw from the given stream.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

/// Plain shape + row-major storage, without graph attachment.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorData<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> TensorData<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "tensor",
                format!("dimensions must be positive, got {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} implies {numel} values but {} were given",
                    data.len()
                ),
            ));
        }
        Ok(TensorData { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        TensorData {
            shape,
            data: vec![E::zero(); numel],
        }
    }

    pub fn full(shape: Vec<usize>, v: E) -> Self {
        let numel = shape.iter().product();
        TensorData {
            shape,
            data: vec![v; numel],
        }
    }

    pub fn scalar(v: E) -> Self {
        TensorData {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Standard-normal fill, consumed in row-major order from `rng`.
    pub fn randn<R: Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        TensorData {
            shape,
            data: (0..numel).map(|_| E::standard_normal(rng)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<F: Scalar>(&self, f: impl Fn(E) -> F) -> TensorData<F> {
        TensorData {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> TensorData<f64> {
        self.map(|v| v.as_f64())
    }

    pub fn to_f32(&self) -> TensorData<f32> {
        self.map(|v| v.as_f64() as f32)
    }
}

/// Operation record on the tape. Input operands are node indices.
#[derive(Debug)]
enum Op<E> {
    /// Input node; `needs_grad` doubles as its requires-grad flag.
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, E),
    AddScalar(usize, E),
    Tanh(usize),
    Relu(usize),
    /// `max(x, floor).powf(exp)`; gradient is zero at or below the floor.
    PowFloor {
        input: usize,
        exp: E,
        floor: E,
    },
    Mean(usize),
    Sum(usize),
    L2Norm(usize),
    Conv2d {
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AddBias2d {
        map: usize,
        bias: usize,
    },
    Linear {
        weight: usize,
        input: usize,
        bias: usize,
    },
    ConcatC(usize, usize),
    AvgPool2(usize),
    Upsample2(usize),
}

struct Node<E> {
    value: Rc<TensorData<E>>,
    op: Op<E>,
    needs_grad: bool,
}

/// Recording tape. Nodes are appended in topological order, so the backward
/// pass is a single reverse sweep that visits every node exactly once.
pub struct Graph<E: Scalar> {
    nodes: Rc<RefCell<Vec<Node<E>>>>,
}

impl<E: Scalar> Clone for Graph<E> {
    fn clone(&self) -> Self {
        Graph {
            nodes: Rc::clone(&self.nodes),
        }
    }
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    fn same_as(&self, other: &Graph<E>) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Rc<TensorData<E>>, op: Op<E>, needs_grad: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        nodes.len() - 1
    }

    /// A differentiable leaf. Gradients accumulate into it during [`backward`].
    pub fn leaf(&self, value: TensorData<E>) -> Tensor<E> {
        let value = Rc::new(value);
        let id = self.push(Rc::clone(&value), Op::Leaf, true);
        Tensor {
            value,
            node: Some((self.clone(), id)),
        }
    }

    fn constant_node(&self, value: Rc<TensorData<E>>) -> usize {
        self.push(value, Op::Leaf, false)
    }

    fn with_nodes<T>(&self, f: impl FnOnce(&[Node<E>]) -> T) -> T {
        f(&self.nodes.borrow())
    }
}

/// Value handle. Cheap to clone; carries an optional tape position.
pub struct Tensor<E: Scalar> {
    value: Rc<TensorData<E>>,
    node: Option<(Graph<E>, usize)>,
}

impl<E: Scalar> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            value: Rc::clone(&self.value),
            node: self.node.clone(),
        }
    }
}

impl<E: Scalar> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.value.shape)
            .field("recorded", &self.node.is_some())
            .finish()
    }
}

impl<E: Scalar> Tensor<E> {
    /// A tensor not attached to any graph; operations on it are pure eager
    /// computation.
    pub fn constant(value: TensorData<E>) -> Self {
        Tensor {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        Ok(Self::constant(TensorData::new(shape, data)?))
    }

    pub fn scalar_value(v: E) -> Self {
        Self::constant(TensorData::scalar(v))
    }

    pub fn shape(&self) -> &[usize] {
        &self.value.shape
    }

    pub fn numel(&self) -> usize {
        self.value.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.value.data
    }

    pub fn value(&self) -> &TensorData<E> {
        &self.value
    }

    pub fn detach(&self) -> TensorData<E> {
        (*self.value).clone()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<E> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected scalar, got shape {:?}", self.shape()),
            ));
        }
        Ok(self.value.data[0])
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    pub(crate) fn graph(&self) -> Option<&Graph<E>> {
        self.node.as_ref().map(|(g, _)| g)
    }

    fn needs_grad(&self) -> bool {
        match &self.node {
            None => false,
            Some((g, id)) => g.with_nodes(|nodes| nodes[*id].needs_grad),
        }
    }
}

/// Resolves the common graph of an operation's inputs and records the op when
/// any input participates in gradient flow. Inputs that are plain constants
/// get promoted to non-differentiable leaf nodes.
fn record<E: Scalar>(
    inputs: &[&Tensor<E>],
    out: Rc<TensorData<E>>,
    make: impl FnOnce(&[usize]) -> Op<E>,
) -> Tensor<E> {
    let mut graph: Option<&Graph<E>> = None;
    for t in inputs {
        if let Some((g, _)) = &t.node {
            match graph {
                None => graph = Some(g),
                Some(g0) => assert!(g0.same_as(g), "operands belong to different graphs"),
            }
        }
    }
    let needs = inputs.iter().any(|t| t.needs_grad());
    let node = match (graph, needs) {
        (Some(g), true) => {
            let ids: Vec<usize> = inputs
                .iter()
                .map(|t| match &t.node {
                    Some((_, id)) => *id,
                    None => g.constant_node(Rc::clone(&t.value)),
                })
                .collect();
            let id = g.push(Rc::clone(&out), make(&ids), true);
            Some((g.clone(), id))
        }
        _ => None,
    };
    Tensor { value: out, node }
}
