//! Reverse-mode differentiation over a recorded sequence of layer ops.

use super::ops::{self, LstmCache};
use super::{NumericsError, Scalar, Tensor};

type Result<T> = std::result::Result<T, NumericsError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv2d { x: Var, k: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Relu { x: Var },
    Reshape { x: Var },
    Lstm { x: Var, w_in: Var, w_rec: Var, b: Var, cache: LstmCache<T> },
    Dense { x: Var, w: Var, b: Var },
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Tensor<T> },
    Probe { x: Var, weights: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d_same(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let y = ops::conv2d_same(self.value(x), self.value(k), self.value(b))?;
        Ok(self.push(y, Op::Conv2d { x, k, b }))
    }

    pub fn maxpool_freq(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::maxpool_freq(self.value(x))?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    pub fn lstm_seq(&mut self, x: Var, w_in: Var, w_rec: Var, b: Var) -> Result<Var> {
        let (y, cache) = ops::lstm_seq(self.value(x), self.value(w_in), self.value(w_rec), self.value(b))?;
        Ok(self.push(y, Op::Lstm { x, w_in, w_rec, b, cache }))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Dense { x, w, b }))
    }

    /// Mean cross-entropy of row-wise softmax. Returns the scalar loss
    /// variable and the probabilities.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<(Var, Tensor<T>)> {
        let (loss, probs) = ops::softmax_xent(self.value(logits), targets)?;
        let v = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs: probs.clone(),
            },
        );
        Ok((v, probs))
    }

    /// Scalar `Σ weights ⊙ x`; turns any tensor into a differentiable scalar.
    pub fn probe(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        if weights.shape() != self.value(x).shape() {
            return Err(NumericsError::shape("probe", "weights must match input shape".into()));
        }
        let s: T = self.value(x).data().iter().zip(weights.data()).map(|(&a, &w)| a * w).sum();
        Ok(self.push(Tensor::scalar(s), Op::Probe { x, weights }))
    }

    /// Backpropagates from the scalar `loss` through every recorded op.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::InvalidArgument("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d { x, k, b } => {
                    let (dx, dk, db) =
                        ops::conv2d_same_backward(self.value(*x), self.value(*k), self.value(*b), &g)?;
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *b, db);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = ops::maxpool_freq_backward(self.value(*x).shape(), argmax, &g);
                    acc(&mut grads, *x, dx);
                }
                Op::Relu { x } => {
                    let dx = ops::relu_backward(self.value(*x), &g);
                    acc(&mut grads, *x, dx);
                }
                Op::Reshape { x } => {
                    let dx = g.reshape(self.value(*x).shape())?;
                    acc(&mut grads, *x, dx);
                }
                Op::Lstm { x, w_in, w_rec, b, cache } => {
                    let (dx, dwi, dwr, db) = ops::lstm_seq_backward(
                        self.value(*x),
                        self.value(*w_in),
                        self.value(*w_rec),
                        self.value(*b),
                        &node.value,
                        cache,
                        &g,
                    )?;
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w_in, dwi);
                    acc(&mut grads, *w_rec, dwr);
                    acc(&mut grads, *b, db);
                }
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) = ops::dense_backward(self.value(*x), self.value(*w), self.value(*b), &g)?;
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::SoftmaxXent { logits, targets, probs } => {
                    let dl = ops::softmax_xent_backward(probs, targets, g.data()[0]);
                    acc(&mut grads, *logits, dl);
                }
                Op::Probe { x, weights } => {
                    let s = g.data()[0];
                    acc(&mut grads, *x, weights.map(|w| w * s));
                }
            }
        }
        Ok(Gradients { grads })
    }
}
