//! Reverse-mode differentiation over an explicitly recorded graph.
//!
//! A `Graph` is built fresh for every batch: leaves are pushed first, every op
//! appends a node whose inputs already exist, so node order is a topological
//! order and backward is a single reverse sweep.

use super::tensor::{
    check_labels, check_linear_shapes, linear_raw, softmax_ce_raw, Parameter, Tensor,
};
use crate::error::{FedQuadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf {
        requires_grad: bool,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddScalar(NodeId),
    Scale(NodeId, f64),
    Mean(NodeId),
    Sum(NodeId),
    SumSquares(NodeId),
    SliceRows {
        x: NodeId,
        start: usize,
    },
    /// Row-wise Euclidean distance (or its square) between two matrices.
    RowDistance {
        a: NodeId,
        b: NodeId,
        squared: bool,
    },
    /// Fused softmax + mean negative log-likelihood; keeps the probabilities.
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Adds this pass's gradient for `id` into `param.gradient`. Calling it for
    /// several passes without `zero_grad` in between accumulates.
    pub fn accumulate(&self, id: NodeId, param: &mut Parameter) {
        if let Some(g) = self.get(id) {
            for (acc, &v) in param.gradient.data_mut().iter_mut().zip(g.data()) {
                *acc += v;
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(
            value,
            Op::Leaf {
                requires_grad: false,
            },
        )
    }

    /// A differentiable leaf.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(
            value,
            Op::Leaf {
                requires_grad: true,
            },
        )
    }

    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        check_linear_shapes(x, w, b)?;
        let out = linear_raw(x, w, b);
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    fn zip_with(
        &self,
        a: NodeId,
        b: NodeId,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.check_same_shape(tb, op)?;
        Tensor::new(
            ta.shape().to_vec(),
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(x);
        if t.shape().len() != 2 || start >= end || end > t.rows() {
            return Err(FedQuadError::Dimension {
                op: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let cols = t.cols();
        let out = Tensor::new(
            vec![end - start, cols],
            t.data()[start * cols..end * cols].to_vec(),
        )?;
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let out = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(out, Op::Mean(x))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(out, Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        self.push(out, Op::SumSquares(x))
    }

    /// Distance between matching rows of two `B x E` matrices, giving `[B]`.
    pub fn row_distance(&mut self, a: NodeId, b: NodeId, squared: bool) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.check_same_shape(tb, "row_distance")?;
        let rows = ta.rows();
        let dists: Vec<f64> = (0..rows)
            .map(|r| {
                let ss: f64 = ta
                    .row(r)
                    .iter()
                    .zip(tb.row(r))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                if squared {
                    ss
                } else {
                    ss.sqrt()
                }
            })
            .collect();
        let out = Tensor::vector(dists);
        Ok(self.push(out, Op::RowDistance { a, b, squared }))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.rows() != labels.len() {
            return Err(FedQuadError::Dimension {
                op: "softmax_cross_entropy",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        check_labels(labels, t.cols())?;
        let (loss, probs) = softmax_ce_raw(t, labels);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(FedQuadError::State(
                "backward called on an empty graph".into(),
            ));
        }
        let Some(root) = self.nodes.get(loss.0) else {
            return Err(FedQuadError::State(format!(
                "node {} was never recorded",
                loss.0
            )));
        };
        if root.value.len() != 1 {
            return Err(FedQuadError::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { requires_grad } => {
                    if *requires_grad {
                        grads[idx] = Some(g);
                    }
                    continue;
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (b, d_in) = (x.shape()[0], x.shape()[1]);
                    let d_out = w.shape()[1];
                    let gd = g.data();

                    let mut gx = vec![0.0; b * d_in];
                    let mut gw = vec![0.0; d_in * d_out];
                    let mut gb = vec![0.0; d_out];
                    for r in 0..b {
                        let grow = &gd[r * d_out..(r + 1) * d_out];
                        let xrow = x.row(r);
                        for (acc, &v) in gb.iter_mut().zip(grow) {
                            *acc += v;
                        }
                        for i in 0..d_in {
                            let wrow = &w.data()[i * d_out..(i + 1) * d_out];
                            let mut s = 0.0;
                            for j in 0..d_out {
                                s += grow[j] * wrow[j];
                                gw[i * d_out + j] += xrow[i] * grow[j];
                            }
                            gx[r * d_in + i] = s;
                        }
                    }
                    add_grad(&mut grads, *input, x.shape(), gx);
                    add_grad(&mut grads, *weight, w.shape(), gw);
                    add_grad(&mut grads, *bias, &[d_out], gb);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                        .collect();
                    add_grad(&mut grads, *x, xv.shape(), gx);
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let cols = xv.cols();
                    let mut gx = vec![0.0; xv.len()];
                    gx[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    add_grad(&mut grads, *x, xv.shape(), gx);
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, g.shape(), g.data().to_vec());
                    add_grad(&mut grads, *b, g.shape(), g.data().to_vec());
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *a, g.shape(), g.data().to_vec());
                    add_grad(
                        &mut grads,
                        *b,
                        g.shape(),
                        g.data().iter().map(|v| -v).collect(),
                    );
                }
                Op::AddScalar(x) => {
                    add_grad(&mut grads, *x, g.shape(), g.data().to_vec());
                }
                Op::Scale(x, s) => {
                    add_grad(
                        &mut grads,
                        *x,
                        g.shape(),
                        g.data().iter().map(|v| v * s).collect(),
                    );
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let share = g.item() / xv.len() as f64;
                    add_grad(&mut grads, *x, xv.shape(), vec![share; xv.len()]);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    add_grad(&mut grads, *x, xv.shape(), vec![g.item(); xv.len()]);
                }
                Op::SumSquares(x) => {
                    let xv = self.value(*x);
                    let gi = g.item();
                    add_grad(
                        &mut grads,
                        *x,
                        xv.shape(),
                        xv.data().iter().map(|v| 2.0 * v * gi).collect(),
                    );
                }
                Op::RowDistance { a, b, squared } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let cols = ta.cols();
                    let mut ga = vec![0.0; ta.len()];
                    for r in 0..ta.rows() {
                        let d = node.value.data()[r];
                        // d/da ||a-b|| = (a-b)/||a-b||; zero subgradient at the kink
                        let coef = if *squared {
                            2.0 * g.data()[r]
                        } else if d > 0.0 {
                            g.data()[r] / d
                        } else {
                            0.0
                        };
                        for (c, (x, y)) in ta.row(r).iter().zip(tb.row(r)).enumerate() {
                            ga[r * cols + c] = coef * (x - y);
                        }
                    }
                    let gb = ga.iter().map(|v| -v).collect();
                    add_grad(&mut grads, *a, ta.shape(), ga);
                    add_grad(&mut grads, *b, tb.shape(), gb);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let lv = self.value(*logits);
                    let k = lv.cols();
                    let scale = g.item() / labels.len() as f64;
                    let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &y) in labels.iter().enumerate() {
                        gl[r * k + y] -= scale;
                    }
                    add_grad(&mut grads, *logits, lv.shape(), gl);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn add_grad(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], g: Vec<f64>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (acc, v) in existing.data_mut().iter_mut().zip(g) {
                *acc += v;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape matches node"));
        }
    }
}
