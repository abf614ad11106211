//! Forward-primitive recording and reverse replay.
//!
//! A [`Tape`] owns every intermediate tensor of one forward pass. Primitives
//! are recorded in call order; [`Tape::backward`] walks the record in exact
//! reverse and accumulates cotangents, writing the result into the
//! [`ParamStore`] gradient slots for bound leaves. Tensors are matrices:
//! rank-1 shapes are treated as single rows, scalars as 1x1.

use std::rc::Rc;

use super::special;
use super::tensor::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Read-only view of a recorded tensor, handed to custom VJPs.
pub struct TapeView<'a> {
    pub shape: &'a [usize],
    pub values: &'a [f64],
}

/// An opaque differentiable block with a hand-derived backward pass.
///
/// `backward` returns one cotangent buffer per input, each the input's numel;
/// the tape accumulates them. Implementations must be deterministic.
pub trait CustomVjp: std::fmt::Debug {
    fn backward(&self, inputs: &[TapeView<'_>], output: &[f64], out_grad: &[f64])
        -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Constant,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Neg(TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    MatMul { a: TensorId, b: TensorId },
    Transpose(TensorId),
    RowAdd { mat: TensorId, row: TensorId },
    RowMul { mat: TensorId, row: TensorId },
    DivByScalar { a: TensorId, s: TensorId },
    Relu(TensorId),
    Gelu(TensorId),
    Softplus(TensorId),
    Sigmoid(TensorId),
    Sqrt(TensorId),
    SoftmaxRows(TensorId),
    ConcatCols(Vec<TensorId>),
    ConcatRows(Vec<TensorId>),
    SliceCols { a: TensorId, start: usize, len: usize },
    SliceRows { a: TensorId, start: usize },
    SumAll(TensorId),
    MeanAll(TensorId),
    L1Distance(TensorId, TensorId),
    CrossEntropyLogits { logits: TensorId, targets: Vec<usize> },
    BceWithLogits { logits: TensorId, targets: Vec<f64> },
    BceProbs { probs: TensorId, targets: Vec<f64> },
    LayerNormRows { x: TensorId, gamma: TensorId, beta: TensorId, eps: f64 },
    Custom { inputs: Vec<TensorId>, vjp: Rc<dyn CustomVjp> },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    values: Vec<f64>,
    needs_grad: bool,
}

/// Ordered record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

const BCE_EPS: f64 = 1e-12;

fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    /// Cotangent of a tensor after `backward`; `None` if none was propagated.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).filter(|g| !g.is_empty()).map(|g| g.as_slice())
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>, needs_grad: bool) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            op,
            shape,
            values,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---- leaves -----------------------------------------------------------

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> TensorId {
        self.push(Op::Constant, shape, values, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> TensorId {
        self.constant(vec![1, 1], vec![v])
    }

    /// Differentiable leaf not bound to any parameter; its gradient stays on
    /// the tape and is read back with [`Tape::grad`].
    pub fn leaf(&mut self, shape: Vec<usize>, values: Vec<f64>) -> TensorId {
        self.push(Op::Leaf { param: None }, shape, values, true)
    }

    /// Leaf bound to a stored parameter; `backward` accumulates into its slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> TensorId {
        let p = store.get(id);
        self.push(
            Op::Leaf { param: Some(id) },
            p.shape.clone(),
            p.values.clone(),
            p.requires_grad,
        )
    }

    // ---- elementwise ------------------------------------------------------

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), shape, values, ng))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), shape, values, ng))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul", a, b)?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), shape, values, ng))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("div", a, b)?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x / y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Div(a, b), shape, values, ng))
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let values = self.nodes[a.0].values.iter().map(|x| -x).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(Op::Neg(a), shape, values, ng)
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> TensorId {
        let values = self.nodes[a.0].values.iter().map(|x| x * k).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(Op::Scale(a, k), shape, values, ng)
    }

    pub fn add_const(&mut self, a: TensorId, k: f64) -> TensorId {
        let values = self.nodes[a.0].values.iter().map(|x| x + k).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(Op::AddConst(a), shape, values, ng)
    }

    // ---- activations ------------------------------------------------------

    fn unary(
        &mut self,
        a: TensorId,
        f: impl Fn(f64) -> f64,
        make: impl Fn(TensorId) -> Op,
    ) -> TensorId {
        let values = self.nodes[a.0].values.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a);
        self.push(make(a), shape, values, ng)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, special::gelu, Op::Gelu)
    }

    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        self.unary(a, special::softplus, Op::Softplus)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, special::sigmoid, Op::Sigmoid)
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        self.unary(a, f64::sqrt, Op::Sqrt)
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = dims2(&self.nodes[a.0].shape);
        let (k2, n) = dims2(&self.nodes[b.0].shape);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let values = matmul_raw(&self.nodes[a.0].values, &self.nodes[b.0].values, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul { a, b }, vec![m, n], values, ng))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (m, n) = dims2(&self.nodes[a.0].shape);
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[j * m + i] = src[i * n + j];
            }
        }
        let ng = self.needs(a);
        self.push(Op::Transpose(a), vec![n, m], values, ng)
    }

    /// `mat[i, j] + row[j]`; the usual bias add.
    pub fn row_add(&mut self, mat: TensorId, row: TensorId) -> Result<TensorId> {
        let (m, n) = dims2(&self.nodes[mat.0].shape);
        let (rr, rc) = dims2(&self.nodes[row.0].shape);
        if rr != 1 || rc != n {
            return Err(Error::ShapeMismatch {
                op: "row_add",
                lhs: self.nodes[mat.0].shape.clone(),
                rhs: self.nodes[row.0].shape.clone(),
            });
        }
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[i * n + j] = self.nodes[mat.0].values[i * n + j] + self.nodes[row.0].values[j];
            }
        }
        let ng = self.needs(mat) || self.needs(row);
        Ok(self.push(Op::RowAdd { mat, row }, vec![m, n], values, ng))
    }

    /// `mat[i, j] * row[j]`.
    pub fn row_mul(&mut self, mat: TensorId, row: TensorId) -> Result<TensorId> {
        let (m, n) = dims2(&self.nodes[mat.0].shape);
        let (rr, rc) = dims2(&self.nodes[row.0].shape);
        if rr != 1 || rc != n {
            return Err(Error::ShapeMismatch {
                op: "row_mul",
                lhs: self.nodes[mat.0].shape.clone(),
                rhs: self.nodes[row.0].shape.clone(),
            });
        }
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[i * n + j] = self.nodes[mat.0].values[i * n + j] * self.nodes[row.0].values[j];
            }
        }
        let ng = self.needs(mat) || self.needs(row);
        Ok(self.push(Op::RowMul { mat, row }, vec![m, n], values, ng))
    }

    pub fn div_by_scalar(&mut self, a: TensorId, s: TensorId) -> Result<TensorId> {
        if self.nodes[s.0].values.len() != 1 {
            return Err(Error::NotScalar {
                op: "div_by_scalar",
                shape: self.nodes[s.0].shape.clone(),
            });
        }
        let sv = self.nodes[s.0].values[0];
        let values = self.nodes[a.0].values.iter().map(|x| x / sv).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(s);
        Ok(self.push(Op::DivByScalar { a, s }, shape, values, ng))
    }

    // ---- softmax / reductions ---------------------------------------------

    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let (m, n) = dims2(&self.nodes[a.0].shape);
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                values[i * n + j] = e;
                denom += e;
            }
            for j in 0..n {
                values[i * n + j] /= denom;
            }
        }
        let ng = self.needs(a);
        self.push(Op::SoftmaxRows(a), vec![m, n], values, ng)
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].values.iter().sum();
        let ng = self.needs(a);
        self.push(Op::SumAll(a), vec![1, 1], vec![s], ng)
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.nodes[a.0].values.len();
        let s: f64 = self.nodes[a.0].values.iter().sum();
        let ng = self.needs(a);
        self.push(Op::MeanAll(a), vec![1, 1], vec![s / n as f64], ng)
    }

    // ---- concat / slice ----------------------------------------------------

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_cols of zero tensors".into()));
        }
        let (m, _) = dims2(&self.nodes[parts[0].0].shape);
        let mut total = 0;
        for &p in parts {
            let (pm, pc) = dims2(&self.nodes[p.0].shape);
            if pm != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
            total += pc;
        }
        let mut values = vec![0.0; m * total];
        let mut offset = 0;
        for &p in parts {
            let (_, pc) = dims2(&self.nodes[p.0].shape);
            for i in 0..m {
                for j in 0..pc {
                    values[i * total + offset + j] = self.nodes[p.0].values[i * pc + j];
                }
            }
            offset += pc;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), vec![m, total], values, ng))
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_rows of zero tensors".into()));
        }
        let (_, n) = dims2(&self.nodes[parts[0].0].shape);
        let mut total = 0;
        for &p in parts {
            let (pm, pc) = dims2(&self.nodes[p.0].shape);
            if pc != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
            total += pm;
        }
        let mut values = Vec::with_capacity(total * n);
        for &p in parts {
            values.extend_from_slice(&self.nodes[p.0].values);
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), vec![total, n], values, ng))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (m, n) = dims2(&self.nodes[a.0].shape);
        if start + len > n {
            return Err(Error::InvalidArgument(format!(
                "slice_cols [{start}, {}) out of {n} columns",
                start + len
            )));
        }
        let mut values = vec![0.0; m * len];
        for i in 0..m {
            for j in 0..len {
                values[i * len + j] = self.nodes[a.0].values[i * n + start + j];
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Op::SliceCols { a, start, len }, vec![m, len], values, ng))
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (m, n) = dims2(&self.nodes[a.0].shape);
        if start + len > m {
            return Err(Error::InvalidArgument(format!(
                "slice_rows [{start}, {}) out of {m} rows",
                start + len
            )));
        }
        let values = self.nodes[a.0].values[start * n..(start + len) * n].to_vec();
        let ng = self.needs(a);
        Ok(self.push(Op::SliceRows { a, start }, vec![len, n], values, ng))
    }

    // ---- losses -------------------------------------------------------------

    /// Sum of absolute differences.
    pub fn l1_distance(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("l1_distance", a, b)?;
        let s: f64 = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| (x - y).abs())
            .sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::L1Distance(a, b), vec![1, 1], vec![s], ng))
    }

    /// Mean over rows of `logsumexp(row) - row[target]`; accepts logits
    /// directly in the numerically stable form.
    pub fn cross_entropy_logits(&mut self, logits: TensorId, targets: &[usize]) -> Result<TensorId> {
        let (m, n) = dims2(&self.nodes[logits.0].shape);
        if targets.len() != m {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_logits",
                lhs: vec![m, n],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::InvalidArgument(format!(
                "cross-entropy target {t} out of {n} classes"
            )));
        }
        let src = &self.nodes[logits.0].values;
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Op::CrossEntropyLogits {
                logits,
                targets: targets.to_vec(),
            },
            vec![1, 1],
            vec![total / m as f64],
            ng,
        ))
    }

    /// Mean elementwise binary cross-entropy computed from logits.
    pub fn bce_with_logits(&mut self, logits: TensorId, targets: &[f64]) -> Result<TensorId> {
        if targets.len() != self.nodes[logits.0].values.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.nodes[logits.0].shape.clone(),
                rhs: vec![targets.len()],
            });
        }
        let src = &self.nodes[logits.0].values;
        let n = src.len() as f64;
        let total: f64 = src
            .iter()
            .zip(targets)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let ng = self.needs(logits);
        Ok(self.push(
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            vec![1, 1],
            vec![total / n],
            ng,
        ))
    }

    /// Mean elementwise binary cross-entropy on probabilities in [0, 1];
    /// log arguments are clamped at 1e-12 so saturated inputs stay finite.
    pub fn bce_probs(&mut self, probs: TensorId, targets: &[f64]) -> Result<TensorId> {
        if targets.len() != self.nodes[probs.0].values.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_probs",
                lhs: self.nodes[probs.0].shape.clone(),
                rhs: vec![targets.len()],
            });
        }
        let src = &self.nodes[probs.0].values;
        let n = src.len() as f64;
        let total: f64 = src
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
            })
            .sum();
        let ng = self.needs(probs);
        Ok(self.push(
            Op::BceProbs {
                probs,
                targets: targets.to_vec(),
            },
            vec![1, 1],
            vec![total / n],
            ng,
        ))
    }

    /// Per-row layer normalization with learnable gain and offset.
    pub fn layer_norm_rows(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let (m, n) = dims2(&self.nodes[x.0].shape);
        let (gr, gc) = dims2(&self.nodes[gamma.0].shape);
        let (br, bc) = dims2(&self.nodes[beta.0].shape);
        if gr != 1 || gc != n || br != 1 || bc != n {
            return Err(Error::ShapeMismatch {
                op: "layer_norm_rows",
                lhs: vec![m, n],
                rhs: vec![gc, bc],
            });
        }
        let src = &self.nodes[x.0].values;
        let g = &self.nodes[gamma.0].values;
        let b = &self.nodes[beta.0].values;
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                values[i * n + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Op::LayerNormRows { x, gamma, beta, eps },
            vec![m, n],
            values,
            ng,
        ))
    }

    // ---- custom -------------------------------------------------------------

    /// Record an opaque block whose forward values the caller has computed.
    pub fn custom(
        &mut self,
        inputs: &[TensorId],
        shape: Vec<usize>,
        values: Vec<f64>,
        vjp: Rc<dyn CustomVjp>,
    ) -> TensorId {
        let ng = inputs.iter().any(|&p| self.needs(p));
        self.push(
            Op::Custom {
                inputs: inputs.to_vec(),
                vjp,
            },
            shape,
            values,
            ng,
        )
    }

    // ---- backward -------------------------------------------------------------

    /// Reverse sweep from a scalar loss; bound-leaf cotangents are added into
    /// the store's gradient slots.
    pub fn backward(&mut self, loss: TensorId, store: &mut ParamStore) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::NotScalar {
                op: "backward",
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| {
                if n.needs_grad {
                    vec![0.0; n.values.len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // nothing differentiable upstream
        }
        self.grads[loss.0][0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad || self.grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut self.grads[idx]);
            self.propagate(idx, &g);
            self.grads[idx] = g;
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(pid) } = node.op {
                let p = store.get_mut(pid);
                if p.requires_grad {
                    for (slot, g) in p.grad.iter_mut().zip(&self.grads[idx]) {
                        *slot += g;
                    }
                }
            }
        }
        Ok(())
    }

    fn accum(&mut self, id: TensorId, contrib: impl Iterator<Item = f64>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        for (slot, c) in self.grads[id.0].iter_mut().zip(contrib) {
            *slot += c;
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf { .. } | Op::Constant => {}
            Op::Add(a, b) => {
                self.accum(a, g.iter().copied());
                self.accum(b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.accum(a, g.iter().copied());
                self.accum(b, g.iter().map(|x| -x));
            }
            Op::Mul(a, b) => {
                let bv: Vec<f64> = self.nodes[b.0].values.clone();
                let av: Vec<f64> = self.nodes[a.0].values.clone();
                self.accum(a, g.iter().zip(&bv).map(|(x, y)| x * y));
                self.accum(b, g.iter().zip(&av).map(|(x, y)| x * y));
            }
            Op::Div(a, b) => {
                let av: Vec<f64> = self.nodes[a.0].values.clone();
                let bv: Vec<f64> = self.nodes[b.0].values.clone();
                self.accum(a, g.iter().zip(&bv).map(|(x, y)| x / y));
                self.accum(
                    b,
                    g.iter()
                        .zip(av.iter().zip(&bv))
                        .map(|(x, (a, b))| -x * a / (b * b)),
                );
            }
            Op::Neg(a) => self.accum(a, g.iter().map(|x| -x)),
            Op::Scale(a, k) => self.accum(a, g.iter().map(|x| x * k)),
            Op::AddConst(a) => self.accum(a, g.iter().copied()),
            Op::MatMul { a, b } => {
                let (m, k) = dims2(&self.nodes[a.0].shape);
                let n = dims2(&self.nodes[b.0].shape).1;
                // dA = G B^T, dB = A^T G
                let bv = &self.nodes[b.0].values;
                let av = &self.nodes[a.0].values;
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bv[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += av[i * k + p] * g[i * n + j];
                        }
                        db[p * n + j] = s;
                    }
                }
                self.accum(a, da.into_iter());
                self.accum(b, db.into_iter());
            }
            Op::Transpose(a) => {
                let (m, n) = dims2(&self.nodes[a.0].shape);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[j * m + i];
                    }
                }
                self.accum(a, da.into_iter());
            }
            Op::RowAdd { mat, row } => {
                let (m, n) = dims2(&self.nodes[mat.0].shape);
                self.accum(mat, g.iter().copied());
                let mut dr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dr[j] += g[i * n + j];
                    }
                }
                self.accum(row, dr.into_iter());
            }
            Op::RowMul { mat, row } => {
                let (m, n) = dims2(&self.nodes[mat.0].shape);
                let rv = self.nodes[row.0].values.clone();
                let mv = self.nodes[mat.0].values.clone();
                self.accum(
                    mat,
                    (0..m * n).map(|i| g[i] * rv[i % n]),
                );
                let mut dr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dr[j] += g[i * n + j] * mv[i * n + j];
                    }
                }
                self.accum(row, dr.into_iter());
            }
            Op::DivByScalar { a, s } => {
                let sv = self.nodes[s.0].values[0];
                let av = self.nodes[a.0].values.clone();
                self.accum(a, g.iter().map(|x| x / sv));
                let ds: f64 = g.iter().zip(&av).map(|(x, a)| -x * a / (sv * sv)).sum();
                self.accum(s, std::iter::once(ds));
            }
            Op::Relu(a) => {
                let av = self.nodes[a.0].values.clone();
                self.accum(
                    a,
                    g.iter().zip(&av).map(|(x, &v)| if v > 0.0 { *x } else { 0.0 }),
                );
            }
            Op::Gelu(a) => {
                let av = self.nodes[a.0].values.clone();
                self.accum(a, g.iter().zip(&av).map(|(x, &v)| x * special::gelu_grad(v)));
            }
            Op::Softplus(a) => {
                let av = self.nodes[a.0].values.clone();
                self.accum(a, g.iter().zip(&av).map(|(x, &v)| x * special::sigmoid(v)));
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[idx].values.clone();
                self.accum(a, g.iter().zip(&out).map(|(x, &s)| x * s * (1.0 - s)));
            }
            Op::Sqrt(a) => {
                let out = self.nodes[idx].values.clone();
                self.accum(a, g.iter().zip(&out).map(|(x, &s)| x * 0.5 / s));
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = dims2(&self.nodes[idx].shape);
                let s = &self.nodes[idx].values;
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let srow = &s[i * n..(i + 1) * n];
                    let grow = &g[i * n..(i + 1) * n];
                    let dot: f64 = srow.iter().zip(grow).map(|(x, y)| x * y).sum();
                    for j in 0..n {
                        da[i * n + j] = srow[j] * (grow[j] - dot);
                    }
                }
                self.accum(a, da.into_iter());
            }
            Op::ConcatCols(parts) => {
                let (m, total) = dims2(&self.nodes[idx].shape);
                let mut offset = 0;
                for p in parts {
                    let (_, pc) = dims2(&self.nodes[p.0].shape);
                    let mut dp = vec![0.0; m * pc];
                    for i in 0..m {
                        for j in 0..pc {
                            dp[i * pc + j] = g[i * total + offset + j];
                        }
                    }
                    self.accum(p, dp.into_iter());
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].values.len();
                    let dp = g[offset..offset + len].to_vec();
                    self.accum(p, dp.into_iter());
                    offset += len;
                }
            }
            Op::SliceCols { a, start, len } => {
                let (m, n) = dims2(&self.nodes[a.0].shape);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..len {
                        da[i * n + start + j] = g[i * len + j];
                    }
                }
                self.accum(a, da.into_iter());
            }
            Op::SliceRows { a, start, .. } => {
                let (_, n) = dims2(&self.nodes[a.0].shape);
                let total = self.nodes[a.0].values.len();
                let mut da = vec![0.0; total];
                da[start * n..start * n + g.len()].copy_from_slice(g);
                self.accum(a, da.into_iter());
            }
            Op::SumAll(a) => {
                let len = self.nodes[a.0].values.len();
                self.accum(a, std::iter::repeat(g[0]).take(len));
            }
            Op::MeanAll(a) => {
                let len = self.nodes[a.0].values.len();
                let s = g[0] / len as f64;
                self.accum(a, std::iter::repeat(s).take(len));
            }
            Op::L1Distance(a, b) => {
                let av = self.nodes[a.0].values.clone();
                let bv = self.nodes[b.0].values.clone();
                let sign = |x: f64, y: f64| {
                    if x > y {
                        1.0
                    } else if x < y {
                        -1.0
                    } else {
                        0.0
                    }
                };
                self.accum(a, av.iter().zip(&bv).map(|(&x, &y)| g[0] * sign(x, y)));
                self.accum(b, av.iter().zip(&bv).map(|(&x, &y)| -g[0] * sign(x, y)));
            }
            Op::CrossEntropyLogits { logits, targets } => {
                let (m, n) = dims2(&self.nodes[logits.0].shape);
                let src = &self.nodes[logits.0].values;
                let mut da = vec![0.0; m * n];
                for (i, &t) in targets.iter().enumerate() {
                    let row = &src[i * n..(i + 1) * n];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                    for j in 0..n {
                        let soft = (row[j] - max).exp() / denom;
                        let delta = if j == t { 1.0 } else { 0.0 };
                        da[i * n + j] = g[0] * (soft - delta) / m as f64;
                    }
                }
                self.accum(logits, da.into_iter());
            }
            Op::BceWithLogits { logits, targets } => {
                let src = self.nodes[logits.0].values.clone();
                let n = src.len() as f64;
                self.accum(
                    logits,
                    src.iter()
                        .zip(&targets)
                        .map(|(&x, &t)| g[0] * (special::sigmoid(x) - t) / n),
                );
            }
            Op::BceProbs { probs, targets } => {
                let src = self.nodes[probs.0].values.clone();
                let n = src.len() as f64;
                self.accum(
                    probs,
                    src.iter().zip(&targets).map(|(&p, &t)| {
                        if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                            0.0 // clamped region
                        } else {
                            g[0] * ((1.0 - t) / (1.0 - p) - t / p) / n
                        }
                    }),
                );
            }
            Op::LayerNormRows { x, gamma, beta, eps } => {
                let (m, n) = dims2(&self.nodes[x.0].shape);
                let src = self.nodes[x.0].values.clone();
                let gv = self.nodes[gamma.0].values.clone();
                let mut dx = vec![0.0; m * n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for i in 0..m {
                    let row = &src[i * n..(i + 1) * n];
                    let grow = &g[i * n..(i + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let gg: Vec<f64> = grow.iter().zip(&gv).map(|(a, b)| a * b).collect();
                    let mean_gg = gg.iter().sum::<f64>() / n as f64;
                    let mean_gg_xhat =
                        gg.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dx[i * n + j] = (gg[j] - mean_gg - xhat[j] * mean_gg_xhat) * inv;
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                    }
                }
                self.accum(x, dx.into_iter());
                self.accum(gamma, dgamma.into_iter());
                self.accum(beta, dbeta.into_iter());
            }
            Op::Custom { inputs, vjp } => {
                let views: Vec<TapeView<'_>> = inputs
                    .iter()
                    .map(|&p| TapeView {
                        shape: &self.nodes[p.0].shape,
                        values: &self.nodes[p.0].values,
                    })
                    .collect();
                let contribs = vjp.backward(&views, &self.nodes[idx].values, g);
                debug_assert_eq!(contribs.len(), inputs.len());
                for (&p, c) in inputs.iter().zip(contribs) {
                    debug_assert!(
                        !self.nodes[p.0].needs_grad || c.len() == self.nodes[p.0].values.len()
                    );
                    self.accum(p, c.into_iter());
                }
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}
