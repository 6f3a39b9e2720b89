//! Reverse-mode differentiation over batched matrix programs.
//!
//! Every node holds a dense matrix. Batched quantities put one sample per
//! row, so a node of shape `B × k` carries a `k`-vector for each of `B`
//! samples. Parameter blocks enter as leaves; [`Graph::backward`] returns
//! the exact gradient of a scalar output with respect to every leaf block.
//!
//! Only a small set of primitives is registered. The input-gradient of the
//! Lyapunov network is written out explicitly with these primitives (using
//! [`Graph::smooth_relu_slope`]), so first-order reverse accumulation over
//! parameters is all that is needed.

use ndarray::{Array2, Axis, Zip};

use super::params::ParameterBlock;
use crate::error::{Error, Result};

/// Gradient norm below which a guarded division returns zero.
pub const GUARD_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    /// `a · bᵀ`
    MatMulNt(NodeId, NodeId),
    /// `a · b`
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// `a + r` with `r` a single row broadcast over rows of `a`.
    AddRow(NodeId, NodeId),
    SubRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `a ⊙ c` with `c` a single column broadcast over columns of `a`.
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Softplus(NodeId),
    SmoothRelu(NodeId, f64),
    SmoothReluSlope(NodeId, f64),
    Relu(NodeId),
    Square(NodeId),
    RowSum(NodeId),
    Sum(NodeId),
    GuardedDiv(NodeId, NodeId),
    Column(NodeId, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMulNt(..) => "matmul_nt",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::SubRow(..) => "sub_row",
            Op::Mul(..) => "mul",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Softplus(_) => "softplus",
            Op::SmoothRelu(..) => "smooth_relu",
            Op::SmoothReluSlope(..) => "smooth_relu_slope",
            Op::Relu(_) => "relu",
            Op::Square(_) => "square",
            Op::RowSum(_) => "row_sum",
            Op::Sum(_) => "sum",
            Op::GuardedDiv(..) => "guarded_div",
            Op::Column(..) => "column",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Numerically stable `ln(1 + eʸ)`.
pub fn softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else if y < -30.0 {
        y.exp()
    } else {
        y.exp().ln_1p()
    }
}

pub fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// Value and slope of the quadratic-knee ReLU with knee width `d`.
#[inline]
pub(crate) fn srelu(y: f64, d: f64) -> (f64, f64) {
    if y <= 0.0 {
        (0.0, 0.0)
    } else if y < d {
        (y * y / (2.0 * d), y / d)
    } else {
        (y - d / 2.0, 1.0)
    }
}

/// A computation graph over a fixed list of parameter blocks.
pub struct Graph<'p> {
    blocks: &'p [ParameterBlock],
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Graph<'p> {
    pub fn new(blocks: &'p [ParameterBlock]) -> Self {
        Self {
            blocks,
            nodes: Vec::new(),
            param_nodes: vec![None; blocks.len()],
        }
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Result<NodeId> {
        if let Some((idx, _)) = value.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                primitive: op.name(),
                sample: idx.0,
            });
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn v(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    fn check_same(&self, ctx: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.v(a).dim(), self.v(b).dim());
        if sa != sb {
            return Err(Error::shape(ctx, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Result<NodeId> {
        self.push(value, Op::Constant)
    }

    /// Leaf for parameter block `index`. Repeated calls return the same node.
    pub fn param(&mut self, index: usize) -> Result<NodeId> {
        if let Some(id) = self.param_nodes[index] {
            return Ok(id);
        }
        let value = self.blocks[index].values().clone();
        let id = self.push(value, Op::Param)?;
        self.param_nodes[index] = Some(id);
        Ok(id)
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.v(a), self.v(b));
        if va.ncols() != vb.ncols() {
            return Err(Error::shape("matmul_nt", va.ncols(), vb.ncols()));
        }
        let value = va.dot(&vb.t());
        self.push(value, Op::MatMulNt(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.v(a), self.v(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape("matmul", va.ncols(), vb.nrows()));
        }
        let value = va.dot(vb);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("add", a, b)?;
        let value = self.v(a) + self.v(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("sub", a, b)?;
        let value = self.v(a) - self.v(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.v(a), self.v(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::shape(
                "add_row",
                format!("(1, {})", va.ncols()),
                format!("{:?}", vr.dim()),
            ));
        }
        let value = va + vr;
        self.push(value, Op::AddRow(a, row))
    }

    pub fn sub_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.v(a), self.v(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::shape(
                "sub_row",
                format!("(1, {})", va.ncols()),
                format!("{:?}", vr.dim()),
            ));
        }
        let value = va - vr;
        self.push(value, Op::SubRow(a, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("mul", a, b)?;
        let value = self.v(a) * self.v(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (va, vc) = (self.v(a), self.v(col));
        if vc.ncols() != 1 || vc.nrows() != va.nrows() {
            return Err(Error::shape(
                "mul_col",
                format!("({}, 1)", va.nrows()),
                format!("{:?}", vc.dim()),
            ));
        }
        let value = va * vc;
        self.push(value, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let value = self.v(a) * s;
        self.push(value, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.v(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.v(a).mapv(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn smooth_relu(&mut self, a: NodeId, d: f64) -> Result<NodeId> {
        let value = self.v(a).mapv(|y| srelu(y, d).0);
        self.push(value, Op::SmoothRelu(a, d))
    }

    pub fn smooth_relu_slope(&mut self, a: NodeId, d: f64) -> Result<NodeId> {
        let value = self.v(a).mapv(|y| srelu(y, d).1);
        self.push(value, Op::SmoothReluSlope(a, d))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.v(a).mapv(|y| if y > 0.0 { y } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.v(a).mapv(|y| y * y);
        self.push(value, Op::Square(a))
    }

    /// Per-row sum, `B × k → B × 1`.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.v(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::RowSum(a))
    }

    /// Sum of all entries, `→ 1 × 1`.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.v(a).iter().fold(0.0, |acc, v| acc + v);
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a))
    }

    /// Elementwise `a / b`, defined as zero wherever `b < GUARD_EPS`.
    pub fn guarded_div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("guarded_div", a, b)?;
        let mut value = Array2::zeros(self.v(a).dim());
        Zip::from(&mut value)
            .and(self.v(a))
            .and(self.v(b))
            .for_each(|o, &x, &y| *o = if y < GUARD_EPS { 0.0 } else { x / y });
        self.push(value, Op::GuardedDiv(a, b))
    }

    pub fn column(&mut self, a: NodeId, j: usize) -> Result<NodeId> {
        let va = self.v(a);
        if j >= va.ncols() {
            return Err(Error::shape("column", format!("< {}", va.ncols()), j));
        }
        let value = va.column(j).to_owned().insert_axis(Axis(1));
        self.push(value, Op::Column(a, j))
    }

    /// Reverse accumulation from the scalar node `out`.
    ///
    /// Returns one gradient slot per parameter block; blocks that never
    /// entered the graph get `None`.
    pub fn backward(&self, out: NodeId) -> Result<Vec<Option<Array2<f64>>>> {
        if self.v(out).dim() != (1, 1) {
            return Err(Error::shape(
                "backward",
                "(1, 1)",
                format!("{:?}", self.v(out).dim()),
            ));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Array2::ones((1, 1)));

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Constant => {}
                Op::Param => grads[i] = Some(g),
                Op::MatMulNt(a, b) => {
                    let ga = g.dot(self.v(b));
                    let gb = g.t().dot(self.v(a));
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.v(b).t());
                    let gb = self.v(a).t().dot(&g);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, b, g.clone());
                    acc(&mut grads, a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, b, -&g);
                    acc(&mut grads, a, g);
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, r, gr);
                    acc(&mut grads, a, g);
                }
                Op::SubRow(a, r) => {
                    let gr = -g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, r, gr);
                    acc(&mut grads, a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.v(b);
                    let gb = &g * self.v(a);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::MulCol(a, c) => {
                    let gc = (&g * self.v(a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &g * self.v(c);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, c, gc);
                }
                Op::Scale(a, s) => acc(&mut grads, a, g * s),
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gv, &t| *gv *= 1.0 - t * t);
                    acc(&mut grads, a, ga);
                }
                Op::Softplus(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.v(a))
                        .for_each(|gv, &y| *gv *= sigmoid(y));
                    acc(&mut grads, a, ga);
                }
                Op::SmoothRelu(a, d) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.v(a))
                        .for_each(|gv, &y| *gv *= srelu(y, d).1);
                    acc(&mut grads, a, ga);
                }
                Op::SmoothReluSlope(a, d) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.v(a))
                        .for_each(|gv, &y| *gv *= if y > 0.0 && y < d { 1.0 / d } else { 0.0 });
                    acc(&mut grads, a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.v(a))
                        .for_each(|gv, &y| *gv *= if y > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, a, ga);
                }
                Op::Square(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.v(a))
                        .for_each(|gv, &y| *gv *= 2.0 * y);
                    acc(&mut grads, a, ga);
                }
                Op::RowSum(a) => {
                    let ga = g
                        .broadcast(self.v(a).dim())
                        .expect("column broadcast")
                        .to_owned();
                    acc(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.v(a).dim(), g[[0, 0]]);
                    acc(&mut grads, a, ga);
                }
                Op::GuardedDiv(a, b) => {
                    let (va, vb) = (self.v(a), self.v(b));
                    let mut ga = Array2::zeros(va.dim());
                    let mut gb = Array2::zeros(va.dim());
                    Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(&g)
                        .and(va)
                        .and(vb)
                        .for_each(|da, db, &gv, &x, &y| {
                            if y >= GUARD_EPS {
                                *da = gv / y;
                                *db = -gv * x / (y * y);
                            }
                        });
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::Column(a, j) => {
                    let mut ga = Array2::zeros(self.v(a).dim());
                    ga.column_mut(j).assign(&g.column(0));
                    acc(&mut grads, a, ga);
                }
            }
        }

        let mut out_grads = vec![None; self.blocks.len()];
        for (block, node) in self.param_nodes.iter().enumerate() {
            if let Some(id) = node {
                if id.0 < grads.len() {
                    out_grads[block] = grads[id.0].take();
                }
            }
        }
        Ok(out_grads)
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
