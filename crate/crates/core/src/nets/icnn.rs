use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::diffcore::{softplus, srelu, Graph, NodeId, ParameterBlock};
use crate::error::{Error, Result};

/// Quadratic-knee ReLU: `0` for `y ≤ 0`, `y²/2d` on `(0, d)`, `y − d/2` above.
/// Returns `(value, slope)`.
pub fn smooth_relu(y: f64, d: f64) -> Result<(f64, f64)> {
    if !(d > 0.0) {
        return Err(Error::Config(format!(
            "smooth ReLU width must be positive, got {d}"
        )));
    }
    Ok(srelu(y, d))
}

/// Input-convex network `γ : ℝⁿ → ℝ`.
///
/// Layer 0 is `z₁ = σ₀(w₀x + b₀)`; layer `i ≥ 1` is
/// `zᵢ₊₁ = σᵢ(vᵢzᵢ + wᵢx + bᵢ)`. The pass-through weights `vᵢ` are stored
/// raw and mapped through softplus, so every mapped entry is strictly
/// positive. The last layer has width one.
///
/// Block layout: `[w₀, b₀, (v_raw₁, w₁, b₁), …, d]` where `d` is a frozen
/// vector of the `k + 1` knee widths (the last one belongs to the outer
/// activation of the Lyapunov function).
#[derive(Clone, Debug, PartialEq)]
pub struct IcnnParameters {
    n: usize,
    widths: Vec<usize>,
    blocks: Vec<ParameterBlock>,
    // derived from `blocks`, rebuilt by `refresh`
    mapped: Vec<Array2<f64>>,
    gamma_zero: f64,
}

impl IcnnParameters {
    /// `hidden` lists the widths of layers `1..k−1`; a final width-one layer
    /// is appended, so depth `k = hidden.len() + 1`.
    pub fn random<R: Rng + ?Sized>(
        n: usize,
        hidden: &[usize],
        knee: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 || hidden.contains(&0) {
            return Err(Error::Config("ICNN widths must be positive".into()));
        }
        if !(knee > 0.0) {
            return Err(Error::Config(format!(
                "smooth ReLU width must be positive, got {knee}"
            )));
        }
        let mut widths = hidden.to_vec();
        widths.push(1);
        let bound = 1.0 / (n as f64).sqrt();
        let mut uniform =
            |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-bound..bound));
        let mut blocks = vec![
            ParameterBlock::matrix("V.w0", uniform(widths[0], n)),
            ParameterBlock::vector("V.b0", Array1::zeros(widths[0])),
        ];
        for i in 1..widths.len() {
            let (fan_in, fan_out) = (widths[i - 1], widths[i]);
            // softplus(raw) = 1 / fan_in
            let raw = (1.0 / fan_in as f64).exp_m1().ln();
            blocks.push(ParameterBlock::matrix(
                format!("V.v{i}"),
                Array2::from_elem((fan_out, fan_in), raw),
            ));
            blocks.push(ParameterBlock::matrix(
                format!("V.w{i}"),
                uniform(fan_out, n),
            ));
            blocks.push(ParameterBlock::vector(
                format!("V.b{i}"),
                Array1::zeros(fan_out),
            ));
        }
        let k = widths.len();
        blocks.push(ParameterBlock::vector("V.d", Array1::from_elem(k + 1, knee)).frozen());
        Ok(Self::assemble(n, widths, blocks))
    }

    /// Builds from explicit layers. `v_mapped[i−1]` is the (positive) value
    /// of `vᵢ`; `knees` has `k + 1` entries.
    pub fn from_layers(
        w: Vec<Array2<f64>>,
        b: Vec<Array1<f64>>,
        v_mapped: Vec<Array2<f64>>,
        knees: Vec<f64>,
    ) -> Result<Self> {
        let k = w.len();
        if k == 0 || b.len() != k || v_mapped.len() != k - 1 || knees.len() != k + 1 {
            return Err(Error::Config("inconsistent ICNN layer counts".into()));
        }
        if knees.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("smooth ReLU widths must be positive".into()));
        }
        let n = w[0].ncols();
        let widths: Vec<usize> = w.iter().map(|m| m.nrows()).collect();
        if *widths.last().unwrap() != 1 {
            return Err(Error::shape("ICNN output width", 1, widths[k - 1]));
        }
        let mut blocks = Vec::new();
        for i in 0..k {
            if w[i].ncols() != n || b[i].len() != widths[i] {
                return Err(Error::shape("ICNN layer", n, w[i].ncols()));
            }
            if i > 0 {
                let v = &v_mapped[i - 1];
                if v.dim() != (widths[i], widths[i - 1]) {
                    return Err(Error::shape(
                        "ICNN pass-through",
                        format!("{:?}", (widths[i], widths[i - 1])),
                        format!("{:?}", v.dim()),
                    ));
                }
                if v.iter().any(|&e| !(e > 0.0)) {
                    return Err(Error::Config(
                        "pass-through weights must be positive".into(),
                    ));
                }
                // inverse softplus
                blocks.push(ParameterBlock::matrix(
                    format!("V.v{i}"),
                    v.mapv(|e| e.exp_m1().ln()),
                ));
            }
            blocks.push(ParameterBlock::matrix(format!("V.w{i}"), w[i].clone()));
            blocks.push(ParameterBlock::vector(format!("V.b{i}"), b[i].clone()));
        }
        blocks.push(ParameterBlock::vector("V.d", Array1::from(knees)).frozen());
        Ok(Self::assemble(n, widths, blocks))
    }

    fn assemble(n: usize, widths: Vec<usize>, blocks: Vec<ParameterBlock>) -> Self {
        let mut out = Self {
            n,
            widths,
            blocks,
            mapped: Vec::new(),
            gamma_zero: 0.0,
        };
        out.refresh();
        out
    }

    fn refresh(&mut self) {
        self.mapped = (1..self.depth())
            .map(|i| self.blocks[Self::v_index(i)].values().mapv(softplus))
            .collect();
        self.gamma_zero = self.forward_trace(Array1::zeros(self.n).view()).0;
    }

    pub fn from_blocks(blocks: Vec<ParameterBlock>) -> Result<Self> {
        let count = blocks.len();
        if count < 3 || (count - 3) % 3 != 0 {
            return Err(Error::Malformed(format!(
                "ICNN block count {count} is not 3k"
            )));
        }
        let k = (count - 3) / 3 + 1;
        let mut w = Vec::new();
        let mut b = Vec::new();
        let mut v = Vec::new();
        w.push(blocks[0].values().clone());
        b.push(blocks[1].row().to_owned());
        for i in 1..k {
            let base = 2 + 3 * (i - 1);
            v.push(blocks[base].values().mapv(softplus));
            w.push(blocks[base + 1].values().clone());
            b.push(blocks[base + 2].row().to_owned());
        }
        let knees = blocks[count - 1].flat();
        let mut out = Self::from_layers(w, b, v, knees)?;
        // keep the raw pass-through values bit-exact
        out.update_blocks(|dst| {
            for (d, src) in dst.iter_mut().zip(blocks) {
                *d = src;
            }
        });
        Ok(out)
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn blocks(&self) -> &[ParameterBlock] {
        &self.blocks
    }

    /// Mutates the blocks in place and rebuilds the cached mapped weights.
    pub fn update_blocks<T>(&mut self, f: impl FnOnce(&mut [ParameterBlock]) -> T) -> T {
        let out = f(&mut self.blocks);
        self.refresh();
        out
    }

    /// `γ(0)`.
    pub fn gamma_zero(&self) -> f64 {
        self.gamma_zero
    }

    /// Block index of `wᵢ`.
    fn w_index(i: usize) -> usize {
        if i == 0 {
            0
        } else {
            3 + 3 * (i - 1)
        }
    }

    fn b_index(i: usize) -> usize {
        Self::w_index(i) + 1
    }

    /// Block index of the raw `vᵢ`, `i ≥ 1`.
    fn v_index(i: usize) -> usize {
        2 + 3 * (i - 1)
    }

    fn knee_index(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn knees(&self) -> ArrayView1<'_, f64> {
        self.blocks[self.knee_index()].row()
    }

    pub fn w(&self, i: usize) -> &Array2<f64> {
        self.blocks[Self::w_index(i)].values()
    }

    /// Mapped (strictly positive) pass-through weights `vᵢ`, `i ≥ 1`.
    pub fn v_mapped(&self, i: usize) -> &Array2<f64> {
        &self.mapped[i - 1]
    }

    fn b(&self, i: usize) -> ArrayView1<'_, f64> {
        self.blocks[Self::b_index(i)].row()
    }

    /// Forward pass keeping pre-activation slopes for the input gradient.
    fn forward_trace(&self, x: ArrayView1<'_, f64>) -> (f64, Vec<Array1<f64>>) {
        let d = self.knees();
        let mut slopes = Vec::with_capacity(self.depth());
        let mut y = self.w(0).dot(&x) + self.b(0);
        let mut z = Array1::zeros(y.len());
        let mut s = Array1::zeros(y.len());
        for (j, &yj) in y.iter().enumerate() {
            (z[j], s[j]) = srelu(yj, d[0]);
        }
        slopes.push(s);
        for i in 1..self.depth() {
            y = self.v_mapped(i).dot(&z) + self.w(i).dot(&x) + self.b(i);
            let mut zi = Array1::zeros(y.len());
            let mut si = Array1::zeros(y.len());
            for (j, &yj) in y.iter().enumerate() {
                (zi[j], si[j]) = srelu(yj, d[i]);
            }
            z = zi;
            slopes.push(si);
        }
        (z[0], slopes)
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.n {
            return Err(Error::shape("icnn_forward", self.n, x.len()));
        }
        Ok(self.forward_trace(x).0)
    }

    /// `γ(x)` and `∇γ(x)`.
    pub fn forward_with_gradient(&self, x: ArrayView1<'_, f64>) -> Result<(f64, Array1<f64>)> {
        if x.len() != self.n {
            return Err(Error::shape("icnn_forward", self.n, x.len()));
        }
        let (gamma, slopes) = self.forward_trace(x);
        let k = self.depth();
        let mut delta = slopes[k - 1].clone();
        let mut grad = self.w(k - 1).t().dot(&delta);
        for i in (1..k).rev() {
            delta = self.v_mapped(i).t().dot(&delta) * &slopes[i - 1];
            grad += &self.w(i - 1).t().dot(&delta);
        }
        Ok((gamma, grad))
    }

    /// `Σᵢ Πⱼ₌ᵢ₊₁ ‖vⱼ‖₂ ‖wᵢ‖₂` with induced 2-norms.
    pub fn weight_norm_sum(&self) -> f64 {
        let k = self.depth();
        let w_norms: Vec<f64> = (0..k).map(|i| spectral_norm(self.w(i))).collect();
        let v_norms: Vec<f64> = (1..k).map(|j| spectral_norm(self.v_mapped(j))).collect();
        (0..k)
            .map(|i| {
                let prod: f64 = (i + 1..k).map(|j| v_norms[j - 1]).product();
                prod * w_norms[i]
            })
            .sum()
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Array2<f64>) -> f64 {
    let dm = DMatrix::from_row_iterator(m.nrows(), m.ncols(), m.iter().copied());
    dm.singular_values().max()
}

/// Lyapunov candidate `V(x) = σₖ(γ(x) − γ(0)) + ε‖x‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovParameters {
    pub icnn: IcnnParameters,
    epsilon: f64,
}

impl LyapunovParameters {
    pub fn new(icnn: IcnnParameters, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self { icnn, epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn input_dim(&self) -> usize {
        self.icnn.input_dim()
    }

    fn outer_knee(&self) -> f64 {
        let d = self.icnn.knees();
        d[d.len() - 1]
    }

    fn gamma_zero(&self) -> f64 {
        self.icnn.gamma_zero()
    }

    pub fn value(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        let gamma = self.icnn.forward(x)?;
        let shifted = gamma - self.gamma_zero();
        Ok(srelu(shifted, self.outer_knee()).0 + self.epsilon * x.dot(&x))
    }

    pub fn input_gradient(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.value_and_gradient(x)?.1)
    }

    pub fn value_and_gradient(&self, x: ArrayView1<'_, f64>) -> Result<(f64, Array1<f64>)> {
        let (gamma, grad_gamma) = self.icnn.forward_with_gradient(x)?;
        let (outer, outer_slope) = srelu(gamma - self.gamma_zero(), self.outer_knee());
        let value = outer + self.epsilon * x.dot(&x);
        let grad = grad_gamma * outer_slope + &x * (2.0 * self.epsilon);
        Ok((value, grad))
    }

    /// Upper bound on `‖∇V(x)‖` given `‖x‖`:
    /// `2ε‖x‖ + Σᵢ Πⱼ ‖vⱼ‖₂‖wᵢ‖₂`.
    pub fn gradient_norm_bound(&self, x_norm: f64) -> Result<f64> {
        if !(x_norm >= 0.0) {
            return Err(Error::Config(format!(
                "norm must be nonnegative, got {x_norm}"
            )));
        }
        Ok(2.0 * self.epsilon * x_norm + self.icnn.weight_norm_sum())
    }
}

/// Graph nodes for `V` and `∇V` on a batch.
#[derive(Clone, Copy, Debug)]
pub struct LyapunovNodes {
    /// `B × 1`
    pub value: NodeId,
    /// `B × n`
    pub gradient: NodeId,
}

/// Builds `V(x)` and its analytic input gradient on a batch `x` (`B × n`,
/// with the raw matrix passed as `x_data`). ICNN block `j` lives at graph
/// index `base + j`.
pub fn lyapunov_graph(
    g: &mut Graph<'_>,
    lyap: &LyapunovParameters,
    base: usize,
    x: NodeId,
    x_data: &Array2<f64>,
    zero: NodeId,
) -> Result<LyapunovNodes> {
    let icnn = &lyap.icnn;
    let k = icnn.depth();
    let d = icnn.knees().to_owned();

    let mut v_nodes = Vec::with_capacity(k);
    for i in 1..k {
        let raw = g.param(base + IcnnParameters::v_index(i))?;
        v_nodes.push(g.softplus(raw)?);
    }

    // Returns (γ, pre-activations).
    let forward = |g: &mut Graph<'_>, input: NodeId| -> Result<(NodeId, Vec<NodeId>)> {
        let mut pre = Vec::with_capacity(k);
        let w0 = g.param(base + IcnnParameters::w_index(0))?;
        let b0 = g.param(base + IcnnParameters::b_index(0))?;
        let y = g.matmul_nt(input, w0)?;
        let y = g.add_row(y, b0)?;
        pre.push(y);
        let mut z = g.smooth_relu(y, d[0])?;
        for i in 1..k {
            let wi = g.param(base + IcnnParameters::w_index(i))?;
            let bi = g.param(base + IcnnParameters::b_index(i))?;
            let through = g.matmul_nt(z, v_nodes[i - 1])?;
            let direct = g.matmul_nt(input, wi)?;
            let y = g.add(through, direct)?;
            let y = g.add_row(y, bi)?;
            pre.push(y);
            z = g.smooth_relu(y, d[i])?;
        }
        Ok((z, pre))
    };

    let (gamma, pre) = forward(g, x)?;
    let (gamma0, _) = forward(g, zero)?;
    let shifted = g.sub_row(gamma, gamma0)?;
    let outer = g.smooth_relu(shifted, d[k])?;
    let outer_slope = g.smooth_relu_slope(shifted, d[k])?;

    let sq = g.constant(
        x_data
            .rows()
            .into_iter()
            .map(|r| lyap.epsilon * r.dot(&r))
            .collect::<Array1<f64>>()
            .insert_axis(ndarray::Axis(1)),
    )?;
    let value = g.add(outer, sq)?;

    let top_slope = g.smooth_relu_slope(pre[k - 1], d[k - 1])?;
    let mut delta = g.mul(top_slope, outer_slope)?;
    let w_top = g.param(base + IcnnParameters::w_index(k - 1))?;
    let mut grad = g.matmul(delta, w_top)?;
    for i in (1..k).rev() {
        let back = g.matmul(delta, v_nodes[i - 1])?;
        let slope = g.smooth_relu_slope(pre[i - 1], d[i - 1])?;
        delta = g.mul(back, slope)?;
        let wi = g.param(base + IcnnParameters::w_index(i - 1))?;
        let term = g.matmul(delta, wi)?;
        grad = g.add(grad, term)?;
    }
    let lin = g.constant(x_data * (2.0 * lyap.epsilon))?;
    let gradient = g.add(grad, lin)?;
    Ok(LyapunovNodes { value, gradient })
}
