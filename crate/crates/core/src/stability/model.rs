use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::maps::{spd_inverse, InputMap, RMap};
use super::projection::{lie_along_columns, project_stabilizable, sontag_control, WeightSpec};
use crate::diffcore::{Graph, NodeId, ParameterBlock};
use crate::error::{Error, Result};
use crate::nets::{lyapunov_graph, mlp_graph, IcnnParameters, LyapunovParameters, MlpParameters};

/// Controller used inside the projection.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlSpec {
    /// Learned network `α(x)`.
    FreeNetwork(MlpParameters),
    /// `α(x) = −½ R⁻¹(x) L_gᵀV(x)`.
    Structured(RMap),
    /// Sontag's formula on `V` with the nominal drift `f̂`.
    SontagFromV,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// `ẋ = f(x)`; the input map and controller are ignored.
    Autonomous,
    Stabilizable,
}

/// Everything the projection needs at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEval {
    pub v: f64,
    pub grad_v: Array1<f64>,
    pub fhat: Array1<f64>,
    pub g: Array2<f64>,
    pub alpha: Array1<f64>,
    pub w: f64,
    /// `L_{f̂+gα}V`
    pub nominal_lie: f64,
    /// Realized drift `f`.
    pub f: Array1<f64>,
}

impl PointEval {
    /// `L_{f+gα}V` for the realized drift.
    pub fn closed_loop_lie(&self) -> f64 {
        self.grad_v.dot(&(&self.f + &self.g.dot(&self.alpha)))
    }

    /// `L_{f+gα}V + W`, nonpositive by construction.
    pub fn decrease_margin(&self) -> f64 {
        self.closed_loop_lie() + self.w
    }
}

/// Nominal drift, Lyapunov candidate, controller and weight, composed into
/// the projected drift.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedModel {
    pub fhat: MlpParameters,
    pub lyap: LyapunovParameters,
    pub control: ControlSpec,
    pub weight: WeightSpec,
    pub g: InputMap,
    pub mode: ProjectionMode,
    /// Diagnostic: report `f̂` as the drift, skipping the correction.
    pub bypass_projection: bool,
}

/// Graph indices of each network's first block inside the concatenated
/// parameter list `[f̂ blocks, V blocks, α blocks]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub fhat: usize,
    pub lyap: usize,
    pub alpha: Option<usize>,
    pub len: usize,
}

/// Graph nodes of the projected drift on a batch.
#[derive(Clone, Copy, Debug)]
pub struct DriftNodes {
    pub f: NodeId,
    pub v: NodeId,
    pub grad_v: NodeId,
    pub w: NodeId,
    /// `L_{f̂+gα}V`, `B × 1`
    pub nominal_lie: NodeId,
    /// `L_{f+gα}V + W`, `B × 1`; equals the HJI residual for structured control.
    pub closed_margin: NodeId,
}

impl ProjectedModel {
    pub fn new(
        fhat: MlpParameters,
        lyap: LyapunovParameters,
        control: ControlSpec,
        weight: WeightSpec,
        g: InputMap,
        mode: ProjectionMode,
    ) -> Result<Self> {
        let n = fhat.input_dim();
        if fhat.output_dim() != n || lyap.input_dim() != n {
            return Err(Error::shape(
                "projected model state dimension",
                n,
                lyap.input_dim(),
            ));
        }
        let (gn, m) = g.dims();
        if gn != n {
            return Err(Error::shape("input map rows", n, gn));
        }
        if let ControlSpec::FreeNetwork(alpha) = &control {
            if alpha.input_dim() != n || alpha.output_dim() != m {
                return Err(Error::shape(
                    "controller network",
                    format!("{n} → {m}"),
                    format!("{} → {}", alpha.input_dim(), alpha.output_dim()),
                ));
            }
        }
        weight.validate()?;
        Ok(Self {
            fhat,
            lyap,
            control,
            weight,
            g,
            mode,
            bypass_projection: false,
        })
    }

    pub fn n(&self) -> usize {
        self.fhat.input_dim()
    }

    pub fn m(&self) -> usize {
        self.g.dims().1
    }

    /// The control term is active only in stabilizable mode.
    fn effective_control(&self) -> &ControlSpec {
        match self.mode {
            ProjectionMode::Autonomous => &ControlSpec::Zero,
            ProjectionMode::Stabilizable => &self.control,
        }
    }

    fn input_map_at(&self, x: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        match self.mode {
            ProjectionMode::Autonomous => Ok(Array2::zeros((self.n(), self.m()))),
            ProjectionMode::Stabilizable => self.g.eval(x),
        }
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>) -> Result<PointEval> {
        if x.len() != self.n() {
            return Err(Error::shape("projected model state", self.n(), x.len()));
        }
        let (v, grad_v) = self.lyap.value_and_gradient(x)?;
        let fhat = self.fhat.forward(x)?;
        let g = self.input_map_at(x)?;
        let alpha = match self.effective_control() {
            ControlSpec::FreeNetwork(net) => net.forward(x)?,
            ControlSpec::Structured(r) => {
                super::projection::structured_alpha_parts(grad_v.view(), g.view(), &r.eval(x))?
            }
            ControlSpec::SontagFromV => sontag_control(
                grad_v.dot(&fhat),
                lie_along_columns(grad_v.view(), g.view()).view(),
            ),
            ControlSpec::Zero => Array1::zeros(self.m()),
        };
        let w = self.weight.eval_parts(x, v, grad_v.view())?;
        let nominal_lie = grad_v.dot(&(&fhat + &g.dot(&alpha)));
        let f = if self.bypass_projection {
            fhat.clone()
        } else {
            project_stabilizable(fhat.view(), g.view(), alpha.view(), grad_v.view(), w)?
        };
        Ok(PointEval {
            v,
            grad_v,
            fhat,
            g,
            alpha,
            w,
            nominal_lie,
            f,
        })
    }

    /// Realized drift `f(x)`.
    pub fn drift(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.eval(x)?.f)
    }

    /// Controller used in the projection, `α(x)`.
    pub fn control(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.eval(x)?.alpha)
    }

    /// `f(x) + g(x)α(x)`.
    pub fn closed_loop(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let p = self.eval(x)?;
        Ok(&p.f + &p.g.dot(&p.alpha))
    }

    /// Parameter blocks in graph order, with their layout.
    pub fn collect_blocks(&self) -> (Vec<ParameterBlock>, BlockLayout) {
        let mut blocks: Vec<ParameterBlock> = self.fhat.blocks().to_vec();
        let lyap = blocks.len();
        blocks.extend_from_slice(self.lyap.icnn.blocks());
        let alpha = match &self.control {
            ControlSpec::FreeNetwork(net) => {
                let base = blocks.len();
                blocks.extend_from_slice(net.blocks());
                Some(base)
            }
            _ => None,
        };
        let len = blocks.len();
        (
            blocks,
            BlockLayout {
                fhat: 0,
                lyap,
                alpha,
                len,
            },
        )
    }

    /// Writes back blocks produced by [`Self::collect_blocks`].
    pub fn distribute_blocks(&mut self, blocks: &[ParameterBlock], layout: &BlockLayout) {
        let nf = self.fhat.blocks().len();
        self.fhat
            .blocks_mut()
            .clone_from_slice(&blocks[layout.fhat..layout.fhat + nf]);
        let nv = self.lyap.icnn.blocks().len();
        self.lyap
            .icnn
            .update_blocks(|dst| dst.clone_from_slice(&blocks[layout.lyap..layout.lyap + nv]));
        if let (ControlSpec::FreeNetwork(net), Some(base)) = (&mut self.control, layout.alpha) {
            let na = net.blocks().len();
            net.blocks_mut().clone_from_slice(&blocks[base..base + na]);
        }
    }

    /// Builds the projected drift for a batch `x` (`B × n`). The graph must
    /// have been created over blocks laid out as `layout`.
    pub fn drift_graph(
        &self,
        g: &mut Graph<'_>,
        layout: &BlockLayout,
        x: &Array2<f64>,
    ) -> Result<DriftNodes> {
        let (batch, n) = x.dim();
        if n != self.n() {
            return Err(Error::shape("batch state dimension", self.n(), n));
        }
        let m = self.m();
        let xs = g.constant(x.clone())?;
        let zero = g.constant(Array2::zeros((1, n)))?;

        let fhat = mlp_graph(g, &self.fhat, layout.fhat, xs, zero)?;
        let lyap = lyapunov_graph(g, &self.lyap, layout.lyap, xs, x, zero)?;

        // Columns of g(x) as B × n constants.
        let control = self.effective_control();
        let mut g_cols = Vec::new();
        if !matches!(control, ControlSpec::Zero) {
            let gx: Vec<Array2<f64>> = x
                .rows()
                .into_iter()
                .map(|r| self.g.eval(r))
                .collect::<Result<_>>()?;
            for j in 0..m {
                let col = Array2::from_shape_fn((batch, n), |(i, k)| gx[i][[k, j]]);
                g_cols.push(g.constant(col)?);
            }
        }

        let alpha_cols: Vec<NodeId> = match control {
            ControlSpec::Zero => Vec::new(),
            ControlSpec::FreeNetwork(net) => {
                let base = layout
                    .alpha
                    .ok_or_else(|| Error::Config("controller blocks missing from layout".into()))?;
                let a = mlp_graph(g, net, base, xs, zero)?;
                (0..m).map(|j| g.column(a, j)).collect::<Result<_>>()?
            }
            ControlSpec::Structured(rmap) => {
                let mut lg = Vec::with_capacity(m);
                for &col in &g_cols {
                    let prod = g.mul(lyap.gradient, col)?;
                    lg.push(g.row_sum(prod)?);
                }
                let r_inv: Vec<Array2<f64>> = x
                    .rows()
                    .into_iter()
                    .map(|row| spd_inverse(&rmap.eval(row)))
                    .collect::<Result<_>>()?;
                let mut cols = Vec::with_capacity(m);
                for j in 0..m {
                    let mut acc: Option<NodeId> = None;
                    for (l, &lg_l) in lg.iter().enumerate() {
                        let coef = Array2::from_shape_fn((batch, 1), |(i, _)| r_inv[i][[j, l]]);
                        let coef = g.constant(coef)?;
                        let term = g.mul_col(coef, lg_l)?;
                        acc = Some(match acc {
                            None => term,
                            Some(prev) => g.add(prev, term)?,
                        });
                    }
                    cols.push(g.scale(acc.expect("m > 0"), -0.5)?);
                }
                cols
            }
            ControlSpec::SontagFromV => {
                return Err(Error::Config(
                    "Sontag control is not differentiable here; train with a network or structured controller".into(),
                ))
            }
        };

        let mut control_field: Option<NodeId> = None;
        for (&col, &a) in g_cols.iter().zip(&alpha_cols) {
            let term = g.mul_col(col, a)?;
            control_field = Some(match control_field {
                None => term,
                Some(prev) => g.add(prev, term)?,
            });
        }
        let nominal = match control_field {
            Some(cf) => g.add(fhat, cf)?,
            None => fhat,
        };
        let prod = g.mul(lyap.gradient, nominal)?;
        let nominal_lie = g.row_sum(prod)?;

        let w = self.weight_graph(g, x, lyap.value, lyap.gradient)?;

        let f = if self.bypass_projection {
            fhat
        } else {
            let arg = g.add(nominal_lie, w)?;
            let active = g.relu(arg)?;
            let sq = g.square(lyap.gradient)?;
            let nsq = g.row_sum(sq)?;
            let coef = g.guarded_div(active, nsq)?;
            let correction = g.mul_col(lyap.gradient, coef)?;
            g.sub(fhat, correction)?
        };

        let closed = match control_field {
            Some(cf) => g.add(f, cf)?,
            None => f,
        };
        let prod = g.mul(lyap.gradient, closed)?;
        let closed_lie = g.row_sum(prod)?;
        let closed_margin = g.add(closed_lie, w)?;

        Ok(DriftNodes {
            f,
            v: lyap.value,
            grad_v: lyap.gradient,
            w,
            nominal_lie,
            closed_margin,
        })
    }

    fn weight_graph(
        &self,
        g: &mut Graph<'_>,
        x: &Array2<f64>,
        v: NodeId,
        grad_v: NodeId,
    ) -> Result<NodeId> {
        let sqnorm = || x.map_axis(Axis(1), |r| r.dot(&r)).insert_axis(Axis(1));
        match &self.weight {
            WeightSpec::QuadraticState { c } => g.constant(sqnorm() * *c),
            WeightSpec::ProportionalToV { c3 } => g.scale(v, *c3),
            WeightSpec::HinfComposite {
                h,
                g_d,
                gamma,
                margin,
            } => {
                let (batch, n) = x.dim();
                let fixed: Array2<f64> = Array2::from_shape_fn((batch, 1), |(i, _)| {
                    let z = h.eval(x.row(i));
                    z.dot(&z) + margin * x.row(i).dot(&x.row(i))
                });
                let gd: Vec<Array2<f64>> = x
                    .rows()
                    .into_iter()
                    .map(|r| g_d.eval(r))
                    .collect::<Result<_>>()?;
                let p = g_d.dims().1;
                let mut total = g.constant(fixed)?;
                for j in 0..p {
                    let col =
                        g.constant(Array2::from_shape_fn((batch, n), |(i, k)| gd[i][[k, j]]))?;
                    let prod = g.mul(grad_v, col)?;
                    let lie = g.row_sum(prod)?;
                    let sq = g.square(lie)?;
                    let scaled = g.scale(sq, 4.0 / (gamma * gamma))?;
                    total = g.add(total, scaled)?;
                }
                Ok(total)
            }
        }
    }
}

/// Random untrained model of the default shape.
pub fn random_model<R: rand::Rng + ?Sized>(
    n: usize,
    widths: &crate::nets::Architecture,
    epsilon: f64,
    weight: WeightSpec,
    g: InputMap,
    control: ControlKind,
    rng: &mut R,
) -> Result<ProjectedModel> {
    let m = g.dims().1;
    let mut drift_widths = vec![n];
    drift_widths.extend(&widths.drift_hidden);
    drift_widths.push(n);
    let fhat = MlpParameters::random("fhat", &drift_widths, rng)?;
    let icnn = IcnnParameters::random(n, &widths.icnn_hidden, widths.knee, rng)?;
    let lyap = LyapunovParameters::new(icnn, epsilon)?;
    let (control, mode) = match control {
        ControlKind::Autonomous => (ControlSpec::Zero, ProjectionMode::Autonomous),
        ControlKind::Network => {
            let mut control_widths = vec![n];
            control_widths.extend(&widths.control_hidden);
            control_widths.push(m);
            (
                ControlSpec::FreeNetwork(MlpParameters::random("alpha", &control_widths, rng)?),
                ProjectionMode::Stabilizable,
            )
        }
        ControlKind::Structured(r) => (ControlSpec::Structured(r), ProjectionMode::Stabilizable),
    };
    ProjectedModel::new(fhat, lyap, control, weight, g, mode)
}

/// Which controller family [`random_model`] attaches.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlKind {
    Autonomous,
    Network,
    Structured(RMap),
}
