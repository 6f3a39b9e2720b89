//! Closed-form pointwise constructions.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::maps::{spd_inverse, InputMap, OutputMap};
use crate::diffcore::GUARD_EPS;
use crate::error::{Error, Result};
use crate::nets::LyapunovParameters;

/// Positive definite weight `W(x)` demanded of the closed-loop decrease.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    /// `W(x) = c‖x‖²`
    QuadraticState { c: f64 },
    /// `W(x) = c₃V(x)`
    ProportionalToV { c3: f64 },
    /// `W(x) = ‖h(x)‖² + 4‖L_{g_d}V(x)‖²/γ² + margin·‖x‖²`
    HinfComposite {
        h: OutputMap,
        g_d: InputMap,
        gamma: f64,
        margin: f64,
    },
}

impl WeightSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightSpec::QuadraticState { c } if !(*c > 0.0) => Err(Error::Config(format!(
                "quadratic weight must be positive, got {c}"
            ))),
            WeightSpec::ProportionalToV { c3 } if !(*c3 > 0.0) => {
                Err(Error::Config(format!("c3 must be positive, got {c3}")))
            }
            WeightSpec::HinfComposite { gamma, margin, .. } => {
                if !(*gamma > 0.0) {
                    Err(Error::Config(format!(
                        "L2 gain must be positive, got {gamma}"
                    )))
                } else if !(*margin >= 0.0) {
                    Err(Error::Config(format!(
                        "margin must be nonnegative, got {margin}"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Evaluates `W` from the already-computed `V(x)` and `∇V(x)`.
    pub fn eval_parts(
        &self,
        x: ArrayView1<'_, f64>,
        v: f64,
        grad_v: ArrayView1<'_, f64>,
    ) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            WeightSpec::QuadraticState { c } => c * x.dot(&x),
            WeightSpec::ProportionalToV { c3 } => c3 * v,
            WeightSpec::HinfComposite { margin, .. } => {
                self.hinf_requirement(x, grad_v)? + margin * x.dot(&x)
            }
        })
    }

    /// `‖h(x)‖² + 4‖L_{g_d}V(x)‖²/γ²`; zero for the other variants.
    pub fn hinf_requirement(
        &self,
        x: ArrayView1<'_, f64>,
        grad_v: ArrayView1<'_, f64>,
    ) -> Result<f64> {
        match self {
            WeightSpec::HinfComposite { h, g_d, gamma, .. } => {
                let z = h.eval(x);
                let lgd = g_d.eval(x)?.t().dot(&grad_v);
                Ok(z.dot(&z) + 4.0 * lgd.dot(&lgd) / (gamma * gamma))
            }
            _ => Ok(0.0),
        }
    }

    /// `true` when positive definiteness of `W` is not certified: an
    /// H∞ weight with zero margin whose output map may vanish off the origin.
    pub fn needs_definiteness_warning(&self) -> bool {
        matches!(
            self,
            WeightSpec::HinfComposite { h, margin, .. }
                if *margin == 0.0 && !matches!(h, OutputMap::Identity)
        )
    }
}

/// `W(x)` for the given Lyapunov function.
pub fn weight_eval(
    spec: &WeightSpec,
    x: ArrayView1<'_, f64>,
    lyap: &LyapunovParameters,
) -> Result<f64> {
    let (v, grad) = lyap.value_and_gradient(x)?;
    spec.eval_parts(x, v, grad.view())
}

/// Moves `nominal` along `−∇V` just enough that `∇V·f ≤ −W`.
///
/// `lie` is `∇V·(nominal + control term)`. Returns the corrected drift; the
/// correction is zero on the inactive side, at the switching surface, and
/// wherever `‖∇V‖² < 1e-12`.
fn project_along_gradient(
    nominal: ArrayView1<'_, f64>,
    lie: f64,
    w: f64,
    grad_v: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let mut f = nominal.to_owned();
    f += &projection_correction(lie, w, grad_v);
    f
}

/// The correction term `−ReLU(lie + W)/‖∇V‖² · ∇V` alone.
pub fn projection_correction(lie: f64, w: f64, grad_v: ArrayView1<'_, f64>) -> Array1<f64> {
    let active = lie + w;
    let relu = if active > 0.0 { active } else { 0.0 };
    let nsq = grad_v.dot(&grad_v);
    let coef = if nsq < GUARD_EPS { 0.0 } else { relu / nsq };
    grad_v.mapv(|gi| -(gi * coef))
}

fn check_len(ctx: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(ctx, expected, actual));
    }
    Ok(())
}

/// Stable autonomous drift: `f = f̂ − ReLU(L_f̂V + c₃V)/‖∇V‖² · ∇V`.
pub fn project_autonomous(
    fhat_x: ArrayView1<'_, f64>,
    v_x: f64,
    grad_v: ArrayView1<'_, f64>,
    c3: f64,
) -> Result<Array1<f64>> {
    if !(c3 > 0.0) {
        return Err(Error::Config(format!("c3 must be positive, got {c3}")));
    }
    check_len("project_autonomous", fhat_x.len(), grad_v.len())?;
    let lie = grad_v.dot(&fhat_x);
    Ok(project_along_gradient(fhat_x, lie, c3 * v_x, grad_v))
}

/// Stabilizable drift:
/// `f = f̂ − ReLU(L_{f̂+gα}V + W)/‖∇V‖² · ∇V`.
pub fn project_stabilizable(
    fhat_x: ArrayView1<'_, f64>,
    g_x: ArrayView2<'_, f64>,
    alpha_x: ArrayView1<'_, f64>,
    grad_v: ArrayView1<'_, f64>,
    w_x: f64,
) -> Result<Array1<f64>> {
    let n = fhat_x.len();
    check_len("project_stabilizable gradient", n, grad_v.len())?;
    if g_x.dim() != (n, alpha_x.len()) {
        return Err(Error::shape(
            "project_stabilizable input map",
            format!("({n}, {})", alpha_x.len()),
            format!("{:?}", g_x.dim()),
        ));
    }
    if !(w_x >= 0.0) {
        return Err(Error::Invariant(format!(
            "weight function is negative: W = {w_x}"
        )));
    }
    let nominal = &fhat_x + &g_x.dot(&alpha_x);
    let lie = grad_v.dot(&nominal);
    Ok(project_along_gradient(fhat_x, lie, w_x, grad_v))
}

/// Sontag's universal formula:
/// `u = −(LfV + √(LfV² + ‖LgV‖⁴))/‖LgV‖² · LgVᵀ`, and `0` when `LgV = 0`.
pub fn sontag_control(lf_v: f64, lg_v: ArrayView1<'_, f64>) -> Array1<f64> {
    let nsq = lg_v.dot(&lg_v);
    if nsq < GUARD_EPS {
        return Array1::zeros(lg_v.len());
    }
    let coef = -(lf_v + (lf_v * lf_v + nsq * nsq).sqrt()) / nsq;
    lg_v.mapv(|v| coef * v)
}

/// `LgV(x) = ∇Vᵀ g(x)` as a length-`m` vector.
pub fn lie_along_columns(grad_v: ArrayView1<'_, f64>, g_x: ArrayView2<'_, f64>) -> Array1<f64> {
    g_x.t().dot(&grad_v)
}

/// `α(x) = −½ R⁻¹(x) L_gᵀV(x)` from precomputed pieces.
pub fn structured_alpha_parts(
    grad_v: ArrayView1<'_, f64>,
    g_x: ArrayView2<'_, f64>,
    r_x: &Array2<f64>,
) -> Result<Array1<f64>> {
    let r_inv = spd_inverse(r_x)?;
    let lg = lie_along_columns(grad_v, g_x);
    Ok(r_inv.dot(&lg) * -0.5)
}

pub fn structured_alpha(
    x: ArrayView1<'_, f64>,
    lyap: &LyapunovParameters,
    r: &super::RMap,
    g: &InputMap,
) -> Result<Array1<f64>> {
    let grad = lyap.input_gradient(x)?;
    structured_alpha_parts(grad.view(), g.eval(x)?.view(), &r.eval(x))
}

/// `H(x) = L_fV − ½ L_gV R⁻¹ L_gᵀV + W`.
pub fn hji_residual(
    x: ArrayView1<'_, f64>,
    f_x: ArrayView1<'_, f64>,
    g_x: ArrayView2<'_, f64>,
    lyap: &LyapunovParameters,
    r: &super::RMap,
    w_x: f64,
) -> Result<f64> {
    let grad = lyap.input_gradient(x)?;
    hji_residual_parts(grad.view(), f_x, g_x, &r.eval(x), w_x)
}

pub fn hji_residual_parts(
    grad_v: ArrayView1<'_, f64>,
    f_x: ArrayView1<'_, f64>,
    g_x: ArrayView2<'_, f64>,
    r_x: &Array2<f64>,
    w_x: f64,
) -> Result<f64> {
    let r_inv = spd_inverse(r_x)?;
    let lg = lie_along_columns(grad_v, g_x);
    Ok(grad_v.dot(&f_x) - 0.5 * lg.dot(&r_inv.dot(&lg)) + w_x)
}

/// Weights making the autonomous correction inverse optimal.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseOptimal {
    /// Control penalty `r(x)`.
    pub r: f64,
    /// `1/(2r)`, evaluated without forming `r` on the active branch.
    pub gain: f64,
    /// `−∇V/(2r)`
    pub khat_limit: Array1<f64>,
    /// Whether `L_f̂V > −c₃V` (the correction is active).
    pub active: bool,
}

/// `r = b` when `L_f̂V ≤ −c₃V`, else `‖∇V‖²/(2(L_f̂V + c₃V))`.
pub fn inverse_optimal_weights(
    lie_fhat: f64,
    v_x: f64,
    grad_v: ArrayView1<'_, f64>,
    c3: f64,
    b: f64,
) -> Result<InverseOptimal> {
    if !(c3 > 0.0) || !(b > 0.0) {
        return Err(Error::Config(format!(
            "c3 and b must be positive, got {c3} and {b}"
        )));
    }
    let active_part = lie_fhat + c3 * v_x;
    let nsq = grad_v.dot(&grad_v);
    let (r, gain, active) = if active_part > 0.0 && nsq >= GUARD_EPS {
        (nsq / (2.0 * active_part), active_part / nsq, true)
    } else {
        (b, 1.0 / (2.0 * b), false)
    };
    let khat_limit = grad_v.mapv(|gi| -(gi * gain));
    Ok(InverseOptimal {
        r,
        gain,
        khat_limit,
        active,
    })
}
