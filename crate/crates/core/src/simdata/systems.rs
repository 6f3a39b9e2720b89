use ndarray::{array, Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::stability::{lie_along_columns, sontag_control, ProjectedModel};

/// A time-invariant vector field `x ↦ ẋ`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>>;
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        (**self).eval(x)
    }
}

/// Van der Pol oscillator `(x₂, −x₁ + μ(1 − x₂²)x₂)`.
pub fn vdp_field(x: ArrayView1<'_, f64>, mu: f64) -> Array1<f64> {
    array![x[1], -x[0] + mu * (1.0 - x[1] * x[1]) * x[1]]
}

/// Named analytic systems.
#[derive(Clone, Debug, PartialEq)]
pub enum VectorFieldSpec {
    VanDerPol {
        mu: f64,
    },
    /// `ẋ = Ax`
    Linear(Array2<f64>),
}

impl VectorFieldSpec {
    pub fn name(&self) -> String {
        match self {
            VectorFieldSpec::VanDerPol { mu } => format!("vdp(mu={mu})"),
            VectorFieldSpec::Linear(a) => format!("linear({}x{})", a.nrows(), a.ncols()),
        }
    }
}

impl VectorField for VectorFieldSpec {
    fn dim(&self) -> usize {
        match self {
            VectorFieldSpec::VanDerPol { .. } => 2,
            VectorFieldSpec::Linear(a) => a.nrows(),
        }
    }

    fn eval(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape("vector field state", self.dim(), x.len()));
        }
        Ok(match self {
            VectorFieldSpec::VanDerPol { mu } => vdp_field(x, *mu),
            VectorFieldSpec::Linear(a) => a.dot(&x),
        })
    }
}

/// Drift used for the plant in closed-loop simulation.
#[derive(Clone, Debug, PartialEq)]
pub enum Plant {
    /// The learned projected drift `f`.
    Learned,
    /// A known analytic drift, e.g. the true van der Pol field.
    Analytic(VectorFieldSpec),
}

/// Feedback applied in closed-loop simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Controller {
    /// The model's own controller `α(x)`.
    Learned,
    /// Sontag's formula on the learned `V` with the plant drift.
    Sontag,
    Zero,
}

/// `ẋ = plant(x) + g(x)u(x)` built around a trained model.
#[derive(Clone, Debug)]
pub struct ClosedLoop<'a> {
    pub model: &'a ProjectedModel,
    pub plant: Plant,
    pub controller: Controller,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(model: &'a ProjectedModel, plant: Plant, controller: Controller) -> Self {
        Self {
            model,
            plant,
            controller,
        }
    }

    fn plant_drift(&self, x: ArrayView1<'_, f64>, learned: &Array1<f64>) -> Result<Array1<f64>> {
        match &self.plant {
            Plant::Learned => Ok(learned.clone()),
            Plant::Analytic(spec) => spec.eval(x),
        }
    }

    /// Control input at `x`.
    pub fn input(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.evaluate(x)?.1)
    }

    /// `(ẋ, u)` at `x`.
    pub fn evaluate(&self, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let p = self.model.eval(x)?;
        let g = self.model.g.eval(x)?;
        let drift = self.plant_drift(x, &p.f)?;
        let u = match self.controller {
            Controller::Learned => p.alpha.clone(),
            Controller::Sontag => sontag_control(
                p.grad_v.dot(&drift),
                lie_along_columns(p.grad_v.view(), g.view()).view(),
            ),
            Controller::Zero => Array1::zeros(self.model.m()),
        };
        let xdot = &drift + &g.dot(&u);
        Ok((xdot, u))
    }
}

impl VectorField for ClosedLoop<'_> {
    fn dim(&self) -> usize {
        self.model.n()
    }

    fn eval(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.evaluate(x)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vdp_examples() {
        assert_eq!(vdp_field(array![0.0, 0.0].view(), 0.3), array![0.0, 0.0]);
        assert_eq!(vdp_field(array![1.0, 0.0].view(), 0.3), array![0.0, -1.0]);
        assert_eq!(vdp_field(array![0.0, 1.0].view(), 0.3), array![1.0, 0.0]);
    }

    #[test]
    fn spec_checks_dimension() {
        let spec = VectorFieldSpec::VanDerPol { mu: 0.3 };
        assert!(spec.eval(array![1.0].view()).is_err());
        let lin = VectorFieldSpec::Linear(array![[-1.0]]);
        assert_eq!(lin.eval(array![2.0].view()).unwrap(), array![-2.0]);
    }
}
