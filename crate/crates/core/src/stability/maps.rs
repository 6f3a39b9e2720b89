use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible eigenvalue of a control-weight matrix `R(x)`.
pub const MIN_EIGENVALUE: f64 = 1e-9;

/// A user-supplied state-dependent matrix or vector map.
#[derive(Clone)]
pub struct MapFn<T>(pub Arc<dyn Fn(ArrayView1<'_, f64>) -> T + Send + Sync>);

impl<T> MapFn<T> {
    pub fn new(f: impl Fn(ArrayView1<'_, f64>) -> T + Send + Sync + 'static) -> Self {
        MapFn(Arc::new(f))
    }
}

impl<T> fmt::Debug for MapFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<fn>")
    }
}

impl<T> PartialEq for MapFn<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// Known input map `g(x) ∈ ℝⁿˣᵐ` (also used for disturbance maps).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMap {
    Constant(Array2<f64>),
    #[serde(skip)]
    Function {
        n: usize,
        m: usize,
        f: MapFn<Array2<f64>>,
    },
}

impl InputMap {
    /// Column `(0, 1)ᵀ`: the control enters the second state equation.
    pub fn van_der_pol() -> Self {
        InputMap::Constant(ndarray::array![[0.0], [1.0]])
    }

    pub fn zero(n: usize, m: usize) -> Self {
        InputMap::Constant(Array2::zeros((n, m)))
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            InputMap::Constant(g) => g.dim(),
            InputMap::Function { n, m, .. } => (*n, *m),
        }
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        let g = match self {
            InputMap::Constant(g) => g.clone(),
            InputMap::Function { f, .. } => (f.0)(x),
        };
        if g.dim() != self.dims() {
            return Err(Error::shape(
                "input map",
                format!("{:?}", self.dims()),
                format!("{:?}", g.dim()),
            ));
        }
        Ok(g)
    }
}

/// Performance output `z = h(x)` with `h(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMap {
    Identity,
    Linear(Array2<f64>),
    #[serde(skip)]
    Function(MapFn<Array1<f64>>),
}

impl OutputMap {
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            OutputMap::Identity => x.to_owned(),
            OutputMap::Linear(c) => c.dot(&x),
            OutputMap::Function(f) => (f.0)(x),
        }
    }
}

/// Symmetric positive definite control weight `R(x) ∈ ℝᵐˣᵐ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RMap {
    Constant(Array2<f64>),
    #[serde(skip)]
    Function(MapFn<Array2<f64>>),
}

impl RMap {
    pub fn identity(m: usize) -> Self {
        RMap::Constant(Array2::eye(m))
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>) -> Array2<f64> {
        match self {
            RMap::Constant(r) => r.clone(),
            RMap::Function(f) => (f.0)(x),
        }
    }

    /// `R(x)⁻¹`, after checking symmetry and the eigenvalue floor.
    pub fn inverse_at(&self, x: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        spd_inverse(&self.eval(x))
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(r: &Array2<f64>) -> f64 {
    let m = DMatrix::from_row_iterator(r.nrows(), r.ncols(), r.iter().copied());
    SymmetricEigen::new(m).eigenvalues.min()
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(r: &Array2<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = r.dim();
    if rows != cols || rows == 0 {
        return Err(Error::shape("R(x)", "square", format!("{:?}", r.dim())));
    }
    let scale = r.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if (r - &r.t()).iter().any(|v| v.abs() > 1e-12 * scale) {
        return Err(Error::Config("R(x) must be symmetric".into()));
    }
    let smallest = min_eigenvalue(r);
    if !(smallest >= MIN_EIGENVALUE) {
        return Err(Error::NotPositiveDefinite {
            smallest_eigenvalue: smallest,
        });
    }
    let m = DMatrix::from_row_iterator(rows, cols, r.iter().copied());
    let chol = m.cholesky().ok_or(Error::NotPositiveDefinite {
        smallest_eigenvalue: smallest,
    })?;
    let inv = chol.inverse();
    Ok(Array2::from_shape_fn((rows, cols), |(i, j)| inv[(i, j)]))
}

/// Solves `R y = b` for symmetric positive definite `R`.
pub fn spd_solve(r: &Array2<f64>, b: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let inv = spd_inverse(r)?;
    Ok(inv.dot(&b))
}
