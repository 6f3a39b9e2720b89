//! Minimal reverse-mode differentiation for the training losses.

mod graph;
mod params;

pub(crate) use graph::srelu;
pub use graph::{sigmoid, softplus, Graph, NodeId, GUARD_EPS};
pub use params::{
    assign_trainable, flatten_trainable, BlockGradient, BlockShape, GradientBundle, ParameterBlock,
};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Evaluates a scalar program over `blocks` and reverse-accumulates the
/// gradient of every trainable block.
///
/// The program receives a fresh graph and returns the node holding the loss
/// (shape `1 × 1`). Parameters are only read.
pub fn value_and_param_grad<F>(blocks: &[ParameterBlock], program: F) -> Result<GradientBundle>
where
    F: FnOnce(&mut Graph<'_>) -> Result<NodeId>,
{
    let mut graph = Graph::new(blocks);
    let out = program(&mut graph)?;
    let loss = graph.scalar(out);
    let mut grads = graph.backward(out)?;
    let entries = blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.trainable)
        .map(|(i, b)| BlockGradient {
            block: i,
            grad: grads[i]
                .take()
                .unwrap_or_else(|| Array2::zeros(b.values().dim())),
        })
        .collect();
    Ok(GradientBundle { loss, entries })
}

/// Central-difference gradient `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let fp = f(&probe);
        probe[i] = x[i] - step;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                primitive: "finite_difference",
                sample: i,
            });
        }
        grad.push((fp - fm) / (2.0 * step));
    }
    Ok(grad)
}
