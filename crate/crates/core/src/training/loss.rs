use ndarray::Array2;

use crate::diffcore::{value_and_param_grad, GradientBundle, Graph, NodeId, ParameterBlock};
use crate::error::{Error, Result};
use crate::simdata::Dataset;
use crate::stability::{BlockLayout, ControlSpec, ProjectedModel};

/// Loss terms on one batch, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub fit: NodeId,
    /// Mean squared HJI residual, present when the HJE term is active.
    pub hje: Option<NodeId>,
}

/// `(1/(n|Δ|)) Σ ‖ẋ − f(x)‖² + (a/(n|Δ|)) Σ H(x)²` on `(x, ẋ)`.
///
/// The HJE term is only added when `hje_weight > 0`; it requires a structured
/// controller so that `L_{f+gα}V + W` is the HJI residual.
pub fn loss_graph(
    g: &mut Graph<'_>,
    model: &ProjectedModel,
    layout: &BlockLayout,
    x: &Array2<f64>,
    xdot: &Array2<f64>,
    hje_weight: f64,
) -> Result<LossNodes> {
    let (batch, n) = x.dim();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if xdot.dim() != x.dim() {
        return Err(Error::shape(
            "batch labels",
            format!("{:?}", x.dim()),
            format!("{:?}", xdot.dim()),
        ));
    }
    if !(hje_weight >= 0.0) || !hje_weight.is_finite() {
        return Err(Error::Config(format!(
            "HJE weight must be nonnegative, got {hje_weight}"
        )));
    }
    let norm = 1.0 / (n * batch) as f64;
    let nodes = model.drift_graph(g, layout, x)?;
    let target = g.constant(xdot.clone())?;
    let residual = g.sub(nodes.f, target)?;
    let sq = g.square(residual)?;
    let total_sq = g.sum(sq)?;
    let fit = g.scale(total_sq, norm)?;
    if hje_weight == 0.0 {
        return Ok(LossNodes {
            total: fit,
            fit,
            hje: None,
        });
    }
    if !matches!(model.control, ControlSpec::Structured(_)) {
        return Err(Error::Config(
            "the HJE term needs a structured controller".into(),
        ));
    }
    let h_sq = g.square(nodes.closed_margin)?;
    let h_sum = g.sum(h_sq)?;
    let hje = g.scale(h_sum, norm)?;
    let weighted = g.scale(hje, hje_weight)?;
    let total = g.add(fit, weighted)?;
    Ok(LossNodes {
        total,
        fit,
        hje: Some(hje),
    })
}

fn batch_arrays(data: &Dataset, batch: &[usize]) -> Result<(Array2<f64>, Array2<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Config(format!(
            "batch index {bad} is out of range for {} samples",
            data.len()
        )));
    }
    Ok(data.select(batch))
}

fn evaluate(
    model: &ProjectedModel,
    x: &Array2<f64>,
    xdot: &Array2<f64>,
    a: f64,
) -> Result<(f64, f64, Option<f64>)> {
    let (blocks, layout) = model.collect_blocks();
    let mut g = Graph::new(&blocks);
    let nodes = loss_graph(&mut g, model, &layout, x, xdot, a)?;
    Ok((
        g.scalar(nodes.total),
        g.scalar(nodes.fit),
        nodes.hje.map(|h| g.scalar(h)),
    ))
}

/// Mean squared fit residual of the projected drift on `batch`.
pub fn batch_loss(model: &ProjectedModel, data: &Dataset, batch: &[usize]) -> Result<f64> {
    let (x, xdot) = batch_arrays(data, batch)?;
    Ok(evaluate(model, &x, &xdot, 0.0)?.0)
}

/// Fit loss plus `a` times the mean squared HJI residual.
pub fn batch_loss_hje(
    model: &ProjectedModel,
    data: &Dataset,
    batch: &[usize],
    a: f64,
) -> Result<f64> {
    if a < 0.0 {
        return Err(Error::Config(format!(
            "HJE weight must be nonnegative, got {a}"
        )));
    }
    let (x, xdot) = batch_arrays(data, batch)?;
    Ok(evaluate(model, &x, &xdot, a)?.0)
}

/// Mean squared HJI residual `(1/(n|Δ|)) Σ H²` on `batch`.
pub fn batch_hje_residual(model: &ProjectedModel, data: &Dataset, batch: &[usize]) -> Result<f64> {
    let (x, xdot) = batch_arrays(data, batch)?;
    let (_, _, hje) = evaluate(model, &x, &xdot, 1.0)?;
    Ok(hje.expect("weight is positive"))
}

/// Loss and gradient with respect to every trainable block of `model`.
pub fn loss_and_gradient(
    model: &ProjectedModel,
    x: &Array2<f64>,
    xdot: &Array2<f64>,
    hje_weight: f64,
) -> Result<(Vec<ParameterBlock>, BlockLayout, GradientBundle)> {
    let (blocks, layout) = model.collect_blocks();
    let bundle = value_and_param_grad(&blocks, |g| {
        Ok(loss_graph(g, model, &layout, x, xdot, hje_weight)?.total)
    })?;
    Ok((blocks, layout, bundle))
}
