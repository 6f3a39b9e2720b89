use ndarray::{Array2, Zip};

use crate::diffcore::{GradientBundle, ParameterBlock};
use crate::error::{Error, Result};

/// First and second moment estimates for every parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub stability: f64,
}

impl AdamState {
    pub fn new(blocks: &[ParameterBlock]) -> Self {
        let zeros = || {
            blocks
                .iter()
                .map(|b| Array2::zeros(b.values().dim()))
                .collect()
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            stability: 1e-8,
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam descent step of size `theta`.
///
/// Frozen blocks are left untouched. Raw ICNN pass-through weights are
/// updated in raw space, so their softplus images stay positive.
pub fn adam_update(
    state: &mut AdamState,
    blocks: &mut [ParameterBlock],
    grads: &GradientBundle,
    theta: f64,
) -> Result<()> {
    if state.first.len() != blocks.len() {
        return Err(Error::shape(
            "optimizer state",
            state.first.len(),
            blocks.len(),
        ));
    }
    for entry in &grads.entries {
        let block = blocks
            .get(entry.block)
            .ok_or_else(|| Error::shape("gradient block index", blocks.len(), entry.block))?;
        if block.values().dim() != entry.grad.dim() {
            return Err(Error::shape(
                "gradient block",
                format!("{:?}", block.values().dim()),
                format!("{:?}", entry.grad.dim()),
            ));
        }
        if entry.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                primitive: "adam_update",
                sample: entry.block,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.stability);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for entry in &grads.entries {
        let block = &mut blocks[entry.block];
        if !block.trainable {
            continue;
        }
        let m = &mut state.first[entry.block];
        let v = &mut state.second[entry.block];
        Zip::from(block.values_mut())
            .and(m)
            .and(v)
            .and(&entry.grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= theta * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
    Ok(())
}
