//! Parameterized function families: the nominal drift and controller
//! networks, and the input-convex Lyapunov candidate.

mod icnn;
mod mlp;

pub use icnn::{
    lyapunov_graph, smooth_relu, spectral_norm, IcnnParameters, LyapunovNodes, LyapunovParameters,
};
pub use mlp::{mlp_graph, MlpParameters};

/// Default architecture: two hidden layers of width 64 for the drift and
/// controller networks, ICNN depth 3 with width-64 hidden layers, knee 0.1.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Architecture {
    pub drift_hidden: Vec<usize>,
    pub control_hidden: Vec<usize>,
    pub icnn_hidden: Vec<usize>,
    pub knee: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            drift_hidden: vec![64, 64],
            control_hidden: vec![64, 64],
            icnn_hidden: vec![64, 64],
            knee: 0.1,
        }
    }
}

impl Architecture {
    /// Uniform hidden width for all three networks.
    pub fn uniform(width: usize) -> Self {
        Self {
            drift_hidden: vec![width, width],
            control_hidden: vec![width, width],
            icnn_hidden: vec![width, width],
            knee: 0.1,
        }
    }
}
