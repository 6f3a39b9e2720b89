use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::diffcore::{Graph, NodeId, ParameterBlock};
use crate::error::{Error, Result};

/// Feedforward network with `tanh` hidden layers and a linear output,
/// evaluated origin-pinned: `net(x) − net(0)`.
///
/// Blocks are stored as `[W₀, b₀, W₁, b₁, …]` with `Wₗ` of shape
/// `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParameters {
    widths: Vec<usize>,
    blocks: Vec<ParameterBlock>,
}

impl MlpParameters {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(name: &str, widths: &[usize], rng: &mut R) -> Result<Self> {
        validate_widths(widths)?;
        let mut blocks = Vec::with_capacity(2 * (widths.len() - 1));
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
            blocks.push(ParameterBlock::matrix(format!("{name}.W{l}"), w));
            blocks.push(ParameterBlock::vector(
                format!("{name}.b{l}"),
                Array1::zeros(fan_out),
            ));
        }
        Ok(Self {
            widths: widths.to_vec(),
            blocks,
        })
    }

    /// Builds a network from explicit `(W, b)` layers.
    pub fn from_layers(name: &str, layers: Vec<(Array2<f64>, Array1<f64>)>) -> Result<Self> {
        let mut widths = Vec::new();
        let mut blocks = Vec::new();
        for (l, (w, b)) in layers.into_iter().enumerate() {
            if let Some(&prev) = widths.last() {
                if w.ncols() != prev {
                    return Err(Error::shape("mlp layer input", prev, w.ncols()));
                }
            } else {
                widths.push(w.ncols());
            }
            if b.len() != w.nrows() {
                return Err(Error::shape("mlp bias", w.nrows(), b.len()));
            }
            widths.push(w.nrows());
            blocks.push(ParameterBlock::matrix(format!("{name}.W{l}"), w));
            blocks.push(ParameterBlock::vector(format!("{name}.b{l}"), b));
        }
        validate_widths(&widths)?;
        Ok(Self { widths, blocks })
    }

    /// Rebuilds from a block list laid out as produced by [`Self::blocks`].
    pub fn from_blocks(blocks: Vec<ParameterBlock>) -> Result<Self> {
        if blocks.is_empty() || blocks.len() % 2 != 0 {
            return Err(Error::Malformed(format!(
                "mlp expects an even, nonzero number of blocks, got {}",
                blocks.len()
            )));
        }
        let layers = blocks
            .chunks(2)
            .map(|c| (c[0].values().clone(), c[1].row().to_owned()))
            .collect();
        let name = blocks[0]
            .name
            .split('.')
            .next()
            .unwrap_or("mlp")
            .to_string();
        let mut out = Self::from_layers(&name, layers)?;
        for (dst, src) in out.blocks.iter_mut().zip(&blocks) {
            dst.name.clone_from(&src.name);
            dst.trainable = src.trainable;
        }
        Ok(out)
    }

    /// Sets the output layer to zero so the pinned output vanishes everywhere.
    pub fn zero_output(mut self) -> Self {
        let n = self.blocks.len();
        self.blocks[n - 2].values_mut().fill(0.0);
        self.blocks[n - 1].values_mut().fill(0.0);
        self
    }

    pub fn freeze(mut self) -> Self {
        for b in &mut self.blocks {
            b.trainable = false;
        }
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn blocks(&self) -> &[ParameterBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParameterBlock] {
        &mut self.blocks
    }

    fn layers(&self) -> impl Iterator<Item = (&Array2<f64>, ArrayView1<'_, f64>)> {
        self.blocks.chunks(2).map(|c| (c[0].values(), c[1].row()))
    }

    fn raw(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let depth = self.blocks.len() / 2;
        let mut h = x.to_owned();
        for (l, (w, b)) in self.layers().enumerate() {
            h = w.dot(&h) + b;
            if l + 1 < depth {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    /// Origin-pinned forward pass; exactly zero at `x = 0`.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("mlp_forward", self.input_dim(), x.len()));
        }
        let zero = Array1::zeros(self.input_dim());
        Ok(self.raw(x) - self.raw(zero.view()))
    }
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
        return Err(Error::Config(format!(
            "layer widths must be at least two positive integers, got {widths:?}"
        )));
    }
    Ok(())
}

/// Origin-pinned MLP on a batch. `x` is `B × n`, `zero` is a `1 × n`
/// zero row; block `l` of the network lives at graph index `base + l`.
pub fn mlp_graph(
    g: &mut Graph<'_>,
    net: &MlpParameters,
    base: usize,
    x: NodeId,
    zero: NodeId,
) -> Result<NodeId> {
    let raw = |g: &mut Graph<'_>, input: NodeId| -> Result<NodeId> {
        let depth = net.blocks.len() / 2;
        let mut h = input;
        for l in 0..depth {
            let w = g.param(base + 2 * l)?;
            let b = g.param(base + 2 * l + 1)?;
            h = g.matmul_nt(h, w)?;
            h = g.add_row(h, b)?;
            if l + 1 < depth {
                h = g.tanh(h)?;
            }
        }
        Ok(h)
    };
    let at_x = raw(g, x)?;
    let at_zero = raw(g, zero)?;
    g.sub_row(at_x, at_zero)
}
