use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Serialize;
use stabnet::stability::{InputMap, OutputMap, WeightSpec};

#[derive(Debug, Parser)]
#[command(
    name = "stabnet",
    version,
    about = "Learn stabilizable dynamics with a neural control Lyapunov function"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a benchmark vector field on a uniform grid.
    GenData(GenDataArgs),
    /// Train a projected model on a dataset.
    Train(TrainArgs),
    /// Certify a trained model.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Integrate a closed loop built from a checkpoint.
    Simulate(SimulateArgs),
    /// Sample learned fields on a grid for plotting.
    ExportPlot(ExportPlotArgs),
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    /// Max of L_{f+gα}V + W over random states.
    Decrease(DecreaseArgs),
    /// Sampled region-of-attraction analysis against labeled data.
    Roa(RoaArgs),
    /// H∞ weight inequality.
    Hinf(HinfArgs),
    /// Inverse optimality of the autonomous correction.
    Invopt(InvoptArgs),
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Seed for every random draw.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Primary output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Single-threaded, fixed-order evaluation (always on; recorded in the manifest).
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemName {
    /// `ẋ₁ = x₂, ẋ₂ = −x₁ + μ(1 − x₂²)x₂`
    Vdp,
    /// `ẋ = −x`
    Decay,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub system: SystemName,
    #[arg(long, default_value_t = 0.3)]
    pub mu: f64,
    /// State dimension of `decay`.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub per_axis: u64,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub min: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub max: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Autonomous,
    Stabilize,
    Hji,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMapName {
    /// Column (0, 1)ᵀ.
    Vdp,
    /// n × n identity.
    Identity,
    /// Zero column.
    Zero,
}

impl InputMapName {
    pub fn build(self, n: usize) -> anyhow::Result<InputMap> {
        Ok(match self {
            InputMapName::Vdp if n == 2 => InputMap::van_der_pol(),
            InputMapName::Vdp => bail!("the vdp input map needs a two-dimensional state, got {n}"),
            InputMapName::Identity => InputMap::Constant(Array2::eye(n)),
            InputMapName::Zero => InputMap::zero(n, 1),
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training data (`x1..xn,xdot1..xdotn`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeName,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Decrease weight: `quad:<c>`, `propV:<c3>` or `hinf:<gamma>`.
    #[arg(long)]
    pub w: Option<String>,
    /// Shorthand for `--w propV:<c3>`.
    #[arg(long)]
    pub c3: Option<f64>,
    /// Margin added to an H∞ weight, times ‖x‖².
    #[arg(long, default_value_t = 0.0)]
    pub hinf_margin: f64,
    /// Adam step size.
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, value_enum, default_value = "vdp")]
    pub g: InputMapName,
    /// Disturbance input map of an H∞ weight.
    #[arg(long, value_enum, default_value = "vdp")]
    pub gd: InputMapName,
    /// Control weight of the structured controller: `identity` or `diag:<r1,..,rm>`.
    #[arg(long = "R", default_value = "identity")]
    pub r: String,
    #[arg(long, default_value_t = 0.0)]
    pub hje_weight: f64,
    /// Hidden width of every network.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Smooth-ReLU knee width of the Lyapunov network.
    #[arg(long, default_value_t = 0.1)]
    pub knee: f64,
    /// Keep the controller network at zero.
    #[arg(long)]
    pub freeze_control: bool,
}

impl TrainArgs {
    pub fn weight(&self, n: usize) -> anyhow::Result<WeightSpec> {
        match (&self.w, self.c3) {
            (Some(_), Some(_)) => bail!("give either --w or --c3, not both"),
            (None, Some(c3)) => Ok(WeightSpec::ProportionalToV { c3 }),
            (None, None) if self.mode == ModeName::Autonomous => {
                Ok(WeightSpec::ProportionalToV { c3: 1.0 })
            }
            (None, None) => bail!("--w is required outside autonomous mode"),
            (Some(text), None) => parse_weight(text, self.gd.build(n)?, self.hinf_margin),
        }
    }

    pub fn control_weight(&self, m: usize) -> anyhow::Result<Array2<f64>> {
        parse_r(&self.r, m)
    }
}

/// `quad:<c>`, `propV:<c3>` or `hinf:<gamma>`.
pub fn parse_weight(text: &str, g_d: InputMap, margin: f64) -> anyhow::Result<WeightSpec> {
    let (kind, value) = text.split_once(':').ok_or_else(|| {
        anyhow!("weight `{text}` must look like quad:<c>, propV:<c3> or hinf:<gamma>")
    })?;
    let value: f64 = value
        .parse()
        .with_context(|| format!("weight parameter `{value}` is not a number"))?;
    let spec = match kind {
        "quad" => WeightSpec::QuadraticState { c: value },
        "propV" => WeightSpec::ProportionalToV { c3: value },
        "hinf" => WeightSpec::HinfComposite {
            h: OutputMap::Identity,
            g_d,
            gamma: value,
            margin,
        },
        other => bail!("unknown weight family `{other}`; expected quad, propV or hinf"),
    };
    spec.validate()?;
    Ok(spec)
}

/// `identity` or `diag:<r1,..,rm>`.
pub fn parse_r(text: &str, m: usize) -> anyhow::Result<Array2<f64>> {
    if text == "identity" {
        return Ok(Array2::eye(m));
    }
    let diag = text.strip_prefix("diag:").ok_or_else(|| {
        anyhow!("control weight `{text}` must be `identity` or `diag:<r1,..,rm>`")
    })?;
    let entries: Vec<f64> = diag
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("`{v}` is not a number"))
        })
        .collect::<anyhow::Result<_>>()?;
    if entries.len() != m {
        bail!(
            "control weight has {} entries but the input has dimension {m}",
            entries.len()
        );
    }
    let mut r = Array2::zeros((m, m));
    for (i, e) in entries.into_iter().enumerate() {
        r[[i, i]] = e;
    }
    Ok(r)
}

/// Comma-separated vector.
pub fn parse_vector(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("`{v}` is not a number"))
        })
        .collect()
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub min: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub max: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecreaseArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sample: SampleArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RoaArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset whose labels are true derivatives at u = 0.
    #[arg(long)]
    pub data: PathBuf,
    /// Per-point table; defaults to `<out>.points.csv`.
    #[arg(long)]
    pub points: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HinfArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sample: SampleArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InvoptArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long, default_value_t = 1.0)]
    pub c3: f64,
    /// Increasing control-penalty bounds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1e6")]
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantName {
    Learned,
    TrueVdp,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerName {
    Learned,
    Sontag,
    Zero,
}

impl ControllerName {
    pub fn to_core(self) -> stabnet::simdata::Controller {
        match self {
            ControllerName::Learned => stabnet::simdata::Controller::Learned,
            ControllerName::Sontag => stabnet::simdata::Controller::Sontag,
            ControllerName::Zero => stabnet::simdata::Controller::Zero,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "learned")]
    pub plant: PlantName,
    #[arg(long, value_enum, default_value = "learned")]
    pub controller: ControllerName,
    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 10.0)]
    pub t_final: f64,
    /// μ of the true van der Pol plant.
    #[arg(long, default_value_t = 0.3)]
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum FieldName {
    #[value(name = "V", alias = "v")]
    V,
    Alpha,
    Sontag,
    Drift,
    Phase,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportPlotArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub what: FieldName,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(2..))]
    pub per_axis: u64,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub min: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub max: f64,
    /// Controller of the `phase` field.
    #[arg(long, value_enum, default_value = "learned")]
    pub controller: ControllerName,
    /// Also render an SVG (two-dimensional states only).
    #[arg(long)]
    pub svg: Option<PathBuf>,
}
