use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use stabnet::nets::Architecture;
use stabnet::simdata::{
    format_float, grid_dataset, grid_points, rk4_integrate, ClosedLoop, Dataset, Plant,
    VectorFieldSpec,
};
use stabnet::stability::{lie_along_columns, sontag_control, ProjectedModel};
use stabnet::training::{train, Checkpoint, TrainConfig, TrainMode};
use stabnet::verify;
use stabnet::Error;

use crate::args::*;
use crate::manifest::{sidecar, ManifestBuilder};
use crate::plot;

/// Allowed one-step rise of `V`, relative to `1 + V`, on certified closed loops.
const VALUE_RISE_TOLERANCE: f64 = 1e-9;

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_model(
    path: &Path,
    manifest: &mut ManifestBuilder,
) -> anyhow::Result<(Checkpoint, ProjectedModel)> {
    manifest.input(path)?;
    let ckpt =
        Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = ckpt.model()?;
    Ok((ckpt, model))
}

fn uniform_samples(
    count: usize,
    n: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> anyhow::Result<Array2<f64>> {
    if !(lo < hi) {
        bail!("sampling bounds [{lo}, {hi}] are inverted");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Array2::from_shape_fn((count, n), |_| {
        rng.random_range(lo..hi)
    }))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:e}"))
}

pub fn gen_data(args: &GenDataArgs) -> anyhow::Result<bool> {
    let mut manifest = ManifestBuilder::new(
        "gen-data",
        args,
        args.common.seed,
        args.common.deterministic,
    )?;
    let field = match args.system {
        SystemName::Vdp => VectorFieldSpec::VanDerPol { mu: args.mu },
        SystemName::Decay => VectorFieldSpec::Linear(-Array2::<f64>::eye(args.dim)),
    };
    let n = match args.system {
        SystemName::Vdp => 2,
        SystemName::Decay => args.dim,
    };
    let bounds = vec![(args.min, args.max); n];
    let mut data = grid_dataset(args.per_axis as usize, &bounds, &field)?;
    data.provenance = format!("{} {}", field.name(), data.provenance);
    data.save(&args.common.out)?;
    manifest.output(&args.common.out);
    println!("N_d = {}", data.len());
    manifest.finish(&args.common.out, true)?;
    Ok(true)
}

pub fn train_cmd(args: &TrainArgs) -> anyhow::Result<bool> {
    let mut manifest =
        ManifestBuilder::new("train", args, args.common.seed, args.common.deterministic)?;
    manifest.input(&args.data)?;
    let data = Dataset::load(&args.data)
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    let n = data.n();
    let g = args.g.build(n)?;
    let m = g.dims().1;
    let mode = match args.mode {
        ModeName::Autonomous => TrainMode::Autonomous,
        ModeName::Stabilize => TrainMode::Stabilizable,
        ModeName::Hji => TrainMode::HjiStructured,
    };
    let mut config = TrainConfig::new(mode, g, args.weight(n)?);
    config.epsilon = args.epsilon;
    config.step_size = args.lr;
    config.batch_size = args.batch_size;
    config.epochs = args.epochs;
    config.seed = args.common.seed;
    config.hje_weight = args.hje_weight;
    config.architecture = Architecture {
        knee: args.knee,
        ..Architecture::uniform(args.hidden)
    };
    if mode == TrainMode::HjiStructured {
        config.control_weight = Some(args.control_weight(m)?);
    }
    config.freeze_control = args.freeze_control;
    if config.weight.needs_definiteness_warning() {
        eprintln!(
            "warning: W may vanish away from the origin; positive definiteness is not certified"
        );
    }

    let (ckpt, diverged) = match train(config, &data) {
        Ok(ckpt) => (ckpt, false),
        Err(Error::TrainingDiverged { epoch, last }) => {
            eprintln!(
                "error: training diverged in epoch {epoch}; saving the last finite parameters"
            );
            (*last, true)
        }
        Err(e) => return Err(e.into()),
    };
    ckpt.save(&args.common.out)?;
    manifest.output(&args.common.out);

    let log_path = sidecar(&args.common.out, "loss.csv");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    writeln!(log, "epoch,batch_loss,full_loss,fit_loss,hje_residual")?;
    for h in &ckpt.history {
        writeln!(
            log,
            "{},{},{},{},{}",
            h.epoch,
            format_float(h.batch_loss),
            format_float(h.full_loss),
            format_float(h.fit_loss),
            h.hje_residual.map(format_float).unwrap_or_default()
        )?;
    }
    log.flush()?;
    manifest.output(&log_path);

    let model = ckpt.model()?;
    let report = verify::decrease_check(&model, data.states())?;
    println!(
        "epochs {} final loss {} fit {} converged {}",
        ckpt.history.len() - 1,
        fmt_opt(ckpt.final_loss()),
        fmt_opt(ckpt.history.last().map(|h| h.fit_loss)),
        ckpt.converged
    );
    println!(
        "decrease max on training data {}",
        fmt_opt(report.max_margin)
    );
    let passed = !diverged && report.passed;
    manifest.finish(&args.common.out, passed)?;
    Ok(passed)
}

pub fn verify_decrease(args: &DecreaseArgs) -> anyhow::Result<bool> {
    let mut manifest = ManifestBuilder::new(
        "verify decrease",
        args,
        args.common.seed,
        args.common.deterministic,
    )?;
    let (_, model) = load_model(&args.sample.checkpoint, &mut manifest)?;
    let s = &args.sample;
    let x = uniform_samples(s.samples, model.n(), s.min, s.max, args.common.seed)?;
    let report = verify::decrease_check(&model, &x)?;
    write_json(&args.common.out, &report)?;
    manifest.output(&args.common.out);
    println!(
        "samples {} max violation {}",
        report.samples,
        fmt_opt(report.max_margin)
    );
    println!("{}", if report.passed { "pass" } else { "FAIL" });
    manifest.finish(&args.common.out, report.passed)?;
    Ok(report.passed)
}

pub fn verify_roa(args: &RoaArgs) -> anyhow::Result<bool> {
    let mut manifest = ManifestBuilder::new(
        "verify roa",
        args,
        args.common.seed,
        args.common.deterministic,
    )?;
    let (_, model) = load_model(&args.checkpoint, &mut manifest)?;
    manifest.input(&args.data)?;
    let data = Dataset::load(&args.data)?;
    let report = verify::roa_check(&model, &data)?;
    write_json(&args.common.out, &report)?;
    manifest.output(&args.common.out);
    let points = args
        .points
        .clone()
        .unwrap_or_else(|| sidecar(&args.common.out, "points.csv"));
    report.save_points_csv(&points)?;
    manifest.output(&points);
    println!(
        "violations {} of {}",
        report.violations,
        report.points.len()
    );
    match report.certified_level {
        Some(c) => println!("certified level {c:e} ({} points)", report.certified_points),
        None => println!("certified level none"),
    }
    let implication = report
        .points
        .iter()
        .filter(|p| p.in_d)
        .all(|p| p.true_lie < 0.0);
    let containment = report.certified_level.is_none_or(|c| {
        report
            .points
            .iter()
            .filter(|p| p.v <= c && p.x.iter().any(|&v| v != 0.0))
            .all(|p| p.in_d)
    });
    let passed = implication && containment;
    if !implication {
        println!("FAIL: a point in D has nonnegative true Lie derivative");
    }
    manifest.finish(&args.common.out, passed)?;
    Ok(passed)
}

pub fn verify_hinf(args: &HinfArgs) -> anyhow::Result<bool> {
    let mut manifest = ManifestBuilder::new(
        "verify hinf",
        args,
        args.common.seed,
        args.common.deterministic,
    )?;
    let (_, model) = load_model(&args.sample.checkpoint, &mut manifest)?;
    let s = &args.sample;
    let x = uniform_samples(s.samples, model.n(), s.min, s.max, args.common.seed)?;
    let report = verify::hinf_weight_check(&model.weight, &model.lyap, &x)?;
    write_json(&args.common.out, &report)?;
    manifest.output(&args.common.out);
    println!("max shortfall {}", fmt_opt(report.max_shortfall));
    println!("{}", if report.passed { "pass" } else { "FAIL" });
    manifest.finish(&args.common.out, report.passed)?;
    Ok(report.passed)
}

pub fn verify_invopt(args: &InvoptArgs) -> anyhow::Result<bool> {
    let mut manifest = ManifestBuilder::new(
        "verify invopt",
        args,
        args.common.seed,
        args.common.deterministic,
    )?;
    let (_, model) = load_model(&args.sample.checkpoint, &mut manifest)?;
    let s = &args.sample;
    let x = uniform_samples(s.samples, model.n(), s.min, s.max, args.common.seed)?;
    let report = verify::inverse_optimality_check(&model.fhat, &model.lyap, args.c3, &args.b, &x)?;
    write_json(&args.common.out, &report)?;
    manifest.output(&args.common.out);
    for row in &report.rows {
        println!(
            "b {:e}: inequality {:e} deviation {:e} active {} (active deviation {:e})",
            row.b,
            row.max_inequality,
            row.max_deviation,
            row.active_samples,
            row.max_active_deviation
        );
    }
    println!("{}", if report.passed { "pass" } else { "FAIL" });
    manifest.finish(&args.common.out, report.passed)?;
    Ok(report.passed)
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<bool> {
    let mut manifest = ManifestBuilder::new(
        "simulate",
        args,
        args.common.seed,
        args.common.deterministic,
    )?;
    let (_, model) = load_model(&args.checkpoint, &mut manifest)?;
    let plant = match args.plant {
        PlantName::Learned => Plant::Learned,
        PlantName::TrueVdp => {
            if model.n() != 2 {
                bail!("the van der Pol plant needs a two-dimensional model");
            }
            Plant::Analytic(VectorFieldSpec::VanDerPol { mu: args.mu })
        }
    };
    let x0 = Array1::from(parse_vector(&args.x0)?);
    if x0.len() != model.n() {
        bail!(
            "initial state has {} entries, the model has dimension {}",
            x0.len(),
            model.n()
        );
    }
    let closed = ClosedLoop::new(&model, plant, args.controller.to_core());
    let mut traj = rk4_integrate(&closed, x0.view(), args.dt, args.t_final)?;
    traj.annotate(&closed)?;
    traj.save(&args.common.out)?;
    manifest.output(&args.common.out);
    let last = traj.final_state();
    println!(
        "t {} final state {:?} norm {:e}",
        traj.times.last().copied().unwrap_or(0.0),
        last.to_vec(),
        last.dot(&last).sqrt()
    );
    let mut passed = !traj.diverged;
    if traj.diverged {
        println!("FAIL: integration diverged; partial trajectory written");
    }
    // V must not rise along a learned plant under a decreasing controller
    let certified = matches!(args.plant, PlantName::Learned)
        && matches!(
            args.controller,
            ControllerName::Learned | ControllerName::Sontag
        );
    if let (true, Some((k, rise))) = (certified, traj.max_value_rise()) {
        if rise > VALUE_RISE_TOLERANCE {
            passed = false;
            println!(
                "FAIL: V rose by {rise:e} (relative) at t = {}; the step is too coarse for this model, retry with a smaller --dt",
                traj.times[k]
            );
        }
    }
    manifest.finish(&args.common.out, passed)?;
    Ok(passed)
}

fn field_columns(model: &ProjectedModel, what: FieldName) -> Vec<String> {
    let (n, m) = (model.n(), model.m());
    match what {
        FieldName::V => vec!["V".into()],
        FieldName::Alpha | FieldName::Sontag => (1..=m).map(|i| format!("u{i}")).collect(),
        FieldName::Drift => (1..=n).map(|i| format!("f{i}")).collect(),
        FieldName::Phase => (1..=n).map(|i| format!("dx{i}")).collect(),
    }
}

fn field_value(
    model: &ProjectedModel,
    closed: &ClosedLoop<'_>,
    what: FieldName,
    x: ArrayView1<'_, f64>,
) -> anyhow::Result<Vec<f64>> {
    Ok(match what {
        FieldName::V => vec![model.lyap.value(x)?],
        FieldName::Alpha => model.control(x)?.to_vec(),
        FieldName::Sontag => {
            let p = model.eval(x)?;
            let g = model.g.eval(x)?;
            sontag_control(
                p.grad_v.dot(&p.f),
                lie_along_columns(p.grad_v.view(), g.view()).view(),
            )
            .to_vec()
        }
        FieldName::Drift => model.drift(x)?.to_vec(),
        FieldName::Phase => closed.evaluate(x)?.0.to_vec(),
    })
}

pub fn export_plot(args: &ExportPlotArgs) -> anyhow::Result<bool> {
    let mut manifest = ManifestBuilder::new(
        "export-plot",
        args,
        args.common.seed,
        args.common.deterministic,
    )?;
    let (_, model) = load_model(&args.checkpoint, &mut manifest)?;
    let n = model.n();
    let per_axis = args.per_axis as usize;
    let grid = grid_points(per_axis, &vec![(args.min, args.max); n])?;
    let closed = ClosedLoop::new(&model, Plant::Learned, args.controller.to_core());

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.common.out)?);
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(field_columns(&model, args.what));
    writeln!(out, "{}", header.join(","))?;
    let mut rows = Vec::with_capacity(grid.nrows());
    for x in grid.rows() {
        let values = field_value(&model, &closed, args.what, x)?;
        let line: Vec<String> = x.iter().chain(&values).map(|v| format_float(*v)).collect();
        writeln!(out, "{}", line.join(","))?;
        rows.push((x.to_vec(), values));
    }
    out.flush()?;
    manifest.output(&args.common.out);
    println!("{} rows", rows.len());

    if let Some(svg_path) = &args.svg {
        if n != 2 {
            bail!("SVG export needs a two-dimensional state");
        }
        let bounds = (args.min, args.max);
        let title = format!("{:?}", args.what);
        let svg = if matches!(args.what, FieldName::Drift | FieldName::Phase) {
            let pts: Vec<_> = rows.iter().map(|(x, v)| (x[0], x[1], v[0], v[1])).collect();
            plot::quiver(&pts, per_axis, bounds, &title)
        } else {
            let pts: Vec<_> = rows.iter().map(|(x, v)| (x[0], x[1], v[0])).collect();
            plot::heatmap(&pts, per_axis, bounds, &title)
        };
        std::fs::write(svg_path, svg)?;
        manifest.output(svg_path);
    }
    manifest.finish(&args.common.out, true)?;
    Ok(true)
}
