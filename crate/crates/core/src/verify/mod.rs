//! Post-training certification: the decrease condition, a sampled region of
//! attraction estimate, the H∞ weight inequality and inverse optimality.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::diffcore::Graph;
use crate::error::{Error, Result};
use crate::nets::{LyapunovParameters, MlpParameters};
use crate::simdata::{format_float, Dataset};
use crate::stability::{
    inverse_optimal_weights, projection_correction, ControlSpec, ProjectedModel, WeightSpec,
};

/// Slack allowed on every by-construction inequality.
pub const TOLERANCE: f64 = 1e-9;

/// Relative margin below the first violating level when certifying `Ω_c`.
pub const LEVEL_MARGIN: f64 = 1e-6;

const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecreaseReport {
    pub samples: usize,
    /// Largest `L_{f+gα}V + W` over the samples.
    pub max_margin: Option<f64>,
    pub argmax: Option<Vec<f64>>,
    pub passed: bool,
}

/// `L_{f+gα}V + W` at every row of `x`.
pub fn decrease_margins(model: &ProjectedModel, x: &Array2<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.n() {
        return Err(Error::shape("sample dimension", model.n(), x.ncols()));
    }
    if matches!(model.control, ControlSpec::SontagFromV) {
        return x
            .rows()
            .into_iter()
            .map(|r| Ok(model.eval(r)?.decrease_margin()))
            .collect();
    }
    let (blocks, layout) = model.collect_blocks();
    let mut out = Vec::with_capacity(x.nrows());
    for start in (0..x.nrows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(x.nrows());
        let chunk = x.slice(ndarray::s![start..end, ..]).to_owned();
        let mut g = Graph::new(&blocks);
        let nodes = model.drift_graph(&mut g, &layout, &chunk)?;
        out.extend(g.value(nodes.closed_margin).iter().copied());
    }
    Ok(out)
}

/// Largest decrease-condition residual; passes when it is at most 1e-9.
pub fn decrease_check(model: &ProjectedModel, samples: &Array2<f64>) -> Result<DecreaseReport> {
    let margins = decrease_margins(model, samples)?;
    let best =
        margins
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, &m)| match acc {
                Some((_, b)) if b >= m => acc,
                _ => Some((i, m)),
            });
    let (max_margin, argmax) = match best {
        Some((i, m)) => (Some(m), Some(samples.row(i).to_vec())),
        None => (None, None),
    };
    Ok(DecreaseReport {
        samples: margins.len(),
        max_margin,
        argmax,
        passed: max_margin.is_none_or(|m| m <= TOLERANCE),
    })
}

/// One dataset point of the region-of-attraction analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoaPoint {
    pub x: Vec<f64>,
    pub v: f64,
    /// `‖ẋ − f(x)‖` against the label.
    pub error: f64,
    /// `W(x) / (2ε‖x‖ + Σᵢ Πⱼ ‖vⱼ‖‖wᵢ‖)`
    pub threshold: f64,
    /// `error < threshold`; the origin is never in the set.
    pub in_d: bool,
    /// `∇V·(ẋ + gα)` with the label standing in for the true drift.
    pub true_lie: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoaReport {
    pub points: Vec<RoaPoint>,
    /// Nonzero points outside the error set.
    pub violations: usize,
    /// Certified sub-level value `c`, if any nonzero point certifies it.
    pub certified_level: Option<f64>,
    /// Nonzero dataset points with `V ≤ c`.
    pub certified_points: usize,
    pub note: String,
}

impl RoaReport {
    /// Columns `x1..xn,V,error,threshold,in_D`.
    pub fn write_points_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.points.first().map_or(0, |p| p.x.len());
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.extend(["V", "error", "threshold", "in_D"].map(String::from));
        w.write_record(&header).map_err(csv_io)?;
        for p in &self.points {
            let mut row: Vec<String> = p.x.iter().map(|v| format_float(*v)).collect();
            row.push(format_float(p.v));
            row.push(format_float(p.error));
            row.push(format_float(p.threshold));
            row.push(p.in_d.to_string());
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_points_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_points_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Malformed(format!("{other:?}")),
    }
}

/// Sampled region-of-attraction analysis against labeled true derivatives.
///
/// A point is in the error set when the fit error is strictly below
/// `W(x)` over the gradient bound. The certified level is the smallest `V`
/// over violating points and over points on the faces of the data's
/// bounding box, shrunk by [`LEVEL_MARGIN`]; containment is checked only at
/// the dataset points.
pub fn roa_check(model: &ProjectedModel, data: &Dataset) -> Result<RoaReport> {
    if data.n() != model.n() {
        return Err(Error::shape("dataset state dimension", model.n(), data.n()));
    }
    let lo: Vec<f64> = data
        .states()
        .fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b))
        .to_vec();
    let hi: Vec<f64> = data
        .states()
        .fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b))
        .to_vec();
    let mut points = Vec::with_capacity(data.len());
    let mut violations = 0;
    let mut level = f64::INFINITY;
    for i in 0..data.len() {
        let x = data.state(i);
        let label = data.derivative(i);
        let p = model.eval(x)?;
        let error = (&label - &p.f).mapv(|e| e * e).sum().sqrt();
        let norm = x.dot(&x).sqrt();
        let origin = norm == 0.0;
        let bound = model.lyap.gradient_norm_bound(norm)?;
        let threshold = if origin { 0.0 } else { p.w / bound };
        let in_d = !origin && error < threshold;
        let true_lie = p.grad_v.dot(&(&label + &p.g.dot(&p.alpha)));
        if !origin && !in_d {
            violations += 1;
            level = level.min(p.v);
        }
        let on_face = x.iter().enumerate().any(|(k, &c)| c == lo[k] || c == hi[k]);
        if on_face && !origin {
            level = level.min(p.v);
        }
        points.push(RoaPoint {
            x: x.to_vec(),
            v: p.v,
            error,
            threshold,
            in_d,
            true_lie,
        });
    }
    let candidate = level * (1.0 - LEVEL_MARGIN);
    let certified_points = if candidate.is_finite() && candidate > 0.0 {
        points
            .iter()
            .filter(|p| p.v <= candidate && p.x.iter().any(|&c| c != 0.0))
            .count()
    } else {
        0
    };
    let certified_level = (certified_points > 0).then_some(candidate);
    Ok(RoaReport {
        points,
        violations,
        certified_level,
        certified_points,
        note: "sub-level set containment is checked only at the dataset points".into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HinfReport {
    pub samples: usize,
    /// Largest `‖h‖² + 4‖L_{g_d}V‖²/γ² − W` over the samples.
    pub max_shortfall: Option<f64>,
    pub passed: bool,
}

/// Checks that an H∞ weight dominates the dissipation requirement.
pub fn hinf_weight_check(
    spec: &WeightSpec,
    lyap: &LyapunovParameters,
    samples: &Array2<f64>,
) -> Result<HinfReport> {
    if !matches!(spec, WeightSpec::HinfComposite { .. }) {
        return Err(Error::Config(
            "H∞ weight check needs an H∞ composite weight".into(),
        ));
    }
    let mut max: Option<f64> = None;
    for x in samples.rows() {
        let (v, grad) = lyap.value_and_gradient(x)?;
        let shortfall =
            spec.hinf_requirement(x, grad.view())? - spec.eval_parts(x, v, grad.view())?;
        max = Some(max.map_or(shortfall, |m| m.max(shortfall)));
    }
    Ok(HinfReport {
        samples: samples.nrows(),
        max_shortfall: max,
        passed: max.is_none_or(|m| m <= TOLERANCE),
    })
}

/// Inverse-optimality statistics for one control penalty bound `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseOptimalityRow {
    pub b: f64,
    /// Largest `L_f̂V − ‖∇V‖²/(2r) + c₃V`.
    pub max_inequality: f64,
    /// Largest `‖k̂ − (−∇V/(2r))‖`.
    pub max_deviation: f64,
    /// Largest `‖k̂ − (−∇V/(2r))‖ − ‖∇V‖/(2b)`.
    pub max_bound_excess: f64,
    /// Largest deviation over active-branch samples.
    pub max_active_deviation: f64,
    pub active_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseOptimalityReport {
    pub c3: f64,
    pub samples: usize,
    pub rows: Vec<InverseOptimalityRow>,
    pub passed: bool,
}

/// Reports how closely the autonomous correction `k̂` matches the optimal
/// feedback `−∇V/(2r)` for each `b` in an increasing grid.
pub fn inverse_optimality_check(
    fhat: &MlpParameters,
    lyap: &LyapunovParameters,
    c3: f64,
    b_grid: &[f64],
    samples: &Array2<f64>,
) -> Result<InverseOptimalityReport> {
    if !(c3 > 0.0) {
        return Err(Error::Config(format!("c3 must be positive, got {c3}")));
    }
    if b_grid.is_empty()
        || b_grid.iter().any(|&b| !(b > 0.0))
        || b_grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::Config(
            "b grid must be nonempty, positive and increasing".into(),
        ));
    }
    let evals: Vec<_> = samples
        .rows()
        .into_iter()
        .map(|x| -> Result<_> {
            let (v, grad) = lyap.value_and_gradient(x)?;
            let lie = grad.dot(&fhat.forward(x)?);
            Ok((v, grad, lie))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(b_grid.len());
    for &b in b_grid {
        let mut row = InverseOptimalityRow {
            b,
            max_inequality: f64::NEG_INFINITY,
            max_deviation: 0.0,
            max_bound_excess: f64::NEG_INFINITY,
            max_active_deviation: 0.0,
            active_samples: 0,
        };
        for (v, grad, lie) in &evals {
            row_update(&mut row, *lie, *v, grad.view(), c3, b)?;
        }
        rows.push(row);
    }
    let passed = rows.iter().all(|r| {
        r.max_inequality <= TOLERANCE
            && r.max_bound_excess <= TOLERANCE
            && r.max_active_deviation == 0.0
    }) && rows
        .windows(2)
        .all(|w| w[1].max_deviation <= w[0].max_deviation);
    Ok(InverseOptimalityReport {
        c3,
        samples: samples.nrows(),
        rows,
        passed,
    })
}

fn row_update(
    row: &mut InverseOptimalityRow,
    lie: f64,
    v: f64,
    grad: ArrayView1<'_, f64>,
    c3: f64,
    b: f64,
) -> Result<()> {
    let io = inverse_optimal_weights(lie, v, grad, c3, b)?;
    let nsq = grad.dot(&grad);
    // ‖∇V‖²/(2r) = gain·‖∇V‖²
    let inequality = lie - io.gain * nsq + c3 * v;
    let khat = projection_correction(lie, c3 * v, grad);
    let deviation = (&khat - &io.khat_limit).mapv(|e| e * e).sum().sqrt();
    row.max_inequality = row.max_inequality.max(inequality);
    row.max_deviation = row.max_deviation.max(deviation);
    row.max_bound_excess = row.max_bound_excess.max(deviation - nsq.sqrt() / (2.0 * b));
    if io.active {
        row.active_samples += 1;
        row.max_active_deviation = row.max_active_deviation.max(deviation);
    }
    Ok(())
}

/// Structured report as pretty JSON.
pub fn to_json<T: Serialize>(report: &T) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Architecture, IcnnParameters};
    use crate::stability::{random_model, ControlKind, InputMap, OutputMap};
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> ProjectedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_model(
            2,
            &Architecture::uniform(16),
            0.5,
            WeightSpec::QuadraticState { c: 2.0 },
            InputMap::van_der_pol(),
            ControlKind::Network,
            &mut rng,
        )
        .unwrap()
    }

    fn samples(count: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((count, 2), |_| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn random_model_passes_decrease() {
        let r = decrease_check(&model(1), &samples(2000, 2)).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.samples, 2000);
    }

    #[test]
    fn batched_margins_match_pointwise() {
        let m = model(4);
        let x = samples(50, 5);
        let batched = decrease_margins(&m, &x).unwrap();
        for (row, b) in x.rows().into_iter().zip(batched) {
            let p = m.eval(row).unwrap().decrease_margin();
            assert!((p - b).abs() < 1e-9 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn bypassed_projection_is_caught() {
        let mut m = model(3);
        m.bypass_projection = true;
        // an outward nominal drift guarantees a violation
        let last = m.fhat.blocks().len() - 2;
        let dims = m.fhat.blocks()[last].values().dim();
        m.fhat.blocks_mut()[last]
            .values_mut()
            .assign(&Array2::from_elem(dims, 5.0));
        let r = decrease_check(&m, &samples(500, 1)).unwrap();
        assert!(!r.passed);
        assert!(r.max_margin.unwrap() > 0.0);
    }

    #[test]
    fn origin_alone() {
        let r = decrease_check(&model(1), &array![[0.0, 0.0]]).unwrap();
        assert_eq!(r.max_margin, Some(0.0));
        assert!(r.passed);
    }

    fn tiny_model(c: f64) -> ProjectedModel {
        let icnn = IcnnParameters::from_layers(
            vec![array![[1.0]]],
            vec![array![0.0]],
            vec![],
            vec![1.0, 1.0],
        )
        .unwrap();
        let lyap = LyapunovParameters::new(icnn, 0.5).unwrap();
        let fhat = MlpParameters::from_layers("fhat", vec![(array![[-1.0]], array![0.0])]).unwrap();
        ProjectedModel::new(
            fhat,
            lyap,
            ControlSpec::Zero,
            WeightSpec::QuadraticState { c },
            InputMap::zero(1, 1),
            crate::stability::ProjectionMode::Stabilizable,
        )
        .unwrap()
    }

    #[test]
    fn single_point_threshold() {
        // x = 2, W = 125·4 = 500, gradient bound 2·0.5·2 + 1 = 3
        let m = tiny_model(125.0);
        let f = m.drift(array![2.0].view()).unwrap();
        let data = Dataset::new(array![[2.0]], array![[f[0] + 1.0]], "t").unwrap();
        let r = roa_check(&m, &data).unwrap();
        let p = &r.points[0];
        assert!((p.error - 1.0).abs() < 1e-12);
        assert!((p.threshold - 500.0 / 3.0).abs() < 1e-9);
        assert!(p.in_d);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn perfect_labels_are_all_in_d() {
        let m = model(9);
        let x = samples(200, 10);
        let mut xdot = Array2::zeros(x.dim());
        for (r, mut d) in x.rows().into_iter().zip(xdot.rows_mut()) {
            d.assign(&m.drift(r).unwrap());
        }
        let data = Dataset::new(x, xdot, "t").unwrap();
        let r = roa_check(&m, &data).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.points.iter().all(|p| p.in_d));
        let lo = data
            .states()
            .fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b));
        let hi = data
            .states()
            .fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
        let face_min = r
            .points
            .iter()
            .filter(|p| {
                p.x.iter()
                    .enumerate()
                    .any(|(k, &c)| c == lo[k] || c == hi[k])
            })
            .map(|p| p.v)
            .fold(f64::INFINITY, f64::min);
        assert!((r.certified_level.unwrap() - face_min * (1.0 - LEVEL_MARGIN)).abs() < 1e-15);
    }

    #[test]
    fn certified_points_are_in_d_and_decrease() {
        let m = model(11);
        let x = samples(400, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut xdot = Array2::zeros(x.dim());
        for (r, mut d) in x.rows().into_iter().zip(xdot.rows_mut()) {
            let noise = array![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            d.assign(&(m.drift(r).unwrap() + noise));
        }
        let data = Dataset::new(x, xdot, "t").unwrap();
        let r = roa_check(&m, &data).unwrap();
        if let Some(c) = r.certified_level {
            assert!(r.points.iter().filter(|p| p.v <= c).all(|p| p.in_d));
        }
        assert!(r.points.iter().filter(|p| p.in_d).all(|p| p.true_lie < 0.0));
        let mut buf = Vec::new();
        r.write_points_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("x1,x2,V,error,threshold,in_D\n"));
    }

    #[test]
    fn roa_dimension_mismatch() {
        let data = Dataset::new(array![[1.0]], array![[1.0]], "t").unwrap();
        assert!(roa_check(&model(1), &data).is_err());
    }

    fn hinf(margin: f64) -> WeightSpec {
        WeightSpec::HinfComposite {
            h: OutputMap::Identity,
            g_d: InputMap::van_der_pol(),
            gamma: 2.0,
            margin,
        }
    }

    #[test]
    fn hinf_shortfall() {
        let m = model(2);
        let x = samples(300, 3);
        let r = hinf_weight_check(&hinf(0.0), &m.lyap, &x).unwrap();
        assert!(r.max_shortfall.unwrap().abs() < 1e-12);
        assert!(r.passed);
        let r = hinf_weight_check(&hinf(0.1), &m.lyap, &x).unwrap();
        let least = x
            .rows()
            .into_iter()
            .map(|r| r.dot(&r))
            .fold(f64::INFINITY, f64::min);
        assert!(r.max_shortfall.unwrap() <= -0.1 * least + 1e-12);
        assert!(hinf_weight_check(&WeightSpec::QuadraticState { c: 1.0 }, &m.lyap, &x).is_err());
    }

    #[test]
    fn inverse_optimality_on_random_model() {
        let m = model(6);
        let x = samples(300, 7);
        let r = inverse_optimality_check(&m.fhat, &m.lyap, 1.0, &[1e2, 1e4, 1e6], &x).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.rows.iter().all(|row| row.max_active_deviation == 0.0));
        assert!(inverse_optimality_check(&m.fhat, &m.lyap, 1.0, &[1e4, 1e2], &x).is_err());
        assert!(inverse_optimality_check(&m.fhat, &m.lyap, 0.0, &[1.0], &x).is_err());
    }

    #[test]
    fn inactive_deviation_bound() {
        // inactive branch with ‖∇V‖ = 3 and b = 1e6
        let mut row = InverseOptimalityRow {
            b: 1e6,
            max_inequality: f64::NEG_INFINITY,
            max_deviation: 0.0,
            max_bound_excess: f64::NEG_INFINITY,
            max_active_deviation: 0.0,
            active_samples: 0,
        };
        row_update(&mut row, -10.0, 1.0, array![3.0, 0.0].view(), 1.0, 1e6).unwrap();
        assert_eq!(row.active_samples, 0);
        assert!(row.max_deviation <= 1.5e-6 + 1e-18);
    }
}
