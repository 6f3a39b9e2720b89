//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the binary exits nonzero if any criterion fails.
//!
//! `cargo test -p stabnet-cli --test acceptance -- 3 5` runs a subset.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stabnet::diffcore::{assign_trainable, flatten_trainable};
use stabnet::nets::{Architecture, IcnnParameters, LyapunovParameters, MlpParameters};
use stabnet::simdata::{
    grid_dataset, rk4_integrate, ClosedLoop, Controller, Dataset, Plant, VectorFieldSpec,
};
use stabnet::stability::{
    project_autonomous, project_stabilizable, projection_correction, random_model, sontag_control,
    ControlKind, InputMap, OutputMap, ProjectedModel, RMap, WeightSpec,
};
use stabnet::training::{loss_and_gradient, train, TrainConfig, TrainMode};
use stabnet::verify::{decrease_margins, inverse_optimality_check, roa_check, RoaReport};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, n: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, n), |_| rng.random_range(lo..hi))
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Random biases in the ICNN so the smooth-ReLU knees are exercised.
fn perturb_icnn(lyap: &mut LyapunovParameters, rng: &mut ChaCha8Rng) {
    lyap.icnn.update_blocks(|blocks| {
        for b in blocks
            .iter_mut()
            .filter(|b| b.trainable && b.name.starts_with("V.b"))
        {
            b.values_mut().mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    });
}

fn weight_family(i: usize) -> WeightSpec {
    match i % 3 {
        0 => WeightSpec::QuadraticState { c: 500.0 },
        1 => WeightSpec::ProportionalToV { c3: 1.0 },
        _ => WeightSpec::HinfComposite {
            h: OutputMap::Identity,
            g_d: InputMap::van_der_pol(),
            gamma: 2.0,
            margin: 0.1,
        },
    }
}

fn random_vdp_model(
    seed: u64,
    weight: WeightSpec,
    kind: ControlKind,
    epsilon: f64,
) -> ProjectedModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = random_model(
        2,
        &Architecture::default(),
        epsilon,
        weight,
        InputMap::van_der_pol(),
        kind,
        &mut rng,
    )
    .expect("random model");
    perturb_icnn(&mut m.lyap, &mut rng);
    m
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = f64::NEG_INFINITY;
    let mut oracle_worst = f64::NEG_INFINITY;
    for i in 0..20 {
        let epsilon = [10.0, 1.0, 1e-3][i % 3];
        let model = random_vdp_model(
            1000 + i as u64,
            weight_family(i),
            ControlKind::Network,
            epsilon,
        );
        let x = uniform(&mut rng, 10_000, 2, -3.0, 3.0);
        let margins = decrease_margins(&model, &x).expect("margins");
        worst = margins.iter().copied().fold(worst, f64::max);
        // pointwise recomputation on a subset, with W rebuilt here
        for row in x.rows().into_iter().step_by(500) {
            let p = model.eval(row).unwrap();
            let w = match &model.weight {
                WeightSpec::QuadraticState { c } => c * row.dot(&row),
                WeightSpec::ProportionalToV { c3 } => c3 * p.v,
                WeightSpec::HinfComposite { gamma, margin, .. } => {
                    let lgd = p.grad_v[1];
                    row.dot(&row) + 4.0 * lgd * lgd / (gamma * gamma) + margin * row.dot(&row)
                }
            };
            let lie = p
                .grad_v
                .dot(&(&p.f + &(p.g.column(0).to_owned() * p.alpha[0])));
            oracle_worst = oracle_worst.max(lie + w);
        }
    }
    let elapsed = start.elapsed();
    let passed = worst <= 1e-9 && oracle_worst <= 1e-9 && elapsed < Duration::from_secs(10);
    outcome(
        passed,
        format!(
            "max L_(f+ga)V + W = {worst:.3e} over 20 models x 1e4 states (pointwise oracle {oracle_worst:.3e}), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    let model = random_vdp_model(
        7,
        WeightSpec::QuadraticState { c: 500.0 },
        ControlKind::Network,
        10.0,
    );
    let xs = uniform(&mut rng, 1000, 2, -3.0, 3.0);
    let mut grad_worst: f64 = 0.0;
    for x in xs.rows() {
        let analytic = model.lyap.input_gradient(x).unwrap();
        let fd = central_difference(
            |p| model.lyap.value(Array1::from(p.to_vec()).view()).unwrap(),
            x.as_slice().unwrap(),
            1e-5,
        );
        grad_worst = grad_worst.max(rel_error(analytic.as_slice().unwrap(), &fd));
    }

    // Parameter gradient of the fit loss on a small network, away from the
    // projection switching surface.
    let mut small = {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        random_model(
            2,
            &Architecture::uniform(8),
            1.0,
            WeightSpec::QuadraticState { c: 2.0 },
            InputMap::van_der_pol(),
            ControlKind::Network,
            &mut r,
        )
        .unwrap()
    };
    perturb_icnn(&mut small.lyap, &mut rng);
    let candidates = uniform(&mut rng, 60, 2, -3.0, 3.0);
    let kept: Vec<Array1<f64>> = candidates
        .rows()
        .into_iter()
        .filter(|x| {
            let p = small.eval(*x).unwrap();
            (p.nominal_lie + p.w).abs() > 1e-3
        })
        .map(|x| x.to_owned())
        .collect();
    let mut x = Array2::zeros((kept.len(), 2));
    for (i, row) in kept.iter().enumerate() {
        x.row_mut(i).assign(row);
    }
    let xdot = Array2::from_shape_fn(x.dim(), |(i, j)| {
        let v = stabnet::simdata::vdp_field(x.row(i), 0.3);
        v[j]
    });
    let (blocks, layout, bundle) = loss_and_gradient(&small, &x, &xdot, 0.0).unwrap();
    let theta = flatten_trainable(&blocks);
    let fit = |flat: &[f64]| -> f64 {
        let mut b = blocks.clone();
        assign_trainable(&mut b, flat);
        let mut m = small.clone();
        m.distribute_blocks(&b, &layout);
        let mut total = 0.0;
        for (xi, di) in x.rows().into_iter().zip(xdot.rows()) {
            let r = &di - &m.drift(xi).unwrap();
            total += r.dot(&r);
        }
        total / (x.len() as f64)
    };
    let fd = central_difference(fit, &theta, 1e-6);
    let param_rel = rel_error(&bundle.flatten(), &fd);
    let elapsed = start.elapsed();
    let passed = grad_worst < 1e-6 && param_rel < 1e-4 && elapsed < Duration::from_secs(60);
    outcome(
        passed,
        format!(
            "grad V rel err {grad_worst:.2e} on 1e3 points; parameter grad rel err {param_rel:.2e} over {} params, {} states; {:.1}s",
            theta.len(),
            kept.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut v0_exact = true;
    let mut lower = f64::INFINITY;
    let mut convexity = f64::NEG_INFINITY;
    let mut bound_excess = f64::NEG_INFINITY;
    for (k, &epsilon) in [10.0, 1e-3].iter().enumerate() {
        let icnn = IcnnParameters::random(2, &[64, 64], 0.1, &mut rng).unwrap();
        let mut lyap = LyapunovParameters::new(icnn, epsilon).unwrap();
        perturb_icnn(&mut lyap, &mut rng);
        v0_exact &= lyap.value(Array1::zeros(2).view()).unwrap() == 0.0;
        let a = uniform(&mut rng, 10_000, 2, -3.0, 3.0);
        let b = uniform(&mut rng, 10_000, 2, -3.0, 3.0);
        for (xa, xb) in a.rows().into_iter().zip(b.rows()) {
            let v = lyap.value(xa).unwrap();
            lower = lower.min(v - epsilon * xa.dot(&xa));
            let mid = (&xa + &xb) * 0.5;
            let gm = lyap.icnn.forward(mid.view()).unwrap();
            let ga = lyap.icnn.forward(xa).unwrap();
            let gb = lyap.icnn.forward(xb).unwrap();
            convexity = convexity.max(gm - 0.5 * (ga + gb));
            let grad = lyap.input_gradient(xa).unwrap();
            bound_excess =
                bound_excess.max(norm(grad.view()) - lyap.gradient_norm_bound(norm(xa)).unwrap());
        }
        let _ = k;
    }
    let passed = v0_exact && lower >= -1e-9 && convexity <= 1e-9 && bound_excess <= 0.0;
    outcome(
        passed,
        format!(
            "V(0)=0 exactly: {v0_exact}; min V - eps|x|^2 = {lower:.3e}; max midpoint gap {convexity:.3e}; max |grad V| - bound = {bound_excess:.3e}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut active_err: f64 = 0.0;
    let mut active = 0usize;
    for i in 0..5 {
        let model = random_vdp_model(
            40 + i,
            WeightSpec::QuadraticState { c: 1.0 + i as f64 },
            ControlKind::Network,
            1.0,
        );
        for x in uniform(&mut rng, 2000, 2, -3.0, 3.0).rows() {
            let p = model.eval(x).unwrap();
            if p.nominal_lie + p.w > 0.0 {
                active += 1;
                let u = &p.g.dot(&p.alpha);
                let lie = p.grad_v.dot(&(&p.f + u));
                let w = (1.0 + i as f64) * x.dot(&x);
                active_err = active_err.max((lie + w).abs());
            }
        }
    }
    let mut reduction: f64 = 0.0;
    for _ in 0..10_000 {
        let fhat = Array1::from_shape_fn(3, |_| rng.random_range(-3.0..3.0));
        let grad = Array1::from_shape_fn(3, |_| rng.random_range(-3.0..3.0));
        let v = rng.random_range(0.0..5.0);
        let c3 = rng.random_range(0.1..3.0);
        let a = project_autonomous(fhat.view(), v, grad.view(), c3).unwrap();
        let s = project_stabilizable(
            fhat.view(),
            Array2::zeros((3, 1)).view(),
            Array1::zeros(1).view(),
            grad.view(),
            c3 * v,
        )
        .unwrap();
        reduction = reduction.max((&a - &s).iter().fold(0.0, |m: f64, e| m.max(e.abs())));
    }
    let passed = active > 0 && active_err <= 1e-9 && reduction <= 1e-12;
    outcome(
        passed,
        format!("{active} active-branch points, max |L_(f+ga)V + W| = {active_err:.3e}; reduction identity max diff {reduction:.3e}"),
    )
}

fn vdp_config(epsilon: f64, c: f64) -> TrainConfig {
    let mut config = TrainConfig::new(
        TrainMode::Stabilizable,
        InputMap::van_der_pol(),
        WeightSpec::QuadraticState { c },
    );
    config.epsilon = epsilon;
    config.step_size = 0.005;
    config.batch_size = 100;
    config.epochs = 500;
    config.seed = 0;
    config
}

fn roa_summary(report: &RoaReport) -> (String, bool) {
    let implication = report
        .points
        .iter()
        .filter(|p| p.in_d)
        .all(|p| p.true_lie < 0.0);
    let in_d = report.points.iter().filter(|p| p.in_d).count();
    let level = report
        .certified_level
        .map_or_else(|| "none".to_string(), |c| format!("{c:.4e}"));
    (
        format!(
            "violations {} of {}, in_D {in_d}, certified c {level}",
            report.violations,
            report.points.len()
        ),
        implication,
    )
}

fn criterion_5() -> Outcome {
    let data: Dataset = grid_dataset(
        50,
        &[(-3.0, 3.0), (-3.0, 3.0)],
        &VectorFieldSpec::VanDerPol { mu: 0.3 },
    )
    .unwrap();
    let start = Instant::now();
    let ckpt = match train(vdp_config(10.0, 500.0), &data) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let train_time = start.elapsed();
    let model = ckpt.model().unwrap();

    // (a) mean squared residual, recomputed pointwise
    let mut sq = 0.0;
    for i in 0..data.len() {
        let r = &data.derivative(i) - &model.drift(data.state(i)).unwrap();
        sq += r.dot(&r);
    }
    let mse = sq / (data.len() * 2) as f64;
    let a = mse < 0.05;

    // (b) closed loop from random starts. The trained closed loop is stiff:
    // at dt = 1e-2 RK4 lets V rise, so both simulations use dt = 1e-3.
    let dt = 1e-3;
    let closed = ClosedLoop::new(&model, Plant::Learned, Controller::Learned);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_final: f64 = 0.0;
    let mut worst_rise = f64::NEG_INFINITY;
    let mut reached = 0;
    for _ in 0..10 {
        let x0 = Array1::from_shape_fn(2, |_| rng.random_range(-2.0..2.0));
        let traj = rk4_integrate(&closed, x0.view(), dt, 10.0).unwrap();
        let values: Vec<f64> = traj
            .states
            .rows()
            .into_iter()
            .map(|s| model.lyap.value(s).unwrap())
            .collect();
        for w in values.windows(2) {
            worst_rise = worst_rise.max((w[1] - w[0]) / (1.0 + w[0].abs()));
        }
        if !traj.diverged && traj.states.rows().into_iter().any(|s| norm(s) < 1e-2) {
            reached += 1;
        }
        worst_final = worst_final.max(norm(traj.final_state()));
    }
    let b = reached == 10 && worst_rise <= 1e-9;

    // (c) open loop keeps oscillating
    let open = ClosedLoop::new(&model, Plant::Learned, Controller::Zero);
    let traj = rk4_integrate(&open, Array1::from(vec![0.1, 0.0]).view(), dt, 100.0).unwrap();
    let bounded = traj.states.iter().all(|v| v.abs() <= 4.0);
    let late_min = traj
        .times
        .iter()
        .zip(traj.states.rows())
        .filter(|(t, _)| **t >= 50.0)
        .map(|(_, s)| norm(s))
        .fold(f64::INFINITY, f64::min);
    let c = !traj.diverged && bounded && late_min >= 0.05;
    // informational: the cycle seen from a start outside the first grid ring
    let outer = rk4_integrate(&open, Array1::from(vec![1.0, 0.0]).view(), dt, 100.0).unwrap();
    let outer_norms: Vec<f64> = outer
        .times
        .iter()
        .zip(outer.states.rows())
        .filter(|(t, _)| **t >= 50.0)
        .map(|(_, s)| norm(s))
        .collect();
    let outer_range = (
        outer_norms.iter().copied().fold(f64::INFINITY, f64::min),
        outer_norms.iter().copied().fold(0.0, f64::max),
    );

    // (d) region of attraction, both configurations
    let roa = roa_check(&model, &data).unwrap();
    let (first, first_ok) = roa_summary(&roa);
    let start2 = Instant::now();
    let second = train(vdp_config(1e-3, 1e3), &data)
        .and_then(|c| c.model())
        .and_then(|m| roa_check(&m, &data));
    let second_time = start2.elapsed();
    let (second_text, second_ok) = match &second {
        Ok(r) => roa_summary(r),
        Err(e) => (format!("second configuration failed: {e}"), false),
    };
    let d = first_ok && second_ok;

    let runtime_ok = train_time + second_time < Duration::from_secs(15 * 60);
    let passed = a && b && c && d && runtime_ok;
    outcome(
        passed,
        format!(
            "(a) mse {mse:.4e} [{}]; (b) {reached}/10 reach |x| < 1e-2, worst final |x| {worst_final:.2e}, max V rise {worst_rise:.1e} [{}]; (c) bounded {bounded}, min |x| on [50,100] {late_min:.3} (from (1,0): |x| in [{:.3}, {:.3}]) [{}]; \
             (d) eps=10: {first}; eps=1e-3: {second_text} [{}]; training {:.0}s + {:.0}s",
            ok(a),
            ok(b),
            outer_range.0,
            outer_range.1,
            ok(c),
            ok(d),
            train_time.as_secs_f64(),
            second_time.as_secs_f64()
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fail"
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let m = 1 + i % 3;
        let lf = rng.random_range(-3.0..3.0);
        let lg = Array1::from_shape_fn(m, |_| rng.random_range(-3.0..3.0));
        let nsq = lg.dot(&lg);
        if nsq < 1e-6 {
            continue;
        }
        let u = sontag_control(lf, lg.view());
        let lhs = lf + lg.dot(&u);
        let rhs = -(lf * lf + nsq * nsq).sqrt();
        worst = worst.max((lhs - rhs).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("max |LfV + LgV a_s + sqrt(LfV^2 + |LgV|^4)| = {worst:.3e} on 1e4 tuples"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..10 {
        let r = rng.random_range(0.1..3.0);
        let model = random_vdp_model(
            70 + i,
            weight_family(i as usize),
            ControlKind::Structured(RMap::Constant(Array2::from_elem((1, 1), r))),
            [10.0, 1.0][i as usize % 2],
        );
        for x in uniform(&mut rng, 1000, 2, -3.0, 3.0).rows() {
            let p = model.eval(x).unwrap();
            // H = L_fV − ½ LgV R⁻¹ LgVᵀ + W
            let lg = p.g.t().dot(&p.grad_v)[0];
            let h = p.grad_v.dot(&p.f) - 0.5 * lg * lg / r + p.w;
            worst = worst.max(h);
        }
    }
    outcome(
        worst <= 1e-9,
        format!("max H(x) = {worst:.3e} over 10 structured models x 1e3 states"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    // a random network plus random linear drifts, so both branches occur
    let mut drifts = vec![MlpParameters::random("fhat", &[2, 64, 64, 2], &mut rng).unwrap()];
    for _ in 0..4 {
        let a = Array2::from_shape_fn((2, 2), |_| rng.random_range(-2.0..2.0));
        drifts.push(MlpParameters::from_layers("fhat", vec![(a, Array1::zeros(2))]).unwrap());
    }
    let mut lyap = LyapunovParameters::new(
        IcnnParameters::random(2, &[64, 64], 0.1, &mut rng).unwrap(),
        1.0,
    )
    .unwrap();
    perturb_icnn(&mut lyap, &mut rng);
    let c3 = 1.0;
    let grid = [1e2, 1e4, 1e6];

    let mut library_ok = true;
    let mut active_exact = true;
    let mut inequality = f64::NEG_INFINITY;
    let mut bound_excess = f64::NEG_INFINITY;
    let mut active_dev: f64 = 0.0;
    let mut deviations = vec![0.0f64; grid.len()];
    let (mut active, mut inactive) = (0usize, 0usize);
    for fhat in &drifts {
        let x = uniform(&mut rng, 200, 2, -3.0, 3.0);
        let report = inverse_optimality_check(fhat, &lyap, c3, &grid, &x).unwrap();
        library_ok &= report.passed;
        active_exact &= report.rows.iter().all(|r| r.max_active_deviation == 0.0);
        // oracle: r = b off the active branch, ‖∇V‖²/(2(L_f̂V + c₃V)) on it
        for row in x.rows() {
            let (v, grad) = lyap.value_and_gradient(row).unwrap();
            let lie = grad.dot(&fhat.forward(row).unwrap());
            let nsq = grad.dot(&grad);
            let khat = projection_correction(lie, c3 * v, grad.view());
            let is_active = lie + c3 * v > 0.0;
            if is_active {
                active += 1;
            } else {
                inactive += 1;
            }
            for (k, &b) in grid.iter().enumerate() {
                let r = if is_active {
                    nsq / (2.0 * (lie + c3 * v))
                } else {
                    b
                };
                inequality = inequality.max(lie - nsq / (2.0 * r) + c3 * v);
                let dev = norm((&khat + &(&grad / (2.0 * r))).view());
                deviations[k] = deviations[k].max(dev);
                bound_excess = bound_excess.max(dev - nsq.sqrt() / (2.0 * b));
                if is_active {
                    active_dev = active_dev.max(dev / nsq.sqrt());
                }
            }
        }
    }
    let shrinking = deviations.windows(2).all(|w| w[1] < w[0]);
    let passed = library_ok
        && active > 0
        && inactive > 0
        && inequality <= 1e-9
        && bound_excess <= 1e-9
        && active_dev <= 1e-12
        && active_exact
        && shrinking;
    outcome(
        passed,
        format!(
            "{active} active / {inactive} inactive samples; inequality {inequality:.3e}; bound excess {bound_excess:.3e}; \
             active deviation exactly 0: {active_exact}; max deviation over b = {:?}",
            deviations.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_9() -> Outcome {
    let decay = VectorFieldSpec::Linear(-Array2::<f64>::eye(1));
    let err = |dt: f64| {
        let t = rk4_integrate(&decay, Array1::from(vec![1.0]).view(), dt, 1.0).unwrap();
        (t.final_state()[0] - (-1.0f64).exp()).abs()
    };
    let r1 = err(0.1) / err(0.05);
    let r2 = err(0.05) / err(0.025);
    outcome(
        r1 >= 15.0 && r2 >= 15.0,
        format!("error ratios {r1:.3} (0.1/0.05), {r2:.3} (0.05/0.025)"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_stabnet"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn pipeline(dir: &Path) -> Option<Vec<(String, Vec<u8>)>> {
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec![
            "gen-data",
            "--system",
            "vdp",
            "--per-axis",
            "12",
            "--out",
            &p("data.csv"),
        ],
        vec![
            "train",
            "--data",
            &p("data.csv"),
            "--mode",
            "stabilize",
            "--epsilon",
            "10",
            "--w",
            "quad:500",
            "--epochs",
            "5",
            "--hidden",
            "16",
            "--batch-size",
            "24",
            "--seed",
            "11",
            "--out",
            &p("model.json"),
        ],
        vec![
            "verify",
            "decrease",
            "--checkpoint",
            &p("model.json"),
            "--seed",
            "3",
            "--out",
            &p("decrease.json"),
        ],
        vec![
            "verify",
            "roa",
            "--checkpoint",
            &p("model.json"),
            "--data",
            &p("data.csv"),
            "--out",
            &p("roa.json"),
        ],
        vec![
            "verify",
            "invopt",
            "--checkpoint",
            &p("model.json"),
            "--samples",
            "500",
            "--out",
            &p("invopt.json"),
        ],
        vec![
            "simulate",
            "--checkpoint",
            &p("model.json"),
            "--x0",
            "1.5,-1",
            "--out",
            &p("traj.csv"),
        ],
        vec![
            "export-plot",
            "--checkpoint",
            &p("model.json"),
            "--what",
            "phase",
            "--out",
            &p("phase.csv"),
        ],
    ]
    .into_iter()
    .map(|s| s.into_iter().map(String::from).collect())
    .collect();
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        if !run_cli(&args) {
            return None;
        }
    }
    let files = [
        "data.csv",
        "model.json",
        "model.json.loss.csv",
        "decrease.json",
        "roa.json",
        "roa.json.points.csv",
        "invopt.json",
        "traj.csv",
        "phase.csv",
    ];
    files
        .iter()
        .map(|f| std::fs::read(dir.join(f)).ok().map(|b| (f.to_string(), b)))
        .collect()
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    match (pipeline(a.path()), pipeline(b.path())) {
        (Some(x), Some(y)) => {
            let differing: Vec<&str> = x
                .iter()
                .zip(&y)
                .filter(|(p, q)| p.1 != q.1)
                .map(|(p, _)| p.0.as_str())
                .collect();
            outcome(
                differing.is_empty(),
                format!("{} artifacts compared; differing: {:?}", x.len(), differing),
            )
        }
        _ => outcome(false, "a pipeline step failed".into()),
    }
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "decrease by construction", criterion_1),
        (2, "gradient correctness", criterion_2),
        (3, "ICNN validity", criterion_3),
        (4, "projection algebra", criterion_4),
        (5, "van der Pol reproduction", criterion_5),
        (6, "Sontag identity", criterion_6),
        (7, "HJI by construction", criterion_7),
        (8, "inverse optimality", criterion_8),
        (9, "integrator order", criterion_9),
        (10, "CLI determinism", criterion_10),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failures = 0;
    for (k, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&k) {
            continue;
        }
        let result = run();
        let tag = if result.passed { "PASS" } else { "FAIL" };
        println!("criterion {k:>2} {tag} {name}: {}", result.detail);
        failures += usize::from(!result.passed);
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
