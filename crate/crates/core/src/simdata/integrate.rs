use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use super::dataset::format_float;
use super::systems::{ClosedLoop, VectorField};
use crate::error::{Error, Result};
use crate::stability::{InputMap, OutputMap};

/// Uniformly sampled solution of an ODE.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    /// One row per sample time.
    pub states: Array2<f64>,
    pub inputs: Option<Array2<f64>>,
    pub values: Option<Vec<f64>>,
    /// Set when integration stopped early on a non-finite state.
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> ArrayView1<'_, f64> {
        self.states.row(self.states.nrows() - 1)
    }

    /// Records `u` and `V` along the trajectory.
    pub fn annotate(&mut self, closed_loop: &ClosedLoop<'_>) -> Result<()> {
        let m = closed_loop.model.m();
        let mut inputs = Array2::zeros((self.len(), m));
        let mut values = Vec::with_capacity(self.len());
        for (x, mut u) in self.states.rows().into_iter().zip(inputs.rows_mut()) {
            u.assign(&closed_loop.input(x)?);
            values.push(closed_loop.model.lyap.value(x)?);
        }
        self.inputs = Some(inputs);
        self.values = Some(values);
        Ok(())
    }

    /// Largest one-step rise of the recorded `V`, relative to `1 + V`, and
    /// the step where it happens. `None` before [`Self::annotate`] or with
    /// fewer than two samples.
    pub fn max_value_rise(&self) -> Option<(usize, f64)> {
        let values = self.values.as_ref()?;
        values
            .windows(2)
            .enumerate()
            .map(|(k, w)| (k + 1, (w[1] - w[0]) / (1.0 + w[0].abs())))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Columns `t,x1..xn[,u1..um][,V]`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.states.ncols();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        if let Some(u) = &self.inputs {
            header.extend((1..=u.ncols()).map(|i| format!("u{i}")));
        }
        if self.values.is_some() {
            header.push("V".into());
        }
        w.write_record(&header).map_err(io_err)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format_float(*t)];
            row.extend(self.states.row(k).iter().map(|v| format_float(*v)));
            if let Some(u) = &self.inputs {
                row.extend(u.row(k).iter().map(|v| format_float(*v)));
            }
            if let Some(v) = &self.values {
                row.push(format_float(v[k]));
            }
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn io_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Malformed(format!("{other:?}")),
    }
}

fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!(
            "step size must be positive, got {dt}"
        )));
    }
    if !(t_final >= dt) || !t_final.is_finite() {
        return Err(Error::Config(format!(
            "final time {t_final} is shorter than the step {dt}"
        )));
    }
    Ok((t_final / dt).round() as usize)
}

/// Classical fixed-step RK4 for `ẋ = f(t, x)`.
///
/// Stops at the first non-finite state and flags the trajectory divergent;
/// the returned samples are the finite prefix.
pub fn rk4_integrate_time<F>(
    mut f: F,
    x0: ArrayView1<'_, f64>,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory>
where
    F: FnMut(f64, ArrayView1<'_, f64>) -> Result<Array1<f64>>,
{
    let steps = step_count(dt, t_final)?;
    let n = x0.len();
    let mut times = Vec::with_capacity(steps + 1);
    let mut flat = Vec::with_capacity((steps + 1) * n);
    let mut x = x0.to_owned();
    times.push(0.0);
    flat.extend(x.iter().copied());
    let mut diverged = false;
    for k in 0..steps {
        let t = k as f64 * dt;
        let next = (|| -> Result<Array1<f64>> {
            let k1 = f(t, x.view())?;
            let k2 = f(t + 0.5 * dt, (&x + &(&k1 * (0.5 * dt))).view())?;
            let k3 = f(t + 0.5 * dt, (&x + &(&k2 * (0.5 * dt))).view())?;
            let k4 = f(t + dt, (&x + &(&k3 * dt)).view())?;
            Ok(&x + &((&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (dt / 6.0)))
        })();
        let next = match next {
            Ok(v) if v.iter().all(|c| c.is_finite()) => v,
            Ok(_) | Err(Error::NonFinite { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        x = next;
        times.push((k + 1) as f64 * dt);
        flat.extend(x.iter().copied());
    }
    let states = Array2::from_shape_vec((times.len(), n), flat).expect("consistent lengths");
    Ok(Trajectory {
        dt,
        times,
        states,
        inputs: None,
        values: None,
        diverged,
    })
}

/// RK4 for an autonomous field.
pub fn rk4_integrate(
    field: &dyn VectorField,
    x0: ArrayView1<'_, f64>,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory> {
    if x0.len() != field.dim() {
        return Err(Error::shape("initial state", field.dim(), x0.len()));
    }
    rk4_integrate_time(|_, x| field.eval(x), x0, dt, t_final)
}

/// Output and disturbance energies of a forced run from the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceResult {
    pub z_energy: f64,
    pub d_energy: f64,
    /// `z_energy / d_energy`, or 0 when no disturbance energy was injected.
    pub ratio: f64,
    pub trajectory: Trajectory,
}

fn trapezoid(samples: &[f64], dt: f64) -> f64 {
    match samples.len() {
        0 | 1 => 0.0,
        len => {
            dt * (samples[1..len - 1].iter().sum::<f64>() + 0.5 * (samples[0] + samples[len - 1]))
        }
    }
}

/// Simulates `ẋ = F(x) + g_d(x)d(t)` from `x(0) = 0` and integrates `‖z‖²`, `‖d‖²`.
pub fn disturbance_experiment(
    closed_loop: &dyn VectorField,
    g_d: &InputMap,
    h: &OutputMap,
    d_signal: &dyn Fn(f64) -> Array1<f64>,
    dt: f64,
    t_final: f64,
) -> Result<DisturbanceResult> {
    let n = closed_loop.dim();
    if g_d.dims().0 != n {
        return Err(Error::shape("disturbance map rows", n, g_d.dims().0));
    }
    let p = g_d.dims().1;
    let forced = |t: f64, x: ArrayView1<'_, f64>| -> Result<Array1<f64>> {
        let d = d_signal(t);
        if d.len() != p {
            return Err(Error::shape("disturbance signal", p, d.len()));
        }
        Ok(closed_loop.eval(x)? + g_d.eval(x)?.dot(&d))
    };
    let x0 = Array1::zeros(n);
    let trajectory = rk4_integrate_time(forced, x0.view(), dt, t_final)?;
    if trajectory.diverged {
        let time = *trajectory.times.last().unwrap_or(&0.0);
        return Err(Error::Diverged {
            step: trajectory.len(),
            time,
        });
    }
    let z_sq: Vec<f64> = trajectory
        .states
        .rows()
        .into_iter()
        .map(|x| h.eval(x).iter().map(|v| v * v).sum())
        .collect();
    let d_sq: Vec<f64> = trajectory
        .times
        .iter()
        .map(|&t| d_signal(t).iter().map(|v| v * v).sum())
        .collect();
    let z_energy = trapezoid(&z_sq, dt);
    let d_energy = trapezoid(&d_sq, dt);
    let ratio = if d_energy == 0.0 {
        0.0
    } else {
        z_energy / d_energy
    };
    Ok(DisturbanceResult {
        z_energy,
        d_energy,
        ratio,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdata::VectorFieldSpec;
    use ndarray::array;

    fn decay() -> VectorFieldSpec {
        VectorFieldSpec::Linear(array![[-1.0]])
    }

    #[test]
    fn value_rise_is_relative_to_one_plus_v() {
        let mut tr = rk4_integrate(&decay(), array![1.0].view(), 0.1, 0.3).unwrap();
        assert_eq!(tr.max_value_rise(), None);
        tr.values = Some(vec![3.0, 2.0, 2.5, 1.0]);
        assert_eq!(tr.max_value_rise(), Some((2, 0.5 / 3.0)));
    }

    #[test]
    fn one_step_of_exponential_decay() {
        let tr = rk4_integrate(&decay(), array![1.0].view(), 0.1, 0.1).unwrap();
        assert_eq!(tr.len(), 2);
        // One RK4 step on a linear field is the fourth-order Taylor polynomial of e^{-h}.
        let h = 0.1f64;
        let taylor = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((tr.final_state()[0] - taylor).abs() < 1e-15);
        // Local error is h⁵/120 ≈ 8.3e-8.
        assert!((tr.final_state()[0] - (-h).exp()).abs() < 1e-7);
    }

    #[test]
    fn zero_field_is_constant() {
        let zero = VectorFieldSpec::Linear(Array2::zeros((2, 2)));
        let tr = rk4_integrate(&zero, array![0.3, -1.2].view(), 0.05, 1.0).unwrap();
        assert!(tr.states.rows().into_iter().all(|r| r == array![0.3, -1.2]));
        assert_eq!(tr.len(), 21);
    }

    #[test]
    fn van_der_pol_reaches_limit_cycle() {
        // Damping acts on x₂, so averaging gives an amplitude of 2/√3 rather than 2.
        let vdp = VectorFieldSpec::VanDerPol { mu: 0.3 };
        let tr = rk4_integrate(&vdp, array![0.1, 0.0].view(), 1e-3, 100.0).unwrap();
        let tail = tr.states.nrows() * 4 / 5;
        let peak = (tail..tr.states.nrows())
            .map(|k| tr.states[[k, 0]].abs())
            .fold(0.0, f64::max);
        assert!((peak - 2.0 / 3f64.sqrt()).abs() < 0.05, "peak {peak}");
    }

    #[test]
    fn halving_step_is_fourth_order() {
        let err = |dt: f64| {
            let tr = rk4_integrate(&decay(), array![1.0].view(), dt, 1.0).unwrap();
            (tr.final_state()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 15.0 && ratio < 17.0, "ratio {ratio}");
    }

    #[test]
    fn divergence_is_flagged() {
        let blowup = VectorFieldSpec::Linear(array![[1e200]]);
        let tr = rk4_integrate(&blowup, array![1e200].view(), 0.1, 10.0).unwrap();
        assert!(tr.diverged);
        assert!(tr.states.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_steps() {
        assert!(rk4_integrate(&decay(), array![1.0].view(), 0.0, 1.0).is_err());
        assert!(rk4_integrate(&decay(), array![1.0].view(), 1.0, 0.5).is_err());
    }

    #[test]
    fn unforced_origin_has_no_energy() {
        let r = disturbance_experiment(
            &decay(),
            &InputMap::Constant(array![[1.0]]),
            &OutputMap::Identity,
            &|_| array![0.0],
            0.01,
            5.0,
        )
        .unwrap();
        assert_eq!(r.z_energy, 0.0);
        assert_eq!(r.ratio, 0.0);
    }

    #[test]
    fn pulse_response_of_stable_linear_system() {
        let r = disturbance_experiment(
            &decay(),
            &InputMap::Constant(array![[1.0]]),
            &OutputMap::Identity,
            &|t| array![if t < 1.0 { 1.0 } else { 0.0 }],
            1e-3,
            20.0,
        )
        .unwrap();
        // x = 1 − e^{−t} on [0, 1], then exponential decay from x(1).
        let e1 = (-1.0f64).exp();
        let x1 = 1.0 - e1;
        let oracle = 1.0 - 2.0 * x1 + 0.5 * (1.0 - e1 * e1) + 0.5 * x1 * x1;
        assert!(
            (r.z_energy - oracle).abs() < 2e-3,
            "{} vs {oracle}",
            r.z_energy
        );
        assert!(r.ratio < 1.0);
    }

    #[test]
    fn trajectory_csv_header() {
        let tr = rk4_integrate(&decay(), array![1.0].view(), 0.5, 1.0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
