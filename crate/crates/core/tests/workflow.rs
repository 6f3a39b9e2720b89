use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stabnet::nets::Architecture;
use stabnet::simdata::{
    disturbance_experiment, grid_dataset, ClosedLoop, Controller, Plant, VectorFieldSpec,
};
use stabnet::stability::{hji_residual_parts, InputMap, OutputMap, WeightSpec};
use stabnet::training::{train, Checkpoint, TrainConfig, TrainMode};
use stabnet::verify::{decrease_check, hinf_weight_check, roa_check};

fn samples(seed: u64, rows: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, 2), |_| rng.random_range(-3.0..3.0))
}

fn small(mut config: TrainConfig, epochs: usize) -> TrainConfig {
    config.architecture = Architecture::uniform(16);
    config.batch_size = 25;
    config.epochs = epochs;
    config.step_size = 0.01;
    config
}

#[test]
fn autonomous_training_round_trips_through_json() {
    let data = grid_dataset(
        10,
        &[(-2.0, 2.0), (-2.0, 2.0)],
        &VectorFieldSpec::Linear(array![[-1.0, 2.0], [-2.0, -1.0]]),
    )
    .unwrap();
    let config = small(
        TrainConfig::new(
            TrainMode::Autonomous,
            InputMap::zero(2, 1),
            WeightSpec::ProportionalToV { c3: 0.5 },
        ),
        15,
    );
    let ckpt = train(config, &data).unwrap();
    let first = ckpt.history.first().unwrap().full_loss;
    assert!(ckpt.final_loss().unwrap() < first);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ckpt.save(&path).unwrap();
    let again = Checkpoint::load(&path).unwrap();
    assert_eq!(again.to_json().unwrap(), ckpt.to_json().unwrap());

    let (a, b) = (ckpt.model().unwrap(), again.model().unwrap());
    let x = samples(1, 200);
    for row in x.rows() {
        assert_eq!(a.drift(row).unwrap(), b.drift(row).unwrap());
    }
    assert!(decrease_check(&b, &x).unwrap().passed);
    let roa = roa_check(&b, &data).unwrap();
    assert_eq!(roa.points.len(), data.len());
    assert!(roa
        .points
        .iter()
        .filter(|p| p.in_d)
        .all(|p| p.true_lie < 0.0));
}

#[test]
fn structured_training_keeps_hji_residual_nonpositive() {
    let data = grid_dataset(
        8,
        &[(-3.0, 3.0), (-3.0, 3.0)],
        &VectorFieldSpec::VanDerPol { mu: 0.3 },
    )
    .unwrap();
    let mut config = small(
        TrainConfig::new(
            TrainMode::HjiStructured,
            InputMap::van_der_pol(),
            WeightSpec::QuadraticState { c: 1.0 },
        ),
        6,
    );
    config.hje_weight = 0.1;
    config.control_weight = Some(array![[2.0]]);
    let ckpt = train(config, &data).unwrap();
    assert!(ckpt.history.iter().all(|h| h.hje_residual.is_some()));
    let model = ckpt.model().unwrap();
    let r = array![[2.0]];
    for x in samples(2, 1000).rows() {
        let p = model.eval(x).unwrap();
        let h = hji_residual_parts(p.grad_v.view(), p.f.view(), p.g.view(), &r, p.w).unwrap();
        assert!(h <= 1e-9, "H = {h} at {x}");
    }
}

#[test]
fn hinf_weighted_model_attenuates_a_pulse() {
    let gamma = 2.0;
    let weight = WeightSpec::HinfComposite {
        h: OutputMap::Identity,
        g_d: InputMap::van_der_pol(),
        gamma,
        margin: 0.1,
    };
    let data = grid_dataset(
        8,
        &[(-3.0, 3.0), (-3.0, 3.0)],
        &VectorFieldSpec::VanDerPol { mu: 0.3 },
    )
    .unwrap();
    let config = small(
        TrainConfig::new(TrainMode::Stabilizable, InputMap::van_der_pol(), weight),
        5,
    );
    let model = train(config, &data).unwrap().model().unwrap();
    let x = samples(3, 2000);
    assert!(
        hinf_weight_check(&model.weight, &model.lyap, &x)
            .unwrap()
            .passed
    );

    let closed = ClosedLoop::new(&model, Plant::Learned, Controller::Learned);
    let pulse = |t: f64| Array1::from(vec![if t < 1.0 { 1.0 } else { 0.0 }]);
    let result = disturbance_experiment(
        &closed,
        &InputMap::van_der_pol(),
        &OutputMap::Identity,
        &pulse,
        1e-3,
        20.0,
    )
    .unwrap();
    assert!(result.d_energy > 0.99 && result.d_energy < 1.01);
    assert!(
        result.ratio <= gamma * gamma,
        "energy ratio {}",
        result.ratio
    );
}
