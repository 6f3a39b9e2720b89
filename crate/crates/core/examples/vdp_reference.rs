//! Trains the van der Pol reference configuration and prints the loss curve.
//!
//! `cargo run --release -p stabnet-core --example vdp_reference -- [epochs] [seed]`

use std::time::Instant;

use stabnet::simdata::{grid_dataset, VectorFieldSpec};
use stabnet::stability::{InputMap, WeightSpec};
use stabnet::training::{TrainConfig, TrainMode, Trainer};

fn main() -> stabnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(500);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);
    let data = grid_dataset(
        50,
        &[(-3.0, 3.0), (-3.0, 3.0)],
        &VectorFieldSpec::VanDerPol { mu: 0.3 },
    )?;
    let mut config = TrainConfig::new(
        TrainMode::Stabilizable,
        InputMap::van_der_pol(),
        WeightSpec::QuadraticState { c: 500.0 },
    );
    config.epsilon = 10.0;
    config.epochs = epochs;
    config.seed = seed;
    let start = Instant::now();
    let mut trainer = Trainer::new(config, &data)?;
    println!("epoch 0 fit {:.6}", trainer.history()[0].fit_loss);
    while trainer.epoch() < epochs && !trainer.converged() {
        let r = trainer.run_epoch()?.clone();
        if r.epoch % 10 == 0 || r.epoch == epochs {
            println!(
                "epoch {} fit {:.6} ({:.1}s)",
                r.epoch,
                r.fit_loss,
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
