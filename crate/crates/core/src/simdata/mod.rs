//! Benchmark systems, grid datasets, RK4 integration and the disturbance experiment.

mod dataset;
mod integrate;
mod systems;

pub use dataset::{format_float, grid_dataset, grid_points, linspace, Dataset};
pub use integrate::{
    disturbance_experiment, rk4_integrate, rk4_integrate_time, DisturbanceResult, Trajectory,
};
pub use systems::{vdp_field, ClosedLoop, Controller, Plant, VectorField, VectorFieldSpec};
