//! Closed-form stability constructions: the autonomous and stabilizable
//! projections, Sontag's controller, weight functions, the HJI residual,
//! the structured optimal controller and inverse-optimality weights.

mod maps;
mod model;
mod projection;

pub use maps::{
    min_eigenvalue, spd_inverse, spd_solve, InputMap, MapFn, OutputMap, RMap, MIN_EIGENVALUE,
};
pub use model::{
    random_model, BlockLayout, ControlKind, ControlSpec, DriftNodes, PointEval, ProjectedModel,
    ProjectionMode,
};
pub use projection::{
    hji_residual, hji_residual_parts, inverse_optimal_weights, lie_along_columns,
    project_autonomous, project_stabilizable, projection_correction, sontag_control,
    structured_alpha, structured_alpha_parts, weight_eval, InverseOptimal, WeightSpec,
};
