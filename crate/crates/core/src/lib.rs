//! Learning input-affine dynamics `ẋ = f(x) + g(x)u` whose learned drift is
//! stabilizable by construction, together with a control Lyapunov function
//! and a stabilizing controller.

pub mod diffcore;
pub mod error;
pub mod nets;
pub mod simdata;
pub mod stability;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
