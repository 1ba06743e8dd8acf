//! Exact and brute-force references. Everything here works in `f64` and is
//! meant for tests and experiments, not for speed.

mod discrete;
mod enumerate;
mod grid;
mod kalman;

pub use discrete::{brute_force_joint, discrete_forward_backward, forward_backward, ForwardBackward, BRUTE_FORCE_LIMIT};
pub use enumerate::{
    enumerate_backward_law, enumerate_joint_ffbsm, path_code, path_indices, ENUMERATION_LIMIT,
};
pub use grid::{grid_smoother, GridDensity, MIN_GRID_SIZE};
pub use kalman::{rts_smooth, GaussianBelief, KalmanSmoother};

use crate::error::{Result, SmcError};

/// `base^exp` if it does not exceed `limit`.
pub(crate) fn checked_size(base: usize, exp: usize, limit: u128) -> Result<usize> {
    let size = (base as u128).checked_pow(exp as u32).unwrap_or(u128::MAX);
    if size > limit {
        return Err(SmcError::Infeasible { size, limit });
    }
    Ok(size as usize)
}
