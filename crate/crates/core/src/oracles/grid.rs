use super::discrete::forward_backward;
use crate::error::{Result, SmcError};
use crate::model::ModelSpec;
use crate::scalar::Scalar;

/// Smallest grid accepted by [`grid_smoother`].
pub const MIN_GRID_SIZE: usize = 64;

/// Smoothing marginals of a 1-D model on a grid of cell midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub points: Vec<f64>,
    /// `per_time[t][g]`: probability of cell `g` at time `t`.
    pub per_time: Vec<Vec<f64>>,
}

impl GridDensity {
    pub fn expect(&self, t: usize, h: impl Fn(f64) -> f64) -> f64 {
        self.per_time[t]
            .iter()
            .zip(&self.points)
            .map(|(p, &x)| p * h(x))
            .sum()
    }

    pub fn mean(&self, t: usize) -> f64 {
        self.expect(t, |x| x)
    }
}

/// Discretizes a model on a subinterval of `[0, 1]` at `grid_size` cell
/// midpoints, renormalizes each kernel row, and runs the exact
/// finite-state recursions.
pub fn grid_smoother<F: Scalar>(model: &ModelSpec<F>, grid_size: usize) -> Result<GridDensity> {
    if grid_size < MIN_GRID_SIZE {
        return Err(SmcError::InvalidParameter(format!(
            "grid_size = {grid_size} is below {MIN_GRID_SIZE}"
        )));
    }
    let (a, b) = match model.support() {
        Some((a, b)) if a >= F::zero() && b <= F::one() => (a.as_f64(), b.as_f64()),
        _ => {
            return Err(SmcError::Configuration(
                "grid smoother needs a model supported in [0, 1]".into(),
            ))
        }
    };
    let g = grid_size;
    let width = (b - a) / g as f64;
    let points: Vec<f64> = (0..g).map(|k| a + (k as f64 + 0.5) * width).collect();
    let states: Vec<F> = points.iter().map(|&x| F::lit(x)).collect();

    let mut init: Vec<f64> = states.iter().map(|x| model.initial_density(x).as_f64()).collect();
    let z: f64 = init.iter().sum();
    if !(z > 0.0) {
        return Err(SmcError::InvalidParameter(
            "initial density vanishes on the grid".into(),
        ));
    }
    init.iter_mut().for_each(|v| *v /= z);

    let mut trans = vec![0.0; g * g];
    let mut col = vec![F::zero(); g];
    // column j holds m(x_i, x_j) over i
    for (j, to) in states.iter().enumerate() {
        model.transition_column(&states, to, &mut col);
        for (i, &m) in col.iter().enumerate() {
            trans[i * g + j] = m.as_f64();
        }
    }
    for (i, row) in trans.chunks_mut(g).enumerate() {
        let s: f64 = row.iter().sum();
        if !(s > 0.0) {
            return Err(SmcError::InvalidParameter(format!(
                "transition density vanishes from grid point {i}"
            )));
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    let lik: Vec<Vec<f64>> = (0..model.n_obs())
        .map(|t| states.iter().map(|x| model.likelihood(t, x).as_f64()).collect())
        .collect();
    let fb = forward_backward(&init, &trans, &lik)?;
    Ok(GridDensity {
        points,
        per_time: fb.smooth,
    })
}
