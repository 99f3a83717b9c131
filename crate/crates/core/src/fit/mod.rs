//! Weighted nonlinear least squares: a Levenberg–Marquardt core, the
//! characterization fits, and g² histogram fits with detector response.

mod characterization;
mod g2;
mod lm;

pub use characterization::{fit_linewidth_vs_power, fit_lorentzian, fit_saturation, lorentzian};
pub use g2::{
    fit_g2_dataset, fit_g2_staged, fit_g2_staged_values, fit_g2_values, fitted_shape,
    poisson_weights, G2FitSpec, G2Model, ModelFamily,
};
pub use lm::{
    finite_difference_jacobian, fit_curve, solve, FitResult, JacobianFn, LmOptions, ModelFn,
    Problem,
};
