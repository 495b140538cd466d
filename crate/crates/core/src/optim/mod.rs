//! Parameter packing, gradients, Adam and the calibration loop.

mod adam;
mod calibrate;
mod gradient;
mod state;

pub use adam::{adam_step, adam_step_scaled, scheduled_lr, AdamMoments, BETA1, BETA2, EPSILON};
pub use calibrate::{calibrate, calibrate_from, sample_pool};
pub use gradient::{
    batch_loss, difference_step, loss_gradient, numeric_gradient, relative_error,
    validate_gradients, CalibrationPair, GradientReport, GRADIENT_TOLERANCE, RELATIVE_ERROR_FLOOR,
};
pub use state::{
    initial_state, CalibrationConfig, CalibrationResult, CalibrationState, GradientMode,
    INITIAL_EPSILON, NUM_PARAMS, PARAM_NAMES,
};
