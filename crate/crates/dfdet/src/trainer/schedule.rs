//! Cosine learning-rate decay from the initial rate to a floor, reached at
//! the end of the decay horizon and constant afterward.

use crate::error::{Error, Result};

/// `lr(s) = lr_final + 0.5 (lr_initial - lr_final) (1 + cos(pi s / total))`.
/// The endpoints are returned exactly; steps past `total_steps` stay at the
/// floor.
pub fn lr_at(step: usize, total_steps: usize, lr_initial: f64, lr_final: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("schedule needs a positive total step count".into()));
    }
    if step == 0 {
        return Ok(lr_initial);
    }
    if step >= total_steps {
        return Ok(lr_final);
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr_final + 0.5 * (lr_initial - lr_final) * (1.0 + (std::f64::consts::PI * progress).cos()))
}
