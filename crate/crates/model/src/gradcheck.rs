//! Finite-difference verification of imitation-loss gradients.

use crate::model::Glossifier;
use crate::train::{imitation_gradient, imitation_loss, Example};

/// Agreement between analytic and numeric gradients for one tensor.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    /// `‖a − n‖ / max(‖a‖, ‖n‖)`, or 0 when both norms are 0.
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// Largest entrywise `|a − n|`.
    pub max_abs_diff: f64,
}

/// Compares the analytic gradient of [`imitation_loss`] with central
/// differences of width `2·step` on every entry of every parameter.
pub fn check_gradients(model: &Glossifier, batch: &[Example], step: f64) -> Vec<TensorCheck> {
    let analytic = imitation_gradient(model, batch).expect("batch is valid");
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(analytic.len());
    for (p, a) in analytic.iter().enumerate() {
        let mut diff_sq = 0.0;
        let mut num_sq = 0.0;
        let mut max_abs_diff: f64 = 0.0;
        for k in 0..a.data().len() {
            let orig = probe.params().get(p).data()[k];
            probe.params_mut().get_mut(p).data_mut()[k] = orig + step;
            let up = imitation_loss(&probe, batch).expect("batch is valid");
            probe.params_mut().get_mut(p).data_mut()[k] = orig - step;
            let down = imitation_loss(&probe, batch).expect("batch is valid");
            probe.params_mut().get_mut(p).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let d = a.data()[k] - numeric;
            diff_sq += d * d;
            num_sq += numeric * numeric;
            max_abs_diff = max_abs_diff.max(d.abs());
        }
        let analytic_norm = a.sum_sq().sqrt();
        let numeric_norm = num_sq.sqrt();
        let denom = analytic_norm.max(numeric_norm);
        let relative_error = if denom == 0.0 { 0.0 } else { diff_sq.sqrt() / denom };
        out.push(TensorCheck {
            name: model.params().name(p).to_string(),
            relative_error,
            analytic_norm,
            numeric_norm,
            max_abs_diff,
        });
    }
    out
}
