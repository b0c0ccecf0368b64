use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalQuality {
    pub mse: f64,
    /// Decibels; `f64::INFINITY` when `mse` is zero.
    pub psnr: f64,
    pub rmse: f64,
}

pub fn psnr(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

pub fn mse_psnr_rmse(original: &[f64], perturbed: &[f64], max_value: f64) -> Result<SignalQuality, MetricError> {
    if original.len() != perturbed.len() {
        return Err(MetricError::LengthMismatch(original.len(), perturbed.len()));
    }
    if original.is_empty() {
        return Err(MetricError::Empty);
    }
    if !(max_value > 0.0 && max_value.is_finite()) {
        return Err(MetricError::InvalidArgument(format!("max value must be positive, got {max_value}")));
    }
    let mse = original.iter().zip(perturbed).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / original.len() as f64;
    Ok(SignalQuality { mse, psnr: psnr(mse, max_value), rmse: mse.sqrt() })
}
