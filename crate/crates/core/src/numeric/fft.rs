use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::TensorError;

/// Complex spectrum of a real sequence for bins `0..=T/2` (unnormalized forward DFT).
pub fn rfft(x: &[f64]) -> Result<Vec<Complex64>, TensorError> {
    if x.len() < 2 {
        return Err(TensorError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(buf.len());
    fft.process(&mut buf);
    buf.truncate(x.len() / 2 + 1);
    Ok(buf)
}

/// `|X_f|` for the non-negative frequency bins of a real sequence of length `T ≥ 2`.
pub fn rfft_magnitudes(x: &[f64]) -> Result<Vec<f64>, TensorError> {
    Ok(rfft(x)?.iter().map(|c| c.norm()).collect())
}
