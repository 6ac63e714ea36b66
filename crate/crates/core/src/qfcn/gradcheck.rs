use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::arch::Architecture;
use super::network::{Mode, Network, Tensor};

/// Below this magnitude both gradients are treated as zero and compared
/// absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub scalars: usize,
    pub failures: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Central finite differences against the analytic backward pass on every
/// trainable scalar, in `f64`, for a random input, pixel and target.
pub fn gradient_check(arch: &Architecture, rows: usize, cols: usize, seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let net = Network::<f64>::init(arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let n = arch.input_channels * rows * cols;
    let x = Tensor::new(arch.input_channels, rows, cols, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let pixel = (rng.random_range(0..rows), rng.random_range(0..cols));
    let target = rng.random_range(-1.0..2.0);
    let analytic = net.backward(&x, pixel, target)?.grads.flatten();

    let loss = |net: &Network<f64>| -> Result<f64> {
        let (q, _) = net.forward_with_stats(&x, Mode::Train)?;
        let e = target - q.data[pixel.0 * q.cols + pixel.1];
        Ok(e * e)
    };

    let mut probe = net.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    let sizes: Vec<usize> = net.trainable().iter().map(|s| s.len()).collect();
    for (si, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.trainable()[si][i];
            probe.trainable_mut()[si][i] = orig + step;
            let up = loss(&probe)?;
            probe.trainable_mut()[si][i] = orig - step;
            let down = loss(&probe)?;
            probe.trainable_mut()[si][i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
    }

    let errors: Vec<f64> = analytic.iter().zip(&numeric).map(|(&a, &n)| relative_error(a, n)).collect();
    Ok(GradCheckReport {
        scalars: errors.len(),
        failures: errors.iter().filter(|&&e| !(e < tolerance)).count(),
        max_relative_error: errors.iter().copied().fold(0.0, f64::max),
        tolerance,
    })
}
