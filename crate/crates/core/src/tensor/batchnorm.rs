use alloc::vec::Vec;

use super::Real;

/// Exponential moving averages of per-channel batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    /// Mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        Self { mean: alloc::vec![T::zero(); channels], var: alloc::vec![T::one(); channels] }
    }

    /// `stat ← (1 − momentum)·stat + momentum·batch`, with the batch variance
    /// taken unbiased (`n / (n − 1)`).
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], count: usize, momentum: T) {
        let correction = if count > 1 { T::of(count as f64 / (count - 1) as f64) } else { T::one() };
        for c in 0..self.mean.len() {
            self.mean[c] = (T::one() - momentum) * self.mean[c] + momentum * batch_mean[c];
            self.var[c] = (T::one() - momentum) * self.var[c] + momentum * batch_var[c] * correction;
        }
    }

    pub fn cast<U: Real>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(|v| U::of(v.as_f64())).collect(),
            var: self.var.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Per-channel statistics over batch and spatial axes of `[B, C, S]` data.
pub(crate) fn channel_moments<T: Real>(x: &[T], batch: usize, channels: usize, spatial: usize) -> (Vec<T>, Vec<T>) {
    let n = T::of((batch * spatial) as f64);
    let mut mean = alloc::vec![T::zero(); channels];
    let mut var = alloc::vec![T::zero(); channels];
    for c in 0..channels {
        let mut s = T::zero();
        for b in 0..batch {
            s += x[(b * channels + c) * spatial..][..spatial].iter().copied().sum::<T>();
        }
        let m = s / n;
        let mut v = T::zero();
        for b in 0..batch {
            for &xv in &x[(b * channels + c) * spatial..][..spatial] {
                v += (xv - m) * (xv - m);
            }
        }
        mean[c] = m;
        var[c] = v / n;
    }
    (mean, var)
}

/// `y = gamma·(x − mean)·inv_std + beta`; returns the normalized input.
pub(crate) fn normalize<T: Real>(
    x: &[T],
    dims: (usize, usize, usize),
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
    y: &mut [T],
) -> Vec<T> {
    let (batch, channels, spatial) = dims;
    let mut x_hat = alloc::vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                let h = (x[i] - mean[c]) * inv_std[c];
                x_hat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    x_hat
}

/// Gradients of training-mode batch normalization.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_train<T: Real>(
    dy: &[T],
    x_hat: &[T],
    dims: (usize, usize, usize),
    inv_std: &[T],
    gamma: &[T],
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    let (batch, channels, spatial) = dims;
    let n = T::of((batch * spatial) as f64);
    let mut sum_dy = alloc::vec![T::zero(); channels];
    let mut sum_dy_xhat = alloc::vec![T::zero(); channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                sum_dy[c] += dy[i];
                sum_dy_xhat[c] += dy[i] * x_hat[i];
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..batch {
            for c in 0..channels {
                let k = gamma[c] * inv_std[c] / n;
                let base = (b * channels + c) * spatial;
                for i in base..base + spatial {
                    dx[i] += k * (n * dy[i] - sum_dy[c] - x_hat[i] * sum_dy_xhat[c]);
                }
            }
        }
    }
    if let Some(dg) = dgamma {
        for c in 0..channels {
            dg[c] += sum_dy_xhat[c];
        }
    }
    if let Some(db) = dbeta {
        for c in 0..channels {
            db[c] += sum_dy[c];
        }
    }
}

/// Gradients of evaluation-mode batch normalization (fixed statistics).
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_eval<T: Real>(
    dy: &[T],
    x_hat: &[T],
    dims: (usize, usize, usize),
    inv_std: &[T],
    gamma: &[T],
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    let (batch, channels, spatial) = dims;
    let (mut dx, mut dgamma, mut dbeta) = (dx, dgamma, dbeta);
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                if let Some(dx) = dx.as_deref_mut() {
                    dx[i] += dy[i] * gamma[c] * inv_std[c];
                }
                if let Some(dg) = dgamma.as_deref_mut() {
                    dg[c] += dy[i] * x_hat[i];
                }
                if let Some(db) = dbeta.as_deref_mut() {
                    db[c] += dy[i];
                }
            }
        }
    }
}
