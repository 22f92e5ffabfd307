//! Parameter initializers.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn uniform_fan<S: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<S> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| S::from_f64_lossy(rng.random_range(-limit..=limit)))
}

/// Random orthogonal `n × n` matrix (QR of a Gaussian matrix with the sign
/// of R's diagonal folded into Q).
pub fn orthogonal<S: Scalar>(n: usize, rng: &mut Rng) -> Tensor<S> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Tensor::from_fn(&[n, n], |i| S::from_f64_lossy(q[(i / n, i % n)]))
}

/// 1-D linear interpolation weights for upsampling by `stride` with a window
/// of `size` taps: a triangle of half-width `stride` centered in the window.
/// Whenever `size ≥ 2·stride − 1` the stride-shifted copies sum to one.
pub fn bilinear_taps(size: usize, stride: usize) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    (0..size)
        .map(|i| (1.0 - (i as f64 - center).abs() / stride as f64).max(0.0))
        .collect()
}

/// `channels × channels × size × size` transposed-convolution kernel that
/// bilinearly upsamples each channel independently.
pub fn bilinear_kernel<S: Scalar>(channels: usize, size: usize, stride: usize) -> Tensor<S> {
    let taps = bilinear_taps(size, stride);
    let mut k = Tensor::zeros(&[channels, channels, size, size]);
    let plane = size * size;
    for c in 0..channels {
        let base = (c * channels + c) * plane;
        for i in 0..size {
            for j in 0..size {
                k.data_mut()[base + i * size + j] = S::from_f64_lossy(taps[i] * taps[j]);
            }
        }
    }
    k
}

/// Standard normal tensor, used for synthetic test inputs.
pub fn normal<S: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<S> {
    Tensor::from_fn(shape, |_| S::from_f64_lossy(StandardNormal.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn orthogonal_is_orthogonal() {
        let q = orthogonal::<f64>(6, &mut stream(1, "t"));
        let m = DMatrix::from_row_slice(6, 6, q.data());
        let id = &m * m.transpose();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_taps_partition_unity() {
        for (size, stride) in [(10, 4), (20, 8), (4, 2), (8, 4)] {
            let taps = bilinear_taps(size, stride);
            for offset in 0..stride {
                let s: f64 = taps.iter().skip(offset).step_by(stride).sum();
                assert!((s - 1.0).abs() < 1e-12, "size {size} stride {stride} offset {offset}");
            }
        }
    }

    #[test]
    fn uniform_fan_bounds() {
        let t = uniform_fan::<f64>(&[20, 30], 30, 20, &mut stream(3, "u"));
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= limit));
    }
}
