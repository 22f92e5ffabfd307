//! Central finite-difference gradients, the reference every analytic
//! gradient rule is checked against.

use crate::tensor::{Scalar, Tensor};

/// `(f(x + εeᵢ) − f(x − εeᵢ)) / 2ε` for every coordinate of `x`.
pub fn finite_difference_gradient<S: Scalar>(
    mut f: impl FnMut(&Tensor<S>) -> S,
    x: &Tensor<S>,
    eps: S,
) -> Tensor<S> {
    let coords: Vec<usize> = (0..x.len()).collect();
    let values = finite_difference_at(&mut f, x, eps, &coords);
    Tensor::new(x.shape().to_vec(), values).expect("same extents as x")
}

/// Central differences restricted to the listed flat coordinates.
pub fn finite_difference_at<S: Scalar>(
    mut f: impl FnMut(&Tensor<S>) -> S,
    x: &Tensor<S>,
    eps: S,
    coords: &[usize],
) -> Vec<S> {
    assert!(eps > S::zero(), "finite difference step must be positive");
    let mut probe = x.clone();
    let two = S::one() + S::one();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let up = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (two * eps)
        })
        .collect()
}

/// Scaled disagreement between an analytic and a numeric derivative:
/// `|a − n| / max(|a|, |n|, 1e-2)`. A value ≤ 1e-4 means agreement within
/// 1e-4 relative, or 1e-6 absolute for derivatives below 1e-2.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-2);
    (analytic - numeric).abs() / scale
}

/// Pass threshold paired with [`gradient_error`].
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
