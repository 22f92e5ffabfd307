//! Norms of the state-to-state Jacobian products `∂h_T/∂h_k` of an unrolled
//! recurrence with zero input.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{sigmoid, Activation};
use crate::recurrent::{GruParams, SimpleRnnParams};
use crate::tensor::{Scalar, Tensor};

fn matrix<S: Scalar>(t: &Tensor<S>) -> DMatrix<f64> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    DMatrix::from_row_iterator(r, c, t.data().iter().map(|v| v.as_f64()))
}

fn vector<S: Scalar>(t: &Tensor<S>) -> DVector<f64> {
    DVector::from_iterator(t.len(), t.data().iter().map(|v| v.as_f64()))
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Given per-step Jacobians `J_2..J_T` (where `J_i = ∂h_i/∂h_{i−1}`), returns
/// `‖J_T⋯J_{k+1}‖₂` for `k = 1..T−1`, oldest first.
fn chain_norms(jacobians: Vec<DMatrix<f64>>) -> Vec<f64> {
    let mut norms = Vec::with_capacity(jacobians.len());
    let mut product: Option<DMatrix<f64>> = None;
    for j in jacobians.into_iter().rev() {
        let p = match product {
            Some(p) => p * j,
            None => j,
        };
        norms.push(spectral_norm(&p));
        product = Some(p);
    }
    norms.reverse();
    norms
}

fn check_len(t: usize, h0: usize, n: usize) -> Result<()> {
    if t < 2 {
        return Err(Error::arg(format!("gradient flow needs T ≥ 2, got {t}")));
    }
    if h0 != n {
        return Err(Error::dim(format!("gradient flow: h0 has {h0} entries, cell has {n}")));
    }
    Ok(())
}

/// `‖∂h_T/∂h_k‖₂` for `k = 1..T−1` of a simple RNN started at `h_1 = h0` with
/// zero input, where `∂h_i/∂h_{i−1} = θ·diag(φ̇(h_{i−1}))`.
pub fn gradient_flow_norms<S: Scalar>(p: &SimpleRnnParams<S>, t: usize, h0: &Tensor<S>) -> Result<Vec<f64>> {
    let n = p.hidden_size();
    check_len(t, h0.len(), n)?;
    let theta = matrix(&p.theta);
    let act: Activation = p.activation;
    let mut h = vector(h0);
    let mut jacobians = Vec::with_capacity(t - 1);
    for _ in 1..t {
        let d = DVector::from_iterator(n, h.iter().map(|&v| act.derivative(v)));
        let phi = DVector::from_iterator(n, h.iter().map(|&v| act.apply(v)));
        jacobians.push(&theta * DMatrix::from_diagonal(&d));
        h = &theta * phi;
    }
    Ok(chain_norms(jacobians))
}

/// The same diagnostic for a GRU with zero input, using the exact step Jacobian
///
/// ```text
/// ∂h'/∂h = diag(1−z) + diag((ĥ−h)⊙z⊙(1−z))·W_hz
///        + diag(z⊙(1−ĥ²))·W_h·(diag(r) + diag(h⊙r⊙(1−r))·W_hr)
/// ```
pub fn gru_gradient_flow_norms<S: Scalar>(p: &GruParams<S>, t: usize, h0: &Tensor<S>) -> Result<Vec<f64>> {
    let n = p.hidden_size();
    check_len(t, h0.len(), n)?;
    let (w_hz, w_hr, w_h) = (matrix(&p.w_hz), matrix(&p.w_hr), matrix(&p.w_h));
    let (b_z, b_r, b) = (vector(&p.b_z), vector(&p.b_r), vector(&p.b));
    let mut h = vector(h0);
    let mut jacobians = Vec::with_capacity(t - 1);
    for _ in 1..t {
        let z = (&w_hz * &h + &b_z).map(sigmoid);
        let r = (&w_hr * &h + &b_r).map(sigmoid);
        let cand = (&w_h * r.component_mul(&h) + &b).map(f64::tanh);
        let one = DVector::from_element(n, 1.0);
        let dz = (&cand - &h).component_mul(&z).component_mul(&(&one - &z));
        let dc = z.component_mul(&(&one - cand.map(|v| v * v)));
        let dr = h.component_mul(&r).component_mul(&(&one - &r));
        let inner = DMatrix::from_diagonal(&r) + DMatrix::from_diagonal(&dr) * &w_hr;
        let j = DMatrix::from_diagonal(&(&one - &z))
            + DMatrix::from_diagonal(&dz) * &w_hz
            + DMatrix::from_diagonal(&dc) * &w_h * inner;
        jacobians.push(j);
        h = (&one - &z).component_mul(&h) + z.component_mul(&cand);
    }
    Ok(chain_norms(jacobians))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recurrent::gru_step;

    fn identity(n: usize, s: f64) -> Tensor {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { s } else { 0.0 })
    }

    #[test]
    fn diagonal_closed_form() {
        let p = SimpleRnnParams::new(identity(3, 0.5), Tensor::zeros(&[3, 1]), identity(3, 1.0), Activation::Identity).unwrap();
        let norms = gradient_flow_norms(&p, 6, &Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(norms.len(), 5);
        for (k, v) in norms.iter().enumerate() {
            let expect = 0.5f64.powi(6 - (k as i32 + 1));
            assert!((v - expect).abs() < 1e-14, "k={} {v} vs {expect}", k + 1);
        }
    }

    #[test]
    fn t_equals_two_is_one_jacobian() {
        let mut rng = crate::rng::stream(3, "flow");
        let theta: Tensor = crate::init::normal(&[4, 4], &mut rng);
        let h0: Tensor = crate::init::normal(&[4], &mut rng);
        let p = SimpleRnnParams::new(theta.clone(), Tensor::zeros(&[4, 2]), identity(4, 1.0), Activation::Tanh).unwrap();
        let norms = gradient_flow_norms(&p, 2, &h0).unwrap();
        let d = DVector::from_iterator(4, h0.data().iter().map(|v| 1.0 - v.tanh().powi(2)));
        let direct = spectral_norm(&(matrix(&theta) * DMatrix::from_diagonal(&d)));
        assert!((norms[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn gru_jacobian_matches_finite_differences() {
        let mut rng = crate::rng::stream(9, "flow-gru");
        let mut p: GruParams = GruParams::init(2, 3, &mut rng);
        p.b_z = crate::init::normal(&[3], &mut rng);
        p.b = crate::init::normal(&[3], &mut rng);
        let h0: Tensor = crate::init::normal(&[3], &mut rng);
        let x = Tensor::zeros(&[2]);
        let eps = 1e-6;
        let mut fd = DMatrix::zeros(3, 3);
        for j in 0..3 {
            let mut up = h0.clone();
            up.data_mut()[j] += eps;
            let mut down = h0.clone();
            down.data_mut()[j] -= eps;
            let a = gru_step(&p, &x, &up).unwrap();
            let b = gru_step(&p, &x, &down).unwrap();
            for i in 0..3 {
                fd[(i, j)] = (a.data()[i] - b.data()[i]) / (2.0 * eps);
            }
        }
        let norms = gru_gradient_flow_norms(&p, 2, &h0).unwrap();
        assert!((norms[0] - spectral_norm(&fd)).abs() < 1e-8);
    }

    #[test]
    fn rejects_short_horizon() {
        let p = SimpleRnnParams::new(identity(2, 1.0), Tensor::zeros(&[2, 1]), identity(2, 1.0), Activation::Tanh).unwrap();
        assert!(gradient_flow_norms(&p, 1, &Tensor::zeros(&[2])).is_err());
    }
}
