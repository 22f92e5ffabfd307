use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::init;
use crate::recurrent::{dense_gate, leaf, CellState, CellVars, RecurrentCell, StateVars};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Gated recurrent unit.
///
/// ```text
/// z = σ(W_hz·h + W_xz·x + b_z)
/// r = σ(W_hr·h + W_xr·x + b_r)
/// ĥ = tanh(W_h·(r ⊙ h) + W_x·x + b)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<S: Scalar = f64> {
    pub w_hz: Tensor<S>,
    pub w_xz: Tensor<S>,
    pub b_z: Tensor<S>,
    pub w_hr: Tensor<S>,
    pub w_xr: Tensor<S>,
    pub b_r: Tensor<S>,
    pub w_h: Tensor<S>,
    pub w_x: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> GruParams<S> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_hz: Tensor::zeros(&[hidden, hidden]),
            w_xz: Tensor::zeros(&[hidden, input]),
            b_z: Tensor::zeros(&[hidden]),
            w_hr: Tensor::zeros(&[hidden, hidden]),
            w_xr: Tensor::zeros(&[hidden, input]),
            b_r: Tensor::zeros(&[hidden]),
            w_h: Tensor::zeros(&[hidden, hidden]),
            w_x: Tensor::zeros(&[hidden, input]),
            b: Tensor::zeros(&[hidden]),
        }
    }

    /// Orthogonal hidden-side weights, fan-uniform input-side weights, zero biases.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(input, hidden);
        p.w_hz = init::orthogonal(hidden, rng);
        p.w_hr = init::orthogonal(hidden, rng);
        p.w_h = init::orthogonal(hidden, rng);
        p.w_xz = init::uniform_fan(&[hidden, input], input, hidden, rng);
        p.w_xr = init::uniform_fan(&[hidden, input], input, hidden, rng);
        p.w_x = init::uniform_fan(&[hidden, input], input, hidden, rng);
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.b.len()
    }

    pub fn input_size(&self) -> usize {
        self.w_x.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor<S>; 9] {
        [
            &self.w_hz, &self.w_xz, &self.b_z, &self.w_hr, &self.w_xr, &self.b_r, &self.w_h,
            &self.w_x, &self.b,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_hz: Var,
    pub w_xz: Var,
    pub b_z: Var,
    pub w_hr: Var,
    pub w_xr: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub w_x: Var,
    pub b: Var,
}

impl GruVars {
    /// Builds handles from nine vars in the order of [`GruParams::tensors`].
    pub fn from_slice(v: &[Var]) -> Result<Self> {
        match *v {
            [w_hz, w_xz, b_z, w_hr, w_xr, b_r, w_h, w_x, b] => Ok(Self {
                w_hz,
                w_xz,
                b_z,
                w_hr,
                w_xr,
                b_r,
                w_h,
                w_x,
                b,
            }),
            _ => Err(Error::arg(format!("gru: expected 9 parameter slots, got {}", v.len()))),
        }
    }
}

impl<S: Scalar> RecurrentCell<S> for GruParams<S> {
    type Vars = GruVars;

    fn bind<'a>(&'a self, g: &mut Graph<'a, S>, trainable: bool) -> GruVars {
        let v: Vec<Var> = self.tensors().into_iter().map(|t| leaf(g, t, trainable)).collect();
        GruVars::from_slice(&v).expect("nine slots")
    }

    fn zero_state(&self, _input_shape: &[usize]) -> Result<CellState<S>> {
        Ok(CellState::hidden(Tensor::zeros(&[self.hidden_size()])))
    }
}

impl<S: Scalar> CellVars<S> for GruVars {
    fn step(&self, g: &mut Graph<'_, S>, x: Var, state: StateVars) -> Result<StateVars> {
        let h = state.h;
        let a_z = dense_gate(g, self.w_hz, h, self.w_xz, x, self.b_z)?;
        let z = g.sigmoid(a_z);
        let a_r = dense_gate(g, self.w_hr, h, self.w_xr, x, self.b_r)?;
        let r = g.sigmoid(a_r);
        let rh = g.mul(r, h)?;
        let a_h = dense_gate(g, self.w_h, rh, self.w_x, x, self.b)?;
        let cand = g.tanh(a_h);
        Ok(StateVars {
            h: blend(g, z, h, cand)?,
            c: None,
        })
    }
}

/// `(1 − z) ⊙ h + z ⊙ ĥ`, recorded as `h + z ⊙ (ĥ − h)`.
pub(crate) fn blend<S: Scalar>(g: &mut Graph<'_, S>, z: Var, h: Var, cand: Var) -> Result<Var> {
    let diff = g.sub(cand, h)?;
    let step = g.mul(z, diff)?;
    g.add(h, step)
}

/// One GRU step.
pub fn gru_step<S: Scalar>(p: &GruParams<S>, x: &Tensor<S>, h_prev: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let vars = p.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let hv = g.constant(h_prev.clone());
    let s = vars.step(&mut g, xv, StateVars { h: hv, c: None })?;
    Ok(g.value(s.h).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_halve_the_state() {
        let p = GruParams::<f64>::zeros(2, 3);
        let h = Tensor::from_vec(vec![0.4, -1.0, 2.0]);
        let out = gru_step(&p, &Tensor::from_vec(vec![3.0, 1.0]), &h).unwrap();
        assert_eq!(out, h.scale(0.5));
    }

    #[test]
    fn closed_update_gate_is_perfect_memory() {
        let mut rng = crate::rng::stream(11, "gru");
        let mut p = GruParams::<f64>::init(3, 4, &mut rng);
        p.b_z = Tensor::full(&[4], -100.0);
        let h = crate::init::normal(&[4], &mut rng);
        let x = crate::init::normal(&[3], &mut rng);
        let out = gru_step(&p, &x, &h).unwrap();
        for (a, b) in out.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-40, "{a} vs {b}");
        }
    }

    #[test]
    fn input_size_mismatch() {
        let p = GruParams::<f64>::zeros(2, 3);
        assert!(matches!(
            gru_step(&p, &Tensor::zeros(&[4]), &Tensor::zeros(&[3])),
            Err(Error::Dimension(_))
        ));
    }
}
