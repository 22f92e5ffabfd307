//! Recurrent cells and their unrolling through time.
//!
//! Each cell kind has an owning parameter struct (`*Params`) and a matching
//! set of graph handles (`*Vars`) produced by binding the parameters into a
//! [`Graph`]. Unrolling threads one state through a sequence with a single
//! shared parameter binding, so the recorded graph is the BPTT graph.

mod conv_gru;
mod flow;
mod gru;
mod lstm;
mod simple;

pub use conv_gru::{conv_gru_step, ConvGruParams, ConvGruVars};
pub use flow::{gradient_flow_norms, gru_gradient_flow_norms, spectral_norm};
pub use gru::{gru_step, GruParams, GruVars};
pub use lstm::{lstm_step, LstmParams, LstmVars};
pub use simple::{simple_rnn_step, SimpleRnnParams, SimpleRnnVars};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Hidden state (and LSTM cell state) of one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<S: Scalar = f64> {
    pub h: Tensor<S>,
    pub c: Option<Tensor<S>>,
}

impl<S: Scalar> CellState<S> {
    pub fn hidden(h: Tensor<S>) -> Self {
        Self { h, c: None }
    }
}

/// Graph handles of a [`CellState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateVars {
    pub h: Var,
    pub c: Option<Var>,
}

/// Parameters of a cell kind that can be bound into a graph.
pub trait RecurrentCell<S: Scalar> {
    type Vars: CellVars<S>;

    /// Registers the parameters as leaves; `trainable = false` records them
    /// as constants so they receive no gradient.
    fn bind<'a>(&'a self, g: &mut Graph<'a, S>, trainable: bool) -> Self::Vars;

    /// All-zero state for inputs of the given shape.
    fn zero_state(&self, input_shape: &[usize]) -> Result<CellState<S>>;
}

/// One step of a bound cell.
pub trait CellVars<S: Scalar>: Copy {
    fn step(&self, g: &mut Graph<'_, S>, x: Var, state: StateVars) -> Result<StateVars>;

    /// Cell output for a state; the hidden state for gated cells.
    fn output(&self, _g: &mut Graph<'_, S>, state: StateVars) -> Result<Var> {
        Ok(state.h)
    }
}

pub(crate) fn leaf<'a, S: Scalar>(g: &mut Graph<'a, S>, t: &'a Tensor<S>, trainable: bool) -> Var {
    if trainable {
        g.param_ref(t)
    } else {
        g.constant_ref(t)
    }
}

pub fn bind_state<'a, S: Scalar>(g: &mut Graph<'a, S>, s: &CellState<S>) -> StateVars {
    StateVars {
        h: g.constant(s.h.clone()),
        c: s.c.as_ref().map(|c| g.constant(c.clone())),
    }
}

/// Unrolls a bound cell over graph inputs. Returns every state (oldest
/// first) and the output of the final step.
pub fn unroll_vars<S: Scalar, V: CellVars<S>>(
    g: &mut Graph<'_, S>,
    vars: &V,
    inputs: &[Var],
    initial: StateVars,
) -> Result<(Vec<StateVars>, Var)> {
    let Some(first) = inputs.first() else {
        return Err(Error::arg("unroll: empty input sequence"));
    };
    let shape = g.shape(*first).to_vec();
    let mut state = initial;
    let mut states = Vec::with_capacity(inputs.len());
    for (t, &x) in inputs.iter().enumerate() {
        if g.shape(x) != shape.as_slice() {
            return Err(Error::dim(format!(
                "unroll: input {t} has shape {:?}, expected {:?}",
                g.shape(x),
                shape
            )));
        }
        state = vars.step(g, x, state)?;
        states.push(state);
    }
    let out = vars.output(g, state)?;
    Ok((states, out))
}

/// Eager unroll: evaluates the cell over `inputs` from `h0` and returns all
/// states and the last output.
pub fn unroll<S: Scalar, C: RecurrentCell<S>>(
    cell: &C,
    inputs: &[Tensor<S>],
    h0: &CellState<S>,
) -> Result<(Vec<CellState<S>>, Tensor<S>)> {
    let mut g = Graph::new();
    let vars = cell.bind(&mut g, false);
    let xs: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
    let s0 = bind_state(&mut g, h0);
    let (states, out) = unroll_vars(&mut g, &vars, &xs, s0)?;
    let states = states
        .iter()
        .map(|s| CellState {
            h: g.value(s.h).clone(),
            c: s.c.map(|c| g.value(c).clone()),
        })
        .collect();
    Ok((states, g.value(out).clone()))
}

/// `σ(a)`, `tanh(a)` etc. on `W_h·h + W_x·x + b` for dense cells.
pub(crate) fn dense_gate<S: Scalar>(
    g: &mut Graph<'_, S>,
    w_h: Var,
    h: Var,
    w_x: Var,
    x: Var,
    b: Var,
) -> Result<Var> {
    let hh = g.matvec(w_h, h)?;
    let xx = g.matvec(w_x, x)?;
    let s = g.add(hh, xx)?;
    g.add(s, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_gru_decays_geometrically() {
        let p = GruParams::<f64>::zeros(2, 3);
        let v = Tensor::from_vec(vec![1.0, -2.0, 4.0]);
        let inputs = vec![Tensor::from_vec(vec![0.3, -0.1]); 3];
        let (states, last) = unroll(&p, &inputs, &CellState::hidden(v.clone())).unwrap();
        assert_eq!(states.len(), 3);
        assert_eq!(last, v.scale(0.125));
    }

    #[test]
    fn single_step_unroll_equals_step() {
        let mut rng = crate::rng::stream(5, "unroll");
        let p = GruParams::<f64>::init(3, 4, &mut rng);
        let x = crate::init::normal(&[3], &mut rng);
        let h0 = crate::init::normal(&[4], &mut rng);
        let (_, last) = unroll(&p, std::slice::from_ref(&x), &CellState::hidden(h0.clone())).unwrap();
        assert_eq!(last, gru_step(&p, &x, &h0).unwrap());
    }

    #[test]
    fn empty_sequence_is_an_argument_error() {
        let p = GruParams::<f64>::zeros(2, 2);
        let err = unroll(&p, &[], &CellState::hidden(Tensor::zeros(&[2]))).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }
}
