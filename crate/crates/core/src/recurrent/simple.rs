use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, Var};
use crate::recurrent::{leaf, CellState, CellVars, RecurrentCell, StateVars};
use crate::tensor::{Scalar, Tensor};

/// Ungated recurrence `h = θ·φ(h_prev) + θ_x·x`, `y = θ_y·φ(h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimpleRnnParams<S: Scalar = f64> {
    /// Recurrent weights, `n × n`.
    pub theta: Tensor<S>,
    /// Input weights, `n × m`.
    pub theta_x: Tensor<S>,
    /// Output weights, `p × n`.
    pub theta_y: Tensor<S>,
    pub activation: Activation,
}

impl<S: Scalar> SimpleRnnParams<S> {
    pub fn new(
        theta: Tensor<S>,
        theta_x: Tensor<S>,
        theta_y: Tensor<S>,
        activation: Activation,
    ) -> Result<Self> {
        let p = Self {
            theta,
            theta_x,
            theta_y,
            activation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn hidden_size(&self) -> usize {
        self.theta.shape()[0]
    }

    fn validate(&self) -> Result<()> {
        let n = match self.theta.shape() {
            [a, b] if a == b => *a,
            s => return Err(Error::dim(format!("simple rnn: θ must be square, got {s:?}"))),
        };
        match (self.theta_x.shape(), self.theta_y.shape()) {
            ([a, _], [_, b]) if *a == n && *b == n => Ok(()),
            (sx, sy) => Err(Error::dim(format!(
                "simple rnn: θ_x {sx:?} and θ_y {sy:?} do not match hidden size {n}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SimpleRnnVars {
    pub theta: Var,
    pub theta_x: Var,
    pub theta_y: Var,
    pub activation: Activation,
}

impl<S: Scalar> RecurrentCell<S> for SimpleRnnParams<S> {
    type Vars = SimpleRnnVars;

    fn bind<'a>(&'a self, g: &mut Graph<'a, S>, trainable: bool) -> SimpleRnnVars {
        SimpleRnnVars {
            theta: leaf(g, &self.theta, trainable),
            theta_x: leaf(g, &self.theta_x, trainable),
            theta_y: leaf(g, &self.theta_y, trainable),
            activation: self.activation,
        }
    }

    fn zero_state(&self, _input_shape: &[usize]) -> Result<CellState<S>> {
        Ok(CellState::hidden(Tensor::zeros(&[self.hidden_size()])))
    }
}

impl<S: Scalar> CellVars<S> for SimpleRnnVars {
    fn step(&self, g: &mut Graph<'_, S>, x: Var, state: StateVars) -> Result<StateVars> {
        let act = g.activation(self.activation, state.h);
        let rec = g.matvec(self.theta, act)?;
        let inp = g.matvec(self.theta_x, x)?;
        Ok(StateVars {
            h: g.add(rec, inp)?,
            c: None,
        })
    }

    fn output(&self, g: &mut Graph<'_, S>, state: StateVars) -> Result<Var> {
        let act = g.activation(self.activation, state.h);
        g.matvec(self.theta_y, act)
    }
}

/// One step of the simple recurrence; returns `(h, y)`.
pub fn simple_rnn_step<S: Scalar>(
    p: &SimpleRnnParams<S>,
    x: &Tensor<S>,
    h_prev: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    p.validate()?;
    let mut g = Graph::new();
    let vars = p.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let hv = g.constant(h_prev.clone());
    let s = vars.step(&mut g, xv, StateVars { h: hv, c: None })?;
    let y = vars.output(&mut g, s)?;
    Ok((g.value(s.h).clone(), g.value(y).clone()))
}
