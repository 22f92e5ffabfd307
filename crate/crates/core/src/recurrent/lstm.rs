use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, Var};
use crate::init;
use crate::recurrent::{dense_gate, leaf, CellState, CellVars, RecurrentCell, StateVars};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// LSTM weights: input, forget and output gates plus the candidate `g`.
///
/// The candidate squashing function defaults to the logistic sigmoid; set
/// `candidate` to [`Activation::Tanh`] for the conventional variant.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<S: Scalar = f64> {
    pub w_xi: Tensor<S>,
    pub w_hi: Tensor<S>,
    pub b_i: Tensor<S>,
    pub w_xf: Tensor<S>,
    pub w_hf: Tensor<S>,
    pub b_f: Tensor<S>,
    pub w_xo: Tensor<S>,
    pub w_ho: Tensor<S>,
    pub b_o: Tensor<S>,
    pub w_xc: Tensor<S>,
    pub w_hc: Tensor<S>,
    pub b_c: Tensor<S>,
    pub candidate: Activation,
}

impl<S: Scalar> LstmParams<S> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let wx = || Tensor::zeros(&[hidden, input]);
        let wh = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_xi: wx(),
            w_hi: wh(),
            b_i: b(),
            w_xf: wx(),
            w_hf: wh(),
            b_f: b(),
            w_xo: wx(),
            w_ho: wh(),
            b_o: b(),
            w_xc: wx(),
            w_hc: wh(),
            b_c: b(),
            candidate: Activation::Sigmoid,
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(input, hidden);
        for w in [&mut p.w_xi, &mut p.w_xf, &mut p.w_xo, &mut p.w_xc] {
            *w = init::uniform_fan(&[hidden, input], input, hidden, rng);
        }
        for w in [&mut p.w_hi, &mut p.w_hf, &mut p.w_ho, &mut p.w_hc] {
            *w = init::orthogonal(hidden, rng);
        }
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.b_i.len()
    }

    pub fn tensors(&self) -> [&Tensor<S>; 12] {
        [
            &self.w_xi, &self.w_hi, &self.b_i, &self.w_xf, &self.w_hf, &self.b_f, &self.w_xo,
            &self.w_ho, &self.b_o, &self.w_xc, &self.w_hc, &self.b_c,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_xi: Var,
    pub w_hi: Var,
    pub b_i: Var,
    pub w_xf: Var,
    pub w_hf: Var,
    pub b_f: Var,
    pub w_xo: Var,
    pub w_ho: Var,
    pub b_o: Var,
    pub w_xc: Var,
    pub w_hc: Var,
    pub b_c: Var,
    pub candidate: Activation,
}

impl<S: Scalar> RecurrentCell<S> for LstmParams<S> {
    type Vars = LstmVars;

    fn bind<'a>(&'a self, g: &mut Graph<'a, S>, trainable: bool) -> LstmVars {
        let mut l = |t| leaf(g, t, trainable);
        LstmVars {
            w_xi: l(&self.w_xi),
            w_hi: l(&self.w_hi),
            b_i: l(&self.b_i),
            w_xf: l(&self.w_xf),
            w_hf: l(&self.w_hf),
            b_f: l(&self.b_f),
            w_xo: l(&self.w_xo),
            w_ho: l(&self.w_ho),
            b_o: l(&self.b_o),
            w_xc: l(&self.w_xc),
            w_hc: l(&self.w_hc),
            b_c: l(&self.b_c),
            candidate: self.candidate,
        }
    }

    fn zero_state(&self, _input_shape: &[usize]) -> Result<CellState<S>> {
        let n = self.hidden_size();
        Ok(CellState {
            h: Tensor::zeros(&[n]),
            c: Some(Tensor::zeros(&[n])),
        })
    }
}

impl<S: Scalar> CellVars<S> for LstmVars {
    fn step(&self, g: &mut Graph<'_, S>, x: Var, state: StateVars) -> Result<StateVars> {
        let c_prev = state
            .c
            .ok_or_else(|| Error::arg("lstm: state has no cell component"))?;
        let h = state.h;
        let a_i = dense_gate(g, self.w_hi, h, self.w_xi, x, self.b_i)?;
        let i = g.sigmoid(a_i);
        let a_f = dense_gate(g, self.w_hf, h, self.w_xf, x, self.b_f)?;
        let f = g.sigmoid(a_f);
        let a_o = dense_gate(g, self.w_ho, h, self.w_xo, x, self.b_o)?;
        let o = g.sigmoid(a_o);
        let a_c = dense_gate(g, self.w_hc, h, self.w_xc, x, self.b_c)?;
        let cand = g.activation(self.candidate, a_c);
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let squashed = g.tanh(c);
        let h = g.mul(o, squashed)?;
        Ok(StateVars { h, c: Some(c) })
    }
}

/// One LSTM step from state `s`.
pub fn lstm_step<S: Scalar>(p: &LstmParams<S>, x: &Tensor<S>, s: &CellState<S>) -> Result<CellState<S>> {
    let c = s
        .c
        .as_ref()
        .ok_or_else(|| Error::arg("lstm: state has no cell component"))?;
    let mut g = Graph::new();
    let vars = p.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let hv = g.constant(s.h.clone());
    let cv = g.constant(c.clone());
    let out = vars.step(&mut g, xv, StateVars { h: hv, c: Some(cv) })?;
    Ok(CellState {
        h: g.value(out.h).clone(),
        c: out.c.map(|c| g.value(c).clone()),
    })
}
