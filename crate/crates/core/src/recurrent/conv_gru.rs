use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::init;
use crate::kernels::Padding;
use crate::recurrent::gru::blend;
use crate::recurrent::{leaf, CellState, CellVars, RecurrentCell, StateVars};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Convolutional GRU: the GRU equations with every matrix product replaced by
/// a size-preserving convolution. Input-side kernels are `f × c × kh × kw`,
/// hidden-side kernels `f × f × kh × kw`, biases one scalar per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGruParams<S: Scalar = f64> {
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

impl<S: Scalar> ConvGruParams<S> {
    pub fn zeros(channels: usize, filters: usize, kh: usize, kw: usize) -> Self {
        let wx = || Tensor::zeros(&[filters, channels, kh, kw]);
        let wh = || Tensor::zeros(&[filters, filters, kh, kw]);
        Self {
            w_hz: wh(),
            w_xz: wx(),
            b_z: Tensor::zeros(&[filters]),
            w_hr: wh(),
            w_xr: wx(),
            b_r: Tensor::zeros(&[filters]),
            w_h: wh(),
            w_x: wx(),
            b: Tensor::zeros(&[filters]),
        }
    }

    /// Every kernel uniform in ±sqrt(6/(fan_in+fan_out)), biases zero.
    pub fn init(channels: usize, filters: usize, k: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(channels, filters, k, k);
        let kk = k * k;
        for w in [&mut p.w_xz, &mut p.w_xr, &mut p.w_x] {
            *w = init::uniform_fan(&[filters, channels, k, k], channels * kk, filters * kk, rng);
        }
        for w in [&mut p.w_hz, &mut p.w_hr, &mut p.w_h] {
            *w = init::uniform_fan(&[filters, filters, k, k], filters * kk, filters * kk, rng);
        }
        p
    }

    pub fn filters(&self) -> usize {
        self.b.len()
    }

    pub fn kernel_hw(&self) -> (usize, usize) {
        (self.w_x.shape()[2], self.w_x.shape()[3])
    }

    pub fn tensors(&self) -> [&Tensor<S>; 9] {
        [
            &self.w_hz, &self.w_xz, &self.b_z, &self.w_hr, &self.w_xr, &self.b_r, &self.w_h,
            &self.w_x, &self.b,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGruVars {
    pub w_hz: Var,
    pub w_xz: Var,
    pub b_z: Var,
    pub w_hr: Var,
    pub w_xr: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub w_x: Var,
    pub b: Var,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGruVars {
    /// Builds handles from nine vars in the order of [`ConvGruParams::tensors`].
    pub fn from_slice(v: &[Var], kh: usize, kw: usize) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::dim(format!(
                "conv-gru: kernel {kh}×{kw} must be odd-sized to preserve spatial size"
            )));
        }
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
                kh,
                kw,
            }),
            _ => Err(Error::arg(format!(
                "conv-gru: expected 9 parameter slots, got {}",
                v.len()
            ))),
        }
    }

    fn conv<S: Scalar>(&self, g: &mut Graph<'_, S>, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        g.conv2d(
            input,
            kernel,
            bias,
            1,
            Padding::total(self.kh - 1),
            Padding::total(self.kw - 1),
        )
    }

    fn gate<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        w_h: Var,
        h: Var,
        w_x: Var,
        x: Var,
        b: Var,
    ) -> Result<Var> {
        let hh = self.conv(g, h, w_h, None)?;
        let xx = self.conv(g, x, w_x, Some(b))?;
        g.add(hh, xx)
    }
}

impl<S: Scalar> RecurrentCell<S> for ConvGruParams<S> {
    type Vars = ConvGruVars;

    fn bind<'a>(&'a self, g: &mut Graph<'a, S>, trainable: bool) -> ConvGruVars {
        let v: Vec<Var> = self.tensors().into_iter().map(|t| leaf(g, t, trainable)).collect();
        let (kh, kw) = self.kernel_hw();
        // Even kernels are rejected at step time.
        ConvGruVars {
            kh,
            kw,
            ..ConvGruVars::from_slice(&v, 1, 1).expect("nine slots")
        }
    }

    fn zero_state(&self, input_shape: &[usize]) -> Result<CellState<S>> {
        match input_shape {
            [_, h, w] => Ok(CellState::hidden(Tensor::zeros(&[self.filters(), *h, *w]))),
            s => Err(Error::dim(format!("conv-gru: expected c×h×w input, got {s:?}"))),
        }
    }
}

impl<S: Scalar> CellVars<S> for ConvGruVars {
    fn step(&self, g: &mut Graph<'_, S>, x: Var, state: StateVars) -> Result<StateVars> {
        if self.kh.is_multiple_of(2) || self.kw.is_multiple_of(2) {
            return Err(Error::dim(format!(
                "conv-gru: kernel {}×{} must be odd-sized to preserve spatial size",
                self.kh, self.kw
            )));
        }
        let h = state.h;
        let (xs, hs) = (g.shape(x).to_vec(), g.shape(h).to_vec());
        if xs.len() != 3 || hs.len() != 3 || xs[1..] != hs[1..] {
            return Err(Error::dim(format!(
                "conv-gru: input {xs:?} and state {hs:?} must share spatial size"
            )));
        }
        let a_z = self.gate(g, self.w_hz, h, self.w_xz, x, self.b_z)?;
        let z = g.sigmoid(a_z);
        let a_r = self.gate(g, self.w_hr, h, self.w_xr, x, self.b_r)?;
        let r = g.sigmoid(a_r);
        let rh = g.mul(r, h)?;
        let a_h = self.gate(g, self.w_h, rh, self.w_x, x, self.b)?;
        let cand = g.tanh(a_h);
        Ok(StateVars {
            h: blend(g, z, h, cand)?,
            c: None,
        })
    }
}

/// One Conv-GRU step; output has the shape of `h_prev`.
pub fn conv_gru_step<S: Scalar>(
    p: &ConvGruParams<S>,
    x: &Tensor<S>,
    h_prev: &Tensor<S>,
) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let vars = p.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let hv = g.constant(h_prev.clone());
    let s = vars.step(&mut g, xv, StateVars { h: hv, c: None })?;
    Ok(g.value(s.h).clone())
}
