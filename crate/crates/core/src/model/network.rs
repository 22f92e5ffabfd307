use std::ops::Range;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::init;
use crate::model::{infer_shapes, ArchitectureSpec, LayerKind, ShapeTable};
use crate::recurrent::{unroll_vars, ConvGruParams, ConvGruVars, GruParams, GruVars, StateVars};
use crate::rng::stream;
use crate::tensor::{shape_str, Scalar, Tensor};

/// A learnable tensor and its registry entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S: Scalar = f64> {
    /// `"<layer>.<kind>.<slot>"`, e.g. `"0.conv.weight"`.
    pub name: String,
    pub layer: usize,
    pub tensor: Tensor<S>,
    /// Frozen parameters enter the graph as constants and get no gradient.
    pub frozen: bool,
}

/// An instantiated architecture.
#[derive(Clone, Debug)]
pub struct Model<S: Scalar = f64> {
    spec: ArchitectureSpec,
    table: ShapeTable,
    params: Vec<Param<S>>,
    slots: Vec<Range<usize>>,
}

/// Graph handles of one recorded window.
#[derive(Clone, Debug)]
pub struct Recorded {
    /// Probability map, `1 × H × W`.
    pub output: Var,
    /// One handle per registry entry, in registry order.
    pub params: Vec<Var>,
}

fn tensors_for<S: Scalar>(
    kind: LayerKind,
    input: &[usize],
    seed: Option<u64>,
    layer: usize,
) -> Vec<(&'static str, Tensor<S>)> {
    let rng = &mut stream(seed.unwrap_or(0), &format!("init/{layer}"));
    let c = input.first().copied().unwrap_or(0);
    let random = seed.is_some();
    match kind {
        LayerKind::Conv { f, d, .. } if !random => vec![
            ("conv.weight", Tensor::zeros(&[d, c, f, f])),
            ("conv.bias", Tensor::zeros(&[d])),
        ],
        LayerKind::Dense { out } if !random => vec![
            ("dense.weight", Tensor::zeros(&[out, c])),
            ("dense.bias", Tensor::zeros(&[out])),
        ],
        LayerKind::Conv { f, d, .. } => vec![
            ("conv.weight", init::uniform_fan(&[d, c, f, f], c * f * f, d * f * f, rng)),
            ("conv.bias", Tensor::zeros(&[d])),
        ],
        LayerKind::Deconv { f, s } => vec![("deconv.weight", init::bilinear_kernel(c, f, s))],
        LayerKind::Dense { out } => vec![
            ("dense.weight", init::uniform_fan(&[out, c], c, out, rng)),
            ("dense.bias", Tensor::zeros(&[out])),
        ],
        LayerKind::Gru { hidden } => {
            let p = if random { GruParams::<S>::init(c, hidden, rng) } else { GruParams::zeros(c, hidden) };
            const SLOTS: [&str; 9] = [
                "gru.w_hz", "gru.w_xz", "gru.b_z", "gru.w_hr", "gru.w_xr", "gru.b_r", "gru.w_h",
                "gru.w_x", "gru.b",
            ];
            SLOTS.into_iter().zip(p.tensors().map(Tensor::clone)).collect()
        }
        LayerKind::ConvGru { f, d } => {
            let p = if random { ConvGruParams::<S>::init(c, d, f, rng) } else { ConvGruParams::zeros(c, d, f, f) };
            const SLOTS: [&str; 9] = [
                "convgru.w_hz", "convgru.w_xz", "convgru.b_z", "convgru.w_hr", "convgru.w_xr",
                "convgru.b_r", "convgru.w_h", "convgru.w_x", "convgru.b",
            ];
            SLOTS.into_iter().zip(p.tensors().map(Tensor::clone)).collect()
        }
        LayerKind::Relu
        | LayerKind::Pool { .. }
        | LayerKind::Flatten
        | LayerKind::Unflatten { .. }
        | LayerKind::Sigmoid
        | LayerKind::Rescale => vec![],
    }
}

impl<S: Scalar> Model<S> {
    /// Instantiates `spec` with parameters drawn from the `init/<layer>`
    /// streams of `seed`.
    pub fn new(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        Self::build(spec, Some(seed))
    }

    /// Instantiates `spec` with all-zero parameters, for restoring saved
    /// weights.
    pub fn zeroed(spec: ArchitectureSpec) -> Result<Self> {
        Self::build(spec, None)
    }

    fn build(spec: ArchitectureSpec, seed: Option<u64>) -> Result<Self> {
        let table = infer_shapes(&spec)?;
        let mut params = Vec::new();
        let mut slots = Vec::with_capacity(spec.layers.len());
        for (i, row) in table.rows.iter().enumerate() {
            let start = params.len();
            for (slot, tensor) in tensors_for(row.kind, &row.input, seed, i) {
                params.push(Param {
                    name: format!("{i}.{slot}"),
                    layer: i,
                    tensor,
                    frozen: false,
                });
            }
            slots.push(start..params.len());
        }
        Ok(Self {
            spec,
            table,
            params,
            slots,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &ShapeTable {
        &self.table
    }

    pub fn window(&self) -> usize {
        self.spec.window
    }

    /// Changes the sliding-window length.
    pub fn set_window(&mut self, window: usize) -> Result<()> {
        if window == 0 {
            return Err(Error::arg("window length must be at least 1"));
        }
        self.spec.window = window;
        Ok(())
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Registry entries of one layer.
    pub fn layer_params(&self, layer: usize) -> &[Param<S>] {
        &self.params[self.slots[layer].clone()]
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Freezes the parameters of the first `n` layers that have any.
    pub fn freeze_prefix(&mut self, n: usize) {
        let layers: Vec<usize> = (0..self.slots.len())
            .filter(|&i| !self.slots[i].is_empty())
            .take(n)
            .collect();
        for p in &mut self.params {
            if layers.contains(&p.layer) {
                p.frozen = true;
            }
        }
    }

    /// Freezes or unfreezes every parameter of layers `..end`.
    pub fn set_frozen_before(&mut self, end: usize, frozen: bool) {
        for p in &mut self.params {
            if p.layer < end {
                p.frozen = frozen;
            }
        }
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            spec: self.spec.clone(),
            table: self.table.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    layer: p.layer,
                    tensor: p.tensor.cast(),
                    frozen: p.frozen,
                })
                .collect(),
            slots: self.slots.clone(),
        }
    }

    fn check_window(&self, window: &[Tensor<S>]) -> Result<()> {
        if window.len() != self.spec.window {
            return Err(Error::dim(format!(
                "{}: window has {} frames, expected L = {}",
                self.spec.name,
                window.len(),
                self.spec.window
            )));
        }
        let (h, w) = self.spec.input_hw;
        for (i, f) in window.iter().enumerate() {
            if f.shape() != [1, h, w] {
                return Err(Error::dim(format!(
                    "{}: frame {i} is {}, expected 1×{h}×{w}",
                    self.spec.name,
                    shape_str(f.shape())
                )));
            }
        }
        Ok(())
    }

    fn apply(&self, g: &mut Graph<'_, S>, layer: usize, x: Var, vars: &[Var]) -> Result<Var> {
        let p = &vars[self.slots[layer].clone()];
        match self.spec.layers[layer].kind {
            LayerKind::Conv { s, p: pad, .. } => g.conv2d_total_pad(x, p[0], Some(p[1]), s, pad),
            LayerKind::Relu => Ok(g.relu(x)),
            LayerKind::Sigmoid => Ok(g.sigmoid(x)),
            LayerKind::Rescale => {
                let shape = g.shape(x).to_vec();
                let one = g.constant(Tensor::full(&shape, S::one()));
                let half = g.constant(Tensor::full(&shape, S::from_f64_lossy(0.5)));
                let shifted = g.add(x, one)?;
                g.mul(shifted, half)
            }
            LayerKind::Pool { k, s } => g.maxpool2d(x, k, s),
            LayerKind::Deconv { s, .. } => g.transposed_conv2d(x, p[0], s, self.spec.input_hw),
            LayerKind::Flatten => Ok(g.flatten(x)),
            LayerKind::Dense { .. } => g.dense(p[0], x, p[1]),
            LayerKind::Unflatten { c, h, w } => g.reshape(x, &[c, h, w]),
            LayerKind::Gru { .. } | LayerKind::ConvGru { .. } => Err(Error::arg(format!(
                "{}: recurrent layer {layer} applied outside the unroll",
                self.spec.name
            ))),
        }
    }

    /// Records the window's forward pass. Layers before the recurrent layer
    /// run on every frame with shared weights, the recurrent layer threads
    /// their outputs from a zero state, and the remaining layers run on the
    /// final state. Baselines without a recurrent layer see only the last
    /// frame.
    pub fn record<'a>(&'a self, g: &mut Graph<'a, S>, window: &'a [Tensor<S>]) -> Result<Recorded> {
        self.check_window(window)?;
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if p.frozen {
                    g.constant_ref(&p.tensor)
                } else {
                    g.param_ref(&p.tensor)
                }
            })
            .collect();
        let n = self.spec.layers.len();
        let mut x = match self.spec.recurrent_index() {
            None => {
                let mut x = g.constant_ref(&window[window.len() - 1]);
                for layer in 0..n {
                    x = self.apply(g, layer, x, &vars)?;
                }
                x
            }
            Some(r) => {
                let mut per_frame = Vec::with_capacity(window.len());
                for frame in window {
                    let mut x = g.constant_ref(frame);
                    for layer in 0..r {
                        x = self.apply(g, layer, x, &vars)?;
                    }
                    per_frame.push(x);
                }
                let slot = &vars[self.slots[r].clone()];
                let h0 = g.constant(Tensor::zeros(&self.table.rows[r].output));
                let initial = StateVars { h: h0, c: None };
                let mut x = match self.spec.layers[r].kind {
                    LayerKind::Gru { .. } => {
                        unroll_vars(g, &GruVars::from_slice(slot)?, &per_frame, initial)?.1
                    }
                    LayerKind::ConvGru { f, .. } => {
                        unroll_vars(g, &ConvGruVars::from_slice(slot, f, f)?, &per_frame, initial)?.1
                    }
                    _ => unreachable!("recurrent_index points at a recurrent layer"),
                };
                for layer in r + 1..n {
                    x = self.apply(g, layer, x, &vars)?;
                }
                x
            }
        };
        let (h, w) = self.spec.input_hw;
        if g.shape(x).len() == 1 {
            x = g.reshape(x, &[1, h, w])?;
        }
        Ok(Recorded { output: x, params: vars })
    }

    /// Probability map (`1 × H × W`) for the last frame of `window`.
    pub fn forward_window(&self, window: &[Tensor<S>]) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let rec = self.record(&mut g, window)?;
        Ok(g.value(rec.output).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_preset;

    fn frames(n: usize, h: usize, w: usize, seed: u64) -> Vec<Tensor> {
        let rng = &mut stream(seed, "frames");
        (0..n).map(|_| init::normal(&[1, h, w], rng)).collect()
    }

    #[test]
    fn registry_matches_shape_table() {
        for name in crate::model::PRESETS {
            let m: Model = Model::new(build_preset(name, 0.25).unwrap(), 1).unwrap();
            assert_eq!(m.param_count(), m.shapes().total_params(), "{name}");
            let mut names: Vec<_> = m.params().iter().map(|p| &p.name).collect();
            names.dedup();
            assert_eq!(names.len(), m.params().len());
        }
    }

    #[test]
    fn vgg_quarter_scale_output() {
        let m: Model = Model::new(build_preset("rfc-vgg", 0.25).unwrap(), 3).unwrap();
        let out = m.forward_window(&frames(3, 60, 90, 4)).unwrap();
        assert_eq!(out.shape(), &[1, 60, 90]);
        assert!(out.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn baseline_ignores_earlier_frames() {
        let m: Model = Model::new(build_preset("fc-lenet", 0.5).unwrap(), 2).unwrap();
        let mut a = frames(3, 14, 14, 5);
        let mut b = frames(3, 14, 14, 6);
        b[2] = a[2].clone();
        let ya = m.forward_window(&a).unwrap();
        assert_eq!(ya, m.forward_window(&b).unwrap());
        a[2] = b[0].clone();
        assert_ne!(ya, m.forward_window(&a).unwrap());
    }

    #[test]
    fn window_and_frame_errors() {
        let m: Model = Model::new(build_preset("rfc-lenet", 0.5).unwrap(), 2).unwrap();
        assert!(matches!(m.forward_window(&frames(2, 14, 14, 1)), Err(Error::Dimension(_))));
        assert!(matches!(m.forward_window(&frames(3, 14, 15, 1)), Err(Error::Dimension(_))));
    }
}
