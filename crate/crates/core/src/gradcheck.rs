//! Finite-difference verification of every gradient rule, per layer, per
//! cell and for whole networks.

use std::fmt;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::fd::{gradient_error, GRADIENT_TOLERANCE};
use crate::graph::{Activation, Graph, Var};
use crate::init::normal;
use crate::kernels::Padding;
use crate::model::{build_preset, Model};
use crate::recurrent::{unroll_vars, ConvGruVars, GruVars, LstmVars, SimpleRnnVars, StateVars};
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;
use crate::training::{logistic_loss, PROB_CLAMP};

/// Something with its own gradient rule or composition of rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Conv,
    Deconv,
    Pool,
    Dense,
    Elementwise,
    Sigmoid,
    Tanh,
    Relu,
    SimpleRnn,
    Lstm,
    Gru,
    ConvGru,
    RfcLenet,
    RfcVgg,
}

impl Component {
    pub const ALL: [Component; 14] = [
        Component::Conv,
        Component::Deconv,
        Component::Pool,
        Component::Dense,
        Component::Elementwise,
        Component::Sigmoid,
        Component::Tanh,
        Component::Relu,
        Component::SimpleRnn,
        Component::Lstm,
        Component::Gru,
        Component::ConvGru,
        Component::RfcLenet,
        Component::RfcVgg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Conv => "conv",
            Component::Deconv => "deconv",
            Component::Pool => "pool",
            Component::Dense => "dense",
            Component::Elementwise => "elementwise",
            Component::Sigmoid => "sigmoid",
            Component::Tanh => "tanh",
            Component::Relu => "relu",
            Component::SimpleRnn => "simple-rnn",
            Component::Lstm => "lstm",
            Component::Gru => "gru",
            Component::ConvGru => "conv-gru",
            Component::RfcLenet => "rfc-lenet",
            Component::RfcVgg => "rfc-vgg",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl serde::Serialize for Component {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.serialize_str(self.name())
    }
}

impl std::str::FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s || c.name().replace('-', "") == s)
            .ok_or_else(|| {
                let names: Vec<_> = Component::ALL.iter().map(|c| c.name()).collect();
                Error::arg(format!("unknown component '{s}'; valid: {}", names.join(", ")))
            })
    }
}

/// Outcome of one component's check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub component: Component,
    /// Largest [`gradient_error`] over the checked coordinates.
    pub max_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the probe crossed a relu or pooling kink.
    pub skipped: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= GRADIENT_TOLERANCE && self.checked > 0
    }
}

/// Settings shared by every check.
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub seed: u64,
    pub eps: f64,
    /// Coordinates sampled per check.
    pub max_coords: usize,
    /// Scales the analytic gradient of this component by 1.01, emulating a
    /// broken gradient rule.
    pub inject_fault: Option<Component>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            eps: 1e-6,
            max_coords: 200,
            inject_fault: None,
        }
    }
}

/// Spreads `budget` samples over tensors of the given sizes, at least one
/// per tensor; returns `(tensor, flat index)` pairs.
fn sample_coords(sizes: &[usize], budget: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let total: usize = sizes.iter().sum();
    if total <= budget {
        return sizes.iter().enumerate().flat_map(|(t, &n)| (0..n).map(move |i| (t, i))).collect();
    }
    let quota = (budget / sizes.len().max(1)).max(1);
    let mut out = Vec::new();
    for (t, &n) in sizes.iter().enumerate() {
        let k = quota.min(n);
        let mut idx: Vec<usize> = sample(rng, n, k).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| (t, i)));
    }
    out
}

/// Evaluates a scalar objective and the kink signature of its graph.
/// Gradients are only requested when the flag is set.
type Objective<'f> = dyn FnMut(&[Tensor], bool) -> Result<(f64, u64, Vec<Tensor>)> + 'f;

/// Compares analytic and central-difference gradients of `objective` at
/// `inputs` on a sample of coordinates. `objective` returns the value, the
/// kink signature and the analytic gradient of every input.
fn compare(
    component: Component,
    inputs: &mut [Tensor],
    objective: &mut Objective<'_>,
    opts: &CheckOptions,
    rng: &mut Rng,
) -> Result<CheckResult> {
    let (_, base_sig, mut analytic) = objective(inputs, true)?;
    if opts.inject_fault == Some(component) {
        for g in &mut analytic {
            *g = g.scale(1.01);
        }
    }
    let sizes: Vec<usize> = inputs.iter().map(Tensor::len).collect();
    let coords = sample_coords(&sizes, opts.max_coords, rng);
    let mut result = CheckResult {
        component,
        max_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (t, i) in coords {
        let orig = inputs[t].data()[i];
        let mut probe = |v: f64, inputs: &mut [Tensor]| -> Result<(f64, u64)> {
            inputs[t].data_mut()[i] = v;
            let (f, sig, _) = objective(inputs, false)?;
            Ok((f, sig))
        };
        let (up, sig_up) = probe(orig + opts.eps, inputs)?;
        let (down, sig_down) = probe(orig - opts.eps, inputs)?;
        inputs[t].data_mut()[i] = orig;
        if sig_up != base_sig || sig_down != base_sig {
            result.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * opts.eps);
        result.max_error = result.max_error.max(gradient_error(analytic[t].data()[i], numeric));
        result.checked += 1;
    }
    Ok(result)
}

/// Objective `⟨w, build(inputs)⟩` for a fixed random projection `w`.
fn check_graph(
    component: Component,
    mut inputs: Vec<Tensor>,
    build: impl Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
    opts: &CheckOptions,
    rng: &mut Rng,
) -> Result<CheckResult> {
    let mut projection: Option<Tensor> = None;
    let proj_seed: u64 = rng.random();
    let mut objective = |xs: &[Tensor], with_grad: bool| -> Result<(f64, u64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
        let out = build(&mut g, &vars)?;
        let w = projection.get_or_insert_with(|| normal(g.shape(out), &mut stream(proj_seed, "projection")));
        let value = g.value(out).dot(w)?;
        if !with_grad {
            return Ok((value, g.kink_signature(), Vec::new()));
        }
        let grads = g.backward(out, w)?;
        Ok((value, g.kink_signature(), vars.iter().map(|&v| grads.wrt(&g, v)).collect()))
    };
    compare(component, &mut inputs, &mut objective, opts, rng)
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    normal(shape, rng)
}

/// A graph objective that wraps a single activation.
fn check_activation(component: Component, kind: Activation, opts: &CheckOptions, rng: &mut Rng) -> Result<CheckResult> {
    let x = randn(&[3, 4, 5], rng);
    check_graph(component, vec![x], move |g, v| Ok(g.activation(kind, v[0])), opts, rng)
}

fn check_model(component: Component, name: &str, scale: f64, opts: &CheckOptions, rng: &mut Rng) -> Result<CheckResult> {
    let mut model: Model = Model::new(build_preset(name, scale)?, opts.seed)?;
    for p in model.params_mut() {
        if p.name.ends_with("bias") || p.name.ends_with(".b") || p.name.contains(".b_") {
            p.tensor = randn(p.tensor.shape(), rng).scale(0.1);
        }
    }
    let (h, w) = model.spec().input_hw;
    let frames: Vec<Tensor> = (0..model.window())
        .map(|_| Tensor::from_fn(&[1, h, w], |_| rng.random::<f64>()))
        .collect();
    let target = Tensor::from_fn(&[h, w], |_| if rng.random::<bool>() { 1.0 } else { 0.0 });
    let mut inputs: Vec<Tensor> = model.params().iter().map(|p| p.tensor.clone()).collect();
    let mut objective = |xs: &[Tensor], with_grad: bool| -> Result<(f64, u64, Vec<Tensor>)> {
        for (p, x) in model.params_mut().iter_mut().zip(xs) {
            if p.tensor != *x {
                p.tensor = x.clone();
            }
        }
        let mut g = Graph::new();
        let rec = model.record(&mut g, &frames)?;
        let (loss, dpred) = logistic_loss(g.value(rec.output), &target, PROB_CLAMP)?;
        if !with_grad {
            return Ok((loss, g.kink_signature(), Vec::new()));
        }
        let grads = g.backward(rec.output, &dpred)?;
        let sig = g.kink_signature();
        Ok((loss, sig, rec.params.iter().map(|&v| grads.wrt(&g, v)).collect()))
    };
    compare(component, &mut inputs, &mut objective, opts, rng)
}

/// Runs the check of one component.
pub fn check(component: Component, opts: &CheckOptions) -> Result<CheckResult> {
    let rng = &mut stream(opts.seed, &format!("gradcheck/{component}"));
    match component {
        Component::Conv => {
            let inputs = vec![randn(&[2, 6, 7], rng), randn(&[3, 2, 3, 3], rng), randn(&[3], rng)];
            check_graph(
                component,
                inputs,
                |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, Padding::total(3), Padding::total(1)),
                opts,
                rng,
            )
        }
        Component::Deconv => {
            let inputs = vec![randn(&[2, 3, 4], rng), randn(&[2, 3, 4, 4], rng)];
            check_graph(component, inputs, |g, v| g.transposed_conv2d(v[0], v[1], 2, (7, 9)), opts, rng)
        }
        Component::Pool => {
            let inputs = vec![randn(&[2, 7, 7], rng)];
            check_graph(
                component,
                inputs,
                |g, v| {
                    let a = g.maxpool2d(v[0], 3, 2)?;
                    let b = g.maxpool2d(v[0], 2, 2)?;
                    let (a, b) = (g.flatten(a), g.flatten(b));
                    let head = g.reshape(b, &[2, 9])?;
                    let tail = g.reshape(a, &[2, 9])?;
                    g.add(head, tail)
                },
                opts,
                rng,
            )
        }
        Component::Dense => {
            let inputs = vec![randn(&[4, 5], rng), randn(&[5], rng), randn(&[4], rng)];
            check_graph(component, inputs, |g, v| g.dense(v[0], v[1], v[2]), opts, rng)
        }
        Component::Elementwise => {
            let inputs = vec![randn(&[2, 3], rng), randn(&[2, 3], rng)];
            check_graph(
                component,
                inputs,
                |g, v| {
                    let p = g.mul(v[0], v[1])?;
                    let s = g.sub(p, v[0])?;
                    let a = g.add(s, v[1])?;
                    let sq = g.mul(a, v[0])?;
                    Ok(g.flatten(sq))
                },
                opts,
                rng,
            )
        }
        Component::Sigmoid => check_activation(component, Activation::Sigmoid, opts, rng),
        Component::Tanh => check_activation(component, Activation::Tanh, opts, rng),
        Component::Relu => check_activation(component, Activation::Relu, opts, rng),
        Component::SimpleRnn => {
            let (n, m, steps) = (3, 2, 4);
            let mut inputs = vec![
                randn(&[n, n], rng).scale(0.6),
                randn(&[n, m], rng),
                randn(&[2, n], rng),
                randn(&[n], rng),
            ];
            inputs.extend((0..steps).map(|_| randn(&[m], rng)));
            check_graph(
                component,
                inputs,
                |g, v| {
                    let vars = SimpleRnnVars {
                        theta: v[0],
                        theta_x: v[1],
                        theta_y: v[2],
                        activation: Activation::Tanh,
                    };
                    let h0 = StateVars { h: v[3], c: None };
                    Ok(unroll_vars(g, &vars, &v[4..], h0)?.1)
                },
                opts,
                rng,
            )
        }
        Component::Lstm => {
            let (n, m, steps) = (4, 3, 3);
            let mut inputs = Vec::new();
            for _ in 0..4 {
                inputs.push(randn(&[n, m], rng));
                inputs.push(randn(&[n, n], rng).scale(0.5));
                inputs.push(randn(&[n], rng));
            }
            inputs.push(randn(&[n], rng));
            inputs.push(randn(&[n], rng));
            inputs.extend((0..steps).map(|_| randn(&[m], rng)));
            check_graph(
                component,
                inputs,
                |g, v| {
                    let vars = LstmVars {
                        w_xi: v[0],
                        w_hi: v[1],
                        b_i: v[2],
                        w_xf: v[3],
                        w_hf: v[4],
                        b_f: v[5],
                        w_xo: v[6],
                        w_ho: v[7],
                        b_o: v[8],
                        w_xc: v[9],
                        w_hc: v[10],
                        b_c: v[11],
                        candidate: Activation::Sigmoid,
                    };
                    let s0 = StateVars { h: v[12], c: Some(v[13]) };
                    let (states, out) = unroll_vars(g, &vars, &v[14..], s0)?;
                    let c = states.last().and_then(|s| s.c).expect("lstm state has a cell");
                    let both = g.add(out, c)?;
                    Ok(both)
                },
                opts,
                rng,
            )
        }
        Component::Gru => {
            let (n, m, steps) = (4, 3, 4);
            let mut inputs = Vec::new();
            for _ in 0..3 {
                inputs.push(randn(&[n, n], rng).scale(0.5));
                inputs.push(randn(&[n, m], rng));
                inputs.push(randn(&[n], rng));
            }
            inputs.push(randn(&[n], rng));
            inputs.extend((0..steps).map(|_| randn(&[m], rng)));
            check_graph(
                component,
                inputs,
                |g, v| {
                    let vars = GruVars::from_slice(&v[..9])?;
                    Ok(unroll_vars(g, &vars, &v[10..], StateVars { h: v[9], c: None })?.1)
                },
                opts,
                rng,
            )
        }
        Component::ConvGru => {
            let (c, f, k, steps) = (2, 3, 3, 3);
            let mut inputs = Vec::new();
            for _ in 0..3 {
                inputs.push(randn(&[f, f, k, k], rng).scale(0.3));
                inputs.push(randn(&[f, c, k, k], rng).scale(0.3));
                inputs.push(randn(&[f], rng));
            }
            inputs.push(randn(&[f, 5, 5], rng));
            inputs.extend((0..steps).map(|_| randn(&[c, 5, 5], rng)));
            check_graph(
                component,
                inputs,
                |g, v| {
                    let vars = ConvGruVars::from_slice(&v[..9], k, k)?;
                    Ok(unroll_vars(g, &vars, &v[10..], StateVars { h: v[9], c: None })?.1)
                },
                opts,
                rng,
            )
        }
        Component::RfcLenet => check_model(component, "rfc-lenet", 1.0, opts, rng),
        Component::RfcVgg => check_model(component, "rfc-vgg", 0.25, opts, rng),
    }
}

/// Checks `components` in order.
pub fn run(components: &[Component], opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    components.iter().map(|&c| check(c, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in Component::ALL {
            assert_eq!(c.name().parse::<Component>().unwrap(), c);
        }
        assert_eq!("ConvGru".parse::<Component>().unwrap(), Component::ConvGru);
        assert!("lenet".parse::<Component>().is_err());
    }

    #[test]
    fn layers_and_cells_pass() {
        let opts = CheckOptions::default();
        for c in &Component::ALL[..12] {
            let r = check(*c, &opts).unwrap();
            println!("{c}: {:.3e} over {} ({} skipped)", r.max_error, r.checked, r.skipped);
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn networks_pass() {
        for c in [Component::RfcLenet, Component::RfcVgg] {
            let r = check(c, &CheckOptions::default()).unwrap();
            println!("{c}: {:.3e} over {} ({} skipped)", r.max_error, r.checked, r.skipped);
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let opts = CheckOptions {
            inject_fault: Some(Component::Gru),
            ..Default::default()
        };
        assert!(!check(Component::Gru, &opts).unwrap().passed());
        assert!(check(Component::Lstm, &opts).unwrap().passed());
    }
}
