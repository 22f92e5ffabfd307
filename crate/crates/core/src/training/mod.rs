//! Logistic loss, Adadelta and the training loops.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{sliding_windows, FrameSequence, SlidingWindow};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{aggregate, score, Aggregation, MetricsReport};
use crate::model::Model;
use crate::rng::stream;
use crate::tensor::{shape_str, Scalar, Tensor};

/// Default probability clamp of the loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of `pred` against a binary `target`, with `p`
/// clamped to `[ε_p, 1 − ε_p]`, and its gradient with respect to `pred`.
/// The gradient is taken at the clamped probability, so it stays nonzero
/// for predictions outside the clamp range.
/// A leading singleton channel on either side is ignored.
pub fn logistic_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, clamp: f64) -> Result<(f64, Tensor<S>)> {
    if pred.len() != target.len() || squeeze(pred.shape()) != squeeze(target.shape()) {
        return Err(Error::dim(format!(
            "logistic_loss: prediction {} does not match target {}",
            shape_str(pred.shape()),
            shape_str(target.shape())
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.data().iter().zip(target.data()) {
        let y = y.as_f64();
        if y != 0.0 && y != 1.0 {
            return Err(Error::arg(format!("logistic_loss: target value {y} is not binary")));
        }
        let raw = p.as_f64();
        let q = raw.clamp(clamp, 1.0 - clamp);
        loss -= if y == 1.0 { q.ln() } else { (1.0 - q).ln() };
        let g = if y == 1.0 { -1.0 / q } else { 1.0 / (1.0 - q) };
        grad.push(S::from_f64_lossy(g / n));
    }
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

fn squeeze(shape: &[usize]) -> &[usize] {
    let lead = shape.iter().take_while(|&&n| n == 1).count();
    &shape[lead.min(shape.len().saturating_sub(1))..]
}

/// Adadelta accumulators, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta<S: Scalar = f64> {
    pub rho: f64,
    pub eps: f64,
    /// Running mean of squared gradients, E[g²].
    pub eg2: Vec<Tensor<S>>,
    /// Running mean of squared updates, E[Δx²].
    pub edx2: Vec<Tensor<S>>,
}

impl<S: Scalar> Adadelta<S> {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, rho: f64, eps: f64) -> Self {
        let eg2: Vec<Tensor<S>> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            rho,
            eps,
            edx2: eg2.clone(),
            eg2,
        }
    }

    /// Accumulators shaped like the model's registry.
    pub fn for_model(model: &Model<S>, rho: f64, eps: f64) -> Self {
        Self::new(model.params().iter().map(|p| p.tensor.shape()), rho, eps)
    }

    /// One update of parameter `i`:
    /// `E[g²] ← ρE[g²] + (1−ρ)g²`, `Δx = −√(E[Δx²]+ε)/√(E[g²]+ε)·g`,
    /// `E[Δx²] ← ρE[Δx²] + (1−ρ)Δx²`, `x ← x + Δx`.
    pub fn update(&mut self, i: usize, param: &mut Tensor<S>, grad: &Tensor<S>) -> Result<()> {
        let (Some(eg2), Some(edx2)) = (self.eg2.get_mut(i), self.edx2.get_mut(i)) else {
            return Err(Error::arg(format!("adadelta: no accumulator for parameter {i}")));
        };
        if param.shape() != grad.shape() || param.shape() != eg2.shape() {
            return Err(Error::dim(format!(
                "adadelta: parameter {i} is {}, gradient {}, accumulator {}",
                shape_str(param.shape()),
                shape_str(grad.shape()),
                shape_str(eg2.shape())
            )));
        }
        let rho = S::from_f64_lossy(self.rho);
        let keep = S::from_f64_lossy(1.0 - self.rho);
        let eps = S::from_f64_lossy(self.eps);
        let x = param.data_mut().iter_mut();
        for (((x, &g), a), b) in x.zip(grad.data()).zip(eg2.data_mut()).zip(edx2.data_mut()) {
            *a = rho * *a + keep * g * g;
            let dx = -((*b + eps).sqrt() / (*a + eps).sqrt()) * g;
            *b = rho * *b + keep * dx * dx;
            *x += dx;
        }
        Ok(())
    }

    /// Updates every parameter that has a gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Option<&Tensor<S>>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.eg2.len() {
            return Err(Error::dim(format!(
                "adadelta: {} parameters, {} gradients, {} accumulators",
                params.len(),
                grads.len(),
                self.eg2.len()
            )));
        }
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if let Some(g) = g {
                self.update(i, p, g)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearningMode {
    #[default]
    EndToEnd,
    /// The recurrent layer and everything after it train on top of a frozen,
    /// already trained baseline.
    Decoupled,
}

impl std::str::FromStr for LearningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "end-to-end" | "ee" => Ok(Self::EndToEnd),
            "decoupled" | "d" => Ok(Self::Decoupled),
            _ => Err(Error::arg(format!("unknown mode '{s}' (end-to-end|decoupled)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub window: usize,
    pub seed: u64,
    pub mode: LearningMode,
    /// Probability clamp ε_p of the loss.
    pub clamp: f64,
    pub rho: f64,
    pub eps: f64,
    /// Parameterized layers frozen from the start of end-to-end training.
    pub freeze_prefix: usize,
    /// Metrics are computed every `eval_every` epochs and after the last;
    /// 0 disables them.
    pub eval_every: usize,
    /// Binarization threshold of the logged metrics.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            window: crate::model::DEFAULT_WINDOW,
            seed: 0,
            mode: LearningMode::EndToEnd,
            clamp: PROB_CLAMP,
            rho: Adadelta::<f64>::DEFAULT_RHO,
            eps: Adadelta::<f64>::DEFAULT_EPS,
            freeze_prefix: 0,
            eval_every: 1,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let positive = [("clamp", self.clamp), ("rho", self.rho), ("eps", self.eps), ("threshold", self.threshold)];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::arg(format!("{name} must be positive, got {v}")));
            }
        }
        if self.rho >= 1.0 || self.threshold >= 1.0 || self.clamp >= 0.5 {
            return Err(Error::arg("rho and threshold must be below 1, clamp below 0.5"));
        }
        if self.window == 0 {
            return Err(Error::arg("window length must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's windows.
    pub loss: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_measure: Option<f64>,
    pub iou: Option<f64>,
}

/// Windows of every sequence, each tagged with its sequence index.
fn all_windows<S: Scalar>(seqs: &[FrameSequence<S>], l: usize) -> Result<Vec<(usize, SlidingWindow<'_, S>)>> {
    let mut out = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        out.extend(sliding_windows(s, l)?.into_iter().map(|w| (i, w)));
    }
    Ok(out)
}

/// Runs `visit(sequence, window, prediction)` for every window of `seqs`.
pub fn predict_windows<S: Scalar>(
    model: &Model<S>,
    seqs: &[FrameSequence<S>],
    mut visit: impl FnMut(&FrameSequence<S>, &SlidingWindow<'_, S>, &Tensor<S>) -> Result<()>,
) -> Result<()> {
    let windows = all_windows(seqs, model.window())?;
    if windows.is_empty() {
        return Err(Error::arg("no windows to evaluate"));
    }
    for (i, w) in &windows {
        let pred = model.forward_window(w.frames)?;
        visit(&seqs[*i], w, &pred)?;
    }
    Ok(())
}

/// Scores every window's prediction against its target.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    seqs: &[FrameSequence<S>],
    threshold: f64,
    mode: Aggregation,
) -> Result<MetricsReport> {
    let mut reports = Vec::new();
    predict_windows(model, seqs, |_, w, pred| {
        reports.push(score(pred, w.target, threshold)?);
        Ok(())
    })?;
    aggregate(&reports, mode)
}

/// Loss and parameter gradients of one window; frozen parameters get `None`.
pub fn window_gradients<S: Scalar>(
    model: &Model<S>,
    frames: &[Tensor<S>],
    target: &Tensor<S>,
    clamp: f64,
) -> Result<(f64, Vec<Option<Tensor<S>>>)> {
    let mut g = Graph::new();
    let rec = model.record(&mut g, frames)?;
    let (loss, dpred) = logistic_loss(g.value(rec.output), target, clamp)?;
    let mut grads = g.backward(rec.output, &dpred)?;
    let out = model
        .params()
        .iter()
        .zip(&rec.params)
        .map(|(p, &v)| if p.frozen { None } else { Some(grads.take(v).unwrap_or_else(|| Tensor::zeros(p.tensor.shape()))) })
        .collect();
    Ok((loss, out))
}

/// End-to-end training: every epoch visits all training windows in a
/// freshly seeded order with one Adadelta step per window. Metrics are
/// computed on `eval` (the training split when `None`).
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    optimizer: &mut Adadelta<S>,
    train_seqs: &[FrameSequence<S>],
    eval: Option<&[FrameSequence<S>]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    model.set_window(cfg.window)?;
    if cfg.freeze_prefix > 0 {
        model.freeze_prefix(cfg.freeze_prefix);
    }
    if optimizer.eg2.len() != model.params().len() {
        return Err(Error::dim(format!(
            "optimizer has {} accumulators, model {} parameters",
            optimizer.eg2.len(),
            model.params().len()
        )));
    }
    let order: Vec<(usize, usize)> = all_windows(train_seqs, cfg.window)?
        .iter()
        .map(|(i, w)| (*i, w.start))
        .collect();
    if order.is_empty() {
        return Err(Error::arg("training split has no windows"));
    }
    let eval_seqs = eval.unwrap_or(train_seqs);
    let l = cfg.window;
    let mut history = Vec::with_capacity(cfg.max_epochs);
    for epoch in 1..=cfg.max_epochs {
        let mut order = order.clone();
        order.shuffle(&mut stream(cfg.seed, &format!("epoch/{epoch}")));
        let mut total = 0.0;
        for &(i, start) in &order {
            let seq = &train_seqs[i];
            let (loss, grads) =
                window_gradients(model, &seq.frames[start..start + l], &seq.masks[start + l - 1], cfg.clamp)?;
            total += loss;
            for (k, (p, g)) in model.params_mut().iter_mut().zip(&grads).enumerate() {
                if let Some(g) = g {
                    optimizer.update(k, &mut p.tensor, g)?;
                }
            }
        }
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs);
        let report = if due {
            Some(evaluate(model, eval_seqs, cfg.threshold, Aggregation::Micro)?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch,
            loss: total / order.len() as f64,
            precision: report.map(|r| r.precision),
            recall: report.map(|r| r.recall),
            f_measure: report.map(|r| r.f_measure),
            iou: report.map(|r| r.iou),
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(history)
}

/// Decoupled training: the layers of `rfc` before its recurrent layer take
/// the trained baseline's weights and stay frozen; the recurrent layer and
/// everything after it train. Post-recurrent layers start from the
/// baseline's weights where shapes agree.
pub fn train_decoupled<S: Scalar>(
    fc: &Model<S>,
    rfc: &mut Model<S>,
    optimizer: &mut Adadelta<S>,
    train_seqs: &[FrameSequence<S>],
    eval: Option<&[FrameSequence<S>]>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    let Some(r) = rfc.spec().recurrent_index() else {
        return Err(Error::arg(format!("{} has no recurrent layer to train", rfc.spec().name)));
    };
    if fc.spec().is_recurrent() {
        return Err(Error::arg(format!("{} is not a baseline without recurrence", fc.spec().name)));
    }
    let fc_rows = &fc.shapes().rows;
    let rfc_rows = &rfc.shapes().rows;
    let fc_out = if r == 0 { &fc.shapes().input } else { &fc_rows.get(r - 1).ok_or_else(|| Error::dim("baseline is shorter than the recurrent node"))?.output };
    let prefix_matches = fc_rows.len() >= r && (0..r).all(|i| fc_rows[i].kind == rfc_rows[i].kind);
    if !prefix_matches || fc_out != &rfc_rows[r].input {
        return Err(Error::dim(format!(
            "recurrent head expects {}, baseline {} produces {}",
            shape_str(&rfc_rows[r].input),
            fc.spec().name,
            shape_str(fc_out)
        )));
    }
    let copies: Vec<(usize, Tensor<S>)> = fc
        .params()
        .iter()
        .filter_map(|p| {
            let layer = if p.layer < r { p.layer } else { p.layer + 1 };
            let slot = p.name.split_once('.').map(|(_, s)| s)?;
            let name = format!("{layer}.{slot}");
            let idx = rfc.params().iter().position(|q| q.name == name)?;
            (rfc.params()[idx].tensor.shape() == p.tensor.shape()).then(|| (idx, p.tensor.clone()))
        })
        .collect();
    for (idx, t) in copies {
        rfc.params_mut()[idx].tensor = t;
    }
    rfc.set_frozen_before(r, true);
    let cfg = TrainConfig {
        freeze_prefix: 0,
        ..cfg.clone()
    };
    train(rfc, optimizer, train_seqs, eval, &cfg, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let y = Tensor::<f64>::from_vec(vec![0.0, 1.0, 1.0, 0.0]);
        let (perfect, _) = logistic_loss(&y, &y, PROB_CLAMP).unwrap();
        assert!(perfect <= -(1.0f64 - 1e-7).ln() + 1e-15);
        let (half, _) = logistic_loss(&Tensor::full(&[4], 0.5), &y, PROB_CLAMP).unwrap();
        assert!((half - 2f64.ln()).abs() < 1e-15);
        assert!(logistic_loss(&Tensor::full(&[4], 0.5), &Tensor::full(&[4], 0.3), PROB_CLAMP).is_err());
        let (_, g) = logistic_loss(&Tensor::from_vec(vec![0.0, 1.0]), &Tensor::from_vec(vec![1.0, 0.0]), PROB_CLAMP).unwrap();
        assert!(g.data()[0] < -1e6 && g.data()[1] > 1e6, "{:?}", g.data());
        assert!(logistic_loss(&Tensor::full(&[3], 0.5), &y, PROB_CLAMP).is_err());
    }

    #[test]
    fn first_adadelta_step() {
        let mut opt = Adadelta::<f64>::new([&[1usize][..]], 0.95, 1e-6);
        let mut x = Tensor::from_vec(vec![0.0]);
        opt.update(0, &mut x, &Tensor::from_vec(vec![1.0])).unwrap();
        let expect = -(1e-6f64).sqrt() / (0.05f64 + 1e-6).sqrt();
        assert!((x.data()[0] - expect).abs() < 1e-15);
        assert!((x.data()[0] + 4.4721e-3).abs() < 1e-7);
    }

    #[test]
    fn null_gradient_decays_accumulators() {
        let mut opt = Adadelta::<f64>::new([&[2usize][..]], 0.95, 1e-6);
        opt.eg2[0] = Tensor::from_vec(vec![1.0, 2.0]);
        opt.edx2[0] = Tensor::from_vec(vec![3.0, 4.0]);
        let mut x = Tensor::from_vec(vec![5.0, 6.0]);
        opt.update(0, &mut x, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(x.data(), &[5.0, 6.0]);
        assert_eq!(opt.eg2[0].data(), &[0.95, 1.9]);
        assert!(opt.update(0, &mut x, &Tensor::zeros(&[3])).is_err());
    }
}
