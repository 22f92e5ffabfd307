use rfcn::data::{synthesize_moving_sprites, MovingSpriteConfig};
use rfcn::init::normal;
use rfcn::metrics::Aggregation;
use rfcn::rng::stream;
use rfcn::training::{evaluate, train, train_decoupled, window_gradients, Adadelta, TrainConfig, PROB_CLAMP};
use rfcn::{build_preset, FrameSequence, Model, Tensor};

fn sprites(h: usize, w: usize, n: usize, length: usize, seed: u64) -> Vec<FrameSequence> {
    (0..n)
        .map(|i| {
            synthesize_moving_sprites(&MovingSpriteConfig {
                height: h,
                width: w,
                length,
                sprites: 1,
                seed: seed + i as u64,
                ..Default::default()
            })
            .unwrap()
        })
        .collect()
}

fn model(name: &str, scale: f64, seed: u64) -> Model {
    Model::new(build_preset(name, scale).unwrap(), seed).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        ..Default::default()
    }
}

/// Trains on one fixed window and returns the lowest loss reached.
fn overfit(m: &mut Model, frames: &[Tensor], target: &Tensor, epochs: usize) -> f64 {
    let mut opt = Adadelta::for_model(m, 0.95, 1e-6);
    let mut best = f64::INFINITY;
    for _ in 0..epochs {
        let (loss, grads) = window_gradients(m, frames, target, PROB_CLAMP).unwrap();
        best = best.min(loss);
        if best < 0.05 {
            break;
        }
        for (k, (p, g)) in m.params_mut().iter_mut().zip(&grads).enumerate() {
            if let Some(g) = g {
                opt.update(k, &mut p.tensor, g).unwrap();
            }
        }
    }
    best
}

fn random_window(m: &Model, seed: u64) -> (Vec<Tensor>, Tensor) {
    let (h, w) = m.spec().input_hw;
    let rng = &mut stream(seed, "window");
    let frames = (0..m.window()).map(|_| normal::<f64>(&[1, h, w], rng).map(|v| v.abs().min(1.0))).collect();
    let target = Tensor::from_fn(&[h, w], |i| if (i / w + i % w) % 3 == 0 { 1.0 } else { 0.0 });
    (frames, target)
}

/// The first window of a sprite sequence; canvases below 16 pixels are
/// cropped from a 16×16 one.
fn sprite_window(m: &Model, seed: u64) -> (Vec<Tensor>, Tensor) {
    let (h, w) = m.spec().input_hw;
    let (ch, cw) = (h.max(16), w.max(16));
    let seq = &sprites(ch, cw, 1, m.window(), seed)[0];
    let crop = |t: &Tensor| Tensor::from_fn(&[h, w], |i| t.data()[(i / w) * cw + i % w]);
    let frames = seq.frames.iter().map(|f| crop(f).reshape(&[1, h, w]).unwrap()).collect();
    (frames, crop(seq.masks.last().unwrap()))
}

#[test]
fn presets_overfit_one_window() {
    for name in ["fc-lenet", "fc-12s", "rfc-12s", "fc-vgg", "rfc-vgg"] {
        let mut m = model(name, 0.25, 1);
        let (frames, target) = sprite_window(&m, 1);
        let best = overfit(&mut m, &frames, &target, 500);
        assert!(best < 0.05, "{name}: {best}");
    }
}

#[test]
fn rescaled_gru_output_overfits_one_window() {
    let mut m = model("rfc-lenet", 0.25, 1);
    let (frames, target) = sprite_window(&m, 1);
    let probs = m.forward_window(&frames).unwrap();
    assert!(probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
    let best = overfit(&mut m, &frames, &target, 500);
    assert!(best < 0.05, "{best}");
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let data = sprites(16, 16, 2, 5, 0);
    let mut m = model("rfc-lenet", 16.0 / 28.0, 3);
    let before = m.params().to_vec();
    let mut opt = Adadelta::for_model(&m, 0.95, 1e-6);
    let history = train(&mut m, &mut opt, &data, None, &quick(0), |_| {}).unwrap();
    assert!(history.is_empty());
    assert_eq!(m.params(), &before[..]);
}

#[test]
fn training_reduces_the_loss_and_logs_metrics() {
    let data = sprites(16, 16, 2, 6, 4);
    let mut m = model("fc-lenet", 16.0 / 28.0, 3);
    let mut opt = Adadelta::for_model(&m, 0.95, 1e-6);
    let cfg = TrainConfig {
        eval_every: 3,
        ..quick(8)
    };
    let mut seen = 0;
    let history = train(&mut m, &mut opt, &data, None, &cfg, |_| seen += 1).unwrap();
    assert_eq!(seen, 8);
    assert!(history.last().unwrap().loss < history[0].loss);
    let logged: Vec<_> = history.iter().map(|r| r.f_measure.is_some()).collect();
    assert_eq!(logged, [false, false, true, false, false, true, false, true]);
    let final_f = history.last().unwrap().f_measure.unwrap();
    let again = evaluate(&m, &data, cfg.threshold, Aggregation::Micro).unwrap();
    assert!(again.f_measure >= final_f - 1e-9);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let data = sprites(30, 45, 2, 5, 9);
    let run = || {
        let mut m = model("rfc-12s", 0.25, 2);
        let mut opt = Adadelta::for_model(&m, 0.95, 1e-6);
        let h = train(&mut m, &mut opt, &data, None, &quick(3), |_| {}).unwrap();
        (h, m.params().to_vec(), opt.eg2)
    };
    let (ha, pa, oa) = run();
    let (hb, pb, ob) = run();
    for (a, b) in ha.iter().zip(&hb) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }
    assert_eq!(pa, pb);
    assert_eq!(oa, ob);
}

#[test]
fn decoupled_training_only_moves_the_recurrent_head() {
    let data = sprites(16, 16, 2, 5, 2);
    let scale = 16.0 / 28.0;
    let mut fc = model("fc-lenet", scale, 7);
    let mut opt = Adadelta::for_model(&fc, 0.95, 1e-6);
    train(&mut fc, &mut opt, &data, None, &quick(2), |_| {}).unwrap();

    let mut rfc = model("rfc-lenet", scale, 8);
    let r = rfc.spec().recurrent_index().unwrap();
    let mut opt = Adadelta::for_model(&rfc, 0.95, 1e-6);
    let start_head: Vec<_> = rfc.params().iter().filter(|p| p.layer >= r).cloned().collect();
    train_decoupled(&fc, &mut rfc, &mut opt, &data, None, &quick(2), |_| {}).unwrap();

    for p in fc.params() {
        let q = rfc.param(&p.name).expect("prefix layers keep their names");
        assert!(p.layer < r);
        assert_eq!(p.tensor, q.tensor, "{}", p.name);
        assert!(q.frozen);
    }
    for (before, after) in start_head.iter().zip(rfc.params().iter().filter(|p| p.layer >= r)) {
        assert!(!after.frozen);
        assert_ne!(before.tensor, after.tensor, "{}", after.name);
    }
}

#[test]
fn decoupled_and_end_to_end_differ() {
    let data = sprites(16, 16, 2, 5, 2);
    let scale = 16.0 / 28.0;
    let mut fc = model("fc-lenet", scale, 7);
    let mut opt = Adadelta::for_model(&fc, 0.95, 1e-6);
    train(&mut fc, &mut opt, &data, None, &quick(2), |_| {}).unwrap();

    let mut dec = model("rfc-lenet", scale, 8);
    let mut opt = Adadelta::for_model(&dec, 0.95, 1e-6);
    train_decoupled(&fc, &mut dec, &mut opt, &data, None, &quick(2), |_| {}).unwrap();
    let mut ee = model("rfc-lenet", scale, 8);
    let mut opt = Adadelta::for_model(&ee, 0.95, 1e-6);
    train(&mut ee, &mut opt, &data, None, &quick(2), |_| {}).unwrap();
    assert_ne!(dec.params()[0].tensor, ee.params()[0].tensor);
}

#[test]
fn decoupled_rejects_mismatched_baselines() {
    let data = sprites(16, 16, 1, 4, 0);
    let fc = model("fc-12s", 0.25, 1);
    let mut rfc = model("rfc-lenet", 16.0 / 28.0, 1);
    let mut opt = Adadelta::for_model(&rfc, 0.95, 1e-6);
    assert!(train_decoupled(&fc, &mut rfc, &mut opt, &data, None, &quick(1), |_| {}).is_err());
    let other_rfc = model("rfc-lenet", 16.0 / 28.0, 2);
    assert!(train_decoupled(&other_rfc, &mut rfc, &mut opt, &data, None, &quick(1), |_| {}).is_err());
}

#[test]
fn shared_conv_weights_see_every_frame() {
    let m = model("rfc-lenet", 0.5, 4);
    let (frames, target) = random_window(&m, 2);
    let (_, g) = window_gradients(&m, &frames, &target, PROB_CLAMP).unwrap();
    let first = &m.params()[0];
    assert!(first.name.starts_with("0.conv"));
    let g0 = g[0].clone().unwrap();
    assert!(g0.max_abs() > 0.0);
    let mut changed = frames.clone();
    changed[0] = changed[0].scale(0.5);
    let (_, g2) = window_gradients(&m, &changed, &target, PROB_CLAMP).unwrap();
    assert_ne!(g2[0].as_ref().unwrap(), &g0);

    let mut fc = model("fc-lenet", 0.5, 4);
    fc.set_window(1).unwrap();
    let (_, a) = window_gradients(&fc, &frames[2..], &target, PROB_CLAMP).unwrap();
    let mut fc3 = fc.clone();
    fc3.set_window(3).unwrap();
    let (_, b) = window_gradients(&fc3, &changed, &target, PROB_CLAMP).unwrap();
    assert_eq!(a, b);
}
