use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use rfcn::data::{
    load_dataset_dir, read_idx_glyphs, save_image, split, synthesize_moving_sprites, write_sequence_dir, GlyphSource,
    MovingSpriteConfig,
};
use rfcn::gradcheck::{check, CheckOptions, Component};
use rfcn::metrics::{aggregate, score};
use rfcn::rng::derive_seed;
use rfcn::tensor::Scalar;
use rfcn::training::{
    load_checkpoint, predict_windows, save_checkpoint, train as fit, train_decoupled, Adadelta, EpochRecord,
    LearningMode, TrainConfig,
};
use rfcn::{build_preset, infer_shapes, parse_architecture, ArchitectureSpec, FrameSequence, Model, Tensor};

use crate::config::write_resolved;
use crate::{
    CliError, EvalArgs, GradcheckArgs, InspectArgs, ModelArgs, Precision, PredictArgs, Subset, SynthArgs, TrainArgs,
};

pub const CHECKPOINT_NAME: &str = "checkpoint.rfcn";
pub const HISTORY_NAME: &str = "history.jsonl";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn resolve_spec(m: &ModelArgs) -> Result<Option<ArchitectureSpec>, CliError> {
    let spec = match (&m.preset, &m.arch) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--preset and --arch are mutually exclusive".into())),
        (Some(p), None) => build_preset(p, m.scale)?,
        (None, Some(path)) => {
            if m.scale != 1.0 {
                return Err(CliError::Usage("--scale applies to presets only".into()));
            }
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            parse_architecture(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        (None, None) => return Ok(None),
    };
    Ok(Some(spec))
}

fn apply_window<S: Scalar>(model: &mut Model<S>, window: Option<usize>) -> Result<(), CliError> {
    if let Some(l) = window {
        model.set_window(l)?;
    }
    Ok(())
}

fn check_frame_size<S: Scalar>(spec: &ArchitectureSpec, seqs: &[FrameSequence<S>]) -> Result<(), CliError> {
    match seqs.iter().find(|s| s.hw() != spec.input_hw) {
        Some(s) => {
            let (h, w) = s.hw();
            Err(CliError::Usage(format!(
                "sequence {} has {h}×{w} frames but {} expects {}×{}",
                s.id, spec.name, spec.input_hw.0, spec.input_hw.1
            )))
        }
        None => Ok(()),
    }
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let glyphs = match &a.glyphs {
        Some(p) => GlyphSource::Glyphs(read_idx_glyphs(p)?),
        None => GlyphSource::Procedural,
    };
    write_resolved(&a.out, "synth", a)?;
    let mut sequences = Vec::new();
    for i in 0..a.seqs {
        let seed = derive_seed(a.seed, &format!("sequence/{i}"));
        let cfg = MovingSpriteConfig {
            height: a.height,
            width: a.width,
            length: a.len,
            sprites: a.sprites,
            max_speed: a.max_speed,
            velocity: None,
            threshold: a.threshold,
            seed,
            glyphs: glyphs.clone(),
        };
        let seq = synthesize_moving_sprites(&cfg)?;
        let name = format!("seq_{i:03}");
        write_sequence_dir(&seq, &a.out.join(&name))?;
        sequences.push(json!({ "dir": name, "seed": seed, "frames": seq.len() }));
    }
    let manifest = json!({
        "generator": "moving-sprites",
        "height": a.height,
        "width": a.width,
        "length": a.len,
        "sprites": a.sprites,
        "max_speed": a.max_speed,
        "threshold": a.threshold,
        "seed": a.seed,
        "glyphs": a.glyphs.as_ref().map(|p| p.display().to_string()),
        "seed_rule": "sequence i uses derive_seed(seed, \"sequence/i\")",
        "sequences": sequences,
    });
    let path = a.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    println!("wrote {} sequences to {}", a.seqs, a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let spec = resolve_spec(&a.model)?.ok_or_else(|| CliError::Usage("train needs --preset or --arch".into()))?;
    match (a.mode, &a.fc_checkpoint) {
        (LearningMode::Decoupled, None) => {
            return Err(CliError::Usage("--mode decoupled needs --fc-checkpoint".into()));
        }
        (LearningMode::EndToEnd, Some(_)) => {
            return Err(CliError::Usage("--fc-checkpoint is only used with --mode decoupled".into()));
        }
        _ => {}
    }
    let seqs = load_dataset_dir(&a.data)?;
    check_frame_size(&spec, &seqs)?;
    let train_seqs = match a.split {
        Some(policy) => split(&seqs, policy, a.seed)?.train,
        None => seqs,
    };
    if train_seqs.is_empty() {
        return Err(CliError::Usage("the training split is empty".into()));
    }
    write_resolved(&a.out, "train", a)?;
    match a.precision {
        Precision::F64 => run_train::<f64>(a, spec, &train_seqs),
        Precision::F32 => run_train::<f32>(a, spec, &train_seqs),
    }
}

fn run_train<S: Scalar>(a: &TrainArgs, spec: ArchitectureSpec, seqs: &[FrameSequence]) -> Result<(), CliError> {
    let seqs: Vec<FrameSequence<S>> = seqs.iter().map(FrameSequence::cast).collect();
    let mut model = Model::<S>::new(spec, a.seed)?;
    apply_window(&mut model, a.model.window)?;
    let cfg = TrainConfig {
        max_epochs: a.epochs,
        window: model.window(),
        seed: a.seed,
        mode: a.mode,
        clamp: a.clamp,
        rho: a.rho,
        eps: a.eps,
        freeze_prefix: a.freeze_prefix,
        eval_every: a.eval_every,
        threshold: a.threshold,
    };
    let mut opt = Adadelta::for_model(&model, a.rho, a.eps);

    let history_path = a.out.join(HISTORY_NAME);
    let mut history = BufWriter::new(File::create(&history_path).map_err(|e| io_err(&history_path, e))?);
    let mut write_err = None;
    let on_epoch = |r: &EpochRecord| {
        let line = serde_json::to_string(r).expect("records serialize");
        if let Err(e) = writeln!(history, "{line}").and_then(|()| history.flush()) {
            write_err.get_or_insert(e);
        }
        match r.f_measure {
            Some(f) => eprintln!("epoch {:>4}  loss {:.6}  F {:.4}", r.epoch, r.loss, f),
            None => eprintln!("epoch {:>4}  loss {:.6}", r.epoch, r.loss),
        }
    };
    match &a.fc_checkpoint {
        Some(path) => {
            let fc = load_checkpoint(path)?.model::<S>()?;
            train_decoupled(&fc, &mut model, &mut opt, &seqs, None, &cfg, on_epoch)?;
        }
        None => {
            fit(&mut model, &mut opt, &seqs, None, &cfg, on_epoch)?;
        }
    }
    if let Some(e) = write_err {
        return Err(io_err(&history_path, e));
    }
    let ckpt = a.out.join(CHECKPOINT_NAME);
    save_checkpoint(&ckpt, &model, Some(&opt))?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn load_model(checkpoint: &Path, m: &ModelArgs) -> Result<Model, CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut model = match resolve_spec(m)? {
        Some(spec) => {
            let mut model = Model::new(spec, 0)?;
            ckpt.restore(&mut model)?;
            model
        }
        None => ckpt.model()?,
    };
    apply_window(&mut model, m.window)?;
    Ok(model)
}

fn file_stem_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint, &a.model)?;
    let seqs = load_dataset_dir(&a.data)?;
    check_frame_size(model.spec(), &seqs)?;
    let subset = a.subset.unwrap_or(if a.split.is_some() { Subset::Test } else { Subset::All });
    let chosen = match (a.split, subset) {
        (_, Subset::All) => seqs,
        (None, _) => return Err(CliError::Usage("--subset train|test needs --split".into())),
        (Some(policy), Subset::Train) => split(&seqs, policy, a.seed)?.train,
        (Some(policy), Subset::Test) => split(&seqs, policy, a.seed)?.test,
    };
    if chosen.is_empty() {
        return Err(CliError::Usage(format!("the {subset:?} split is empty").to_lowercase()));
    }
    if let Some(dir) = &a.dump_masks {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut reports = Vec::new();
    predict_windows(&model, &chosen, |seq, w, pred| {
        reports.push(score(pred, w.target, a.threshold)?);
        if let Some(dir) = &a.dump_masks {
            let mask = pred.map(|v| if v > a.threshold { 1.0 } else { 0.0 });
            save_image(&dir.join(format!("{}_{:04}.pgm", file_stem_safe(&seq.id), w.last())), &mask)?;
        }
        Ok(())
    })?;
    let total = aggregate(&reports, a.aggregation)?;
    let mut out = serde_json::to_value(total).expect("report serializes");
    out["windows"] = json!(reports.len());
    out["aggregation"] = json!(a.aggregation);
    out["threshold"] = json!(a.threshold);
    println!("{out}");
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint, &ModelArgs { preset: None, arch: None, scale: 1.0, window: None })?;
    if a.frames.len() != model.window() {
        return Err(CliError::Usage(format!(
            "{} takes windows of {} frames, got {}",
            model.spec().name,
            model.window(),
            a.frames.len()
        )));
    }
    let frames = a.frames.iter().map(|p| rfcn::data::load_image(p)).collect::<rfcn::Result<Vec<Tensor>>>()?;
    let prob = model.forward_window(&frames)?;
    let mask = prob.map(|v| if v > a.threshold { 1.0 } else { 0.0 });
    save_image(&a.out, if a.probabilities { &prob } else { &mask })?;
    println!("{}", json!({ "out": a.out.display().to_string(), "foreground_pixels": mask.sum() as u64 }));
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let components = if a.component.is_empty() { Component::ALL.to_vec() } else { a.component.clone() };
    let opts = CheckOptions {
        seed: a.seed,
        eps: a.step,
        max_coords: a.max_coords,
        inject_fault: a.inject_fault,
    };
    println!("{:<12} {:>10} {:>8} {:>8}  result", "component", "max error", "checked", "skipped");
    let mut failed = Vec::new();
    for c in components {
        let r = check(c, &opts)?;
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{:<12} {:>10.3e} {:>8} {:>8}  {verdict}", c.name(), r.max_error, r.checked, r.skipped);
        if !r.passed() {
            failed.push(c.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn inspect(a: &InspectArgs) -> Result<(), CliError> {
    let mut specs = Vec::new();
    if let Some(path) = &a.checkpoint {
        specs.push(load_checkpoint(path)?.model::<f64>()?.spec().clone());
    }
    if let Some(spec) = resolve_spec(&ModelArgs { preset: None, arch: a.arch.clone(), scale: 1.0, window: None })? {
        specs.push(spec);
    }
    let presets: Vec<&str> = if a.preset.is_empty() && specs.is_empty() {
        rfcn::model::PRESETS.to_vec()
    } else {
        a.preset.iter().map(String::as_str).collect()
    };
    for p in presets {
        specs.push(build_preset(p, a.scale)?);
    }
    for (i, spec) in specs.iter().enumerate() {
        if i > 0 {
            println!();
        }
        if a.text {
            print!("{}", spec.to_text());
        } else {
            print!("{}", infer_shapes(spec)?);
        }
    }
    Ok(())
}
