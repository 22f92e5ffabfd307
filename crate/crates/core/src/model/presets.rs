use crate::error::{Error, Result};
use crate::model::shapes::propagate;
use crate::model::{ArchitectureSpec, LayerKind, LayerSpec, DEFAULT_WINDOW, RESCALE_NOTE, SIGMOID_NOTE};

use LayerKind::*;

/// Names accepted by [`build_preset`].
pub const PRESETS: [&str; 6] = ["rfc-lenet", "rfc-12s", "rfc-vgg", "fc-lenet", "fc-12s", "fc-vgg"];

/// Shrinks extents and channel widths by `scale`; single-channel layers stay
/// single-channel.
struct Scaler(f64);

impl Scaler {
    fn size(&self, n: usize) -> usize {
        ((n as f64 * self.0).round() as usize).max(1)
    }

    fn width(&self, d: usize) -> usize {
        if d == 1 {
            1
        } else {
            self.size(d)
        }
    }
}

/// One of the published networks (or its baseline without the recurrent
/// layer), shrunk by `scale ∈ (0, 1]`.
pub fn build_preset(name: &str, scale: f64) -> Result<ArchitectureSpec> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::arg(format!("scale must lie in (0, 1], got {scale}")));
    }
    let sc = Scaler(scale);
    let mut spec = match name.to_ascii_lowercase().as_str() {
        "rfc-lenet" | "fc-lenet" => lenet(&sc),
        "rfc-12s" | "fc-12s" => twelve_s(&sc)?,
        "rfc-vgg" | "fc-vgg" => vgg(&sc),
        _ => {
            return Err(Error::arg(format!(
                "unknown preset '{name}'; valid presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    fit_padding(&mut spec)?;
    if name.to_ascii_lowercase().starts_with("fc-") {
        spec.name = format!("fc-{}", &spec.name[4..]);
        spec.layers.retain(|l| !l.kind.is_recurrent());
        for l in &mut spec.layers {
            l.inside_recurrent_node = false;
            if l.kind == Rescale {
                l.kind = Sigmoid;
            }
        }
        for n in &mut spec.notes {
            if n == RESCALE_NOTE {
                *n = SIGMOID_NOTE.into();
            }
        }
    }
    Ok(spec)
}

/// Raises the padding of any convolution whose window no longer fits the
/// shrunken map to the minimum that yields a 1-pixel output.
fn fit_padding(spec: &mut ArchitectureSpec) -> Result<()> {
    for i in 0..spec.layers.len() {
        let LayerKind::Conv { f, s, p, d } = spec.layers[i].kind else {
            continue;
        };
        let prefix = ArchitectureSpec {
            layers: spec.layers[..i].to_vec(),
            notes: vec![],
            ..spec.clone()
        };
        let table = propagate(&prefix)?;
        let &[_, h, w] = table.output() else {
            continue;
        };
        let need = f.saturating_sub(h.min(w));
        if need > p {
            spec.layers[i].kind = Conv { f, s, p: need, d };
            spec.notes.push(format!(
                "at this scale layer {i} ({}) sees a {h}×{w} map; padding raised to P({need})",
                LayerKind::Conv { f, s, p, d }
            ));
        }
    }
    Ok(())
}

/// Marks every layer before the recurrent one as inside the recurrent node.
fn assemble(name: &str, input_hw: (usize, usize), kinds: Vec<LayerKind>, notes: Vec<String>) -> ArchitectureSpec {
    let r = kinds.iter().position(|k| k.is_recurrent()).unwrap_or(kinds.len());
    ArchitectureSpec {
        name: name.into(),
        input_hw,
        layers: kinds
            .into_iter()
            .enumerate()
            .map(|(i, kind)| LayerSpec {
                kind,
                inside_recurrent_node: i < r,
            })
            .collect(),
        window: DEFAULT_WINDOW,
        notes,
    }
}

fn lenet(sc: &Scaler) -> ArchitectureSpec {
    let (h, w) = (sc.size(28), sc.size(28));
    let kinds = vec![
        Conv { f: 5, s: 1, p: 10, d: sc.width(20) },
        Relu,
        Pool { k: 2, s: 2 },
        Conv { f: 5, s: 1, p: 0, d: sc.width(50) },
        Relu,
        Pool { k: 2, s: 2 },
        Conv { f: 3, s: 1, p: 2, d: sc.width(500) },
        Relu,
        Conv { f: 1, s: 1, p: 0, d: 1 },
        Deconv { f: 10, s: 4 },
        Flatten,
        Gru { hidden: h * w },
        Rescale,
    ];
    let notes = vec![
        "Conv F(3) D(500) gets P(2) (none listed) so the coarse map keeps the 6×6 size from which DeConv F(10) S(4) reaches 28×28; without it the map is 4×4 and upsamples only to 22×22".into(),
        RESCALE_NOTE.into(),
    ];
    assemble("rfc-lenet", (h, w), kinds, notes)
}

/// Smallest map that DeConv F(f) S(s) upsamples to at least `n`.
fn coarse_extent(n: usize, f: usize, s: usize) -> usize {
    if n <= f {
        1
    } else {
        (n - f).div_ceil(s) + 1
    }
}

fn twelve_s(sc: &Scaler) -> Result<ArchitectureSpec> {
    let (h, w) = (sc.size(120), sc.size(180));
    let hidden = sc.width(100);
    let kinds = vec![
        Conv { f: 5, s: 3, p: 10, d: sc.width(20) },
        Relu,
        Pool { k: 2, s: 2 },
        Conv { f: 5, s: 1, p: 0, d: sc.width(50) },
        Relu,
        Pool { k: 2, s: 2 },
        Conv { f: 3, s: 1, p: 0, d: sc.width(500) },
        Relu,
        Conv { f: 1, s: 1, p: 0, d: 1 },
        Flatten,
    ];
    let mut prefix = assemble("rfc-12s", (h, w), kinds, vec![]);
    fit_padding(&mut prefix)?;
    let natural = propagate(&prefix)?.output()[0];
    let mut kinds: Vec<LayerKind> = prefix.layers.iter().map(|l| l.kind).collect();
    let mut notes = prefix.notes;
    if natural != hidden {
        kinds.push(Dense { out: hidden });
        notes.push(format!(
            "Dense D({hidden}) projects the flattened {natural}-value coarse map onto the GRU state size"
        ));
    }
    kinds.push(Gru { hidden });
    let (ch, cw) = (coarse_extent(h, 10, 4), coarse_extent(w, 10, 4));
    if ch * cw != hidden {
        kinds.push(Dense { out: ch * cw });
        notes.push(format!(
            "Dense D({}) and Unflatten 1×{ch}×{cw} map the GRU state onto the coarse map that DeConv F(10) S(4) upsamples to {h}×{w}",
            ch * cw
        ));
    }
    kinds.push(Unflatten { c: 1, h: ch, w: cw });
    kinds.push(Deconv { f: 10, s: 4 });
    kinds.push(Sigmoid);
    notes.push(SIGMOID_NOTE.into());
    Ok(assemble("rfc-12s", (h, w), kinds, notes))
}

fn vgg(sc: &Scaler) -> ArchitectureSpec {
    let (h, w) = (sc.size(240), sc.size(360));
    let d256 = sc.width(256);
    let kinds = vec![
        Conv { f: 11, s: 4, p: 40, d: sc.width(64) },
        Relu,
        Pool { k: 3, s: 2 },
        Conv { f: 5, s: 1, p: 2, d: d256 },
        Relu,
        Pool { k: 3, s: 1 },
        Conv { f: 3, s: 1, p: 2, d: d256 },
        Relu,
        Conv { f: 3, s: 1, p: 2, d: d256 },
        Relu,
        Conv { f: 3, s: 1, p: 2, d: d256 },
        Relu,
        Conv { f: 3, s: 1, p: 2, d: sc.width(512) },
        Conv { f: 3, s: 1, p: 2, d: sc.width(128) },
        ConvGru { f: 3, d: sc.width(128) },
        Conv { f: 1, s: 1, p: 0, d: 1 },
        Deconv { f: 20, s: 8 },
        Sigmoid,
    ];
    let notes = vec![
        "Pool 3×3 strides set to 2 then 1 (unlisted); the total stride 4·2 then matches DeConv S(8)".into(),
        "the five F(3) convolutions use P(2), i.e. size-preserving padding, in place of the listed P(1) or none; reading P(1) as one row in total, the map would shrink to 22×37 and DeConv F(20) S(8) would reach only 188×308".into(),
        SIGMOID_NOTE.into(),
    ];
    assemble("rfc-vgg", (h, w), kinds, notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::infer_shapes;

    #[test]
    fn every_preset_is_a_dense_prediction() {
        for name in PRESETS {
            for scale in [1.0, 0.75, 0.5, 0.3, 0.25] {
                let spec = build_preset(name, scale).unwrap();
                let t = infer_shapes(&spec).unwrap_or_else(|e| panic!("{name}@{scale}: {e}"));
                let (h, w) = spec.input_hw;
                assert!(t.output() == [1, h, w] || t.output() == [h * w], "{name}@{scale}");
            }
        }
    }

    #[test]
    fn rfc_lenet_ends_with_full_resolution_gru() {
        let s = build_preset("rfc-lenet", 1.0).unwrap();
        assert_eq!(s.input_hw, (28, 28));
        let kinds: Vec<_> = s.layers.iter().map(|l| l.kind).collect();
        assert_eq!(kinds[kinds.len() - 4..], [Deconv { f: 10, s: 4 }, Flatten, Gru { hidden: 784 }, Rescale]);
    }

    #[test]
    fn rfc_12s_recurs_before_upsampling() {
        let s = build_preset("rfc-12s", 1.0).unwrap();
        let t = infer_shapes(&s).unwrap();
        let r = s.recurrent_index().unwrap();
        assert_eq!(s.layers[r].kind, Gru { hidden: 100 });
        assert!(s.layers[..r].iter().any(|l| l.kind == Flatten));
        assert!(s.layers[r..].iter().any(|l| l.kind == Deconv { f: 10, s: 4 }));
        assert_eq!(t.rows[0].output, [20, 42, 62]);
    }

    #[test]
    fn baseline_is_deletion_of_the_recurrent_layer() {
        let rfc = build_preset("rfc-lenet", 1.0).unwrap();
        let fc = build_preset("fc-lenet", 1.0).unwrap();
        let kept: Vec<_> = rfc
            .layers
            .iter()
            .map(|l| if l.kind == Rescale { Sigmoid } else { l.kind })
            .filter(|k| !k.is_recurrent())
            .collect();
        assert_eq!(fc.layers.iter().map(|l| l.kind).collect::<Vec<_>>(), kept);
        assert_eq!(infer_shapes(&fc).unwrap().output(), &[784]);
    }

    #[test]
    fn unknown_name_lists_presets() {
        let err = build_preset("rfc-resnet", 1.0).unwrap_err().to_string();
        assert!(err.contains("rfc-lenet") && err.contains("fc-vgg"));
        assert!(build_preset("rfc-lenet", 0.0).is_err());
        assert!(build_preset("rfc-lenet", 1.5).is_err());
    }
}
