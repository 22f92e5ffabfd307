use std::fmt;

use crate::error::{Error, Result};
use crate::kernels::window_out;
use crate::model::{ArchitectureSpec, LayerKind};
use crate::tensor::shape_str;

/// One row of a shape table.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeRow {
    pub index: usize,
    pub kind: LayerKind,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
    pub inside_recurrent_node: bool,
    /// Deconvolution crop, when one applies.
    pub note: Option<String>,
}

/// Every intermediate shape of an architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeTable {
    pub name: String,
    pub input: Vec<usize>,
    pub rows: Vec<ShapeRow>,
    pub notes: Vec<String>,
}

impl ShapeTable {
    pub fn output(&self) -> &[usize] {
        self.rows.last().map_or(&self.input, |r| &r.output)
    }

    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }
}

impl fmt::Display for ShapeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}  input {}", self.name, shape_str(&self.input))?;
        writeln!(
            f,
            "{:>3}  {:<4} {:<28} {:>14} {:>14} {:>10}  note",
            "#", "node", "layer", "in", "out", "params"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>3}  {:<4} {:<28} {:>14} {:>14} {:>10}  {}",
                r.index,
                if r.inside_recurrent_node { "R" } else { "" },
                r.kind.to_string(),
                shape_str(&r.input),
                shape_str(&r.output),
                r.params,
                r.note.as_deref().unwrap_or("")
            )?;
        }
        let out = self.output();
        if out.len() == 1 && self.input.len() == 3 {
            let map = [1, self.input[1], self.input[2]];
            writeln!(f, "output {} read as {}  params {}", shape_str(out), shape_str(&map), self.total_params())?;
        } else {
            writeln!(f, "output {}  params {}", shape_str(out), self.total_params())?;
        }
        for n in &self.notes {
            writeln!(f, "deviation: {n}")?;
        }
        Ok(())
    }
}

/// Output shape and parameter count of one layer, or a message describing
/// why the input does not fit.
fn layer_shape(
    kind: LayerKind,
    input: &[usize],
    target: (usize, usize),
) -> std::result::Result<(Vec<usize>, usize, Option<String>), String> {
    let map = || match *input {
        [c, h, w] => Ok((c, h, w)),
        _ => Err("expects a c×h×w map".to_string()),
    };
    let vector = || match *input {
        [n] => Ok(n),
        _ => Err("expects a vector".to_string()),
    };
    let positive = |name: &str, v: usize| {
        if v == 0 {
            Err(format!("{name} must be positive"))
        } else {
            Ok(())
        }
    };
    Ok(match kind {
        LayerKind::Conv { f, s, p, d } => {
            let (c, h, w) = map()?;
            positive("D", d)?;
            match (window_out(h, p, f, s), window_out(w, p, f, s)) {
                (Some(oh), Some(ow)) => (vec![d, oh, ow], d * c * f * f + d, None),
                _ => return Err(format!("{f}×{f} window with P({p}) does not fit")),
            }
        }
        LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Rescale => (input.to_vec(), 0, None),
        LayerKind::Pool { k, s } => {
            let (c, h, w) = map()?;
            match (window_out(h, 0, k, s), window_out(w, 0, k, s)) {
                (Some(oh), Some(ow)) => (vec![c, oh, ow], 0, None),
                _ => return Err(format!("{k}×{k} window does not fit")),
            }
        }
        LayerKind::Deconv { f, s } => {
            let (c, h, w) = map()?;
            positive("S", s)?;
            positive("F", f)?;
            let (rh, rw) = ((h - 1) * s + f, (w - 1) * s + f);
            if rh < target.0 || rw < target.1 {
                return Err(format!(
                    "upsampled extent {rh}×{rw} is smaller than the target {}×{}",
                    target.0, target.1
                ));
            }
            let note = format!(
                "raw {rh}×{rw} cropped to {}×{} (offset {},{})",
                target.0,
                target.1,
                (rh - target.0) / 2,
                (rw - target.1) / 2
            );
            (vec![c, target.0, target.1], c * c * f * f, Some(note))
        }
        LayerKind::Flatten => (vec![input.iter().product()], 0, None),
        LayerKind::Dense { out } => {
            let n = vector()?;
            positive("D", out)?;
            (vec![out], out * n + out, None)
        }
        LayerKind::Unflatten { c, h, w } => {
            let n = vector()?;
            if n != c * h * w {
                return Err(format!("cannot reshape {n} values into {c}×{h}×{w}"));
            }
            (vec![c, h, w], 0, None)
        }
        LayerKind::Gru { hidden } => {
            let m = vector()?;
            positive("N", hidden)?;
            (vec![hidden], 3 * (hidden * hidden + hidden * m + hidden), None)
        }
        LayerKind::ConvGru { f, d } => {
            let (c, h, w) = map()?;
            positive("D", d)?;
            if f % 2 == 0 {
                return Err(format!("kernel F({f}) must be odd to preserve spatial size"));
            }
            let kk = f * f;
            (vec![d, h, w], 3 * (d * d * kk + d * c * kk + d), None)
        }
    })
}

/// Propagates shapes through the layer list. Fails on the first layer whose
/// input does not fit, on a misplaced recurrent layer, or when the output is
/// not a dense prediction of the input size.
pub fn infer_shapes(spec: &ArchitectureSpec) -> Result<ShapeTable> {
    let table = propagate(spec)?;
    let (h, w) = spec.input_hw;
    if table.output() != table.input.as_slice() && table.output() != [h * w] {
        return Err(Error::dim(format!(
            "{}: output {} is not a dense prediction of the {} input",
            spec.name,
            shape_str(table.output()),
            shape_str(&table.input)
        )));
    }
    Ok(table)
}

/// Shape propagation without the dense-prediction check.
pub(crate) fn propagate(spec: &ArchitectureSpec) -> Result<ShapeTable> {
    let (h, w) = spec.input_hw;
    if h == 0 || w == 0 {
        return Err(Error::arg(format!("{}: input size {h}×{w} must be positive", spec.name)));
    }
    if spec.window == 0 {
        return Err(Error::arg(format!("{}: window length must be at least 1", spec.name)));
    }
    check_recurrent_node(spec)?;
    let input = vec![1, h, w];
    let mut shape = input.clone();
    let mut rows = Vec::with_capacity(spec.layers.len());
    for (index, layer) in spec.layers.iter().enumerate() {
        let (output, params, note) = layer_shape(layer.kind, &shape, (h, w)).map_err(|msg| {
            Error::dim(format!(
                "{}: layer {index} ({}) with input {}: {msg}",
                spec.name,
                layer.kind,
                shape_str(&shape)
            ))
        })?;
        rows.push(ShapeRow {
            index,
            kind: layer.kind,
            input: std::mem::replace(&mut shape, output.clone()),
            output,
            params,
            inside_recurrent_node: layer.inside_recurrent_node,
            note,
        });
    }
    Ok(ShapeTable {
        name: spec.name.clone(),
        input,
        rows,
        notes: spec.notes.clone(),
    })
}

fn check_recurrent_node(spec: &ArchitectureSpec) -> Result<()> {
    let recurrent: Vec<usize> = (0..spec.layers.len())
        .filter(|&i| spec.layers[i].kind.is_recurrent())
        .collect();
    if recurrent.len() > 1 {
        return Err(Error::arg(format!(
            "{}: only one recurrent layer is supported, found {} (layers {recurrent:?})",
            spec.name,
            recurrent.len()
        )));
    }
    if let Some(&r) = recurrent.first() {
        for (i, l) in spec.layers.iter().enumerate() {
            if l.inside_recurrent_node != (i < r) {
                return Err(Error::arg(format!(
                    "{}: layer {i} ({}) must be {} the recurrent node; the node holds exactly the layers before the recurrent layer",
                    spec.name,
                    l.kind,
                    if i < r { "inside" } else { "outside" }
                )));
            }
        }
    }
    Ok(())
}
