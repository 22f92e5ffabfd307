//! Declarative network construction: layer lists, shape inference, the
//! built-in presets and the windowed forward pass.

mod network;
mod parse;
mod presets;
mod shapes;

use std::fmt;

pub use network::{Model, Param, Recorded};
pub use parse::parse_architecture;
pub use presets::{build_preset, PRESETS};
pub use shapes::{infer_shapes, ShapeRow, ShapeTable};

pub(crate) const SIGMOID_NOTE: &str = "terminal sigmoid appended so the output is a probability map";
pub(crate) const RESCALE_NOTE: &str =
    "terminal (x+1)/2 appended so the GRU state in (-1, 1) is read as a probability map";

/// One layer in Table 1 notation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// `f × f` convolution, stride `s`, `p` total zero padding, `d` filters.
    Conv { f: usize, s: usize, p: usize, d: usize },
    Relu,
    /// Max pooling with a `k × k` window and stride `s`.
    Pool { k: usize, s: usize },
    /// Transposed convolution, cropped to the network's input size.
    Deconv { f: usize, s: usize },
    Flatten,
    /// Fully connected layer producing `out` values.
    Dense { out: usize },
    /// Reshape of a vector into a `c × h × w` map.
    Unflatten { c: usize, h: usize, w: usize },
    Gru { hidden: usize },
    ConvGru { f: usize, d: usize },
    Sigmoid,
    /// `(x + 1) / 2`, mapping a recurrent state in `(-1, 1)` onto `(0, 1)`.
    Rescale,
}

impl LayerKind {
    pub fn is_recurrent(self) -> bool {
        matches!(self, LayerKind::Gru { .. } | LayerKind::ConvGru { .. })
    }

    /// Layers whose output is already a probability map.
    pub fn is_output(self) -> bool {
        matches!(self, LayerKind::Sigmoid | LayerKind::Rescale)
    }

    /// Architecture-file spelling, the inverse of the parser.
    pub fn to_text(self) -> String {
        match self {
            LayerKind::Conv { f, s, p, d } => format!("conv F={f} S={s} P={p} D={d}"),
            LayerKind::Relu => "relu".into(),
            LayerKind::Pool { k, s } => format!("pool K={k} S={s}"),
            LayerKind::Deconv { f, s } => format!("deconv F={f} S={s}"),
            LayerKind::Flatten => "flatten".into(),
            LayerKind::Dense { out } => format!("dense D={out}"),
            LayerKind::Unflatten { c, h, w } => format!("unflatten C={c} H={h} W={w}"),
            LayerKind::Gru { hidden } => format!("gru N={hidden}"),
            LayerKind::ConvGru { f, d } => format!("convgru F={f} D={d}"),
            LayerKind::Sigmoid => "sigmoid".into(),
            LayerKind::Rescale => "rescale".into(),
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerKind::Conv { f, s, p, d } => {
                write!(out, "Conv: F({f})")?;
                if s != 1 {
                    write!(out, ", S({s})")?;
                }
                if p != 0 {
                    write!(out, ", P({p})")?;
                }
                write!(out, ", D({d})")
            }
            LayerKind::Relu => write!(out, "Relu"),
            LayerKind::Pool { k, s } if k == s => write!(out, "Pool {k}×{k}"),
            LayerKind::Pool { k, s } => write!(out, "Pool {k}×{k}, S({s})"),
            LayerKind::Deconv { f, s } => write!(out, "DeConv: F({f}), S({s})"),
            LayerKind::Flatten => write!(out, "Flatten"),
            LayerKind::Dense { out: n } => write!(out, "Dense: D({n})"),
            LayerKind::Unflatten { c, h, w } => write!(out, "Unflatten: {c}×{h}×{w}"),
            LayerKind::Gru { hidden } => write!(out, "GRU: W({hidden}×{hidden})"),
            LayerKind::ConvGru { f, d } => write!(out, "ConvGRU: F({f}), D({d})"),
            LayerKind::Sigmoid => write!(out, "Sigmoid"),
            LayerKind::Rescale => write!(out, "Rescale (x+1)/2"),
        }
    }
}

/// A layer plus whether it belongs to the per-frame part of the network
/// that feeds the recurrent layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub inside_recurrent_node: bool,
}

/// A complete network description.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureSpec {
    pub name: String,
    /// Input height and width; frames are single-channel.
    pub input_hw: (usize, usize),
    pub layers: Vec<LayerSpec>,
    /// Sliding-window length L.
    pub window: usize,
    /// Departures from the published layer chain.
    pub notes: Vec<String>,
}

/// Default sliding-window length.
pub const DEFAULT_WINDOW: usize = 3;

impl ArchitectureSpec {
    /// Index of the Gru / ConvGru layer, if any.
    pub fn recurrent_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| l.kind.is_recurrent())
    }

    pub fn is_recurrent(&self) -> bool {
        self.recurrent_index().is_some()
    }

    /// Architecture-file text that parses back to this spec (notes excepted).
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "name {}\ninput H={} W={}\nwindow L={}\n",
            self.name, self.input_hw.0, self.input_hw.1, self.window
        );
        for n in &self.notes {
            s.push_str(&format!("note {n}\n"));
        }
        let mut inside = false;
        for l in &self.layers {
            if l.inside_recurrent_node != inside {
                s.push_str(if l.inside_recurrent_node {
                    "@recurrent-node-begin\n"
                } else {
                    "@recurrent-node-end\n"
                });
                inside = l.inside_recurrent_node;
            }
            s.push_str(&l.kind.to_text());
            s.push('\n');
        }
        if inside {
            s.push_str("@recurrent-node-end\n");
        }
        s
    }
}
