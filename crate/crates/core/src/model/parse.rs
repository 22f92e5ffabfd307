use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ArchitectureSpec, LayerKind, LayerSpec, DEFAULT_WINDOW, RESCALE_NOTE, SIGMOID_NOTE};

/// Parses an architecture file: one layer per line in Table 1 notation
/// (`conv F=5 S=3 P=10 D=20`, `pool 2`, `convgru F=3 D=128`,
/// `deconv F=10 S=4`, ...), optional `name`, `input H= W=` and `window L=`
/// header lines, free-text `note` lines, `@recurrent-node-begin` / `@recurrent-node-end` markers and
/// `#` comments. Keywords and keys are case-insensitive.
///
/// Without markers, every layer before the recurrent layer is placed inside
/// the recurrent node. A trailing `sigmoid` is appended when missing.
pub fn parse_architecture(text: &str) -> Result<ArchitectureSpec> {
    let mut name = String::from("custom");
    let mut input_hw = None;
    let mut window = DEFAULT_WINDOW;
    let mut layers = Vec::new();
    let mut markers = false;
    let mut inside = false;
    let mut notes = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        let head = words.next().unwrap_or_default().to_ascii_lowercase();
        let rest: Vec<&str> = words.collect();
        match head.as_str() {
            "@recurrent-node-begin" | "@recurrent-node-end" => {
                if !rest.is_empty() {
                    return Err(err(format!("{head} takes no arguments")));
                }
                let begin = head.ends_with("begin");
                if begin == inside {
                    return Err(err(format!("unbalanced {head}")));
                }
                markers = true;
                inside = begin;
                continue;
            }
            "note" => {
                notes.push(line[4..].trim().to_string());
                continue;
            }
            "name" => {
                name = match rest[..] {
                    [n] => n.to_string(),
                    _ => return Err(err("name takes exactly one word".into())),
                };
                continue;
            }
            _ => {}
        }
        match parse_line(&head, &rest).map_err(err)? {
            Line::Input(h, w) => input_hw = Some((h, w)),
            Line::Window(l) => window = l,
            Line::Layer(kind) => layers.push(LayerSpec {
                kind,
                inside_recurrent_node: inside,
            }),
        }
    }
    let last = text.lines().count().max(1);
    if inside {
        return Err(Error::Parse {
            line: last,
            message: "@recurrent-node-begin without matching end".into(),
        });
    }
    let Some(input_hw) = input_hw else {
        return Err(Error::Parse {
            line: last,
            message: "missing 'input H=.. W=..' line".into(),
        });
    };
    if !markers {
        if let Some(r) = layers.iter().position(|l| l.kind.is_recurrent()) {
            for l in &mut layers[..r] {
                l.inside_recurrent_node = true;
            }
        }
    }
    match layers.last().map(|l| l.kind) {
        Some(k) if k.is_output() => {}
        Some(k) if k.is_recurrent() => {
            layers.push(LayerSpec {
                kind: LayerKind::Rescale,
                inside_recurrent_node: false,
            });
            notes.push(RESCALE_NOTE.into());
        }
        _ => {
            layers.push(LayerSpec {
                kind: LayerKind::Sigmoid,
                inside_recurrent_node: false,
            });
            notes.push(SIGMOID_NOTE.into());
        }
    }
    Ok(ArchitectureSpec {
        name,
        input_hw,
        layers,
        window,
        notes,
    })
}

enum Line {
    Input(usize, usize),
    Window(usize),
    Layer(LayerKind),
}

fn parse_line(head: &str, rest: &[&str]) -> std::result::Result<Line, String> {
    let mut keys = Keys::parse(rest)?;
    let line = match head {
        "input" => Line::Input(keys.take("H")?, keys.take("W")?),
        "window" => Line::Window(keys.take("L")?),
        "conv" => Line::Layer(LayerKind::Conv {
            f: keys.take("F")?,
            s: keys.take_or("S", 1)?,
            p: keys.take_or("P", 0)?,
            d: keys.take("D")?,
        }),
        "pool" => {
            let k = match keys.positional[..] {
                [] => keys.take("K")?,
                [k] => parse_window(k).ok_or_else(|| format!("bad pool window '{k}'"))?,
                _ => return Err("pool takes one window size".into()),
            };
            keys.positional.clear();
            Line::Layer(LayerKind::Pool {
                k,
                s: keys.take_or("S", k)?,
            })
        }
        "deconv" => Line::Layer(LayerKind::Deconv {
            f: keys.take("F")?,
            s: keys.take("S")?,
        }),
        "dense" => Line::Layer(LayerKind::Dense { out: keys.take("D")? }),
        "unflatten" => Line::Layer(LayerKind::Unflatten {
            c: keys.take("C")?,
            h: keys.take("H")?,
            w: keys.take("W")?,
        }),
        "gru" => Line::Layer(LayerKind::Gru { hidden: keys.take("N")? }),
        "convgru" => Line::Layer(LayerKind::ConvGru {
            f: keys.take("F")?,
            d: keys.take("D")?,
        }),
        "relu" => Line::Layer(LayerKind::Relu),
        "flatten" => Line::Layer(LayerKind::Flatten),
        "sigmoid" => Line::Layer(LayerKind::Sigmoid),
        "rescale" => Line::Layer(LayerKind::Rescale),
        other => return Err(format!("unknown layer '{other}'")),
    };
    keys.finish()?;
    Ok(line)
}

/// `2`, `2x2` or `2×2`.
fn parse_window(s: &str) -> Option<usize> {
    let lower = s.to_ascii_lowercase();
    let mut parts = lower.split(['x', '×']);
    let a: usize = parts.next()?.parse().ok()?;
    match parts.next() {
        None => Some(a),
        Some(b) if b.parse::<usize>().ok()? == a && parts.next().is_none() => Some(a),
        _ => None,
    }
}

/// `KEY=value` pairs of one line, keyed in upper case.
struct Keys<'a> {
    pairs: BTreeMap<String, &'a str>,
    positional: Vec<&'a str>,
}

impl<'a> Keys<'a> {
    fn parse(words: &[&'a str]) -> std::result::Result<Self, String> {
        let mut pairs = BTreeMap::new();
        let mut positional = Vec::new();
        for w in words {
            match w.split_once('=') {
                Some((k, v)) => {
                    let k = k.trim().to_ascii_uppercase();
                    if pairs.insert(k.clone(), v.trim()).is_some() {
                        return Err(format!("duplicate key {k}"));
                    }
                }
                None => positional.push(*w),
            }
        }
        Ok(Self { pairs, positional })
    }

    fn take_or(&mut self, key: &str, default: usize) -> std::result::Result<usize, String> {
        match self.pairs.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| format!("{key}={v} is not a non-negative integer")),
        }
    }

    fn take(&mut self, key: &str) -> std::result::Result<usize, String> {
        if !self.pairs.contains_key(key) {
            return Err(format!("missing key {key}"));
        }
        self.take_or(key, 0)
    }

    fn finish(self) -> std::result::Result<(), String> {
        if let Some(p) = self.positional.first() {
            return Err(format!("unexpected argument '{p}'"));
        }
        match self.pairs.keys().next() {
            Some(k) => Err(format!("unknown key {k}")),
            None => Ok(()),
        }
    }
}
