use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{threshold_labels, FrameSequence};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;

/// Where sprite images come from.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum GlyphSource {
    /// Anti-aliased discs, bars and crosses of 10–14 px.
    #[default]
    Procedural,
    /// Glyphs read from an IDX file, `g_h × g_w`, values in `[0, 1]`.
    Glyphs(Vec<Tensor>),
}

/// Parameters of one synthetic sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingSpriteConfig {
    pub height: usize,
    pub width: usize,
    /// Number of frames T.
    pub length: usize,
    pub sprites: usize,
    /// Per-axis velocities are drawn from `-max_speed..=max_speed`.
    pub max_speed: i64,
    /// Velocity `(vx, vy)` shared by every sprite instead of a random draw.
    pub velocity: Option<(i64, i64)>,
    /// Label threshold τ.
    pub threshold: f64,
    pub seed: u64,
    #[serde(skip)]
    pub glyphs: GlyphSource,
}

impl Default for MovingSpriteConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            length: 20,
            sprites: 2,
            max_speed: 2,
            velocity: None,
            threshold: 0.5,
            seed: 0,
            glyphs: GlyphSource::Procedural,
        }
    }
}

/// Fraction of the pixel `[px, px+1) × [py, py+1)` inside `inside`,
/// estimated on a 4×4 subgrid.
fn coverage(px: usize, py: usize, inside: &impl Fn(f64, f64) -> bool) -> f64 {
    let mut hits = 0;
    for sy in 0..4 {
        for sx in 0..4 {
            let x = px as f64 + (sx as f64 + 0.5) / 4.0;
            let y = py as f64 + (sy as f64 + 0.5) / 4.0;
            hits += inside(x, y) as u32;
        }
    }
    hits as f64 / 16.0
}

/// A random procedural glyph: `size × size` with `size ∈ 10..=14`.
pub fn procedural_glyph(rng: &mut Rng) -> Tensor {
    let size = rng.random_range(10..=14usize);
    let n = size as f64;
    let c = n / 2.0;
    let thick = (n / 3.0).max(3.0);
    let kind = rng.random_range(0..4u8);
    let inside = move |x: f64, y: f64| {
        let (dx, dy) = (x - c, y - c);
        let hbar = dy.abs() <= thick / 2.0 && dx.abs() <= c - 0.5;
        let vbar = dx.abs() <= thick / 2.0 && dy.abs() <= c - 0.5;
        match kind {
            0 => dx * dx + dy * dy <= (c - 0.5) * (c - 0.5),
            1 => hbar,
            2 => vbar,
            _ => hbar || vbar,
        }
    };
    Tensor::from_fn(&[size, size], |i| coverage(i % size, i / size, &inside))
}

struct Sprite {
    glyph: Tensor,
    y: i64,
    x: i64,
    vy: i64,
    vx: i64,
}

/// Reflects `p` into `0..=max`, flipping `v` on each bounce.
fn reflect(mut p: i64, mut v: i64, max: i64) -> (i64, i64) {
    if max == 0 {
        return (0, v);
    }
    loop {
        if p < 0 {
            p = -p;
            v = -v;
        } else if p > max {
            p = 2 * max - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

/// One sequence of sprites moving with constant integer velocities,
/// reflecting at the canvas edges and composited by per-pixel maximum.
pub fn synthesize_moving_sprites(cfg: &MovingSpriteConfig) -> Result<FrameSequence> {
    let (h, w) = (cfg.height, cfg.width);
    if cfg.length == 0 || h == 0 || w == 0 {
        return Err(Error::arg(format!(
            "synthesis needs T ≥ 1 and a nonempty canvas, got T = {}, {h}×{w}",
            cfg.length
        )));
    }
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::arg(format!("threshold must lie in (0, 1), got {}", cfg.threshold)));
    }
    let rng = &mut stream(cfg.seed, "sprites");
    let mut sprites = Vec::with_capacity(cfg.sprites);
    for _ in 0..cfg.sprites {
        let glyph = match &cfg.glyphs {
            GlyphSource::Procedural => procedural_glyph(rng),
            GlyphSource::Glyphs(all) if !all.is_empty() => all[rng.random_range(0..all.len())].clone(),
            GlyphSource::Glyphs(_) => return Err(Error::arg("glyph source is empty")),
        };
        let (gh, gw) = (glyph.shape()[0], glyph.shape()[1]);
        if gh > h || gw > w {
            return Err(Error::arg(format!("sprite {gh}×{gw} does not fit the {h}×{w} canvas")));
        }
        let (vx, vy) = match cfg.velocity {
            Some(v) => v,
            None if cfg.max_speed == 0 => (0, 0),
            None => loop {
                let v = (
                    rng.random_range(-cfg.max_speed..=cfg.max_speed),
                    rng.random_range(-cfg.max_speed..=cfg.max_speed),
                );
                if v != (0, 0) {
                    break v;
                }
            },
        };
        if vx.unsigned_abs() as usize >= w || vy.unsigned_abs() as usize >= h {
            return Err(Error::arg(format!("velocity ({vx}, {vy}) is not smaller than the {h}×{w} canvas")));
        }
        let y = rng.random_range(0..=(h - gh) as i64);
        let x = rng.random_range(0..=(w - gw) as i64);
        sprites.push(Sprite { glyph, y, x, vy, vx });
    }

    let mut frames = Vec::with_capacity(cfg.length);
    for _ in 0..cfg.length {
        let mut frame = Tensor::<f64>::zeros(&[1, h, w]);
        let canvas = frame.data_mut();
        for s in &sprites {
            let (gh, gw) = (s.glyph.shape()[0], s.glyph.shape()[1]);
            for r in 0..gh {
                let row = (s.y as usize + r) * w + s.x as usize;
                for (dst, &v) in canvas[row..row + gw].iter_mut().zip(&s.glyph.data()[r * gw..(r + 1) * gw]) {
                    *dst = dst.max(v);
                }
            }
        }
        frames.push(frame);
        for s in &mut sprites {
            let (gh, gw) = (s.glyph.shape()[0], s.glyph.shape()[1]);
            (s.y, s.vy) = reflect(s.y + s.vy, s.vy, (h - gh) as i64);
            (s.x, s.vx) = reflect(s.x + s.vx, s.vx, (w - gw) as i64);
        }
    }
    let masks = frames.iter().map(|f| threshold_labels(f, cfg.threshold)).collect();
    FrameSequence::new(format!("seed{}", cfg.seed), frames, masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MovingSpriteConfig {
        MovingSpriteConfig {
            height: 32,
            width: 40,
            length: 5,
            sprites: 1,
            seed: 3,
            ..Default::default()
        }
    }

    fn leftmost_column(frame: &Tensor) -> usize {
        let w = frame.shape()[2];
        (0..frame.len()).filter(|&i| frame.data()[i] > 0.0).map(|i| i % w).min().unwrap()
    }

    #[test]
    fn static_sprite() {
        let s = synthesize_moving_sprites(&MovingSpriteConfig {
            velocity: Some((0, 0)),
            ..cfg()
        })
        .unwrap();
        assert!(s.frames.iter().all(|f| *f == s.frames[0]));
        assert!(s.masks.iter().all(|m| *m == s.masks[0]));
    }

    #[test]
    fn kinematics() {
        let mut c = MovingSpriteConfig {
            velocity: Some((1, 0)),
            length: 3,
            ..cfg()
        };
        // Pick a seed whose sprite starts away from the right edge.
        let s = loop {
            let s = synthesize_moving_sprites(&c).unwrap();
            if leftmost_column(&s.frames[0]) + 16 < 40 {
                break s;
            }
            c.seed += 1;
        };
        let c0 = leftmost_column(&s.frames[0]);
        assert_eq!(leftmost_column(&s.frames[1]), c0 + 1);
        assert_eq!(leftmost_column(&s.frames[2]), c0 + 2);
    }

    #[test]
    fn deterministic_and_labelled() {
        let a = synthesize_moving_sprites(&cfg()).unwrap();
        assert_eq!(a, synthesize_moving_sprites(&cfg()).unwrap());
        for (f, m) in a.frames.iter().zip(&a.masks) {
            assert_eq!(threshold_labels(f, 0.5), *m);
            assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn reflection_stays_inside() {
        assert_eq!(reflect(-2, -3, 10), (2, 3));
        assert_eq!(reflect(12, 3, 10), (8, -3));
        let s = synthesize_moving_sprites(&MovingSpriteConfig {
            length: 60,
            max_speed: 5,
            ..cfg()
        })
        .unwrap();
        let area = s.masks[0].sum();
        assert!(s.masks.iter().all(|m| m.sum() == area));
    }

    #[test]
    fn oversized_sprite() {
        let err = synthesize_moving_sprites(&MovingSpriteConfig {
            height: 8,
            width: 8,
            ..cfg()
        });
        assert!(matches!(err, Err(Error::Argument(_))));
    }
}
