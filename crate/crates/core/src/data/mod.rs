//! Frame sequences with binary masks: synthesis, loading, splits and
//! sliding windows.

mod io;
mod synth;

pub use io::{
    load_dataset_dir, load_image, load_sequence_dir, read_idx_glyphs, read_pgm, read_png, save_image,
    write_pgm, write_png, write_sequence_dir, GrayImage,
};
pub use synth::{procedural_glyph, synthesize_moving_sprites, GlyphSource, MovingSpriteConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{shape_str, Scalar, Tensor};
use rand::seq::SliceRandom;

/// A clip of `1×h×w` grayscale frames in `[0, 1]` with one `h×w` binary mask
/// per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence<S: Scalar = f64> {
    pub id: String,
    pub frames: Vec<Tensor<S>>,
    pub masks: Vec<Tensor<S>>,
}

impl<S: Scalar> FrameSequence<S> {
    pub fn new(id: impl Into<String>, frames: Vec<Tensor<S>>, masks: Vec<Tensor<S>>) -> Result<Self> {
        let id = id.into();
        if frames.is_empty() || frames.len() != masks.len() {
            return Err(Error::arg(format!(
                "sequence {id}: {} frames and {} masks (need equal, nonzero counts)",
                frames.len(),
                masks.len()
            )));
        }
        let fshape = frames[0].shape().to_vec();
        let [1, h, w] = fshape[..] else {
            return Err(Error::dim(format!("sequence {id}: frames must be 1×h×w, got {}", shape_str(&fshape))));
        };
        for (t, (f, m)) in frames.iter().zip(&masks).enumerate() {
            if f.shape() != fshape.as_slice() || m.shape() != [h, w] {
                return Err(Error::dim(format!(
                    "sequence {id}: frame {t} is {} with mask {}, expected 1×{h}×{w} and {h}×{w}",
                    shape_str(f.shape()),
                    shape_str(m.shape())
                )));
            }
            if m.data().iter().any(|&v| v != S::zero() && v != S::one()) {
                return Err(Error::arg(format!("sequence {id}: mask {t} is not binary")));
            }
        }
        Ok(Self { id, frames, masks })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame height and width.
    pub fn hw(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }

    /// Frames `range` as a new sequence.
    pub fn slice(&self, range: std::ops::Range<usize>, id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            frames: self.frames[range.clone()].to_vec(),
            masks: self.masks[range].to_vec(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> FrameSequence<T> {
        FrameSequence {
            id: self.id.clone(),
            frames: self.frames.iter().map(Tensor::cast).collect(),
            masks: self.masks.iter().map(Tensor::cast).collect(),
        }
    }
}

/// `1` where `frame > τ`, else `0`; the leading channel of a `1×h×w`
/// frame is dropped.
pub fn threshold_labels<S: Scalar>(frame: &Tensor<S>, tau: f64) -> Tensor<S> {
    let shape = match frame.shape() {
        [1, h, w] => vec![*h, *w],
        s => s.to_vec(),
    };
    let data = frame
        .data()
        .iter()
        .map(|v| if v.as_f64() > tau { S::one() } else { S::zero() })
        .collect();
    Tensor::new(shape, data).expect("same element count")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// First `ceil(T/2)` frames of every sequence train, the rest test.
    HalfPerSequence,
    /// Seeded shuffle of whole sequences; the first `floor(0.7·n)` train.
    SeventyThirtyBySequence,
}

impl std::str::FromStr for SplitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "half-per-sequence" | "half" => Ok(Self::HalfPerSequence),
            "seventy-thirty-by-sequence" | "70-30" | "seventy-thirty" => Ok(Self::SeventyThirtyBySequence),
            _ => Err(Error::arg(format!(
                "unknown split policy '{s}' (half-per-sequence|seventy-thirty-by-sequence)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<S: Scalar = f64> {
    pub train: Vec<FrameSequence<S>>,
    pub test: Vec<FrameSequence<S>>,
    pub policy: SplitPolicy,
}

pub fn split<S: Scalar>(sequences: &[FrameSequence<S>], policy: SplitPolicy, seed: u64) -> Result<DatasetSplit<S>> {
    if sequences.is_empty() {
        return Err(Error::arg("split: no sequences"));
    }
    let (train, test) = match policy {
        SplitPolicy::HalfPerSequence => {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for s in sequences {
                if s.len() < 2 {
                    return Err(Error::arg(format!(
                        "split: sequence {} has {} frame(s); the half policy needs at least 2",
                        s.id,
                        s.len()
                    )));
                }
                let cut = s.len().div_ceil(2);
                train.push(s.slice(0..cut, format!("{}/train", s.id)));
                test.push(s.slice(cut..s.len(), format!("{}/test", s.id)));
            }
            (train, test)
        }
        SplitPolicy::SeventyThirtyBySequence => {
            let mut order: Vec<usize> = (0..sequences.len()).collect();
            order.shuffle(&mut stream(seed, "split"));
            let n_train = sequences.len() * 7 / 10;
            let pick = |idx: &[usize]| idx.iter().map(|&i| sequences[i].clone()).collect();
            (pick(&order[..n_train]), pick(&order[n_train..]))
        }
    };
    Ok(DatasetSplit { train, test, policy })
}

/// `L` consecutive frames and the mask of the last one.
#[derive(Clone, Copy, Debug)]
pub struct SlidingWindow<'a, S: Scalar = f64> {
    /// Index of the window's first frame in its sequence.
    pub start: usize,
    pub frames: &'a [Tensor<S>],
    pub target: &'a Tensor<S>,
}

impl<S: Scalar> SlidingWindow<'_, S> {
    /// Index of the frame whose mask is the target.
    pub fn last(&self) -> usize {
        self.start + self.frames.len() - 1
    }
}

/// Every stride-1 window of length `l`: `T − L + 1` of them.
pub fn sliding_windows<S: Scalar>(seq: &FrameSequence<S>, l: usize) -> Result<Vec<SlidingWindow<'_, S>>> {
    if l == 0 {
        return Err(Error::arg("sliding_windows: L must be at least 1"));
    }
    if seq.len() < l {
        return Err(Error::arg(format!(
            "sliding_windows: sequence {} has {} frames, shorter than L = {l}",
            seq.id,
            seq.len()
        )));
    }
    Ok((0..=seq.len() - l)
        .map(|start| SlidingWindow {
            start,
            frames: &seq.frames[start..start + l],
            target: &seq.masks[start + l - 1],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, t: usize) -> FrameSequence {
        let frames = (0..t).map(|i| Tensor::full(&[1, 2, 2], i as f64 / t as f64)).collect();
        let masks = (0..t).map(|i| Tensor::full(&[2, 2], (i % 2) as f64)).collect();
        FrameSequence::new(id, frames, masks).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let f = Tensor::<f64>::new(vec![1, 1, 2], vec![0.2, 0.8]).unwrap();
        assert_eq!(threshold_labels(&f, 0.5).data(), &[0.0, 1.0]);
        let m = threshold_labels(&f, 0.5);
        assert_eq!(threshold_labels(&m, 0.5), m);
        assert_eq!(threshold_labels(&Tensor::<f64>::zeros(&[1, 3, 3]), 0.5), Tensor::zeros(&[3, 3]));
    }

    #[test]
    fn half_split() {
        let s = split(&[seq("a", 10)], SplitPolicy::HalfPerSequence, 0).unwrap();
        assert_eq!(s.train[0].frames, seq("a", 10).frames[..5]);
        assert_eq!(s.test[0].frames, seq("a", 10).frames[5..]);
        assert!(split(&[seq("a", 1)], SplitPolicy::HalfPerSequence, 0).is_err());
    }

    #[test]
    fn seventy_thirty() {
        let all: Vec<_> = (0..10).map(|i| seq(&format!("s{i}"), 3)).collect();
        let s = split(&all, SplitPolicy::SeventyThirtyBySequence, 4).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        for t in &s.test {
            assert!(s.train.iter().all(|r| r.id != t.id));
        }
    }

    #[test]
    fn windows() {
        let s = seq("a", 10);
        let w = sliding_windows(&s, 3).unwrap();
        assert_eq!(w.len(), 8);
        assert_eq!(w[7].target, s.masks.last().unwrap());
        assert_eq!(w[7].last(), 9);
        let one = sliding_windows(&s, 1).unwrap();
        assert!(one.iter().enumerate().all(|(i, w)| w.frames[0] == s.frames[i] && *w.target == s.masks[i]));
        assert!(sliding_windows(&s, 11).is_err());
    }

    #[test]
    fn sequence_validation() {
        let f = vec![Tensor::<f64>::zeros(&[1, 2, 2])];
        assert!(FrameSequence::new("x", f.clone(), vec![]).is_err());
        assert!(FrameSequence::new("x", f.clone(), vec![Tensor::full(&[2, 2], 0.5)]).is_err());
        assert!(FrameSequence::new("x", f, vec![Tensor::zeros(&[2, 3])]).is_err());
    }
}
