use std::fs;
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 8- or 16-bit grayscale pixels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl GrayImage {
    /// `1 × h × w` tensor of `pixel / maxval`.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let m = self.maxval as f64;
        Tensor::from_fn(&[1, self.height, self.width], |i| S::from_f64_lossy(self.pixels[i] as f64 / m))
    }

    /// Quantizes values in `[0, 1]` to 8 bits.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Self> {
        let (height, width) = match *t.shape() {
            [1, h, w] | [h, w] => (h, w),
            _ => return Err(Error::dim(format!("image tensors are h×w or 1×h×w, got {:?}", t.shape()))),
        };
        Ok(Self {
            width,
            height,
            maxval: 255,
            pixels: t
                .data()
                .iter()
                .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u16)
                .collect(),
        })
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Binary PGM (`P5`), any maxval up to 65535.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = read_bytes(path)?;
    let bad = |what: &str| Error::load(format!("{}: {what}", path.display()));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (expected P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad header field '{s}'")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("invalid PGM dimensions or maxval"));
    }
    pos += 1;
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let data = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated PGM data"))?;
    let pixels = if wide {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data.iter().map(|&b| b as u16).collect()
    };
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        out.extend(img.pixels.iter().flat_map(|p| p.to_be_bytes()));
    } else {
        out.extend(img.pixels.iter().map(|&p| p as u8));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// 8- or 16-bit grayscale PNG.
pub fn read_png(path: &Path) -> Result<GrayImage> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: String| Error::load(format!("{}: {what}", path.display()));
    let mut reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(bad(format!("expected a grayscale PNG, found {:?}", info.color_type)));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let (maxval, pixels) = match info.bit_depth {
        png::BitDepth::Eight => (255, data.iter().map(|&b| b as u16).collect()),
        png::BitDepth::Sixteen => (65535, data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()),
        d => return Err(bad(format!("unsupported bit depth {d:?}"))),
    };
    Ok(GrayImage {
        width,
        height,
        maxval,
        pixels,
    })
}

/// 8-bit grayscale PNG; pixels are rescaled to 0–255.
pub fn write_png(path: &Path, img: &GrayImage) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let m = img.maxval as u32;
    let data: Vec<u8> = img.pixels.iter().map(|&p| ((p as u32 * 255 + m / 2) / m) as u8).collect();
    enc.write_header()
        .and_then(|mut w| w.write_image_data(&data))
        .map_err(|e| Error::load(format!("{}: {e}", path.display())))
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Reads a `.pgm` or `.png` as a `1×h×w` tensor in `[0, 1]`.
pub fn load_image<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let img = match extension(path).as_deref() {
        Some("pgm") => read_pgm(path)?,
        Some("png") => read_png(path)?,
        _ => return Err(Error::load(format!("{}: unsupported image type", path.display()))),
    };
    Ok(img.to_tensor())
}

/// Writes an `h×w` or `1×h×w` tensor in `[0, 1]` as 8-bit PGM or PNG,
/// chosen by extension.
pub fn save_image<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let img = GrayImage::from_tensor(t)?;
    match extension(path).as_deref() {
        Some("png") => write_png(path, &img),
        _ => write_pgm(path, &img),
    }
}

/// IDX image file (magic `0x00000803`): `n` glyphs of `rows × cols` bytes,
/// returned as `rows × cols` tensors in `[0, 1]`.
pub fn read_idx_glyphs(path: &Path) -> Result<Vec<Tensor>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::load(format!("{}: {what}", path.display()));
    let word = |i: usize| -> Result<usize> {
        let b = bytes.get(4 * i..4 * i + 4).ok_or_else(|| bad("truncated IDX header"))?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
    };
    if word(0)? != 0x0803 {
        return Err(bad("bad magic (expected 0x00000803)"));
    }
    let (n, rows, cols) = (word(1)?, word(2)?, word(3)?);
    let size = rows * cols;
    let data = bytes
        .get(16..16 + n * size)
        .ok_or_else(|| bad("truncated IDX data"))?;
    Ok(data
        .chunks_exact(size.max(1))
        .take(n)
        .map(|c| Tensor::from_fn(&[rows, cols], |i| c[i] as f64 / 255.0))
        .collect())
}

/// Image files in `dir` keyed by file stem, sorted.
fn image_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if matches!(extension(&path).as_deref(), Some("pgm" | "png")) {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            files.push((stem, path));
        }
    }
    files.sort();
    Ok(files)
}

/// Loads `frames/NNNN.(pgm|png)` and `masks/NNNN.(pgm|png)` from `dir`.
/// Masks are binarized at 0.5.
pub fn load_sequence_dir(dir: &Path) -> Result<FrameSequence> {
    let frames = image_files(&dir.join("frames"))?;
    let masks = image_files(&dir.join("masks"))?;
    for (stem, _) in &frames {
        if !masks.iter().any(|(m, _)| m == stem) {
            return Err(Error::load(format!("{}: missing masks/{stem}", dir.display())));
        }
    }
    if let Some((stem, _)) = masks.iter().find(|(m, _)| !frames.iter().any(|(f, _)| f == m)) {
        return Err(Error::load(format!("{}: missing frames/{stem}", dir.display())));
    }
    if frames.is_empty() {
        return Err(Error::load(format!("{}: no frames", dir.display())));
    }
    let mut fs_ = Vec::with_capacity(frames.len());
    let mut ms = Vec::with_capacity(frames.len());
    let mut shape: Option<Vec<usize>> = None;
    for ((stem, fpath), (_, mpath)) in frames.iter().zip(&masks) {
        let f: Tensor = load_image(fpath)?;
        let m: Tensor = load_image(mpath)?;
        let expect = shape.get_or_insert_with(|| f.shape().to_vec());
        if f.shape() != expect.as_slice() || m.shape() != expect.as_slice() {
            return Err(Error::load(format!(
                "{}: frames/{stem} is {:?} and masks/{stem} is {:?}, expected {:?}",
                dir.display(),
                f.shape(),
                m.shape(),
                expect
            )));
        }
        let (h, w) = (expect[1], expect[2]);
        ms.push(super::threshold_labels(&m, 0.5).reshape(&[h, w])?);
        fs_.push(f);
    }
    let id = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
    FrameSequence::new(id, fs_, ms)
}

/// Every subdirectory of `root` that holds a `frames/` directory, sorted by
/// name.
pub fn load_dataset_dir(root: &Path) -> Result<Vec<FrameSequence>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("frames").is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        if root.join("frames").is_dir() {
            return Ok(vec![load_sequence_dir(root)?]);
        }
        return Err(Error::load(format!("{}: no sequence directories", root.display())));
    }
    dirs.iter().map(|d| load_sequence_dir(d)).collect()
}

/// Writes `frames/NNNN.pgm` and `masks/NNNN.pgm` (masks as 0/255).
pub fn write_sequence_dir<S: Scalar>(seq: &FrameSequence<S>, dir: &Path) -> Result<()> {
    for sub in ["frames", "masks"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    for (t, (f, m)) in seq.frames.iter().zip(&seq.masks).enumerate() {
        save_image(&dir.join(format!("frames/{t:04}.pgm")), f)?;
        save_image(&dir.join(format!("masks/{t:04}.pgm")), m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, b"P5\n# comment\n2 1\n255\n\x80\xff").unwrap();
        let t: Tensor = load_image(&p).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert!((t.data()[0] - 128.0 / 255.0).abs() < 1e-15);
        assert_eq!(t.data()[1], 1.0);
    }

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage {
            width: 3,
            height: 2,
            maxval: 255,
            pixels: vec![0, 10, 20, 128, 200, 255],
        };
        for name in ["x.png", "x.pgm"] {
            let p = dir.path().join(name);
            save_image(&p, &img.to_tensor::<f64>()).unwrap();
            let back = if name.ends_with("png") { read_png(&p) } else { read_pgm(&p) }.unwrap();
            assert_eq!(back, img);
        }
    }

    #[test]
    fn truncated_and_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        fs::write(&p, b"P5\n4 4\n255\n\x00").unwrap();
        assert!(matches!(read_pgm(&p), Err(Error::Load(_))));
        let q = dir.path().join("g.idx");
        fs::write(&q, [0u8, 0, 8, 1, 0, 0, 0, 0]).unwrap();
        assert!(read_idx_glyphs(&q).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn idx_glyphs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.idx");
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend([0, 255, 255, 0, 51, 51, 51, 51]);
        fs::write(&p, bytes).unwrap();
        let g = read_idx_glyphs(&p).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].data(), &[0.0, 1.0, 1.0, 0.0]);
        assert!((g[1].data()[0] - 0.2).abs() < 1e-15);
    }
}
