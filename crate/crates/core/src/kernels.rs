//! Slice-level numeric kernels: im2col convolution, transposed convolution,
//! max pooling and matrix-vector products. The graph module wraps these with
//! shape checks and gradient rules.

use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Scalar};

/// Zero padding split as `floor(total/2)` before and `ceil(total/2)` after.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub before: usize,
    pub after: usize,
}

impl Padding {
    pub fn total(n: usize) -> Self {
        Self {
            before: n / 2,
            after: n - n / 2,
        }
    }

    pub fn sum(&self) -> usize {
        self.before + self.after
    }
}

/// Output extent of a window of size `k` sliding with `stride` over `n`
/// elements plus `pad` total padding; `None` when the window does not fit.
pub fn window_out(n: usize, pad: usize, k: usize, stride: usize) -> Option<usize> {
    if stride == 0 || k == 0 || k > n + pad {
        return None;
    }
    Some((n + pad - k) / stride + 1)
}

/// Geometry of one 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: Padding,
    pub pad_w: Padding,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        input: (usize, usize, usize),
        kernel: (usize, usize, usize, usize),
        stride: usize,
        pad_h: Padding,
        pad_w: Padding,
    ) -> Result<Self> {
        let (c, h, w) = input;
        let (f, kc, kh, kw) = kernel;
        if kc != c {
            return Err(Error::dim(format!(
                "conv2d: kernel {f}×{kc}×{kh}×{kw} expects {kc} input channels, input is {c}×{h}×{w}"
            )));
        }
        if stride == 0 {
            return Err(Error::arg("conv2d: stride must be at least 1"));
        }
        let out_h = window_out(h, pad_h.sum(), kh, stride);
        let out_w = window_out(w, pad_w.sum(), kw, stride);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) => Ok(Self {
                channels: c,
                height: h,
                width: w,
                filters: f,
                kh,
                kw,
                stride,
                pad_h,
                pad_w,
                out_h,
                out_w,
            }),
            _ => Err(Error::dim(format!(
                "conv2d: {kh}×{kw} kernel does not fit {c}×{h}×{w} input padded by {}/{}",
                pad_h.sum(),
                pad_w.sum()
            ))),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds padded input patches into a `(c·kh·kw) × (out_h·out_w)` matrix.
pub fn im2col<S: Scalar>(g: &ConvGeom, input: &[S], cols: &mut [S]) {
    let p = g.out_len();
    debug_assert_eq!(cols.len(), g.patch_len() * p);
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + ki) as isize - g.pad_h.before as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if y < 0 || y as usize >= g.height {
                        line.fill(S::zero());
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let x = (ox * g.stride + kj) as isize - g.pad_w.before as isize;
                        *v = if x < 0 || x as usize >= g.width {
                            S::zero()
                        } else {
                            src[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into the image.
pub fn col2im<S: Scalar>(g: &ConvGeom, cols: &[S], image: &mut [S]) {
    let p = g.out_len();
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + ki) as isize - g.pad_h.before as isize;
                    if y < 0 || y as usize >= g.height {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + kj) as isize - g.pad_w.before as isize;
                        if x >= 0 && (x as usize) < g.width {
                            dst[x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation. Returns the output `f × out_h × out_w` and the
/// unfolded columns (kept for the backward pass).
pub fn conv2d_forward<S: Scalar>(
    g: &ConvGeom,
    input: &[S],
    kernel: &[S],
    bias: Option<&[S]>,
) -> (Vec<S>, Vec<S>) {
    let p = g.out_len();
    let k = g.patch_len();
    let mut cols = vec![S::zero(); k * p];
    im2col(g, input, &mut cols);
    let mut out = vec![S::zero(); g.filters * p];
    if let Some(b) = bias {
        for (f, row) in out.chunks_exact_mut(p).enumerate() {
            row.fill(b[f]);
        }
    }
    let beta = if bias.is_some() { S::one() } else { S::zero() };
    S::gemm(
        g.filters,
        k,
        p,
        S::one(),
        kernel,
        (k as isize, 1),
        &cols,
        (p as isize, 1),
        beta,
        &mut out,
        (p as isize, 1),
    );
    (out, cols)
}

/// Gradients of a cross-correlation given the upstream gradient `d_out`.
/// Accumulates into whichever of the three gradient buffers are present.
pub fn conv2d_backward<S: Scalar>(
    g: &ConvGeom,
    cols: &[S],
    kernel: &[S],
    d_out: &[S],
    d_input: Option<&mut [S]>,
    d_kernel: Option<&mut [S]>,
    d_bias: Option<&mut [S]>,
) {
    let p = g.out_len();
    let k = g.patch_len();
    if let Some(dk) = d_kernel {
        // dK (f×k) += dOut (f×p) · colsᵀ (p×k)
        S::gemm(
            g.filters,
            p,
            k,
            S::one(),
            d_out,
            (p as isize, 1),
            cols,
            (1, p as isize),
            S::one(),
            dk,
            (k as isize, 1),
        );
    }
    if let Some(db) = d_bias {
        for (f, row) in d_out.chunks_exact(p).enumerate() {
            db[f] += row.iter().copied().sum::<S>();
        }
    }
    if let Some(dx) = d_input {
        // dcols (k×p) = Kᵀ (k×f) · dOut (f×p)
        let mut dcols = vec![S::zero(); k * p];
        S::gemm(
            k,
            g.filters,
            p,
            S::one(),
            kernel,
            (1, k as isize),
            d_out,
            (p as isize, 1),
            S::zero(),
            &mut dcols,
            (p as isize, 1),
        );
        col2im(g, &dcols, dx);
    }
}

/// Geometry of a transposed convolution, expressed through the convolution it
/// is the adjoint of: that convolution maps the (uncropped) output back to
/// the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeconvGeom {
    /// Convolution from the raw upsampled map (`out_channels × raw_h × raw_w`)
    /// down to the input (`in_channels × h × w`).
    pub adjoint: ConvGeom,
    pub crop_top: usize,
    pub crop_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl DeconvGeom {
    /// `input` is `c_in × h × w`; `kernel` is `c_in × c_out × F × F`.
    pub fn new(
        input: (usize, usize, usize),
        kernel: (usize, usize, usize, usize),
        stride: usize,
        target: (usize, usize),
    ) -> Result<Self> {
        let (c_in, h, w) = input;
        let (k_in, c_out, kh, kw) = kernel;
        if k_in != c_in {
            return Err(Error::dim(format!(
                "transposed_conv2d: kernel {k_in}×{c_out}×{kh}×{kw} expects {k_in} input channels, input is {c_in}×{h}×{w}"
            )));
        }
        if stride == 0 {
            return Err(Error::arg("transposed_conv2d: stride must be at least 1"));
        }
        let raw_h = (h - 1) * stride + kh;
        let raw_w = (w - 1) * stride + kw;
        let (th, tw) = target;
        if th > raw_h || tw > raw_w || th == 0 || tw == 0 {
            return Err(Error::dim(format!(
                "transposed_conv2d: target {th}×{tw} exceeds raw upsampled extent {raw_h}×{raw_w}"
            )));
        }
        let adjoint = ConvGeom {
            channels: c_out,
            height: raw_h,
            width: raw_w,
            filters: c_in,
            kh,
            kw,
            stride,
            pad_h: Padding::total(0),
            pad_w: Padding::total(0),
            out_h: h,
            out_w: w,
        };
        Ok(Self {
            adjoint,
            crop_top: (raw_h - th) / 2,
            crop_left: (raw_w - tw) / 2,
            out_h: th,
            out_w: tw,
        })
    }

    pub fn raw_hw(&self) -> (usize, usize) {
        (self.adjoint.height, self.adjoint.width)
    }

    fn crop<S: Scalar>(&self, raw: &[S]) -> Vec<S> {
        let (rh, rw) = self.raw_hw();
        let mut out = Vec::with_capacity(self.adjoint.channels * self.out_h * self.out_w);
        for c in 0..self.adjoint.channels {
            for y in 0..self.out_h {
                let start = c * rh * rw + (y + self.crop_top) * rw + self.crop_left;
                out.extend_from_slice(&raw[start..start + self.out_w]);
            }
        }
        out
    }

    fn uncrop<S: Scalar>(&self, cropped: &[S]) -> Vec<S> {
        let (rh, rw) = self.raw_hw();
        let mut raw = vec![S::zero(); self.adjoint.channels * rh * rw];
        for c in 0..self.adjoint.channels {
            for y in 0..self.out_h {
                let dst = c * rh * rw + (y + self.crop_top) * rw + self.crop_left;
                let src = (c * self.out_h + y) * self.out_w;
                raw[dst..dst + self.out_w].copy_from_slice(&cropped[src..src + self.out_w]);
            }
        }
        raw
    }
}

pub fn deconv_forward<S: Scalar>(g: &DeconvGeom, input: &[S], kernel: &[S]) -> Vec<S> {
    let a = &g.adjoint;
    let p = a.out_len();
    let k = a.patch_len();
    // cols (k×p) = Kᵀ (k×c_in) · x (c_in×p)
    let mut cols = vec![S::zero(); k * p];
    S::gemm(
        k,
        a.filters,
        p,
        S::one(),
        kernel,
        (1, k as isize),
        input,
        (p as isize, 1),
        S::zero(),
        &mut cols,
        (p as isize, 1),
    );
    let mut raw = vec![S::zero(); a.channels * a.height * a.width];
    col2im(a, &cols, &mut raw);
    g.crop(&raw)
}

pub fn deconv_backward<S: Scalar>(
    g: &DeconvGeom,
    input: &[S],
    kernel: &[S],
    d_out: &[S],
    d_input: Option<&mut [S]>,
    d_kernel: Option<&mut [S]>,
) {
    let a = &g.adjoint;
    let raw = g.uncrop(d_out);
    let p = a.out_len();
    let k = a.patch_len();
    let mut dcols = vec![S::zero(); k * p];
    im2col(a, &raw, &mut dcols);
    if let Some(dx) = d_input {
        // dx (c_in×p) += K (c_in×k) · dcols (k×p)
        S::gemm(
            a.filters,
            k,
            p,
            S::one(),
            kernel,
            (k as isize, 1),
            &dcols,
            (p as isize, 1),
            S::one(),
            dx,
            (p as isize, 1),
        );
    }
    if let Some(dk) = d_kernel {
        // dK (c_in×k) += x (c_in×p) · dcolsᵀ (p×k)
        S::gemm(
            a.filters,
            p,
            k,
            S::one(),
            input,
            (p as isize, 1),
            &dcols,
            (1, p as isize),
            S::one(),
            dk,
            (k as isize, 1),
        );
    }
}

/// Geometry of a max pooling layer without padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(input: (usize, usize, usize), k: usize, stride: usize) -> Result<Self> {
        let (c, h, w) = input;
        if k == 0 || stride == 0 {
            return Err(Error::arg("maxpool2d: window and stride must be at least 1"));
        }
        match (window_out(h, 0, k, stride), window_out(w, 0, k, stride)) {
            (Some(out_h), Some(out_w)) => Ok(Self {
                channels: c,
                height: h,
                width: w,
                k,
                stride,
                out_h,
                out_w,
            }),
            _ => Err(Error::dim(format!(
                "maxpool2d: {k}×{k} window exceeds {c}×{h}×{w} input"
            ))),
        }
    }
}

/// Window maxima plus the flat input index of each maximum. Ties resolve to
/// the first element in row-major window order.
pub fn maxpool_forward<S: Scalar>(g: &PoolGeom, input: &[S]) -> (Vec<S>, Vec<usize>) {
    let n = g.channels * g.out_h * g.out_w;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for c in 0..g.channels {
        let base = c * g.height * g.width;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = base + oy * g.stride * g.width + ox * g.stride;
                let mut best_v = input[best];
                for ky in 0..g.k {
                    let row = base + (oy * g.stride + ky) * g.width + ox * g.stride;
                    for kx in 0..g.k {
                        let v = input[row + kx];
                        if v > best_v {
                            best_v = v;
                            best = row + kx;
                        }
                    }
                }
                out.push(best_v);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// `y = W x` with `W` stored row-major `m × n`.
pub fn matvec<S: Scalar>(w: &[S], x: &[S], m: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(w.len(), m * n);
    w.chunks_exact(n).map(|row| dot(row, x)).collect()
}

/// `dx += Wᵀ dy`
pub fn matvec_t_acc<S: Scalar>(w: &[S], dy: &[S], n: usize, dx: &mut [S]) {
    for (row, &g) in w.chunks_exact(n).zip(dy) {
        if g != S::zero() {
            axpy(g, row, dx);
        }
    }
}

/// `dW += dy xᵀ`
pub fn outer_acc<S: Scalar>(dy: &[S], x: &[S], dw: &mut [S]) {
    let n = x.len();
    for (row, &g) in dw.chunks_exact_mut(n).zip(dy) {
        if g != S::zero() {
            axpy(g, x, row);
        }
    }
}
