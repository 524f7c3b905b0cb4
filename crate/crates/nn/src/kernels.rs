//! Raw numeric kernels shared by the forward and backward passes.

use crate::real::{gemm, Real};

/// Geometry of a 2-D convolution over one sample: input `(c, h, w)`,
/// kernel `(kh, kw)`, output spatial size `(oh, ow)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Geometry of a forward convolution; `None` when the kernel does not fit.
    pub fn forward(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Some(Self { c, h, w, kh, kw, stride, pad, oh, ow })
    }

    /// Geometry of the convolution whose data-gradient is a transposed
    /// convolution from `(h_in, w_in)` to the returned `(h, w)`.
    pub fn transposed(c_out: usize, h_in: usize, w_in: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h_in == 0 || w_in == 0 {
            return None;
        }
        let h = ((h_in - 1) * stride + kh).checked_sub(2 * pad)?;
        let w = ((w_in - 1) * stride + kw).checked_sub(2 * pad)?;
        let g = Self::forward(c_out, h, w, kh, kw, stride, pad)?;
        (g.oh == h_in && g.ow == w_in).then_some(g)
    }

    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Writes the patch matrix of one sample into `cols`, a row-major matrix with
/// leading dimension `ld`, starting at column `off`.
pub fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T], ld: usize, off: usize) {
    let (oh, ow) = (g.oh, g.ow);
    let mut row = 0;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * ld + off..row * ld + off + oh * ow];
                for y in 0..oh {
                    let iy = (y * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[y * ow..(y + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (xo, v) in seg.iter_mut().enumerate() {
                        let ix = (xo * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch entries back into the image `x`.
pub fn col2im<T: Real>(g: &ConvGeom, cols: &[T], ld: usize, off: usize, x: &mut [T]) {
    let (oh, ow) = (g.oh, g.ow);
    let mut row = 0;
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * ld + off..row * ld + off + oh * ow];
                for y in 0..oh {
                    let iy = (y * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (xo, &v) in src[y * ow..(y + 1) * ow].iter().enumerate() {
                        let ix = (xo * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Number of samples processed per batched gemm, bounded by a patch buffer
/// of roughly `budget` elements.
fn chunk_size(rows: usize, cols_per_sample: usize, n: usize) -> usize {
    const BUDGET: usize = 1 << 22;
    (BUDGET / (rows * cols_per_sample).max(1)).clamp(1, n.max(1))
}

/// `y[n] = W * im2col(x[n])` for all samples; `w` is `(o, rows)`.
pub fn conv2d_forward<T: Real>(g: &ConvGeom, n: usize, o: usize, x: &[T], w: &[T]) -> Vec<T> {
    let (rows, l) = (g.rows(), g.out_len());
    let mut y = vec![T::zero(); n * o * l];
    let chunk = chunk_size(rows, l, n);
    let mut cols = vec![T::zero(); rows * chunk * l];
    let mut out = vec![T::zero(); o * chunk * l];
    let mut s0 = 0;
    while s0 < n {
        let nb = chunk.min(n - s0);
        let ld = nb * l;
        for i in 0..nb {
            let s = s0 + i;
            im2col(g, &x[s * g.in_len()..(s + 1) * g.in_len()], &mut cols, ld, i * l);
        }
        gemm(false, false, o, ld, rows, T::one(), w, &cols[..rows * ld], T::zero(), &mut out[..o * ld]);
        for i in 0..nb {
            let s = s0 + i;
            for oc in 0..o {
                y[(s * o + oc) * l..(s * o + oc + 1) * l]
                    .copy_from_slice(&out[oc * ld + i * l..oc * ld + (i + 1) * l]);
            }
        }
        s0 += nb;
    }
    y
}

/// Gradients of [`conv2d_forward`]. Returns `(dx, dw)`, each only when requested.
pub fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    n: usize,
    o: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, l) = (g.rows(), g.out_len());
    let mut dx = want_dx.then(|| vec![T::zero(); n * g.in_len()]);
    let mut dw = want_dw.then(|| vec![T::zero(); o * rows]);
    let chunk = chunk_size(rows, l, n);
    let mut cols = vec![T::zero(); rows * chunk * l];
    let mut dyc = vec![T::zero(); o * chunk * l];
    let mut s0 = 0;
    while s0 < n {
        let nb = chunk.min(n - s0);
        let ld = nb * l;
        for i in 0..nb {
            let s = s0 + i;
            for oc in 0..o {
                dyc[oc * ld + i * l..oc * ld + (i + 1) * l]
                    .copy_from_slice(&dy[(s * o + oc) * l..(s * o + oc + 1) * l]);
            }
        }
        if let Some(dw) = dw.as_mut() {
            for i in 0..nb {
                let s = s0 + i;
                im2col(g, &x[s * g.in_len()..(s + 1) * g.in_len()], &mut cols, ld, i * l);
            }
            gemm(false, true, o, rows, ld, T::one(), &dyc[..o * ld], &cols[..rows * ld], T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(true, false, rows, ld, o, T::one(), w, &dyc[..o * ld], T::zero(), &mut cols[..rows * ld]);
            for i in 0..nb {
                let s = s0 + i;
                col2im(g, &cols, ld, i * l, &mut dx[s * g.in_len()..(s + 1) * g.in_len()]);
            }
        }
        s0 += nb;
    }
    (dx, dw)
}

/// Transposed convolution. `g` is the geometry of the adjoint forward
/// convolution (output channels `g.c`, output spatial `(g.h, g.w)`), `x` is
/// `(n, cin, g.oh, g.ow)` and `w` is `(cin, g.rows())`.
pub fn conv_transpose2d_forward<T: Real>(g: &ConvGeom, n: usize, cin: usize, x: &[T], w: &[T]) -> Vec<T> {
    let (rows, l) = (g.rows(), g.out_len());
    let mut y = vec![T::zero(); n * g.in_len()];
    let chunk = chunk_size(rows, l, n);
    let mut xc = vec![T::zero(); cin * chunk * l];
    let mut cols = vec![T::zero(); rows * chunk * l];
    let mut s0 = 0;
    while s0 < n {
        let nb = chunk.min(n - s0);
        let ld = nb * l;
        for i in 0..nb {
            let s = s0 + i;
            for ci in 0..cin {
                xc[ci * ld + i * l..ci * ld + (i + 1) * l]
                    .copy_from_slice(&x[(s * cin + ci) * l..(s * cin + ci + 1) * l]);
            }
        }
        gemm(true, false, rows, ld, cin, T::one(), w, &xc[..cin * ld], T::zero(), &mut cols[..rows * ld]);
        for i in 0..nb {
            let s = s0 + i;
            col2im(g, &cols, ld, i * l, &mut y[s * g.in_len()..(s + 1) * g.in_len()]);
        }
        s0 += nb;
    }
    y
}

/// Gradients of [`conv_transpose2d_forward`]; returns `(dx, dw)`.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Real>(
    g: &ConvGeom,
    n: usize,
    cin: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, l) = (g.rows(), g.out_len());
    let mut dx = want_dx.then(|| vec![T::zero(); n * cin * l]);
    let mut dw = want_dw.then(|| vec![T::zero(); cin * rows]);
    let chunk = chunk_size(rows, l, n);
    let mut cols = vec![T::zero(); rows * chunk * l];
    let mut xc = vec![T::zero(); cin * chunk * l];
    let mut s0 = 0;
    while s0 < n {
        let nb = chunk.min(n - s0);
        let ld = nb * l;
        for i in 0..nb {
            let s = s0 + i;
            im2col(g, &dy[s * g.in_len()..(s + 1) * g.in_len()], &mut cols, ld, i * l);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(false, false, cin, ld, rows, T::one(), w, &cols[..rows * ld], T::zero(), &mut xc[..cin * ld]);
            for i in 0..nb {
                let s = s0 + i;
                for ci in 0..cin {
                    dx[(s * cin + ci) * l..(s * cin + ci + 1) * l]
                        .copy_from_slice(&xc[ci * ld + i * l..ci * ld + (i + 1) * l]);
                }
            }
        }
        if let Some(dw) = dw.as_mut() {
            for i in 0..nb {
                let s = s0 + i;
                for ci in 0..cin {
                    xc[ci * ld + i * l..ci * ld + (i + 1) * l]
                        .copy_from_slice(&x[(s * cin + ci) * l..(s * cin + ci + 1) * l]);
                }
            }
            gemm(false, true, cin, rows, ld, T::one(), &xc[..cin * ld], &cols[..rows * ld], T::one(), dw);
        }
        s0 += nb;
    }
    (dx, dw)
}

/// Per-channel statistics over `(n, c, s)` laid out row-major.
pub fn channel_mean_var<T: Real>(x: &[T], n: usize, c: usize, s: usize) -> (Vec<T>, Vec<T>) {
    let m = T::from_usize(n * s).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for b in 0..n {
            acc += x[(b * c + ch) * s..(b * c + ch + 1) * s].iter().copied().sum::<T>();
        }
        let mu = acc / m;
        let mut sq = T::zero();
        for b in 0..n {
            for &v in &x[(b * c + ch) * s..(b * c + ch + 1) * s] {
                let d = v - mu;
                sq += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    (mean, var)
}

/// Naive direct convolution used to cross-check the im2col path.
pub fn conv2d_direct<T: Real>(g: &ConvGeom, n: usize, o: usize, x: &[T], w: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); n * o * g.out_len()];
    for s in 0..n {
        for oc in 0..o {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = T::zero();
                    for c in 0..g.c {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((s * g.c + c) * g.h + iy as usize) * g.w + ix as usize];
                                let wv = w[((oc * g.c + c) * g.kh + ki) * g.kw + kj];
                                acc += xv * wv;
                            }
                        }
                    }
                    y[((s * o + oc) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    y
}
