//! Raw loops behind the convolution and pooling primitives. Convolutions
//! run as im2col matrix products accumulated in `f64`.

/// Output extent of a strided, padded window sweep.
pub fn out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output columns `ow` whose input column `ow * stride + k - pad` is in
    /// range, as a half-open interval.
    #[inline]
    fn valid_cols(&self, k: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // ow * s + k - p <= w - 1  <=>  ow <= (w - 1 + p - k) / s
        let hi = if self.w + p > k {
            ((self.w - 1 + p - k) / s + 1).min(self.ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    #[inline]
    fn valid_rows(&self, k: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if self.h + p > k {
            ((self.h - 1 + p - k) / s + 1).min(self.oh)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// `c = a * b + beta * c` for row-major `c` of shape `m x n`, with `a`
/// (`m x k`) and `b` (`k x n`) given by their row and column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), beta: f64, c: &mut [f64]) {
    let last = |rows: usize, cols: usize, (r, s): (usize, usize)| (rows.max(1) - 1) * r + (cols.max(1) - 1) * s;
    assert!(c.len() >= m * n);
    assert!(m == 0 || k == 0 || (a.len() > last(m, k, sa) && b.len() > last(k, n, sb)));
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold one image `[c_in, h, w]` into a `[c_in*kh*kw, oh*ow]` matrix.
fn im2col(g: &ConvGeom, xin: &[f32], col: &mut [f64]) {
    let p = g.oh * g.ow;
    col.fill(0.0);
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            let (r0, r1) = g.valid_rows(ki);
            for kj in 0..g.kw {
                let (c0, c1) = g.valid_cols(kj);
                let dst = &mut col[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for orow in r0..r1 {
                    let irow = orow * g.stride + ki - g.pad;
                    let xr = &xin[(c * g.h + irow) * g.w..][..g.w];
                    let d = &mut dst[orow * g.ow..][..g.ow];
                    for ocol in c0..c1 {
                        d[ocol] = xr[ocol * g.stride + kj - g.pad] as f64;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto `[c_in, h, w]`.
fn col2im(g: &ConvGeom, col: &[f64], acc: &mut [f64]) {
    let p = g.oh * g.ow;
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            let (r0, r1) = g.valid_rows(ki);
            for kj in 0..g.kw {
                let (c0, c1) = g.valid_cols(kj);
                let src = &col[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for orow in r0..r1 {
                    let irow = orow * g.stride + ki - g.pad;
                    let ar = &mut acc[(c * g.h + irow) * g.w..][..g.w];
                    let s = &src[orow * g.ow..][..g.ow];
                    for ocol in c0..c1 {
                        ar[ocol * g.stride + kj - g.pad] += s[ocol];
                    }
                }
            }
        }
    }
}

fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|v| *v as f64).collect()
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f32], wt: &[f32], out: &mut [f32]) {
    let plane_in = g.c_in * g.h * g.w;
    let (k, p) = (g.c_in * g.kh * g.kw, g.oh * g.ow);
    let w64 = widen(wt);
    let mut col = vec![0f64; k * p];
    let mut acc = vec![0f64; g.c_out * p];
    for n in 0..g.n {
        im2col(g, &x[n * plane_in..][..plane_in], &mut col);
        gemm(g.c_out, k, p, &w64, (k, 1), &col, (p, 1), 0.0, &mut acc);
        for (d, a) in out[n * g.c_out * p..][..g.c_out * p].iter_mut().zip(&acc) {
            *d = *a as f32;
        }
    }
}

/// Gradients of a convolution with respect to its input and weights,
/// added into `gx` and `gw`.
pub fn conv2d_backward(
    g: &ConvGeom,
    x: &[f32],
    wt: &[f32],
    gy: &[f32],
    gx: Option<&mut [f32]>,
    gw: Option<&mut [f32]>,
) {
    let plane_in = g.c_in * g.h * g.w;
    let (k, p) = (g.c_in * g.kh * g.kw, g.oh * g.ow);
    let mut col = vec![0f64; k * p];
    if let Some(gx) = gx {
        let w64 = widen(wt);
        let mut acc = vec![0f64; plane_in];
        for n in 0..g.n {
            let gy64 = widen(&gy[n * g.c_out * p..][..g.c_out * p]);
            // W^T (k x c_out) times gy (c_out x p).
            gemm(k, g.c_out, p, &w64, (1, k), &gy64, (p, 1), 0.0, &mut col);
            acc.fill(0.0);
            col2im(g, &col, &mut acc);
            for (d, a) in gx[n * plane_in..][..plane_in].iter_mut().zip(&acc) {
                *d += *a as f32;
            }
        }
    }
    if let Some(gw) = gw {
        let mut acc = vec![0f64; g.c_out * k];
        for n in 0..g.n {
            let gy64 = widen(&gy[n * g.c_out * p..][..g.c_out * p]);
            im2col(g, &x[n * plane_in..][..plane_in], &mut col);
            // gy (c_out x p) times col^T (p x k).
            gemm(g.c_out, p, k, &gy64, (p, 1), &col, (1, p), 1.0, &mut acc);
        }
        for (d, a) in gw.iter_mut().zip(&acc) {
            *d += *a as f32;
        }
    }
}

/// Max pooling over `[n*c, h, w]` planes with implicit `-inf` padding.
/// Returns the flat input index of each maximum.
#[allow(clippy::too_many_arguments)]
pub fn maxpool_forward(
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &[f32],
    out: &mut [f32],
) -> Vec<usize> {
    let mut argmax = vec![0usize; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for orow in 0..oh {
            for ocol in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for ki in 0..k {
                    let r = (orow * stride + ki) as isize - pad as isize;
                    if r < 0 || r as usize >= h {
                        continue;
                    }
                    for kj in 0..k {
                        let c = (ocol * stride + kj) as isize - pad as isize;
                        if c < 0 || c as usize >= w {
                            continue;
                        }
                        let i = base + r as usize * w + c as usize;
                        if x[i] > best || best_i == usize::MAX {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                let o = (p * oh + orow) * ow + ocol;
                out[o] = best;
                argmax[o] = best_i;
            }
        }
    }
    argmax
}
