//! Raw numeric kernels behind the graph ops. All buffers are row-major.

/// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
///
/// `a` is `m x k` after transposition, `b` is `k x n`, `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one `[C, H, W]` sample into `[C*kh*kw, oh*ow]` columns.
/// Output columns `[lo, hi)` whose input column `ox * stride + k - pad`
/// falls inside `[0, w)`.
fn valid_cols(g: &ConvGeom, k: usize) -> (usize, usize) {
    let first = g.pad.saturating_sub(k).div_ceil(g.stride);
    let last = (g.w + g.pad).checked_sub(k + 1).map_or(0, |v| v / g.stride + 1);
    (first.min(g.ow), last.min(g.ow).max(first.min(g.ow)))
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    let start = iy as usize * g.w + lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (j, out) in line[lo..hi].iter_mut().enumerate() {
                            *out = src[start + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let start = iy as usize * g.w + lo * g.stride + kx - g.pad;
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.stride == 1 {
                        for (d, v) in dst[start..start + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (j, v) in line.iter().enumerate() {
                            dst[start + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(x: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (patch, plane) = (g.patch(), g.out_plane());
    let mut out = vec![0.0; g.n * g.f * plane];
    let mut cols = vec![0.0; patch * plane];
    let in_size = g.c * g.h * g.w;
    for s in 0..g.n {
        im2col(&x[s * in_size..(s + 1) * in_size], g, &mut cols);
        let dst = &mut out[s * g.f * plane..(s + 1) * g.f * plane];
        gemm(g.f, patch, plane, kernel, false, &cols, false, 0.0, dst);
    }
    out
}

/// Returns `(d_input, d_kernel)`; either is skipped when not requested.
pub(crate) fn conv2d_backward(
    x: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (patch, plane) = (g.patch(), g.out_plane());
    let in_size = g.c * g.h * g.w;
    let mut dx = want_input.then(|| vec![0.0; x.len()]);
    let mut dk = want_kernel.then(|| vec![0.0; kernel.len()]);
    let mut cols = vec![0.0; patch * plane];
    for s in 0..g.n {
        let go = &grad_out[s * g.f * plane..(s + 1) * g.f * plane];
        if let Some(dk) = dk.as_mut() {
            im2col(&x[s * in_size..(s + 1) * in_size], g, &mut cols);
            gemm(g.f, plane, patch, go, false, &cols, true, 1.0, dk);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(patch, g.f, plane, kernel, true, go, false, 0.0, &mut cols);
            col2im(&cols, g, &mut dx[s * in_size..(s + 1) * in_size]);
        }
    }
    (dx, dk)
}

/// Two-tap linear interpolation weights for a x2 upsample with half-pixel
/// centres, clamped at the borders.
pub(crate) fn bilinear_taps(n: usize) -> Vec<[(usize, f64); 2]> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            if src <= 0.0 {
                return [(0, 1.0), (0, 0.0)];
            }
            let i0 = src.floor() as usize;
            let frac = src - i0 as f64;
            if i0 + 1 >= n {
                [(n - 1, 1.0), (n - 1, 0.0)]
            } else {
                [(i0, 1.0 - frac), (i0 + 1, frac)]
            }
        })
        .collect()
}

pub(crate) fn upsample2_bilinear(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, ay) in ty.iter().enumerate() {
            for (ox, ax) in tx.iter().enumerate() {
                let mut acc = 0.0;
                for &(iy, wy) in ay {
                    for &(ix, wx) in ax {
                        acc += wy * wx * src[iy * w + ix];
                    }
                }
                dst[oy * ow + ox] = acc;
            }
        }
    }
    out
}

pub(crate) fn upsample2_bilinear_backward(grad: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &grad[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, ay) in ty.iter().enumerate() {
            for (ox, ax) in tx.iter().enumerate() {
                let g = src[oy * ow + ox];
                for &(iy, wy) in ay {
                    for &(ix, wx) in ax {
                        dst[iy * w + ix] += wy * wx * g;
                    }
                }
            }
        }
    }
    dx
}
