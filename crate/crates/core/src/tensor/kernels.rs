//! Raw loops behind the graph ops. No shape checking happens here.

use super::Scalar;

/// `out[m×n] += op(a)[m×k] · op(b)[k×n]`, where `op` optionally transposes.
///
/// With `ta` the buffer `a` is stored `k×m`; with `tb` the buffer `b` is
/// stored `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<S: Scalar>(
    a: &[S],
    ta: bool,
    b: &[S],
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    out: &mut [S],
) {
    let a_at = |i: usize, p: usize| if ta { a[p * m + i] } else { a[i * k + p] };
    if tb {
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            if ta {
                for (j, o) in out_row.iter_mut().enumerate() {
                    let b_row = &b[j * k..(j + 1) * k];
                    let mut acc = S::zero();
                    for (p, &bv) in b_row.iter().enumerate() {
                        acc += a_at(i, p) * bv;
                    }
                    *o += acc;
                }
            } else {
                let a_row = &a[i * k..(i + 1) * k];
                for (j, o) in out_row.iter_mut().enumerate() {
                    let b_row = &b[j * k..(j + 1) * k];
                    *o += dot(a_row, b_row);
                }
            }
        }
    } else {
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a_at(i, p);
                if av == S::zero() {
                    continue;
                }
                axpy(av, &b[p * n..(p + 1) * n], out_row);
            }
        }
    }
}

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub(crate) fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output columns `ox` whose input column `ox*stride + kx - pad_left` is in range.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if kx >= self.pad_left {
            0
        } else {
            (self.pad_left - kx).div_ceil(s)
        };
        // need ox*s + kx - pad_left <= w - 1
        let limit = self.w - 1 + self.pad_left;
        let hi = if kx > limit {
            0
        } else {
            ((limit - kx) / s + 1).min(self.ow)
        };
        (lo, hi.max(lo))
    }

    #[inline]
    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = oy * self.stride + ky;
        if iy < self.pad_top || iy - self.pad_top >= self.h {
            None
        } else {
            Some(iy - self.pad_top)
        }
    }
}

pub(crate) fn conv2d_forward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    k: &[S],
    bias: Option<&[S]>,
    out: &mut [S],
) {
    let plane = g.oh * g.ow;
    for co in 0..g.c_out {
        let out_c = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            out_c.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.c_in {
            let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = k[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                    if wv == S::zero() {
                        continue;
                    }
                    let (lo, hi) = g.ox_range(kx);
                    for oy in 0..g.oh {
                        let Some(iy) = g.input_row(oy, ky) else { continue };
                        let x_row = &x_c[iy * g.w..(iy + 1) * g.w];
                        let o_row = &mut out_c[oy * g.ow..(oy + 1) * g.ow];
                        for ox in lo..hi {
                            o_row[ox] += wv * x_row[ox * g.stride + kx - g.pad_left];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, kernel and bias gradients for one conv application.
pub(crate) fn conv2d_backward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    k: &[S],
    dout: &[S],
    mut dx: Option<&mut [S]>,
    mut dk: Option<&mut [S]>,
    mut db: Option<&mut [S]>,
) {
    let plane = g.oh * g.ow;
    for co in 0..g.c_out {
        let d_c = &dout[co * plane..(co + 1) * plane];
        if let Some(db) = db.as_deref_mut() {
            db[co] += d_c.iter().copied().sum::<S>();
        }
        for ci in 0..g.c_in {
            let base = ci * g.h * g.w;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let widx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                    let wv = k[widx];
                    let (lo, hi) = g.ox_range(kx);
                    let mut wgrad = S::zero();
                    for oy in 0..g.oh {
                        let Some(iy) = g.input_row(oy, ky) else { continue };
                        let d_row = &d_c[oy * g.ow..(oy + 1) * g.ow];
                        let row_off = base + iy * g.w;
                        if dk.is_some() {
                            let x_row = &x[row_off..row_off + g.w];
                            for ox in lo..hi {
                                wgrad += d_row[ox] * x_row[ox * g.stride + kx - g.pad_left];
                            }
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            if wv != S::zero() {
                                let dx_row = &mut dx[row_off..row_off + g.w];
                                for ox in lo..hi {
                                    dx_row[ox * g.stride + kx - g.pad_left] += wv * d_row[ox];
                                }
                            }
                        }
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        dk[widx] += wgrad;
                    }
                }
            }
        }
    }
}

/// Windowed maximum; returns flat input indices of the chosen maxima.
///
/// Ties resolve to the first position in row-major window order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn max_pool_forward<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    out: &mut [S],
) -> Vec<usize> {
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + (oy * stride) * w + ox * stride;
                let mut best = x[best_idx];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    argmax
}
