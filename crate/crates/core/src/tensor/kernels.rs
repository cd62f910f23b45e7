//! Raw numeric kernels behind the graph operations. Everything here works
//! on flat row-major slices.

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one image `[C, H, W]` into columns `[C*kh*kw, Ho*Wo]`.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let yi = (oi * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if yi < 0 || yi >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + yi as usize) * g.w..(c * g.h + yi as usize + 1) * g.w];
                    for (oj, o) in out_row.iter_mut().enumerate() {
                        let xj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *o = if xj < 0 || xj >= g.w as isize { T::zero() } else { src[xj as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
pub(crate) fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let yi = (oi * g.stride + ki) as isize - g.pad as isize;
                    if yi < 0 || yi >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + yi as usize) * g.w;
                    for oj in 0..g.wo {
                        let xj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if xj >= 0 && (xj as usize) < g.w {
                            let d = &mut dx[base + xj as usize];
                            *d = *d + src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution for a batch; `out` is `[N, K, Ho, Wo]`.
pub(crate) fn conv_forward<T: Scalar>(
    x: &[T],
    n: usize,
    weight: &[T],
    bias: &[T],
    k: usize,
    g: &ConvGeom,
    out: &mut [T],
) {
    let (pk, p) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); pk * p] };
    for b in 0..n {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        let ob = &mut out[b * k * p..(b + 1) * k * p];
        for (kk, row) in ob.chunks_mut(p).enumerate() {
            row.fill(bias[kk]);
        }
        T::gemm(k, pk, p, T::one(), weight, (pk as isize, 1), cols, (p as isize, 1), T::one(), ob, (p as isize, 1));
    }
}

/// Backward convolution. Accumulates into whichever gradients are given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    n: usize,
    weight: &[T],
    k: usize,
    g: &ConvGeom,
    dout: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (pk, p) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    if let Some(db) = db {
        for b in 0..n {
            for (kk, row) in dout[b * k * p..(b + 1) * k * p].chunks(p).enumerate() {
                db[kk] = db[kk] + row.iter().copied().sum::<T>();
            }
        }
    }
    if let Some(dw) = dw {
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); pk * p] };
        for b in 0..n {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let cols: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, g, &mut col);
                &col
            };
            let db_ = &dout[b * k * p..(b + 1) * k * p];
            // dW[K, PK] += dOut[K, P] * cols[PK, P]^T
            T::gemm(k, p, pk, T::one(), db_, (p as isize, 1), cols, (1, p as isize), T::one(), dw, (pk as isize, 1));
        }
    }
    if let Some(dx) = dx {
        let mut dcol = vec![T::zero(); pk * p];
        for b in 0..n {
            let db_ = &dout[b * k * p..(b + 1) * k * p];
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                // dx[C, P] += W[K, C]^T * dOut[K, P]
                T::gemm(
                    pk,
                    k,
                    p,
                    T::one(),
                    weight,
                    (1, pk as isize),
                    db_,
                    (p as isize, 1),
                    T::one(),
                    dxb,
                    (p as isize, 1),
                );
            } else {
                T::gemm(
                    pk,
                    k,
                    p,
                    T::one(),
                    weight,
                    (1, pk as isize),
                    db_,
                    (p as isize, 1),
                    T::zero(),
                    &mut dcol,
                    (p as isize, 1),
                );
                col2im(&dcol, g, dxb);
            }
        }
    }
}

/// 2x2 stride-2 max pooling with ceil-mode output. Returns the flat input
/// index chosen for every output (first maximum wins).
pub(crate) fn max_pool2<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, out: &mut [T]) -> Vec<usize> {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut arg = vec![0usize; planes * ho * wo];
    for pl in 0..planes {
        let base = pl * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let (y, xx) = (2 * i + di, 2 * j + dj);
                    if y < h && xx < w {
                        let idx = base + y * w + xx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                let o = (pl * ho + i) * wo + j;
                out[o] = x[best];
                arg[o] = best;
            }
        }
    }
    arg
}

/// Bilinear taps (four flat spatial indices and weights) for one sample point
/// at continuous index position `(y, x)`, clamped to the map.
pub(crate) fn bilinear_taps(y: f64, x: f64, h: usize, w: usize) -> ([usize; 4], [f64; 4]) {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ly, lx) = (y - y0 as f64, x - x0 as f64);
    (
        [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        [(1.0 - ly) * (1.0 - lx), (1.0 - ly) * lx, ly * (1.0 - lx), ly * lx],
    )
}
