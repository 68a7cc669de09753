//! Slice-level kernels behind the graph ops. Layouts are NCHW, row-major.

use crate::real::Real;

/// Output columns `lo..hi` whose source column `x + shift` lies in `0..w`.
fn valid_span(shift: isize, w: usize) -> (usize, usize) {
    let w = w as isize;
    let lo = (-shift).clamp(0, w);
    let hi = (w - shift).clamp(lo, w);
    (lo as usize, hi as usize)
}

/// Unfolds one `c×h×w` image into a `(c·k·k) × (h·w)` patch matrix for a
/// stride-1 convolution with `pad` zero padding and "same" output size.
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    debug_assert_eq!(col.len(), c * k * k * hw);
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let iy = y as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let shift = kx as isize - pad as isize;
                    let (lo, hi) = valid_span(shift, w);
                    out[..lo].fill(T::zero());
                    if lo < hi {
                        let s0 = (lo as isize + shift) as usize;
                        out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                    out[hi..].fill(T::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto `dx`.
pub(crate) fn col2im_add<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let iy = y as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let shift = kx as isize - pad as isize;
                    let (lo, hi) = valid_span(shift, w);
                    if lo >= hi {
                        continue;
                    }
                    let s0 = (lo as isize + shift) as usize;
                    let dst = &mut plane[iy as usize * w + s0..][..hi - lo];
                    for (d, &g) in dst.iter_mut().zip(&row[y * w + lo..y * w + hi]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

pub(crate) fn conv2d_forward<T: Real>(d: &ConvDims, x: &[T], wgt: &[T], bias: Option<&[T]>, y: &mut [T]) {
    let hw = d.h * d.w;
    let patch = d.patch();
    let mut col = if d.k == 1 { Vec::new() } else { vec![T::zero(); patch * hw] };
    for n in 0..d.n {
        let xn = &x[n * d.cin * hw..(n + 1) * d.cin * hw];
        let yn = &mut y[n * d.cout * hw..(n + 1) * d.cout * hw];
        let cols: &[T] = if d.k == 1 {
            xn
        } else {
            im2col(xn, d.cin, d.h, d.w, d.k, &mut col);
            &col
        };
        T::gemm(
            d.cout,
            patch,
            hw,
            T::one(),
            wgt,
            (patch as isize, 1),
            cols,
            (hw as isize, 1),
            T::zero(),
            yn,
            (hw as isize, 1),
        );
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                for v in &mut yn[co * hw..(co + 1) * hw] {
                    *v += bv;
                }
            }
        }
    }
}

/// Accumulates gradients for a conv. Any of the output buffers may be absent.
pub(crate) fn conv2d_backward<T: Real>(
    d: &ConvDims,
    x: &[T],
    wgt: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let hw = d.h * d.w;
    let patch = d.patch();
    let mut col = if d.k == 1 { Vec::new() } else { vec![T::zero(); patch * hw] };
    let mut dcol = if d.k == 1 { Vec::new() } else { vec![T::zero(); patch * hw] };
    for n in 0..d.n {
        let xn = &x[n * d.cin * hw..(n + 1) * d.cin * hw];
        let dyn_ = &dy[n * d.cout * hw..(n + 1) * d.cout * hw];
        if let Some(dw) = dw.as_deref_mut() {
            let cols: &[T] = if d.k == 1 {
                xn
            } else {
                im2col(xn, d.cin, d.h, d.w, d.k, &mut col);
                &col
            };
            T::gemm(
                d.cout,
                hw,
                patch,
                T::one(),
                dyn_,
                (hw as isize, 1),
                cols,
                (1, hw as isize),
                T::one(),
                dw,
                (patch as isize, 1),
            );
        }
        if let Some(db) = db.as_deref_mut() {
            for (co, g) in db.iter_mut().enumerate() {
                *g += dyn_[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * d.cin * hw..(n + 1) * d.cin * hw];
            if d.k == 1 {
                T::gemm(
                    patch,
                    d.cout,
                    hw,
                    T::one(),
                    wgt,
                    (1, patch as isize),
                    dyn_,
                    (hw as isize, 1),
                    T::one(),
                    dxn,
                    (hw as isize, 1),
                );
            } else {
                T::gemm(
                    patch,
                    d.cout,
                    hw,
                    T::one(),
                    wgt,
                    (1, patch as isize),
                    dyn_,
                    (hw as isize, 1),
                    T::zero(),
                    &mut dcol,
                    (hw as isize, 1),
                );
                col2im_add(&dcol, d.cin, d.h, d.w, d.k, dxn);
            }
        }
    }
}

/// `y = x·Wᵀ + b` with `x: [n, fin]`, `W: [fout, fin]`.
pub(crate) fn dense_forward<T: Real>(n: usize, fin: usize, fout: usize, x: &[T], w: &[T], b: &[T], y: &mut [T]) {
    for row in y.chunks_exact_mut(fout) {
        row.copy_from_slice(b);
    }
    T::gemm(
        n,
        fin,
        fout,
        T::one(),
        x,
        (fin as isize, 1),
        w,
        (1, fin as isize),
        T::one(),
        y,
        (fout as isize, 1),
    );
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Real>(
    n: usize,
    fin: usize,
    fout: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(dx) = dx {
        T::gemm(
            n,
            fout,
            fin,
            T::one(),
            dy,
            (fout as isize, 1),
            w,
            (fin as isize, 1),
            T::one(),
            dx,
            (fin as isize, 1),
        );
    }
    if let Some(dw) = dw {
        T::gemm(
            fout,
            n,
            fin,
            T::one(),
            dy,
            (1, fout as isize),
            x,
            (fin as isize, 1),
            T::one(),
            dw,
            (fin as isize, 1),
        );
    }
    if let Some(db) = db {
        for row in dy.chunks_exact(fout) {
            for (g, &v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
    }
}

/// Nearest-neighbour ×2 upsampling of `planes` planes of size `h×w`.
pub(crate) fn upsample2x_forward<T: Real>(planes: usize, h: usize, w: usize, x: &[T], y: &mut [T]) {
    let (h2, w2) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * h2 * w2..(p + 1) * h2 * w2];
        for yy in 0..h2 {
            let srow = &src[(yy / 2) * w..(yy / 2 + 1) * w];
            let drow = &mut dst[yy * w2..(yy + 1) * w2];
            for (xx, d) in drow.iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
}

pub(crate) fn upsample2x_backward<T: Real>(planes: usize, h: usize, w: usize, dy: &[T], dx: &mut [T]) {
    let (h2, w2) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &dy[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for yy in 0..h2 {
            let srow = &src[yy * w2..(yy + 1) * w2];
            let drow = &mut dst[(yy / 2) * w..(yy / 2 + 1) * w];
            for (xx, &g) in srow.iter().enumerate() {
                drow[xx / 2] += g;
            }
        }
    }
}
