//! Raw NCHW kernels. All buffers are row-major.

/// `c = a·b + beta·c` for strided `a` (`m×k`) and `b` (`k×n`); `c` is dense
/// row-major `m×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    // SAFETY: the bounds above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn source(&self, o: usize, kk: usize, stride: usize, limit: usize) -> Option<usize> {
        let i = (o * stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

/// Unfolds one sample `x` (`c×h×w`) into `cols` (`c·k·k × ho·wo`).
pub fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let out = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let dst = &mut out[oy * g.wo..(oy + 1) * g.wo];
                    match g.source(oy, ky, g.stride, g.h) {
                        None => dst.fill(0.0),
                        Some(iy) => {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = g
                                    .source(ox, kx, g.stride, g.w)
                                    .map_or(0.0, |ix| xc[iy * g.w + ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` into `dx`.
pub fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        let xc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let Some(iy) = g.source(oy, ky, g.stride, g.h) else {
                        continue;
                    };
                    for ox in 0..g.wo {
                        if let Some(ix) = g.source(ox, kx, g.stride, g.w) {
                            xc[iy * g.w + ix] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PoolGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl PoolGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize) -> Self {
        Self {
            c,
            h,
            w,
            k,
            stride,
            ho: (h - k) / stride + 1,
            wo: (w - k) / stride + 1,
        }
    }
}

/// Max pooling over `n` samples; returns the flat input index of each maximum
/// (first one on ties).
pub fn max_pool(x: &[f64], n: usize, g: &PoolGeom, y: &mut [f64]) -> Vec<usize> {
    let mut arg = vec![0; y.len()];
    let mut o = 0;
    for plane in 0..n * g.c {
        let base = plane * g.h * g.w;
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut best = f64::NEG_INFINITY;
                let mut at = base;
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let i = base + (oy * g.stride + ky) * g.w + ox * g.stride + kx;
                        if x[i] > best {
                            best = x[i];
                            at = i;
                        }
                    }
                }
                y[o] = best;
                arg[o] = at;
                o += 1;
            }
        }
    }
    arg
}

pub fn avg_pool(x: &[f64], n: usize, g: &PoolGeom, y: &mut [f64]) {
    let scale = 1.0 / (g.k * g.k) as f64;
    let mut o = 0;
    for plane in 0..n * g.c {
        let base = plane * g.h * g.w;
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut s = 0.0;
                for ky in 0..g.k {
                    let row = base + (oy * g.stride + ky) * g.w + ox * g.stride;
                    s += x[row..row + g.k].iter().sum::<f64>();
                }
                y[o] = s * scale;
                o += 1;
            }
        }
    }
}

pub fn avg_pool_backward(dy: &[f64], n: usize, g: &PoolGeom, dx: &mut [f64]) {
    let scale = 1.0 / (g.k * g.k) as f64;
    let mut o = 0;
    for plane in 0..n * g.c {
        let base = plane * g.h * g.w;
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let d = dy[o] * scale;
                for ky in 0..g.k {
                    let row = base + (oy * g.stride + ky) * g.w + ox * g.stride;
                    dx[row..row + g.k].iter_mut().for_each(|v| *v += d);
                }
                o += 1;
            }
        }
    }
}
