//! Raw forward/backward loops over flat buffers. Shapes are validated by the caller.

/// Stride and per-side zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub pad_top: usize,
    pub pad_bottom: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv2dGeometry {
    pub fn symmetric(stride: usize, pad: usize) -> Self {
        Conv2dGeometry {
            stride,
            pad_top: pad,
            pad_bottom: pad,
            pad_left: pad,
            pad_right: pad,
        }
    }

    /// Stride-1 padding that keeps the spatial size for a `k`×`k` kernel.
    /// Even kernels put the extra row/column after the input.
    pub fn same(k: usize) -> Self {
        let before = (k - 1) / 2;
        let after = k - 1 - before;
        Conv2dGeometry {
            stride: 1,
            pad_top: before,
            pad_bottom: after,
            pad_left: before,
            pad_right: after,
        }
    }

    /// Output spatial size, or `None` when the kernel exceeds the padded input.
    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let ph = h + self.pad_top + self.pad_bottom;
        let pw = w + self.pad_left + self.pad_right;
        if self.stride == 0 || kh > ph || kw > pw {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub f: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Calls `visit(out_offset, in_offset, kernel_offset)` for every valid tap.
#[inline]
fn for_each_tap(d: &ConvDims, g: &Conv2dGeometry, mut visit: impl FnMut(usize, usize, usize)) {
    for n in 0..d.n {
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let out_off = ((n * d.oh + oy) * d.ow + ox) * d.f;
                for ky in 0..d.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..d.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        let in_off = ((n * d.h + iy as usize) * d.w + ix as usize) * d.c;
                        let k_off = (ky * d.kw + kx) * d.c * d.f;
                        visit(out_off, in_off, k_off);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(x: &[f64], k: &[f64], b: &[f64], d: &ConvDims, g: &Conv2dGeometry) -> Vec<f64> {
    let mut out = vec![0.0; d.n * d.oh * d.ow * d.f];
    for chunk in out.chunks_mut(d.f) {
        chunk.copy_from_slice(b);
    }
    for_each_tap(d, g, |o, i, kk| {
        let orow = &mut out[o..o + d.f];
        for c in 0..d.c {
            let xv = x[i + c];
            if xv == 0.0 {
                continue;
            }
            let krow = &k[kk + c * d.f..kk + (c + 1) * d.f];
            for (ov, &kv) in orow.iter_mut().zip(krow) {
                *ov += xv * kv;
            }
        }
    });
    out
}

/// Returns (dx, dk, db).
pub(crate) fn conv2d_backward(
    x: &[f64],
    k: &[f64],
    dy: &[f64],
    d: &ConvDims,
    g: &Conv2dGeometry,
    want_x: bool,
    want_k: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = if want_x { vec![0.0; x.len()] } else { Vec::new() };
    let mut dk = if want_k { vec![0.0; k.len()] } else { Vec::new() };
    let mut db = vec![0.0; d.f];
    for row in dy.chunks(d.f) {
        for (a, &v) in db.iter_mut().zip(row) {
            *a += v;
        }
    }
    for_each_tap(d, g, |o, i, kk| {
        let grow = &dy[o..o + d.f];
        for c in 0..d.c {
            let krow = &k[kk + c * d.f..kk + (c + 1) * d.f];
            if want_x {
                let mut acc = 0.0;
                for (&gv, &kv) in grow.iter().zip(krow) {
                    acc += gv * kv;
                }
                dx[i + c] += acc;
            }
            if want_k {
                let xv = x[i + c];
                let dkrow = &mut dk[kk + c * d.f..kk + (c + 1) * d.f];
                for (a, &gv) in dkrow.iter_mut().zip(grow) {
                    *a += xv * gv;
                }
            }
        }
    });
    (dx, dk, db)
}

/// `x` is `rows × n`, `w` is `n × u`.
pub(crate) fn dense_forward(x: &[f64], w: &[f64], b: &[f64], rows: usize, n: usize, u: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * u);
    for r in 0..rows {
        let mut row = b.to_vec();
        for i in 0..n {
            let xv = x[r * n + i];
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[i * u..(i + 1) * u]) {
                *o += xv * wv;
            }
        }
        out.extend(row);
    }
    out
}

pub(crate) fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    n: usize,
    u: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; rows * n];
    let mut dw = vec![0.0; n * u];
    let mut db = vec![0.0; u];
    for r in 0..rows {
        let g = &dy[r * u..(r + 1) * u];
        for (a, &v) in db.iter_mut().zip(g) {
            *a += v;
        }
        for i in 0..n {
            let wrow = &w[i * u..(i + 1) * u];
            let mut acc = 0.0;
            for (&gv, &wv) in g.iter().zip(wrow) {
                acc += gv * wv;
            }
            dx[r * n + i] = acc;
            let xv = x[r * n + i];
            if xv != 0.0 {
                for (a, &gv) in dw[i * u..(i + 1) * u].iter_mut().zip(g) {
                    *a += xv * gv;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Softmax over contiguous rows of length `n`, max-shifted.
pub(crate) fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(n) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut z = 0.0;
        for &v in row {
            let e = (v - m).exp();
            z += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= z;
        }
    }
    out
}

pub(crate) fn softmax_rows_backward(y: &[f64], dy: &[f64], n: usize) -> Vec<f64> {
    let mut dx = Vec::with_capacity(y.len());
    for (yr, gr) in y.chunks(n).zip(dy.chunks(n)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
    }
    dx
}

/// Per-channel mean and biased variance over all leading positions.
pub(crate) fn channel_moments(x: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (x.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for row in x.chunks(c) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; c];
    for row in x.chunks(c) {
        for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}
