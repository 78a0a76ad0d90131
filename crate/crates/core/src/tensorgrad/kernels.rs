//! Raw forward/backward kernels over flat `f64` buffers.
//!
//! Every output element is produced by a fixed summation order, so results do
//! not depend on scheduling.

/// `c = alpha * a·b + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
        }
    };
    assert!(a.len() as isize >= span(m, k, rsa, csa));
    assert!(b.len() as isize >= span(k, n, rsb, csb));
    assert!(c.len() as isize >= span(m, n, rsc, csc));
    // SAFETY: the asserts above keep every strided access inside the slices.
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
            rsc,
            csc,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `n` samples; returns N×C_out×H'×W'.
pub fn conv2d_forward(x: &[f64], n: usize, weight: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (rows, p) = (g.rows(), g.cols());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut out = vec![0.0; n * out_len];
    let mut cols = vec![0.0; rows * p];
    for s in 0..n {
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
        let o = &mut out[s * out_len..(s + 1) * out_len];
        gemm(
            g.c_out,
            rows,
            p,
            weight,
            (rows as isize, 1),
            &cols,
            (p as isize, 1),
            0.0,
            o,
            (p as isize, 1),
        );
        for (co, &b) in bias.iter().enumerate() {
            for v in &mut o[co * p..(co + 1) * p] {
                *v += b;
            }
        }
    }
    out
}

/// Gradients of a convolution. Any of the outputs may be skipped.
pub struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub fn conv2d_backward(
    x: &[f64],
    n: usize,
    weight: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads {
    let (rows, p) = (g.rows(), g.cols());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut dx = need.0.then(|| vec![0.0; n * in_len]);
    let mut dw = need.1.then(|| vec![0.0; g.c_out * rows]);
    let mut db = need.2.then(|| vec![0.0; g.c_out]);
    let mut cols = vec![0.0; rows * p];
    for s in 0..n {
        let d = &dout[s * out_len..(s + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += d[co * p..(co + 1) * p].iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
            // dW += dout · colsᵀ
            gemm(
                g.c_out,
                p,
                rows,
                d,
                (p as isize, 1),
                &cols,
                (1, p as isize),
                1.0,
                dw,
                (rows as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dout
            gemm(
                rows,
                g.c_out,
                p,
                weight,
                (1, rows as isize),
                d,
                (p as isize, 1),
                0.0,
                &mut cols,
                (p as isize, 1),
            );
            col2im_add(&cols, g, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// `x·wᵀ + b` for x: N×F, w: G×F, b: G.
pub fn affine_forward(x: &[f64], n: usize, f: usize, weight: &[f64], bias: &[f64], g: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * g];
    gemm(
        n,
        f,
        g,
        x,
        (f as isize, 1),
        weight,
        (1, f as isize),
        0.0,
        &mut out,
        (g as isize, 1),
    );
    for row in out.chunks_mut(g) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    out
}

/// Returns (dx, dw, db) for the affine map.
pub fn affine_backward(
    x: &[f64],
    n: usize,
    f: usize,
    weight: &[f64],
    g: usize,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; n * f];
    gemm(
        n,
        g,
        f,
        dout,
        (g as isize, 1),
        weight,
        (f as isize, 1),
        0.0,
        &mut dx,
        (f as isize, 1),
    );
    let mut dw = vec![0.0; g * f];
    gemm(
        g,
        n,
        f,
        dout,
        (1, g as isize),
        x,
        (f as isize, 1),
        0.0,
        &mut dw,
        (f as isize, 1),
    );
    let mut db = vec![0.0; g];
    for row in dout.chunks(g) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    (dx, dw, db)
}

/// Sampling plan for half-pixel-centred bilinear resampling along one axis.
#[derive(Debug, Clone)]
pub struct LinearTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl LinearTaps {
    /// Source positions use `(dst + 0.5) * src_len / dst_len - 0.5`, clamped
    /// to the valid range.
    pub fn new(src_len: usize, dst_len: usize) -> Self {
        let scale = src_len as f64 / dst_len as f64;
        let max = (src_len - 1) as f64;
        let mut taps = Self {
            lo: Vec::with_capacity(dst_len),
            hi: Vec::with_capacity(dst_len),
            frac: Vec::with_capacity(dst_len),
        };
        for d in 0..dst_len {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push(s - lo as f64);
        }
        taps
    }
}

/// Bilinear resampling of `planes` H×W planes to OH×OW.
pub fn resize_forward(x: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = LinearTaps::new(h, oh);
    let tx = LinearTaps::new(w, ow);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
            for ox in 0..ow {
                let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn resize_backward(dout: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = LinearTaps::new(h, oh);
    let tx = LinearTaps::new(w, ow);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let d = &dout[p * oh * ow..(p + 1) * oh * ow];
        let g = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
            for ox in 0..ow {
                let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let v = d[oy * ow + ox];
                g[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                g[y0 * w + x1] += v * (1.0 - fy) * fx;
                g[y1 * w + x0] += v * fy * (1.0 - fx);
                g[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits: `max(x,0) - x·t + log(1 + e^-|x|)`.
pub fn bce_logits(logits: &[f64], targets: &[f64]) -> f64 {
    let sum: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
        .sum();
    sum / logits.len() as f64
}
