//! Raw compute kernels used by the tape. Layout conventions:
//! sequence batches are `[batch, channels, time]` with time contiguous,
//! convolution weights are `[out, in, kernel]`.

use crate::par;

/// `c = a · b` for row-major `a: [m, k]`, `b: [k, n]`, with optional transposes
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    // bounds of the strided views
    let a_max = (m as isize - 1) * a_strides.0 + (k as isize - 1) * a_strides.1;
    let b_max = (k as isize - 1) * b_strides.0 + (n as isize - 1) * b_strides.1;
    assert!(a_max >= 0 && (a_max as usize) < a.len());
    assert!(b_max >= 0 && (b_max as usize) < b.len());
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above keep every strided access inside `a`, `b`, `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub time: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_time(&self) -> usize {
        let padded = self.time + 2 * self.padding;
        if padded < self.kernel {
            0
        } else {
            (padded - self.kernel) / self.stride + 1
        }
    }

    fn rows(&self) -> usize {
        self.in_channels * self.kernel
    }
}

/// Unfolds `x` into columns `[in*kernel, batch*out_time]`.
fn im2col(g: &ConvGeometry, x: &[f64]) -> Vec<f64> {
    let tout = g.out_time();
    let cols_n = g.batch * tout;
    let mut cols = vec![0.0; g.rows() * cols_n];
    par::for_each_chunk_mut(&mut cols, cols_n, |row, dst| {
        let i = row / g.kernel;
        let kk = row % g.kernel;
        for b in 0..g.batch {
            let src = &x[(b * g.in_channels + i) * g.time..][..g.time];
            let out = &mut dst[b * tout..][..tout];
            for (t, o) in out.iter_mut().enumerate() {
                let pos = (t * g.stride + kk) as isize - g.padding as isize;
                if pos >= 0 && (pos as usize) < g.time {
                    *o = src[pos as usize];
                }
            }
        }
    });
    cols
}

/// Folds column gradients back onto the input layout.
fn col2im(g: &ConvGeometry, cols: &[f64]) -> Vec<f64> {
    let tout = g.out_time();
    let cols_n = g.batch * tout;
    let mut dx = vec![0.0; g.batch * g.in_channels * g.time];
    let chunk = g.in_channels * g.time;
    par::for_each_chunk_mut(&mut dx, chunk, |b, dst| {
        for i in 0..g.in_channels {
            let row_dst = &mut dst[i * g.time..][..g.time];
            for kk in 0..g.kernel {
                let src = &cols[(i * g.kernel + kk) * cols_n + b * tout..][..tout];
                for (t, v) in src.iter().enumerate() {
                    let pos = (t * g.stride + kk) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < g.time {
                        row_dst[pos as usize] += v;
                    }
                }
            }
        }
    });
    dx
}

/// Cross-correlation forward: returns `[batch, out, out_time]`.
pub fn conv1d_forward(g: &ConvGeometry, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let tout = g.out_time();
    let cols_n = g.batch * tout;
    let cols = im2col(g, x);
    let mut mat = vec![0.0; g.out_channels * cols_n];
    let rows = g.rows();
    gemm(
        g.out_channels,
        rows,
        cols_n,
        w,
        (rows as isize, 1),
        &cols,
        (cols_n as isize, 1),
        &mut mat,
        false,
    );
    let mut out = vec![0.0; g.batch * g.out_channels * tout];
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            let src = &mat[o * cols_n + b * tout..][..tout];
            let dst = &mut out[(b * g.out_channels + o) * tout..][..tout];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bias[o];
            }
        }
    }
    out
}

pub struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

/// Gradients of the convolution given the upstream gradient `gy`.
pub fn conv1d_backward(
    g: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    need: (bool, bool, bool),
) -> ConvGrads {
    let tout = g.out_time();
    let cols_n = g.batch * tout;
    let rows = g.rows();
    let mut gmat = vec![0.0; g.out_channels * cols_n];
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            let src = &gy[(b * g.out_channels + o) * tout..][..tout];
            gmat[o * cols_n + b * tout..][..tout].copy_from_slice(src);
        }
    }
    let dw = need.1.then(|| {
        let cols = im2col(g, x);
        let mut dw = vec![0.0; g.out_channels * rows];
        // dW = G · colsᵀ
        gemm(
            g.out_channels,
            cols_n,
            rows,
            &gmat,
            (cols_n as isize, 1),
            &cols,
            (1, cols_n as isize),
            &mut dw,
            false,
        );
        dw
    });
    let db = need.2.then(|| {
        (0..g.out_channels)
            .map(|o| gmat[o * cols_n..][..cols_n].iter().sum())
            .collect()
    });
    let dx = need.0.then(|| {
        let mut dcols = vec![0.0; rows * cols_n];
        // dcols = Wᵀ · G
        gemm(
            rows,
            g.out_channels,
            cols_n,
            w,
            (1, rows as isize),
            &gmat,
            (cols_n as isize, 1),
            &mut dcols,
            false,
        );
        col2im(g, &dcols)
    });
    ConvGrads { dx, dw, db }
}

/// `[rows, d]` pairwise negative squared distances against `[k, d]` entries.
pub fn neg_sq_dist(z: &[f64], rows: usize, c: &[f64], k: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * k];
    par::for_each_chunk_mut(&mut out, k, |s, dst| {
        let zs = &z[s * d..][..d];
        for (j, o) in dst.iter_mut().enumerate() {
            let cj = &c[j * d..][..d];
            let mut acc = 0.0;
            for (a, b) in zs.iter().zip(cj) {
                let diff = a - b;
                acc += diff * diff;
            }
            *o = -acc;
        }
    });
    out
}
