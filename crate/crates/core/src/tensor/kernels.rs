// Slice-level forward/backward kernels. Every loop runs in a fixed order so
// results are bitwise reproducible.

use crate::error::{Error, Result};

/// Row-major view of a matrix, possibly transposed via strides.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a> Mat<'a> {
    fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat { data, rows, cols, transposed: false }
    }

    /// The transpose of a stored `rows×cols` matrix.
    fn t(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat { data, rows: cols, cols: rows, transposed: true }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c[m×n] += a · b`
fn gemm_acc(c: &mut [f32], a: Mat, b: Mat) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(b.rows == k && c.len() == m * n && a.data.len() == m * k && b.data.len() == k * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the assert above keeps every strided access inside the slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    gemm_acc(&mut c, Mat::new(a, m, k), Mat::new(b, k, n));
    c
}

/// Returns `(g·bᵀ, aᵀ·g)`.
pub(crate) fn matmul_backward(
    a: &[f32],
    b: &[f32],
    g: &[f32],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<f32>, Vec<f32>) {
    let mut da = vec![0.0f32; m * k];
    gemm_acc(&mut da, Mat::new(g, m, n), Mat::t(b, k, n));
    let mut db = vec![0.0f32; k * n];
    gemm_acc(&mut db, Mat::t(a, m, k), Mat::new(g, m, n));
    (da, db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::shape("conv2d", input, kernel));
        }
        let (batch, in_ch, in_h, in_w) = (input[0], input[1], input[2], input[3]);
        let (out_ch, k_in, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if k_in != in_ch || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("conv2d", input, kernel));
        }
        let ph = in_h + 2 * padding.0;
        let pw = in_w + 2 * padding.1;
        if kh == 0 || kw == 0 || kh > ph || kw > pw {
            return Err(Error::shape("conv2d", input, kernel));
        }
        Ok(Conv2dGeometry {
            batch,
            in_ch,
            in_h,
            in_w,
            out_ch,
            kh,
            kw,
            stride,
            padding,
            out_h: (ph - kh) / stride.0 + 1,
            out_w: (pw - kw) / stride.1 + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_ch, self.out_h, self.out_w]
    }

    /// Output rows `i` that read input row `ki`, with the input row index.
    fn row_pairs(&self, ki: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.out_h).filter_map(move |i| {
            let r = (i * self.stride.0 + ki).checked_sub(self.padding.0)?;
            (r < self.in_h).then_some((i, r))
        })
    }

    /// Output column range `[lo, hi)` whose reads at kernel column `kj` stay in bounds.
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let (sw, pw) = (self.stride.1, self.padding.1);
        let lo = if kj >= pw { 0 } else { (pw - kj).div_ceil(sw) };
        if self.in_w + pw <= kj {
            return (0, 0);
        }
        let hi = ((self.in_w - 1 + pw - kj) / sw + 1).min(self.out_w);
        (lo.min(hi), hi)
    }
}

/// Unrolls the batch into `[C·kh·kw × N·OH·OW]`; padding reads as zero.
fn im2col(x: &[f32], g: &Conv2dGeometry) -> Vec<f32> {
    let p = g.out_h * g.out_w;
    let np = g.batch * p;
    let plane_in = g.in_h * g.in_w;
    let mut cols = vec![0.0f32; g.in_ch * g.kh * g.kw * np];
    for c in 0..g.in_ch {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let (lo, hi) = g.col_range(kj);
                for n in 0..g.batch {
                    let xplane = &x[(n * g.in_ch + c) * plane_in..(n * g.in_ch + c + 1) * plane_in];
                    let dst = &mut cols[row * np + n * p..row * np + (n + 1) * p];
                    for (i, r) in g.row_pairs(ki) {
                        let xrow = &xplane[r * g.in_w..(r + 1) * g.in_w];
                        let drow = &mut dst[i * g.out_w..(i + 1) * g.out_w];
                        for j in lo..hi {
                            drow[j] = xrow[j * g.stride.1 + kj - g.padding.1];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adds `[C·kh·kw × N·OH·OW]` columns back onto an input-shaped buffer.
fn col2im(cols: &[f32], g: &Conv2dGeometry, dx: &mut [f32]) {
    let p = g.out_h * g.out_w;
    let np = g.batch * p;
    let plane_in = g.in_h * g.in_w;
    for c in 0..g.in_ch {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let (lo, hi) = g.col_range(kj);
                for n in 0..g.batch {
                    let base = (n * g.in_ch + c) * plane_in;
                    let src = &cols[row * np + n * p..row * np + (n + 1) * p];
                    for (i, r) in g.row_pairs(ki) {
                        let srow = &src[i * g.out_w..(i + 1) * g.out_w];
                        let roff = base + r * g.in_w;
                        for j in lo..hi {
                            dx[roff + j * g.stride.1 + kj - g.padding.1] += srow[j];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d(x: &[f32], w: &[f32], bias: Option<&[f32]>, g: &Conv2dGeometry) -> Vec<f32> {
    let p = g.out_h * g.out_w;
    let np = g.batch * p;
    let ckk = g.in_ch * g.kh * g.kw;
    let cols = im2col(x, g);
    let mut y = vec![0.0f32; g.out_ch * np];
    if let Some(b) = bias {
        for (o, row) in y.chunks_mut(np).enumerate() {
            row.iter_mut().for_each(|v| *v = b[o]);
        }
    }
    gemm_acc(&mut y, Mat::new(w, g.out_ch, ckk), Mat::new(&cols, ckk, np));
    // [O × N·P] -> [N × O × P]
    let mut out = vec![0.0f32; g.batch * g.out_ch * p];
    for o in 0..g.out_ch {
        for n in 0..g.batch {
            out[(n * g.out_ch + o) * p..(n * g.out_ch + o + 1) * p]
                .copy_from_slice(&y[o * np + n * p..o * np + (n + 1) * p]);
        }
    }
    out
}

/// Returns `(dx, dw, db)`.
pub(crate) fn conv2d_backward(
    x: &[f32],
    w: &[f32],
    gout: &[f32],
    g: &Conv2dGeometry,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let p = g.out_h * g.out_w;
    let np = g.batch * p;
    let ckk = g.in_ch * g.kh * g.kw;
    // [N × O × P] -> [O × N·P]
    let mut gm = vec![0.0f32; g.out_ch * np];
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            gm[o * np + n * p..o * np + (n + 1) * p]
                .copy_from_slice(&gout[(n * g.out_ch + o) * p..(n * g.out_ch + o + 1) * p]);
        }
    }
    let db: Vec<f32> = gm.chunks(np).map(|r| r.iter().sum()).collect();
    let cols = im2col(x, g);
    let mut dw = vec![0.0f32; w.len()];
    gemm_acc(&mut dw, Mat::new(&gm, g.out_ch, np), Mat::t(&cols, ckk, np));
    let mut dcols = vec![0.0f32; ckk * np];
    gemm_acc(&mut dcols, Mat::t(w, g.out_ch, ckk), Mat::new(&gm, g.out_ch, np));
    let mut dx = vec![0.0f32; x.len()];
    col2im(&dcols, g, &mut dx);
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2dGeometry {
    pub batch: usize,
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl Pool2dGeometry {
    pub fn new(input: &[usize], kernel: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::shape("maxpool2d", input, &[kernel.0, kernel.1]));
        }
        let (kh, kw) = kernel;
        if kh == 0 || kw == 0 || kh > input[2] || kw > input[3] || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("maxpool2d", input, &[kh, kw]));
        }
        Ok(Pool2dGeometry {
            batch: input[0],
            channels: input[1],
            in_h: input[2],
            in_w: input[3],
            kh,
            kw,
            stride,
            out_h: (input[2] - kh) / stride.0 + 1,
            out_w: (input[3] - kw) / stride.1 + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.out_h, self.out_w]
    }
}

/// Max pooling; the argmax is the first maximal element in window scan order.
pub(crate) fn maxpool2d(x: &[f32], g: &Pool2dGeometry) -> (Vec<f32>, Vec<usize>) {
    let planes = g.batch * g.channels;
    let plane_in = g.in_h * g.in_w;
    let mut out = Vec::with_capacity(planes * g.out_h * g.out_w);
    let mut arg = Vec::with_capacity(out.capacity());
    for p in 0..planes {
        let base = p * plane_in;
        for i in 0..g.out_h {
            for j in 0..g.out_w {
                let mut best_idx = base + i * g.stride.0 * g.in_w + j * g.stride.1;
                let mut best = x[best_idx];
                for ki in 0..g.kh {
                    let row = base + (i * g.stride.0 + ki) * g.in_w;
                    for kj in 0..g.kw {
                        let idx = row + j * g.stride.1 + kj;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}

pub(crate) struct BatchStats {
    pub mean: Vec<f32>,
    /// Biased (population) variance, used for normalisation.
    pub var: Vec<f32>,
}

/// Per-channel statistics of an `N×C×H×W` buffer.
pub(crate) fn channel_stats(x: &[f32], shape: &[usize]) -> BatchStats {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let count = (n * plane) as f32;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut s = 0.0f32;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            s += x[off..off + plane].iter().sum::<f32>();
        }
        let m = s / count;
        let mut ss = 0.0f32;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            ss += x[off..off + plane].iter().map(|v| (v - m) * (v - m)).sum::<f32>();
        }
        mean[ch] = m;
        var[ch] = ss / count;
    }
    BatchStats { mean, var }
}

/// `y = gamma·(x − mean)·inv_std + beta`; returns `(y, xhat)`.
pub(crate) fn batchnorm_apply(
    x: &[f32],
    shape: &[usize],
    mean: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    beta: &[f32],
) -> (Vec<f32>, Vec<f32>) {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut y = vec![0.0f32; x.len()];
    let mut xhat = vec![0.0f32; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for k in off..off + plane {
                let h = (x[k] - mean[ch]) * inv_std[ch];
                xhat[k] = h;
                y[k] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (y, xhat)
}

/// Returns `(dgamma, dbeta)`: per-channel sums of `g·xhat` and `g`.
pub(crate) fn batchnorm_param_grads(g: &[f32], xhat: &[f32], shape: &[usize]) -> (Vec<f32>, Vec<f32>) {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let mut sg = 0.0f32;
            let mut sgx = 0.0f32;
            for k in off..off + plane {
                sg += g[k];
                sgx += g[k] * xhat[k];
            }
            dgamma[ch] += sgx;
            dbeta[ch] += sg;
        }
    }
    (dgamma, dbeta)
}

/// Input gradient of train-mode batch normalisation.
pub(crate) fn batchnorm_train_dx(
    g: &[f32],
    xhat: &[f32],
    shape: &[usize],
    gamma: &[f32],
    inv_std: &[f32],
    dgamma: &[f32],
    dbeta: &[f32],
) -> Vec<f32> {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = (n * plane) as f32;
    let mut dx = vec![0.0f32; g.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let scale = gamma[ch] * inv_std[ch] / m;
            for k in off..off + plane {
                dx[k] = scale * (m * g[k] - dbeta[ch] - xhat[k] * dgamma[ch]);
            }
        }
    }
    dx
}

/// Row-wise log-softmax over the last axis, stabilised by the row maximum.
pub(crate) fn log_softmax_rows(x: &[f32], cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for (row, orow) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut s = 0.0f32;
        for &v in row {
            s += (v - mx).exp();
        }
        let lse = mx + s.ln();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    out
}

fn softmax_row_f64(row: impl Iterator<Item = f64> + Clone) -> (Vec<f64>, Vec<f64>) {
    let mx = row.clone().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + row.clone().map(|v| (v - mx).exp()).sum::<f64>().ln();
    let lp: Vec<f64> = row.map(|v| v - lse).collect();
    (lp.iter().map(|v| v.exp()).collect(), lp)
}

/// Softened KL divergence `tau^2 / N * sum p_T (log p_T - log p_S)`, in f64.
///
/// Returns the loss and `softmax(z_s / tau) - softmax(z_t / tau)`, from which
/// the gradient with respect to `z_s` follows by the factor `tau / N`.
pub(crate) fn soft_kl(z_t: &[f32], z_s: &[f32], cols: usize, tau: f64) -> (f64, Vec<f64>) {
    let n = z_s.len() / cols;
    let mut sum = 0.0f64;
    let mut diff = Vec::with_capacity(z_s.len());
    for (rt, rs) in z_t.chunks(cols).zip(z_s.chunks(cols)) {
        let (pt, lt) = softmax_row_f64(rt.iter().map(|&v| v as f64 / tau));
        let (ps, ls) = softmax_row_f64(rs.iter().map(|&v| v as f64 / tau));
        for k in 0..cols {
            sum += pt[k] * (lt[k] - ls[k]);
            diff.push(ps[k] - pt[k]);
        }
    }
    (sum * tau * tau / n as f64, diff)
}
