//! Layer primitives. Convolution and normalization work on one sample laid
//! out as `channels × height × width`; dense layers work on a batch matrix.

use rand::Rng;

use super::params::{join, Parameters, TensorView};
use super::real::{dot, lane_sum, sum};
use super::{gemm, Matrix, Real};
use crate::rng::StreamRng;

/// Kaiming-uniform bound for a layer followed by ReLU.
pub(crate) fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// LeCun-uniform bound for a layer with a linear output.
pub(crate) fn lecun_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

pub(crate) fn uniform_vec<T: Real>(n: usize, bound: f64, rng: &mut StreamRng) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect()
}

/// Square-kernel 2-D convolution via im2col + GEMM.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out_channels × (in_channels · kernel²)`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut StreamRng,
    ) -> Self {
        let mut c = Self::zeros(in_channels, out_channels, kernel, stride, padding);
        let fan_in = in_channels * kernel * kernel;
        c.weight = uniform_vec(c.weight.len(), kaiming_bound(fan_in), rng);
        c
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Row layout used by `im2col`/`col2im`: every input row is zero padded
    /// and split into `stride` phases so that each kernel column reads one
    /// contiguous run of `wo` values.
    fn phase_len(&self, w: usize) -> usize {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let wo = self.out_size(w);
        (wo + (k - 1) / s).max((w + p).div_ceil(s))
    }

    /// For `n` samples, `col[(c·k + ky)·k + kx, i·ho·wo + oy·wo + ox] =
    /// x[i, c, oy·s + ky − p, ox·s + kx − p]`.
    pub fn im2col(&self, x: &[T], n: usize, h: usize, w: usize, col: &mut Vec<T>) {
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (pl, hw, cols) = (self.phase_len(w), ho * wo, n * ho * wo);
        col.clear();
        col.resize(self.patch_len() * cols, T::zero());
        // deint[iy][ph][j] = padded row iy at column j·s + ph
        let mut deint = vec![T::zero(); h * s * pl];
        for (i, sample) in x.chunks_exact(self.in_channels * h * w).enumerate() {
            for (c, plane) in sample.chunks_exact(h * w).enumerate() {
                for (row, drow) in plane.chunks_exact(w).zip(deint.chunks_exact_mut(s * pl)) {
                    for (ph, dst) in drow.chunks_exact_mut(pl).enumerate() {
                        for (j, d) in dst.iter_mut().enumerate() {
                            if let Some(&v) = (j * s + ph).checked_sub(p).and_then(|ix| row.get(ix)) {
                                *d = v;
                            }
                        }
                    }
                }
                for ky in 0..k {
                    for oy in 0..ho {
                        let Some(iy) = (oy * s + ky).checked_sub(p).filter(|&iy| iy < h) else {
                            continue;
                        };
                        let drow = &deint[iy * s * pl..(iy + 1) * s * pl];
                        for kx in 0..k {
                            let at = ((c * k + ky) * k + kx) * cols + i * hw + oy * wo;
                            let from = (kx % s) * pl + kx / s;
                            col[at..at + wo].copy_from_slice(&drow[from..from + wo]);
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], n: usize, h: usize, w: usize) -> Vec<T> {
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (pl, hw, cols) = (self.phase_len(w), ho * wo, n * ho * wo);
        let mut x = vec![T::zero(); n * self.in_channels * h * w];
        let mut deint = vec![T::zero(); h * s * pl];
        for (i, sample) in x.chunks_exact_mut(self.in_channels * h * w).enumerate() {
            for (c, plane) in sample.chunks_exact_mut(h * w).enumerate() {
                deint.fill(T::zero());
                for ky in 0..k {
                    for oy in 0..ho {
                        let Some(iy) = (oy * s + ky).checked_sub(p).filter(|&iy| iy < h) else {
                            continue;
                        };
                        let drow = &mut deint[iy * s * pl..(iy + 1) * s * pl];
                        for kx in 0..k {
                            let at = ((c * k + ky) * k + kx) * cols + i * hw + oy * wo;
                            let from = (kx % s) * pl + kx / s;
                            for (d, &g) in drow[from..from + wo].iter_mut().zip(&col[at..at + wo]) {
                                *d += g;
                            }
                        }
                    }
                }
                for (row, drow) in plane.chunks_exact_mut(w).zip(deint.chunks_exact(s * pl)) {
                    for (ph, src) in drow.chunks_exact(pl).enumerate() {
                        for (j, &g) in src.iter().enumerate() {
                            if let Some(v) = (j * s + ph).checked_sub(p).and_then(|ix| row.get_mut(ix)) {
                                *v = g;
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// `n` samples of `in_channels × h × w` → `n × out_channels × ho × wo`,
    /// as one GEMM over the whole group.
    pub fn forward(&self, x: &[T], n: usize, h: usize, w: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), n * self.in_channels * h * w);
        let mut col = Vec::new();
        self.im2col(x, n, h, w, &mut col);
        self.forward_col(&col, n)
    }

    /// Forward pass from a prepared `im2col` matrix of `n` samples.
    pub fn forward_col(&self, col: &[T], n: usize) -> Vec<T> {
        let hw = col.len() / (self.patch_len() * n);
        let mut grouped = vec![T::zero(); self.out_channels * n * hw];
        gemm(
            false,
            false,
            self.out_channels,
            n * hw,
            self.patch_len(),
            T::one(),
            &self.weight,
            col,
            T::zero(),
            &mut grouped,
        );
        let mut out = Vec::with_capacity(grouped.len());
        for i in 0..n {
            for (c, &b) in self.bias.iter().enumerate() {
                let at = (c * n + i) * hw;
                out.extend(grouped[at..at + hw].iter().map(|&v| v + b));
            }
        }
        out
    }

    /// Accumulates weight/bias gradients into `grad`; returns the input
    /// gradient when `want_input_grad` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[T],
        n: usize,
        h: usize,
        w: usize,
        dout: &[T],
        grad: &mut Conv2d<T>,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let mut col = Vec::new();
        self.im2col(x, n, h, w, &mut col);
        self.backward_col(&col, n, h, w, dout, grad, want_input_grad)
    }

    /// `backward` from the `im2col` matrix of the forward input.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_col(
        &self,
        col: &[T],
        n: usize,
        h: usize,
        w: usize,
        dout: &[T],
        grad: &mut Conv2d<T>,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let hw = self.out_size(h) * self.out_size(w);
        let kk = self.patch_len();
        let mut grouped = vec![T::zero(); self.out_channels * n * hw];
        for (j, chunk) in dout.chunks_exact(hw).enumerate() {
            let (i, c) = (j / self.out_channels, j % self.out_channels);
            grad.bias[c] += sum(chunk);
            grouped[(c * n + i) * hw..(c * n + i + 1) * hw].copy_from_slice(chunk);
        }
        gemm(
            false,
            true,
            self.out_channels,
            kk,
            n * hw,
            T::one(),
            &grouped,
            col,
            T::one(),
            &mut grad.weight,
        );
        if !want_input_grad {
            return None;
        }
        let mut dcol = vec![T::zero(); kk * n * hw];
        gemm(
            true,
            false,
            kk,
            n * hw,
            self.out_channels,
            T::one(),
            &self.weight,
            &grouped,
            T::zero(),
            &mut dcol,
        );
        Some(self.col2im(&dcol, n, h, w))
    }
}

impl<T: Real> Parameters<T> for Conv2d<T> {
    fn collect_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        out.push(TensorView {
            name: join(prefix, "weight"),
            shape: vec![self.out_channels, self.in_channels, self.kernel, self.kernel],
            data: &self.weight,
        });
        out.push(TensorView {
            name: join(prefix, "bias"),
            shape: vec![self.out_channels],
            data: &self.bias,
        });
    }

    fn collect_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Per-sample normalization over all of `channels × spatial`, followed by a
/// per-channel affine map. Independent of the other samples in a batch, so
/// training and evaluation share one code path.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNorm<T> {
    pub channels: usize,
    pub eps: f64,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> ChannelNorm<T> {
    pub fn new(channels: usize, eps: f64) -> Self {
        Self {
            channels,
            eps,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
        }
    }

    /// Writes the standardized input to `xhat` and returns `1/σ`.
    pub fn normalize(&self, x: &[T], xhat: &mut Vec<T>) -> T {
        let n = T::from_usize(x.len()).unwrap();
        let mean = sum(x) / n;
        let var = lane_sum(x.len(), |i| (x[i] - mean) * (x[i] - mean)) / n;
        let rstd = T::one() / (var + T::lit(self.eps)).sqrt();
        xhat.clear();
        xhat.extend(x.iter().map(|&v| (v - mean) * rstd));
        rstd
    }

    /// Per-channel `γ·x̂ + β`.
    pub fn affine(&self, xhat: &[T]) -> Vec<T> {
        let hw = xhat.len() / self.channels;
        let mut y = Vec::with_capacity(xhat.len());
        for (c, chunk) in xhat.chunks_exact(hw).enumerate() {
            let (g, b) = (self.gamma[c], self.beta[c]);
            y.extend(chunk.iter().map(|&v| g * v + b));
        }
        y
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut xhat = Vec::new();
        self.normalize(x, &mut xhat);
        self.affine(&xhat)
    }

    /// Input gradient from the saved `xhat` and `rstd`; accumulates γ/β
    /// gradients into `grad`.
    pub fn backward(&self, xhat: &[T], rstd: T, dy: &[T], grad: &mut ChannelNorm<T>) -> Vec<T> {
        let hw = dy.len() / self.channels;
        let n = T::from_usize(dy.len()).unwrap();
        let mut dxhat = Vec::with_capacity(dy.len());
        for c in 0..self.channels {
            let range = c * hw..(c + 1) * hw;
            let (dyc, xc) = (&dy[range.clone()], &xhat[range]);
            grad.gamma[c] += dot(dyc, xc);
            grad.beta[c] += sum(dyc);
            let g = self.gamma[c];
            dxhat.extend(dyc.iter().map(|&d| d * g));
        }
        let sum_d = sum(&dxhat);
        let sum_dx = dot(&dxhat, xhat);
        let scale = rstd / n;
        for (d, &xh) in dxhat.iter_mut().zip(xhat) {
            *d = scale * (n * *d - sum_d - xh * sum_dx);
        }
        dxhat
    }
}

impl<T: Real> Parameters<T> for ChannelNorm<T> {
    fn collect_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        out.push(TensorView {
            name: join(prefix, "gamma"),
            shape: vec![self.channels],
            data: &self.gamma,
        });
        out.push(TensorView {
            name: join(prefix, "beta"),
            shape: vec![self.channels],
            data: &self.beta,
        });
    }

    fn collect_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}

/// Fully connected layer, `y = x · Wᵀ + b` over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn init_uniform(inputs: usize, outputs: usize, bound: f64, rng: &mut StreamRng) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        d.weight = uniform_vec(d.weight.len(), bound, rng);
        d
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        assert_eq!(x.cols, self.inputs, "dense input width");
        let mut y = Matrix::zeros(x.rows, self.outputs);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(
            false,
            true,
            x.rows,
            self.outputs,
            self.inputs,
            T::one(),
            &x.data,
            &self.weight,
            T::one(),
            &mut y.data,
        );
        y
    }

    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>, grad: &mut Dense<T>) -> Matrix<T> {
        gemm(
            true,
            false,
            self.outputs,
            self.inputs,
            x.rows,
            T::one(),
            &dy.data,
            &x.data,
            T::one(),
            &mut grad.weight,
        );
        for r in 0..dy.rows {
            for (b, &g) in grad.bias.iter_mut().zip(dy.row(r)) {
                *b += g;
            }
        }
        let mut dx = Matrix::zeros(x.rows, self.inputs);
        gemm(
            false,
            false,
            x.rows,
            self.inputs,
            self.outputs,
            T::one(),
            &dy.data,
            &self.weight,
            T::zero(),
            &mut dx.data,
        );
        dx
    }
}

impl<T: Real> Parameters<T> for Dense<T> {
    fn collect_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        out.push(TensorView {
            name: join(prefix, "weight"),
            shape: vec![self.outputs, self.inputs],
            data: &self.weight,
        });
        out.push(TensorView {
            name: join(prefix, "bias"),
            shape: vec![self.outputs],
            data: &self.bias,
        });
    }

    fn collect_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the activation output was not positive.
pub fn relu_backward_inplace<T: Real>(activated: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Global average pooling of `channels × hw` to `channels`.
pub fn global_avg_pool<T: Real>(x: &[T], channels: usize) -> Vec<T> {
    let hw = x.len() / channels;
    let n = T::from_usize(hw).unwrap();
    x.chunks_exact(hw)
        .map(|c| sum(c) / n)
        .collect()
}

pub fn global_avg_pool_backward<T: Real>(dfeat: &[T], hw: usize) -> Vec<T> {
    let n = T::from_usize(hw).unwrap();
    dfeat
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / n, hw))
        .collect()
}
