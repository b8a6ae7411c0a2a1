use super::layers::{global_avg_pool, global_avg_pool_backward, relu_inplace, ChannelNorm, Conv2d};
use super::params::{join, Parameters, TensorView};
use super::{Matrix, Real};
use crate::data::Image;
use crate::exec::Execution;
use crate::rng::StreamRng;
use crate::{Error, Result};

/// Samples per convolution GEMM and per gradient partial sum. Fixed so that
/// results do not depend on the thread count.
const GROUP: usize = 8;

/// Convolution → ReLU → normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub norm: ChannelNorm<T>,
}

impl<T: Real> Parameters<T> for ConvBlock<T> {
    fn collect_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        self.conv.collect_tensors(&join(prefix, "conv"), out);
        self.norm.collect_tensors(&join(prefix, "norm"), out);
    }

    fn collect_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        self.conv.collect_tensors_mut(out);
        self.norm.collect_tensors_mut(out);
    }
}

/// Stack of strided conv blocks followed by global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor<T> {
    pub input_size: usize,
    pub blocks: Vec<ConvBlock<T>>,
}

/// Activations a group of samples needs for its backward pass. Buffers are
/// reused when a tape is refilled, so keep tapes around between batches.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    n: usize,
    /// `im2col` matrix of each block's input.
    cols: Vec<Vec<T>>,
    /// Standardized activations per block.
    xhat: Vec<Vec<T>>,
    /// `1/σ` per block and sample.
    rstd: Vec<Vec<T>>,
    /// Where the ReLU passed its input.
    active: Vec<Vec<bool>>,
}

impl<T> Tape<T> {
    /// Number of samples recorded.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

impl<T: Real> FeatureExtractor<T> {
    /// Blocks of `kernel×kernel` convolutions with the given stride and
    /// padding `kernel / 2`, widths as listed, Kaiming-uniform weights.
    pub fn init(
        input_size: usize,
        widths: &[usize],
        kernel: usize,
        stride: usize,
        norm_eps: f64,
        rng: &mut StreamRng,
    ) -> Self {
        let mut blocks = Vec::with_capacity(widths.len());
        let mut c_in = 1;
        for &c_out in widths {
            blocks.push(ConvBlock {
                conv: Conv2d::init(c_in, c_out, kernel, stride, kernel / 2, rng),
                norm: ChannelNorm::new(c_out, norm_eps),
            });
            c_in = c_out;
        }
        Self { input_size, blocks }
    }

    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.conv.out_channels)
    }

    pub fn sample_len(&self) -> usize {
        self.input_size * self.input_size
    }

    /// Spatial side length entering each block, plus the final one.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_size];
        for b in &self.blocks {
            let last = *sizes.last().unwrap();
            sizes.push(b.conv.out_size(last));
        }
        sizes
    }

    pub fn forward_sample(&self, x: &[T]) -> Vec<T> {
        self.forward_group(x, 1, None)
    }

    /// Features of `n` stacked samples, `n × feature_dim` row-major. Records
    /// the activations needed by `backward_group` when a tape is given.
    pub fn forward_group(&self, x: &[T], n: usize, mut tape: Option<&mut Tape<T>>) -> Vec<T> {
        let nb = self.blocks.len();
        if let Some(t) = tape.as_deref_mut() {
            t.n = n;
            t.cols.resize_with(nb, Vec::new);
            t.xhat.resize_with(nb, Vec::new);
            t.rstd.resize_with(nb, Vec::new);
            t.active.resize_with(nb, Vec::new);
        }
        let mut side = self.input_size;
        let mut cur = Vec::new();
        let mut xhat = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let src = if i == 0 { x } else { &cur[..] };
            let mut a = match tape.as_deref_mut() {
                Some(t) => {
                    b.conv.im2col(src, n, side, side, &mut t.cols[i]);
                    b.conv.forward_col(&t.cols[i], n)
                }
                None => b.conv.forward(src, n, side, side),
            };
            if let Some(t) = tape.as_deref_mut() {
                t.active[i].clear();
                t.active[i].extend(a.iter().map(|&v| v > T::zero()));
            }
            relu_inplace(&mut a);
            let len = a.len() / n;
            let xh = match tape.as_deref_mut() {
                Some(t) => &mut t.xhat[i],
                None => &mut xhat,
            };
            xh.clear();
            let mut rstd = Vec::with_capacity(n);
            let mut buf = Vec::with_capacity(len);
            cur = Vec::with_capacity(a.len());
            for sample in a.chunks_exact(len) {
                rstd.push(b.norm.normalize(sample, &mut buf));
                cur.extend(b.norm.affine(&buf));
                xh.extend_from_slice(&buf);
            }
            if let Some(t) = tape.as_deref_mut() {
                t.rstd[i] = rstd;
            }
            side = b.conv.out_size(side);
        }
        let d = self.feature_dim();
        cur.chunks_exact(cur.len() / n.max(1))
            .flat_map(|c| global_avg_pool(c, d))
            .collect()
    }

    /// Accumulates parameter gradients for the recorded group into `grads`.
    /// `dfeat` is `n × feature_dim` row-major.
    pub fn backward_group(&self, tape: &Tape<T>, dfeat: &[T], grads: &mut FeatureExtractor<T>) {
        let n = tape.n;
        let sizes = self.spatial_sizes();
        let last = *sizes.last().unwrap();
        let mut dy: Vec<T> = dfeat
            .chunks_exact(self.feature_dim())
            .flat_map(|g| global_avg_pool_backward(g, last * last))
            .collect();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let g = &mut grads.blocks[i];
            let len = dy.len() / n;
            let mut da = Vec::with_capacity(dy.len());
            for (j, (dys, xh)) in dy.chunks_exact(len).zip(tape.xhat[i].chunks_exact(len)).enumerate() {
                da.extend(b.norm.backward(xh, tape.rstd[i][j], dys, &mut g.norm));
            }
            for (d, &on) in da.iter_mut().zip(&tape.active[i]) {
                if !on {
                    *d = T::zero();
                }
            }
            let side = sizes[i];
            match b.conv.backward_col(&tape.cols[i], n, side, side, &da, &mut g.conv, i > 0) {
                Some(dx) => dy = dx,
                None => break,
            }
        }
    }

    fn check_batch(&self, images: &[T], n: usize) -> Result<()> {
        if images.len() != n * self.sample_len() {
            return Err(Error::Shape(format!(
                "expected {n} frames of {s}x{s} ({} values), got {} values",
                n * self.sample_len(),
                images.len(),
                s = self.input_size
            )));
        }
        Ok(())
    }

    /// `n` stacked frames → `n × feature_dim`.
    pub fn forward(&self, images: &[T], n: usize, exec: Execution) -> Result<Matrix<T>> {
        self.check_batch(images, n)?;
        let len = self.sample_len();
        let rows = exec.map_chunks(images, GROUP * len, |_, x| self.forward_group(x, x.len() / len, None));
        Ok(rows_to_matrix(rows, self.feature_dim()))
    }

    /// Forward pass over a batch, refilling `tapes` (one per group of
    /// samples).
    pub fn forward_train(
        &self,
        images: &[T],
        n: usize,
        exec: Execution,
        tapes: &mut Vec<Tape<T>>,
    ) -> Result<Matrix<T>> {
        self.check_batch(images, n)?;
        let len = self.sample_len();
        tapes.resize_with(n.div_ceil(GROUP), Tape::default);
        let rows = exec.map_mut(tapes, |j, tape| {
            let x = &images[j * GROUP * len..((j + 1) * GROUP).min(n) * len];
            self.forward_group(x, x.len() / len, Some(tape))
        });
        Ok(rows_to_matrix(rows, self.feature_dim()))
    }

    /// Parameter gradients summed over the batch recorded by `forward_train`.
    pub fn backward(&self, tapes: &[Tape<T>], dfeat: &Matrix<T>, exec: Execution) -> FeatureExtractor<T> {
        let n: usize = tapes.iter().map(|t| t.n).sum();
        assert_eq!(n, dfeat.rows, "one tape row per feature row");
        let d = self.feature_dim();
        let partials = exec.map_chunks(tapes, 1, |j, t| {
            let mut g = self.zeros_like();
            let at = j * GROUP * d;
            self.backward_group(&t[0], &dfeat.data[at..at + t[0].n * d], &mut g);
            g
        });
        let mut total = self.zeros_like();
        for p in &partials {
            total.accumulate(p);
        }
        total
    }
}

impl FeatureExtractor<f32> {
    /// Features for preprocessed frames.
    pub fn features(&self, images: &[&Image], exec: Execution) -> Result<Matrix<f32>> {
        for img in images {
            if img.width != self.input_size || img.height != self.input_size {
                return Err(Error::Shape(format!(
                    "extractor expects {s}x{s} frames, got {}x{}",
                    img.width,
                    img.height,
                    s = self.input_size
                )));
            }
        }
        let rows = exec.map_chunks(images, GROUP, |_, group| {
            let x: Vec<f32> = group.iter().flat_map(|img| img.data.iter().copied()).collect();
            self.forward_group(&x, group.len(), None)
        });
        Ok(rows_to_matrix(rows, self.feature_dim()))
    }
}

/// Concatenates blocks of whole rows.
fn rows_to_matrix<T: Real>(blocks: Vec<Vec<T>>, cols: usize) -> Matrix<T> {
    let data: Vec<T> = blocks.concat();
    Matrix::from_vec(data.len() / cols, cols, data)
}

impl<T: Real> Parameters<T> for FeatureExtractor<T> {
    fn collect_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_tensors(&join(prefix, &format!("block{i}")), out);
        }
    }

    fn collect_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        for b in &mut self.blocks {
            b.collect_tensors_mut(out);
        }
    }
}
