use super::Real;

/// Borrowed view of one named weight tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

/// Trainable components expose their tensors in a fixed order. A zeroed
/// clone of a component doubles as its gradient buffer.
pub trait Parameters<T: Real>: Clone {
    fn collect_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>);
    fn collect_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>);

    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = Vec::new();
        self.collect_tensors("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        self.collect_tensors_mut(&mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    fn accumulate(&mut self, other: &Self) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, &v) in dst.iter_mut().zip(s.data) {
                *d += v;
            }
        }
    }

    fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Bit-level equality of every tensor.
    fn same_weights(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| {
                x.shape == y.shape
                    && x.data
                        .iter()
                        .zip(y.data)
                        .all(|(p, q)| bits(*p) == bits(*q))
            })
    }
}

// f32 -> f64 is exact, so comparing f64 bit patterns is bit equality.
fn bits<T: Real>(v: T) -> u64 {
    v.to_f64().map_or(u64::MAX, f64::to_bits)
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Adaptive-moment optimizer (β₁ = 0.9, β₂ = 0.999, ε = 1e-8), no weight
/// decay. One instance per parameter group.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<P: Parameters<T>>(params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(self.eps);

        let g = grads.tensors();
        for (i, p) in params.tensors_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.iter_mut().enumerate() {
                let gj = g[i].data[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                *w -= step_size * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
        }
    }
}
