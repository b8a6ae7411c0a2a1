//! Joint-embedding objectives with analytic gradients. Everything here runs
//! in `f64` on `N × E` embedding pairs.

use crate::nnet::{gemm, Matrix};
use crate::{Error, Result};

/// Stabilizer inside standard deviations and normalizations.
pub const STD_EPS: f64 = 1e-6;
/// Dimensions whose batch variance falls below this are treated as constant.
pub const DEGENERATE_VAR: f64 = 1e-12;

/// Loss value with gradients for both branches.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_a: Matrix<f64>,
    pub grad_b: Matrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct VicregWeights {
    pub invariance: f64,
    pub variance: f64,
    pub covariance: f64,
}

impl Default for VicregWeights {
    fn default() -> Self {
        Self {
            invariance: 25.0,
            variance: 25.0,
            covariance: 1.0,
        }
    }
}

fn check_pair(z_a: &Matrix<f64>, z_b: &Matrix<f64>) -> Result<()> {
    if z_a.rows != z_b.rows || z_a.cols != z_b.cols {
        return Err(Error::Shape(format!(
            "branch shapes differ: {}x{} vs {}x{}",
            z_a.rows, z_a.cols, z_b.rows, z_b.cols
        )));
    }
    if z_a.rows < 2 {
        return Err(Error::Shape(format!("need at least 2 pairs, got {}", z_a.rows)));
    }
    Ok(())
}

/// `a · bᵀ` for row-major matrices.
fn gram(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let mut out = Matrix::zeros(a.rows, b.rows);
    gemm(false, true, a.rows, b.rows, a.cols, 1.0, &a.data, &b.data, 0.0, &mut out.data);
    out
}

/// `aᵀ · b / scale`.
fn cross(a: &Matrix<f64>, b: &Matrix<f64>, scale: f64) -> Matrix<f64> {
    let mut out = Matrix::zeros(a.cols, b.cols);
    gemm(true, false, a.cols, b.cols, a.rows, 1.0 / scale, &a.data, &b.data, 0.0, &mut out.data);
    out
}

/// `a · g / scale`, with `g` square.
fn mul(a: &Matrix<f64>, g: &Matrix<f64>, trans_g: bool, scale: f64) -> Matrix<f64> {
    let mut out = Matrix::zeros(a.rows, g.cols);
    gemm(false, trans_g, a.rows, g.cols, a.cols, 1.0 / scale, &a.data, &g.data, 0.0, &mut out.data);
    out
}

/// NT-Xent over the `2N` views. Row `i` of `z_a` and row `i` of `z_b` are a
/// positive pair; every other view in the batch is a negative.
pub fn nt_xent(z_a: &Matrix<f64>, z_b: &Matrix<f64>, temperature: f64) -> Result<f64> {
    nt_xent_grad(z_a, z_b, temperature).map(|g| g.loss)
}

pub fn nt_xent_grad(z_a: &Matrix<f64>, z_b: &Matrix<f64>, temperature: f64) -> Result<LossGrad> {
    check_pair(z_a, z_b)?;
    if !(temperature > 0.0) {
        return Err(Error::NonPositive(temperature));
    }
    let n = z_a.rows;
    let m = 2 * n;
    let z = z_a.vstack(z_b);
    let mut u = z.clone();
    let mut norms = Vec::with_capacity(m);
    for i in 0..m {
        let row = u.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > DEGENERATE_VAR) {
            return Err(Error::ZeroNorm(i));
        }
        row.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    let mut s = gram(&u, &u);
    s.data.iter_mut().for_each(|v| *v /= temperature);

    // g[i][k] = dL/ds_ik
    let mut g = Matrix::zeros(m, m);
    let mut loss = 0.0;
    for i in 0..m {
        let pos = (i + n) % m;
        let row = s.row(i);
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let lse = max + denom.ln();
        loss += lse - row[pos];
        let grow = g.row_mut(i);
        for k in 0..m {
            if k != i {
                grow[k] = (row[k] - lse).exp() / m as f64;
            }
        }
        grow[pos] -= 1.0 / m as f64;
    }
    loss /= m as f64;

    // s = u uᵀ / τ, so dL/du = (g + gᵀ) u / τ
    let mut gs = g.clone();
    for i in 0..m {
        for k in 0..m {
            gs.data[i * m + k] += g.data[k * m + i];
        }
    }
    let du = mul(&gs, &u, false, temperature);
    let mut dz = du;
    for i in 0..m {
        let ui = u.row(i).to_vec();
        let row = dz.row_mut(i);
        let dot: f64 = row.iter().zip(&ui).map(|(a, b)| a * b).sum();
        for (d, &uv) in row.iter_mut().zip(&ui) {
            *d = (*d - uv * dot) / norms[i];
        }
    }
    let (grad_a, grad_b) = dz.split_rows(n);
    Ok(LossGrad { loss, grad_a, grad_b })
}

/// Per-column standardization with biased variance; returns the
/// standardized matrix and `1/sqrt(var + ε)` per column.
fn standardize(z: &Matrix<f64>) -> Result<(Matrix<f64>, Vec<f64>)> {
    let (n, e) = (z.rows, z.cols);
    let mut out = z.clone();
    let mut rstd = Vec::with_capacity(e);
    for j in 0..e {
        let mean = (0..n).map(|i| z.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (z.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        if var < DEGENERATE_VAR {
            return Err(Error::DegenerateDimension(j));
        }
        let r = 1.0 / (var + STD_EPS).sqrt();
        for i in 0..n {
            out.data[i * e + j] = (z.get(i, j) - mean) * r;
        }
        rstd.push(r);
    }
    Ok((out, rstd))
}

fn standardize_backward(zhat: &Matrix<f64>, rstd: &[f64], g: &Matrix<f64>) -> Matrix<f64> {
    let (n, e) = (zhat.rows, zhat.cols);
    let mut dz = Matrix::zeros(n, e);
    for j in 0..e {
        let gm = (0..n).map(|i| g.get(i, j)).sum::<f64>() / n as f64;
        let gx = (0..n).map(|i| g.get(i, j) * zhat.get(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            dz.data[i * e + j] = rstd[j] * (g.get(i, j) - gm - zhat.get(i, j) * gx);
        }
    }
    dz
}

/// Barlow Twins redundancy reduction on the cross-correlation of the
/// standardized branches.
pub fn barlow_twins(z_a: &Matrix<f64>, z_b: &Matrix<f64>, offdiag_weight: f64) -> Result<f64> {
    barlow_twins_grad(z_a, z_b, offdiag_weight).map(|g| g.loss)
}

pub fn barlow_twins_grad(z_a: &Matrix<f64>, z_b: &Matrix<f64>, offdiag_weight: f64) -> Result<LossGrad> {
    check_pair(z_a, z_b)?;
    let n = z_a.rows as f64;
    let e = z_a.cols;
    let (a, ra) = standardize(z_a)?;
    let (b, rb) = standardize(z_b)?;
    let c = cross(&a, &b, n);
    let mut loss = 0.0;
    let mut g = Matrix::zeros(e, e);
    for i in 0..e {
        for j in 0..e {
            let cij = c.get(i, j);
            if i == j {
                loss += (1.0 - cij).powi(2);
                g.data[i * e + j] = -2.0 * (1.0 - cij);
            } else {
                loss += offdiag_weight * cij * cij;
                g.data[i * e + j] = 2.0 * offdiag_weight * cij;
            }
        }
    }
    let ga = mul(&b, &g, true, n);
    let gb = mul(&a, &g, false, n);
    Ok(LossGrad {
        loss,
        grad_a: standardize_backward(&a, &ra, &ga),
        grad_b: standardize_backward(&b, &rb, &gb),
    })
}

pub fn vicreg(z_a: &Matrix<f64>, z_b: &Matrix<f64>, weights: VicregWeights) -> Result<f64> {
    vicreg_grad(z_a, z_b, weights).map(|g| g.loss)
}

/// Variance hinge and covariance penalty of one branch, gradient added to `dz`.
fn vicreg_branch(z: &Matrix<f64>, w: VicregWeights, dz: &mut Matrix<f64>) -> f64 {
    let (n, e) = (z.rows, z.cols);
    let denom = (n - 1) as f64;
    let mut centered = z.clone();
    for j in 0..e {
        let mean = (0..n).map(|i| z.get(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            centered.data[i * e + j] -= mean;
        }
    }
    let cov = cross(&centered, &centered, denom);

    let mut var_term = 0.0;
    for j in 0..e {
        let std = (cov.get(j, j) + STD_EPS).sqrt();
        if std < 1.0 {
            var_term += 1.0 - std;
            // d/dz of −std, averaged over dims and branches
            let coef = -w.variance * 0.5 / e as f64 / (2.0 * std) * 2.0 / denom;
            for i in 0..n {
                dz.data[i * e + j] += coef * centered.get(i, j);
            }
        }
    }
    var_term /= e as f64;

    let mut cov_term = 0.0;
    let mut g = Matrix::zeros(e, e);
    for i in 0..e {
        for j in 0..e {
            if i != j {
                let c = cov.get(i, j);
                cov_term += c * c;
                g.data[i * e + j] = 2.0 * w.covariance * c / e as f64;
            }
        }
    }
    cov_term /= e as f64;
    let dc = mul(&centered, &g, false, denom / 2.0);
    for (d, v) in dz.data.iter_mut().zip(&dc.data) {
        *d += v;
    }
    0.5 * w.variance * var_term + w.covariance * cov_term
}

/// VICReg: weighted invariance (MSE), variance hinge (mean over both
/// branches) and covariance (sum over both branches).
pub fn vicreg_grad(z_a: &Matrix<f64>, z_b: &Matrix<f64>, weights: VicregWeights) -> Result<LossGrad> {
    check_pair(z_a, z_b)?;
    let count = (z_a.rows * z_a.cols) as f64;
    let mut grad_a = Matrix::zeros(z_a.rows, z_a.cols);
    let mut grad_b = Matrix::zeros(z_a.rows, z_a.cols);
    let mut inv = 0.0;
    for (k, (&a, &b)) in z_a.data.iter().zip(&z_b.data).enumerate() {
        let d = a - b;
        inv += d * d;
        grad_a.data[k] = 2.0 * weights.invariance * d / count;
        grad_b.data[k] = -grad_a.data[k];
    }
    let mut loss = weights.invariance * inv / count;
    loss += vicreg_branch(z_a, weights, &mut grad_a);
    loss += vicreg_branch(z_b, weights, &mut grad_b);
    Ok(LossGrad { loss, grad_a, grad_b })
}
