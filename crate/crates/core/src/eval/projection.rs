use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nnet::Matrix;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Pca,
    Tsne,
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Projection::Pca => "pca",
            Projection::Tsne => "tsne",
        })
    }
}

impl FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "pca" => Ok(Projection::Pca),
            "tsne" => Ok(Projection::Tsne),
            _ => Err(Error::config("projection", format!("unknown method {s:?} (expected pca or tsne)"))),
        }
    }
}

/// Exact (quadratic) t-SNE settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    /// Capped at `(n - 1) / 3` for small inputs.
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

fn check_points(x: &Matrix<f64>) -> Result<()> {
    if x.rows < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: x.rows });
    }
    Ok(())
}

/// `features` (N×D) to N×2 with the default settings of `method`.
pub fn project_2d(features: &Matrix<f64>, method: Projection) -> Result<Matrix<f64>> {
    match method {
        Projection::Pca => pca_2d(features),
        Projection::Tsne => tsne_2d(features, &TsneConfig::default()),
    }
}

/// Scores on the top two principal components. Each component's sign is
/// chosen so that its largest-magnitude loading is positive.
pub fn pca_2d(x: &Matrix<f64>) -> Result<Matrix<f64>> {
    check_points(x)?;
    let (n, d) = (x.rows, x.cols);
    let mut centered = DMatrix::from_row_slice(n, d, &x.data);
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut out = Matrix::zeros(n, 2);
    for (k, &c) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(c).into_owned();
        let lead = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if lead < 0.0 {
            v.neg_mut();
        }
        let scores = &centered * v;
        for i in 0..n {
            out.data[i * 2 + k] = scores[i];
        }
    }
    Ok(out)
}

fn squared_distances(x: &Matrix<f64>) -> Vec<f64> {
    let n = x.rows;
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional probabilities with a per-point precision found by bisection
/// so that each row's entropy matches `ln(perplexity)`.
fn conditional_p(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let min = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for (j, &dj) in row.iter().enumerate() {
                if j != i {
                    let w = (-(dj - min) * beta).exp();
                    sum += w;
                    weighted += w * (dj - min);
                }
            }
            let entropy = sum.ln() + beta * weighted / sum;
            if (entropy - target).abs() < 1e-5 {
                break;
            }
            if entropy > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let mut sum = 0.0;
        for (j, &dj) in row.iter().enumerate() {
            if j != i {
                let w = (-(dj - min) * beta).exp();
                p[i * n + j] = w;
                sum += w;
            }
        }
        for j in 0..n {
            p[i * n + j] /= sum;
        }
    }
    p
}

/// Exact t-SNE with early exaggeration, momentum and adaptive gains.
pub fn tsne_2d(x: &Matrix<f64>, config: &TsneConfig) -> Result<Matrix<f64>> {
    check_points(x)?;
    if !(config.perplexity > 0.0) {
        return Err(Error::config("tsne.perplexity", "must be positive"));
    }
    let n = x.rows;
    let perplexity = config.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let cond = conditional_p(&squared_distances(x), n, perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut r = rng::stream(config.seed, &[0x75e]);
    let normal = Normal::new(0.0, 1e-4).unwrap();
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut r)).collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];

    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < config.exaggeration_iterations { 0.5 } else { 0.8 };
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d = (y[2 * i] - y[2 * j]).powi(2) + (y[2 * i + 1] - y[2 * j + 1]).powi(2);
                let v = 1.0 / (1.0 + d);
                num[i * n + j] = v;
                num[j * n + i] = v;
                total += 2.0 * v;
            }
        }
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let q = (num[i * n + j] / total).max(1e-12);
                    let m = 4.0 * (exaggeration * p[i * n + j] - q) * num[i * n + j];
                    grad[2 * i] += m * (y[2 * i] - y[2 * j]);
                    grad[2 * i + 1] += m * (y[2 * i + 1] - y[2 * j + 1]);
                }
            }
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            velocity[k] = momentum * velocity[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            for i in 0..n {
                y[2 * i + c] -= mean;
            }
        }
    }
    Ok(Matrix::from_vec(n, 2, y))
}
