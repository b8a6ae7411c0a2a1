//! Brute-force reference implementations written straight from the loss and
//! metric definitions, with explicit loops and no shared code with the crate.

use lungssl::nnet::Matrix;
use lungssl::rng::StreamRng;
use rand::Rng;

pub const EPS: f64 = 1e-6;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut StreamRng) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// A random `N × E` pair with `2 ≤ N ≤ 8`, `1 ≤ E ≤ 16`.
pub fn random_pair(rng: &mut StreamRng) -> (Matrix<f64>, Matrix<f64>) {
    let n = rng.random_range(2..=8);
    let e = rng.random_range(1..=16);
    (random_matrix(n, e, rng), random_matrix(n, e, rng))
}

pub fn nt_xent(a: &Matrix<f64>, b: &Matrix<f64>, tau: f64) -> f64 {
    let n = a.rows;
    let views: Vec<Vec<f64>> = (0..2 * n)
        .map(|i| if i < n { a.row(i).to_vec() } else { b.row(i - n).to_vec() })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sim = vec![vec![0.0; 2 * n]; 2 * n];
    for i in 0..2 * n {
        for j in 0..2 * n {
            let mut d = 0.0;
            for k in 0..a.cols {
                d += views[i][k] * views[j][k];
            }
            sim[i][j] = d / (norm(&views[i]) * norm(&views[j])) / tau;
        }
    }
    let mut total = 0.0;
    for i in 0..2 * n {
        let pos = (i + n) % (2 * n);
        let mut denom = 0.0;
        for k in 0..2 * n {
            if k != i {
                denom += sim[i][k].exp();
            }
        }
        total += -(sim[i][pos].exp() / denom).ln();
    }
    total / (2 * n) as f64
}

fn standardized_columns(z: &Matrix<f64>, unbiased: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n, e) = (z.rows, z.cols);
    let mut cols = Vec::new();
    let mut vars = Vec::new();
    for j in 0..e {
        let mut mean = 0.0;
        for i in 0..n {
            mean += z.get(i, j);
        }
        mean /= n as f64;
        let mut ss = 0.0;
        for i in 0..n {
            ss += (z.get(i, j) - mean).powi(2);
        }
        let var = ss / if unbiased { (n - 1) as f64 } else { n as f64 };
        cols.push((0..n).map(|i| z.get(i, j) - mean).collect());
        vars.push(var);
    }
    (cols, vars)
}

pub fn barlow_twins(a: &Matrix<f64>, b: &Matrix<f64>, w: f64) -> f64 {
    let n = a.rows as f64;
    let (ca, va) = standardized_columns(a, false);
    let (cb, vb) = standardized_columns(b, false);
    let e = a.cols;
    let mut loss = 0.0;
    for i in 0..e {
        for j in 0..e {
            let mut c = 0.0;
            for k in 0..a.rows {
                c += ca[i][k] / (va[i] + EPS).sqrt() * cb[j][k] / (vb[j] + EPS).sqrt();
            }
            c /= n;
            loss += if i == j { (1.0 - c).powi(2) } else { w * c * c };
        }
    }
    loss
}

pub fn vicreg(a: &Matrix<f64>, b: &Matrix<f64>, inv_w: f64, var_w: f64, cov_w: f64) -> f64 {
    let (n, e) = (a.rows, a.cols);
    let mut mse = 0.0;
    for i in 0..n {
        for j in 0..e {
            mse += (a.get(i, j) - b.get(i, j)).powi(2);
        }
    }
    mse /= (n * e) as f64;
    let mut var_term = 0.0;
    let mut cov_term = 0.0;
    for z in [a, b] {
        let (cols, vars) = standardized_columns(z, true);
        let mut hinge = 0.0;
        for v in &vars {
            hinge += (1.0 - (v + EPS).sqrt()).max(0.0);
        }
        var_term += hinge / e as f64 / 2.0;
        let mut off = 0.0;
        for p in 0..e {
            for q in 0..e {
                if p != q {
                    let mut c = 0.0;
                    for k in 0..n {
                        c += cols[p][k] * cols[q][k];
                    }
                    c /= (n - 1) as f64;
                    off += c * c;
                }
            }
        }
        cov_term += off / e as f64;
    }
    inv_w * mse + var_w * var_term + cov_w * cov_term
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut good = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    good += 1.0;
                } else if si == sj {
                    good += 0.5;
                }
            }
        }
    }
    good / pairs
}

/// Random scored instance with both classes present; scores drawn from a
/// small grid so ties are common.
pub fn random_scored(rng: &mut StreamRng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=60);
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    labels[0] = 0;
    labels[1] = 1;
    let grid = rng.random_bool(0.5);
    let scores = (0..n)
        .map(|_| {
            if grid {
                rng.random_range(0..8) as f64 / 8.0
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
        .collect();
    (scores, labels)
}
