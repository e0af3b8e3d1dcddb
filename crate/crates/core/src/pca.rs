//! Principal components by power iteration with deflation.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAX_ITERS: usize = 20_000;
const TOLERANCE: f64 = 1e-13;
/// Eigenvalues below this fraction of the total variance count as zero.
const RANK_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Orthonormal components, one per row, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

fn covariance(data: &Tensor, mean: &[f64]) -> Vec<f64> {
    let (n, d) = (data.rows(), data.cols());
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let row = data.row(i);
        for a in 0..d {
            let xa = row[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += xa * (row[b] - mean[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    cov
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d)
        .map(|i| m[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Flips `v` so its largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Fits `k` components to the rows of `data`.
pub fn fit(data: &Tensor, k: usize) -> Result<Pca> {
    let (n, d) = (data.rows(), data.cols());
    if k == 0 || k > d {
        return Err(Error::Invalid(format!(
            "cannot take {k} components of {d}-dimensional data"
        )));
    }
    if n < k + 1 {
        return Err(Error::Invalid(format!(
            "PCA with k={k} needs at least {} vectors, got {n}",
            k + 1
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| data.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let mut cov = covariance(data, &mean);
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for c in 0..k {
        // Deterministic start that is unlikely to be orthogonal to the target.
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * ((i * 7 + c * 3) % 11) as f64).collect();
        for prev in &components {
            let dot: f64 = v.iter().zip(prev).map(|(a, b): (&f64, &f64)| a * b).sum();
            v.iter_mut().zip(prev).for_each(|(x, p)| *x -= dot * p);
        }
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..MAX_ITERS {
            let mut w = mat_vec(&cov, &v);
            let norm = normalize(&mut w);
            if norm == 0.0 {
                lambda = 0.0;
                break;
            }
            let diff = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = w;
            lambda = norm;
            if diff < TOLERANCE {
                break;
            }
        }
        if lambda <= RANK_EPS * trace.max(f64::MIN_POSITIVE) {
            return Err(Error::Invalid(format!(
                "data has rank {c}, fewer than the {k} requested components"
            )));
        }
        // Rayleigh quotient is more accurate than the last norm.
        let cv = mat_vec(&cov, &v);
        lambda = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
        canonical_sign(&mut v);
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] -= lambda * v[a] * v[b];
            }
        }
        components.push(v);
        eigenvalues.push(lambda);
    }
    Ok(Pca {
        mean,
        components,
        eigenvalues,
    })
}

impl Pca {
    /// Centered coordinates of each row in the component basis.
    pub fn transform(&self, data: &Tensor) -> Result<Tensor> {
        if data.cols() != self.mean.len() {
            return Err(Error::Invalid(format!(
                "PCA fitted on {} columns, got {}",
                self.mean.len(),
                data.cols()
            )));
        }
        let k = self.components.len();
        let mut out = Vec::with_capacity(data.rows() * k);
        for i in 0..data.rows() {
            let row = data.row(i);
            for c in &self.components {
                out.push(row.iter().zip(&self.mean).zip(c).map(|((x, m), w)| (x - m) * w).sum());
            }
        }
        Ok(Tensor::from_vec(data.rows(), k, out)?)
    }

    /// Maps coordinates back to the input space.
    pub fn reconstruct(&self, coords: &Tensor) -> Tensor {
        let d = self.mean.len();
        let mut out = Vec::with_capacity(coords.rows() * d);
        for i in 0..coords.rows() {
            let z = coords.row(i);
            for j in 0..d {
                out.push(self.mean[j] + self.components.iter().zip(z).map(|(c, zc)| c[j] * zc).sum::<f64>());
            }
        }
        Tensor::from_vec(coords.rows(), d, out).expect("shape follows from inputs")
    }
}
