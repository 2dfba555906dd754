//! Principal component projection onto the top-k covariance eigenvectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::AbstractionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `l`.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues matching `components`.
    pub variances: Vec<f64>,
}

impl PcaTransform {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn reduce(&self, q: &[f64]) -> Result<Vec<f64>, AbstractionError> {
        if q.len() != self.mean.len() {
            return Err(AbstractionError::DimensionMismatch {
                expected: self.mean.len(),
                got: q.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(q).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum())
            .collect())
    }

    /// Largest deviation of `components · componentsᵀ` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, a) in self.components.iter().enumerate() {
            for (j, b) in self.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }
}

fn sign_normalize(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

pub fn fit_pca(states: &[Vec<f64>], k: usize) -> Result<PcaTransform, AbstractionError> {
    let Some(first) = states.first() else {
        return Err(AbstractionError::EmptyData);
    };
    let l = first.len();
    if k == 0 || k > l {
        return Err(AbstractionError::InvalidConfig(format!(
            "reduced dimension {k} must be in 1..={l}"
        )));
    }
    if states.len() < k + 1 {
        return Err(AbstractionError::InvalidConfig(format!(
            "{} samples cannot fit {k} components",
            states.len()
        )));
    }
    for s in states {
        if s.len() != l {
            return Err(AbstractionError::DimensionMismatch { expected: l, got: s.len() });
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(AbstractionError::NonFinite);
        }
    }
    let n = states.len() as f64;
    let mut mean = vec![0.0; l];
    for s in states {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::<f64>::zeros(l, l);
    for s in states {
        let d = DVector::from_iterator(l, s.iter().zip(&mean).map(|(x, m)| x - m));
        cov.ger(1.0 / n, &d, &d, 1.0);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut components = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        sign_normalize(&mut v);
        components.push(v);
        variances.push(eig.eigenvalues[i].max(0.0));
    }
    let degenerate = variances.iter().filter(|v| **v <= 1e-12 * scale.max(1e-300)).count();
    if degenerate > 0 {
        log::warn!("{degenerate} of {k} principal components carry no variance; basis completed arbitrarily");
    }
    Ok(PcaTransform {
        mean,
        components,
        variances,
    })
}
