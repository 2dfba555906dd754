//! Linear soft-margin SVM trained by Pegasos subgradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Oriented hyperplane `w·x + b = 0`; `w·x + b >= 0` is the positive side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Hyperplane {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }

    pub fn positive(&self, x: &[f64]) -> bool {
        self.score(x) >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    pub plane: Hyperplane,
    /// True when the class-mean bisector replaced a failed Pegasos fit.
    pub fallback: bool,
}

fn separates(plane: &Hyperplane, xs: &[Vec<f64>], ys: &[bool]) -> bool {
    let pos = xs.iter().zip(ys).filter(|(x, _)| plane.positive(x)).count();
    let any_pos_label = ys.iter().any(|&y| y);
    let any_neg_label = ys.iter().any(|&y| !y);
    // A usable split sends some points each way whenever both labels are present.
    !(any_pos_label && any_neg_label) || (pos > 0 && pos < xs.len())
}

fn valid(plane: &Hyperplane) -> bool {
    plane.b.is_finite() && plane.w.iter().all(|w| w.is_finite()) && plane.w.iter().any(|w| *w != 0.0)
}

/// Bisector of the two class means, oriented towards the positive class.
pub fn class_mean_plane(xs: &[Vec<f64>], ys: &[bool]) -> Option<Hyperplane> {
    let d = xs.first()?.len();
    let mut mp = vec![0.0; d];
    let mut mn = vec![0.0; d];
    let (mut np, mut nn) = (0usize, 0usize);
    for (x, &y) in xs.iter().zip(ys) {
        let (m, c) = if y { (&mut mp, &mut np) } else { (&mut mn, &mut nn) };
        for (a, v) in m.iter_mut().zip(x) {
            *a += v;
        }
        *c += 1;
    }
    if np == 0 || nn == 0 {
        return None;
    }
    mp.iter_mut().for_each(|v| *v /= np as f64);
    mn.iter_mut().for_each(|v| *v /= nn as f64);
    let w: Vec<f64> = mp.iter().zip(&mn).map(|(a, b)| a - b).collect();
    let mid: Vec<f64> = mp.iter().zip(&mn).map(|(a, b)| 0.5 * (a + b)).collect();
    let b = -w.iter().zip(&mid).map(|(w, m)| w * m).sum::<f64>();
    let plane = Hyperplane { w, b };
    valid(&plane).then_some(plane)
}

/// Trains on points `xs` with labels `ys` (true = positive class).
///
/// Features are standardized per dimension before training and the bias is
/// learned as the weight of a constant feature. Returns `None` when neither
/// Pegasos nor the class-mean fallback yields a nonzero normal.
pub fn train_svm(xs: &[Vec<f64>], ys: &[bool], cfg: &SvmConfig) -> Option<SvmFit> {
    let n = xs.len();
    let d = xs.first()?.len();
    let mut mu = vec![0.0; d];
    for x in xs {
        for (m, v) in mu.iter_mut().zip(x) {
            *m += v / n as f64;
        }
    }
    let mut sd = vec![0.0; d];
    for x in xs {
        for ((s, v), m) in sd.iter_mut().zip(x).zip(&mu) {
            *s += (v - m).powi(2) / n as f64;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    let zs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().zip(&mu).zip(&sd).map(|((v, m), s)| (v - m) / s).chain([1.0]).collect())
        .collect();
    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let y = if ys[i] { 1.0 } else { -1.0 };
            let margin = y * w.iter().zip(&zs[i]).map(|(a, b)| a * b).sum::<f64>();
            let shrink = 1.0 - eta * cfg.lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (v, z) in w.iter_mut().zip(&zs[i]) {
                    *v += eta * y * z;
                }
            }
        }
    }
    // Undo the standardization.
    let raw_w: Vec<f64> = w[..d].iter().zip(&sd).map(|(w, s)| w / s).collect();
    let raw_b = w[d] - w[..d].iter().zip(&mu).zip(&sd).map(|((w, m), s)| w * m / s).sum::<f64>();
    let plane = Hyperplane { w: raw_w, b: raw_b };
    if valid(&plane) && separates(&plane, xs, ys) {
        return Some(SvmFit { plane, fallback: false });
    }
    log::debug!("linear SVM did not produce a usable split; using the class-mean bisector");
    class_mean_plane(xs, ys).map(|plane| SvmFit { plane, fallback: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separates_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..100 {
            let pos = i % 2 == 0;
            let cx = if pos { 1.0 } else { -1.0 };
            xs.push(vec![cx + rng.random_range(-0.8..0.8), rng.random_range(-3.0..3.0)]);
            ys.push(pos);
        }
        let fit = train_svm(&xs, &ys, &SvmConfig::default()).unwrap();
        assert!(!fit.fallback);
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(fit.plane.positive(x), *y);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let ys: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let a = train_svm(&xs, &ys, &SvmConfig::default()).unwrap();
        let b = train_svm(&xs, &ys, &SvmConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn class_mean_orientation() {
        let xs = vec![vec![0.0], vec![1.0], vec![4.0], vec![5.0]];
        let ys = vec![false, false, true, true];
        let p = class_mean_plane(&xs, &ys).unwrap();
        assert!(p.positive(&[3.0]));
        assert!(!p.positive(&[2.0]));
        assert!(class_mean_plane(&xs, &[true; 4]).is_none());
    }
}
