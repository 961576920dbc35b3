// SPDX-License-Identifier: Apache-2.0

//! Multinomial logistic regression on binary features.

use super::dataset::AttackDataset;
use super::features::BranchFeatureVector;
use crate::error::{arg_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRegConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 500,
            l2: 1e-4,
        }
    }
}

/// Fitted classifier. Parameters are stored feature-major
/// (`w[j * classes + c]`, with `j == features` the bias row).
#[derive(Clone, Debug, PartialEq)]
pub struct AttackClassifier {
    classes: usize,
    features: usize,
    w: Vec<f64>,
    pub config: LogRegConfig,
    /// Objective value before each accepted step, then the final value.
    pub loss_history: Vec<f64>,
}

/// Indices of the set bits of each row.
struct Sparse {
    rows: Vec<Vec<u32>>,
    labels: Vec<usize>,
}

impl Sparse {
    fn new(d: &AttackDataset) -> Self {
        Self {
            rows: d
                .features
                .iter()
                .map(|f| {
                    f.bits
                        .iter()
                        .enumerate()
                        .filter(|(_, &b)| b == 1)
                        .map(|(i, _)| i as u32)
                        .collect()
                })
                .collect(),
            labels: d.labels.clone(),
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn scores(w: &[f64], classes: usize, features: usize, active: &[u32], out: &mut [f64]) {
    out.copy_from_slice(&w[features * classes..(features + 1) * classes]);
    for &j in active {
        let row = &w[j as usize * classes..(j as usize + 1) * classes];
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Mean cross-entropy plus `l2 / 2` times the squared non-bias weights;
/// fills `grad` when given.
fn objective(
    w: &[f64],
    classes: usize,
    features: usize,
    l2: f64,
    data: &Sparse,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = data.rows.len() as f64;
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut z = vec![0.0; classes];
    let mut loss = 0.0;
    for (active, &y) in data.rows.iter().zip(&data.labels) {
        scores(w, classes, features, active, &mut z);
        softmax_in_place(&mut z);
        loss -= z[y].max(1e-300).ln();
        if let Some(g) = grad.as_deref_mut() {
            z[y] -= 1.0;
            for &j in active.iter().chain(std::iter::once(&(features as u32))) {
                let row = &mut g[j as usize * classes..(j as usize + 1) * classes];
                for (gv, d) in row.iter_mut().zip(&z) {
                    *gv += d;
                }
            }
        }
    }
    loss /= n;
    let reg: f64 = w[..features * classes].iter().map(|v| v * v).sum::<f64>() * l2 / 2.0;
    if let Some(g) = grad {
        for (i, gv) in g.iter_mut().enumerate() {
            *gv /= n;
            if i < features * classes {
                *gv += l2 * w[i];
            }
        }
    }
    loss + reg
}

/// Full-batch gradient descent from zero. Each step starts at the
/// configured learning rate and is halved until the Armijo condition holds,
/// so the objective never increases.
pub fn logreg_train(d: &AttackDataset, cfg: &LogRegConfig) -> Result<AttackClassifier> {
    if d.is_empty() {
        return arg_err("empty training set");
    }
    let present = d.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return arg_err("training set holds a single class");
    }
    if !(cfg.learning_rate > 0.0) || !(cfg.l2 >= 0.0) {
        return arg_err("learning rate must be positive and L2 non-negative");
    }
    let (classes, features) = (d.classes, d.width());
    let data = Sparse::new(d);
    let size = (features + 1) * classes;
    let mut w = vec![0.0; size];
    let mut g = vec![0.0; size];
    let mut trial = vec![0.0; size];
    let mut loss = objective(&w, classes, features, cfg.l2, &data, Some(&mut g));
    let mut history = vec![loss];
    for _ in 0..cfg.iterations {
        let gnorm: f64 = g.iter().map(|v| v * v).sum();
        if gnorm < 1e-20 {
            break;
        }
        let mut step = cfg.learning_rate;
        let mut accepted = None;
        for _ in 0..40 {
            for ((t, wv), gv) in trial.iter_mut().zip(&w).zip(&g) {
                *t = wv - step * gv;
            }
            let l = objective(&trial, classes, features, cfg.l2, &data, None);
            if l <= loss - 1e-4 * step * gnorm {
                accepted = Some(l);
                break;
            }
            step /= 2.0;
        }
        let Some(l) = accepted else { break };
        std::mem::swap(&mut w, &mut trial);
        loss = objective(&w, classes, features, cfg.l2, &data, Some(&mut g));
        debug_assert!((loss - l).abs() <= 1e-9 * l.abs().max(1.0));
        history.push(loss);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("logistic regression produced non-finite weights".into()));
    }
    Ok(AttackClassifier {
        classes,
        features,
        w,
        config: *cfg,
        loss_history: history,
    })
}

/// Regularised objective and its gradient at `w` (feature-major, bias row
/// last), as minimised by [`logreg_train`].
pub fn logreg_objective(d: &AttackDataset, w: &[f64], l2: f64) -> Result<(f64, Vec<f64>)> {
    let (classes, features) = (d.classes, d.width());
    if d.is_empty() || w.len() != (features + 1) * classes {
        return arg_err(format!(
            "{} weights for {features} features and {classes} classes",
            w.len()
        ));
    }
    let mut g = vec![0.0; w.len()];
    let f = objective(w, classes, features, l2, &Sparse::new(d), Some(&mut g));
    Ok((f, g))
}

impl AttackClassifier {
    /// Zero weights: uniform predictions.
    pub fn zeros(classes: usize, features: usize) -> Self {
        Self {
            classes,
            features,
            w: vec![0.0; (features + 1) * classes],
            config: LogRegConfig::default(),
            loss_history: Vec::new(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// `classes × (features + 1)`, bias last.
    pub fn weight_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|c| (0..=self.features).map(|j| self.w[j * self.classes + c]).collect())
            .collect()
    }

    pub fn predict(&self, f: &BranchFeatureVector) -> Result<(Vec<f64>, usize)> {
        if f.len() != self.features {
            return arg_err(format!(
                "feature vector has {} bits, classifier expects {}",
                f.len(),
                self.features
            ));
        }
        let active: Vec<u32> = (0..f.len() as u32).filter(|&i| f.bits[i as usize] == 1).collect();
        let mut z = vec![0.0; self.classes];
        scores(&self.w, self.classes, self.features, &active, &mut z);
        softmax_in_place(&mut z);
        let mut best = 0;
        for (c, &p) in z.iter().enumerate() {
            if p > z[best] {
                best = c;
            }
        }
        Ok((z, best))
    }
}

pub fn logreg_predict(c: &AttackClassifier, f: &BranchFeatureVector) -> Result<(Vec<f64>, usize)> {
    c.predict(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ds(rows: &[(&[u8], usize)], classes: usize) -> AttackDataset {
        AttackDataset::new(
            rows.iter().map(|(b, _)| BranchFeatureVector { bits: b.to_vec() }).collect(),
            rows.iter().map(|(_, l)| *l).collect(),
            classes,
        )
        .unwrap()
    }

    fn train_acc(c: &AttackClassifier, d: &AttackDataset) -> f64 {
        let hits = d
            .features
            .iter()
            .zip(&d.labels)
            .filter(|(f, &l)| c.predict(f).unwrap().1 == l)
            .count();
        hits as f64 / d.len() as f64
    }

    #[test]
    fn separable_toy_set() {
        let d = ds(
            &[
                (&[1, 0, 0], 0),
                (&[1, 0, 1], 0),
                (&[0, 1, 0], 1),
                (&[0, 1, 1], 1),
                (&[1, 0, 1], 0),
                (&[0, 1, 1], 1),
            ],
            2,
        );
        let c = logreg_train(&d, &LogRegConfig::default()).unwrap();
        assert_eq!(train_acc(&c, &d), 1.0);
        assert!(c.loss_history.windows(2).all(|w| w[1] <= w[0]));
        let (p, _) = c.predict(&d.features[0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(c.weight_matrix().len(), 2);
        assert_eq!(c.weight_matrix()[0].len(), 4);
    }

    #[test]
    fn uninformative_features_give_majority_rate() {
        let rows: Vec<(&[u8], usize)> = (0..10).map(|i| (&[1u8, 0][..], usize::from(i >= 7))).collect();
        let d = ds(&rows, 2);
        let c = logreg_train(&d, &LogRegConfig::default()).unwrap();
        assert!((train_acc(&c, &d) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let d = ds(&[(&[1], 0), (&[0], 0)], 2);
        assert!(logreg_train(&d, &LogRegConfig::default()).is_err());
        let z = AttackClassifier::zeros(4, 3);
        let (p, _) = z.predict(&BranchFeatureVector { bits: vec![1, 0, 1] }).unwrap();
        assert_eq!(p, vec![0.25; 4]);
        assert!(z.predict(&BranchFeatureVector { bits: vec![1] }).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let (classes, features, n) = (3, 5, 12);
            let rows: Vec<BranchFeatureVector> = (0..n)
                .map(|_| BranchFeatureVector {
                    bits: (0..features).map(|_| rng.random_range(0..2)).collect(),
                })
                .collect();
            let labels = (0..n).map(|i| i % classes).collect();
            let d = AttackDataset::new(rows, labels, classes).unwrap();
            let data = Sparse::new(&d);
            let w: Vec<f64> = (0..(features + 1) * classes).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = vec![0.0; w.len()];
            objective(&w, classes, features, 0.01, &data, Some(&mut g));
            let h = 1e-6;
            for i in 0..w.len() {
                let mut p = w.clone();
                p[i] += h;
                let mut m = w.clone();
                m[i] -= h;
                let fd = (objective(&p, classes, features, 0.01, &data, None)
                    - objective(&m, classes, features, 0.01, &data, None))
                    / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn training_is_reproducible() {
        let rows: Vec<(&[u8], usize)> = vec![(&[1, 0], 0), (&[0, 1], 1), (&[1, 1], 2), (&[0, 0], 0)];
        let d = ds(&rows, 3);
        let cfg = LogRegConfig::default();
        assert_eq!(logreg_train(&d, &cfg).unwrap(), logreg_train(&d, &cfg).unwrap());
    }
}
