// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;

use super::dataset::AttackDataset;
use super::logreg::{logreg_train, AttackClassifier, LogRegConfig};
use crate::error::{arg_err, Result};

/// Stratified fold assignment: the `j`-th example of each class (in index
/// order) goes to fold `j % k`. Every class that occurs needs at least `k`
/// examples.
pub fn stratified_folds(labels: &[usize], classes: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return arg_err("need at least two folds");
    }
    let mut seen = vec![0usize; classes];
    let mut folds = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        folds[seen[l] % k].push(i);
        seen[l] += 1;
    }
    if let Some((c, &n)) = seen.iter().enumerate().find(|(_, &n)| n > 0 && n < k) {
        return arg_err(format!(
            "class {c} has {n} examples, stratified {k}-fold needs at least {k}"
        ));
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub fold_accuracy: Vec<f64>,
}

impl CvReport {
    pub fn mean(&self) -> f64 {
        self.fold_accuracy.iter().sum::<f64>() / self.fold_accuracy.len() as f64
    }
}

pub fn kfold_cv(d: &AttackDataset, k: usize, cfg: &LogRegConfig) -> Result<CvReport> {
    let folds = stratified_folds(&d.labels, d.classes, k)?;
    let mut fold_accuracy = Vec::with_capacity(k);
    for held in 0..k {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != held)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let mut train = train;
        train.sort_unstable();
        let c = logreg_train(&d.subset(&train), cfg)?;
        fold_accuracy.push(attack_eval(&c, &d.subset(&folds[held]))?.accuracy);
    }
    Ok(CvReport { fold_accuracy })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn confusion_csv(&self, comment: &str) -> String {
        let mut s = String::new();
        if !comment.is_empty() {
            let _ = writeln!(s, "# {comment}");
        }
        s.push_str("label");
        for c in 0..self.confusion.len() {
            let _ = write!(s, ",pred_{c}");
        }
        s.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{t}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Fraction of victim rows whose predicted label equals the service's label.
pub fn attack_eval(c: &AttackClassifier, victims: &AttackDataset) -> Result<EvalReport> {
    if victims.is_empty() {
        return arg_err("no victim traces");
    }
    let mut confusion = vec![vec![0usize; c.classes()]; c.classes()];
    let mut hits = 0;
    for (f, &l) in victims.features.iter().zip(&victims.labels) {
        let (_, p) = c.predict(f)?;
        confusion[l][p] += 1;
        hits += usize::from(p == l);
    }
    Ok(EvalReport {
        accuracy: hits as f64 / victims.len() as f64,
        confusion,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub size: usize,
    pub accuracy: f64,
}

/// Cross-validated accuracy using the first `size` rows, for each size.
pub fn accuracy_curve(d: &AttackDataset, sizes: &[usize], k: usize, cfg: &LogRegConfig) -> Result<Vec<CurvePoint>> {
    sizes
        .iter()
        .map(|&size| {
            if size > d.len() {
                return arg_err(format!("size {size} exceeds the {} available rows", d.len()));
            }
            Ok(CurvePoint {
                size,
                accuracy: kfold_cv(&d.head(size), k, cfg)?.mean(),
            })
        })
        .collect()
}

/// `selector,size,accuracy` rows.
pub fn curve_csv(comment: &str, series: &[(&str, &[CurvePoint])]) -> String {
    let mut s = String::new();
    if !comment.is_empty() {
        let _ = writeln!(s, "# {comment}");
    }
    s.push_str("selector,size,accuracy\n");
    for (name, pts) in series {
        for p in *pts {
            let _ = writeln!(s, "{name},{},{:.6}", p.size, p.accuracy);
        }
    }
    s
}

/// Line chart of accuracy against training size (log-scaled x axis).
pub fn curve_svg(title: &str, series: &[(&str, &[CurvePoint])]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let sizes: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.size as f64)).collect();
    let (lo, hi) = sizes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi.ln() - lo.ln()).max(1e-9);
    let x = |v: f64| M + (v.ln() - lo.ln()) / span * (W - 2.0 * M);
    let y = |a: f64| H - M - a * (H - 2.0 * M);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\">{title}</text>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        H - M,
        W - M,
        H - M,
        H - M
    );
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{t:.2}</text>",
            M - 6.0,
            y(t) + 4.0
        );
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = colors[i % colors.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", x(p.size as f64), y(p.accuracy)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"2\" points=\"{}\"/>",
            path.join(" ")
        );
        for p in pts.iter() {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{c}\"/>",
                x(p.size as f64),
                y(p.accuracy)
            );
            if i == 0 {
                let _ = writeln!(
                    s,
                    "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
                    x(p.size as f64),
                    H - M + 16.0,
                    p.size
                );
            }
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{c}\" font-size=\"12\">{name}</text>",
            W - M - 60.0,
            M + 16.0 * (i as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::BranchFeatureVector;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn separable(n: usize) -> AttackDataset {
        let features = (0..n)
            .map(|i| BranchFeatureVector {
                bits: vec![(i % 3 == 0) as u8, (i % 3 == 1) as u8, (i % 3 == 2) as u8],
            })
            .collect();
        AttackDataset::new(features, (0..n).map(|i| i % 3).collect(), 3).unwrap()
    }

    #[test]
    fn folds_are_stratified_and_deterministic() {
        let labels = [0, 1, 0, 1, 0, 1, 2, 2, 2];
        let f = stratified_folds(&labels, 3, 3).unwrap();
        assert_eq!(f, vec![vec![0, 1, 6], vec![2, 3, 7], vec![4, 5, 8]]);
        assert!(stratified_folds(&[0, 0, 1], 2, 2).is_err());
        assert!(stratified_folds(&labels, 3, 1).is_err());
    }

    #[test]
    fn separable_cv_is_perfect() {
        let d = separable(30);
        let r = kfold_cv(&d, 3, &LogRegConfig::default()).unwrap();
        assert_eq!(r.mean(), 1.0);
        let c = logreg_train(&d, &LogRegConfig::default()).unwrap();
        let e = attack_eval(&c, &d).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.confusion[1][1], 10);
        assert!(e.confusion_csv("x").contains("label,pred_0,pred_1,pred_2"));
    }

    #[test]
    fn shuffled_labels_fall_to_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 900;
        let features: Vec<_> = (0..n)
            .map(|i| BranchFeatureVector {
                bits: (0..20).map(|b| ((i * 7 + b * 13) % 5 == 0) as u8).collect(),
            })
            .collect();
        let mut labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        labels.shuffle(&mut rng);
        let d = AttackDataset::new(features, labels, 10).unwrap();
        let acc = kfold_cv(&d, 9, &LogRegConfig::default()).unwrap().mean();
        assert!((acc - 0.1).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn curve_rows_and_plot() {
        let d = separable(60);
        let pts = accuracy_curve(&d, &[30, 60], 3, &LogRegConfig::default()).unwrap();
        assert_eq!(pts.len(), 2);
        let csv = curve_csv("seed=1", &[("last", &pts)]);
        assert_eq!(csv.lines().count(), 4);
        assert!(curve_svg("t", &[("last", &pts)]).starts_with("<svg"));
        assert!(accuracy_curve(&d, &[100], 3, &LogRegConfig::default()).is_err());
    }
}
