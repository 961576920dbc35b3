// SPDX-License-Identifier: Apache-2.0

//! Label inference from branch observations: feature extraction, the
//! attacker's profiling dataset, a logistic-regression classifier and its
//! evaluation.

mod dataset;
mod eval;
mod features;
mod logreg;

pub use dataset::{build_dataset, collect_features, AttackDataset};
pub use eval::{
    accuracy_curve, attack_eval, curve_csv, curve_svg, kfold_cv, stratified_folds, CurvePoint, CvReport,
    EvalReport,
};
pub use features::{extract_features, sign_oracle, BranchFeatureVector, FeatureExtractor, LayerSelector};
pub use logreg::{logreg_objective, logreg_predict, logreg_train, AttackClassifier, LogRegConfig};
