//! Post-generation curation: label replacement and out-of-scope filtering.

pub mod oos;
pub mod proxy;
pub mod svm;

pub use oos::{
    balanced_subsample, evaluate_oos_splits, filter_oos, train_oos_model, OosFilterReport, OosModel,
    OosSplitReport,
};
pub use proxy::{
    choose_label, final_score, DEFAULT_W, INSPECTION_BUDGETS, replace_labels, repeated_proxy_lr, train_proxies, CurationReport, LrMode, ProxyModelSet,
    ReplaceOptions, RepeatedLrReport,
};
pub use svm::{sgd_train, svm_objective, train_one_vs_rest, LinearBinaryClassifier, SgdConfig};
