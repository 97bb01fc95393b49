//! Experiments built on the game: linear and nonlinear component analysis,
//! regularized classification, toy self-supervision and kNN evaluation.

mod classify;
mod converge;
mod knn;
mod pca;
mod pica;
mod probe;
mod ssl;

pub use classify::{
    ablate_formulations, ablation_configs, attribute_knn, eval_generalization, run_classify,
    softmax_cross_entropy, sweep_margin, train_classifier, AblationRow, ClassifierHead,
    ClassifierRun, ClassifyConfig, ClassifyReport, CrossEntropyHook, Generalization, SweepRow,
};
pub use converge::{run_converge, ConvergeConfig, ConvergeReport};
pub use knn::{knn_eval, knn_predict, DEFAULT_K as DEFAULT_KNN_K};
pub use pca::{jacobi_eigen, pca_svd, PcaFit};
pub use pica::{
    column_normalized_abs, offdiag_cov_penalty, run_nlpica, run_pica, selection_error,
    write_scatter_csv, DecoderHook, LinearAe, PicaConfig, PicaMethod, PicaReport, PicaRun,
    TiedReconHook,
};
pub use probe::{impute_mse, ImputeConfig};
pub use ssl::{
    invariance_mse, run_ssl_pair, train_ssl_toy, InvarianceHook, SslConfig, SslReport, SslRun,
};
