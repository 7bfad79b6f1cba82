//! Estimators: least squares, the preference-parameter logit, binary-outcome
//! regressions, the cluster bootstrap and the difference-in-differences design.

pub mod binary;
pub mod bootstrap;
pub mod cost;
pub mod did;
pub mod logit;
pub mod ols;
pub mod optim;

pub use binary::{binary_fit, probit_fit, BinaryOptions, Link};
pub use bootstrap::{cluster_bootstrap, BootstrapResult};
pub use cost::{estimate_cost_params, CostEstimate, CostOptions};
pub use did::{did_analysis, did_table, DidResult, DidSpec};
pub use logit::{
    bootstrap_logit, default_init, fit_choice_data, fit_logit_mle, loglik_and_grad, with_bootstrap,
    ChoiceData, FitOptions, LogitFit,
};
pub use ols::{ols, OlsSpec, RegressionResult};
