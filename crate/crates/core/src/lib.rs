//! Maximum-likelihood estimation for the general heterogeneous multinomial
//! logit model, in which a chooser-level index `w_i' gamma` rescales all
//! systematic utilities:
//!
//! ```text
//! P(Y_i = j) = exp(x_ij' delta * e^{w_i' gamma}) / sum_s exp(x_is' delta * e^{w_i' gamma})
//! ```
//!
//! With no heterogeneity covariates (or `gamma = 0`) this is the standard
//! multinomial (conditional) logit model.

pub mod data_io;
pub mod error;
pub mod estimation;
pub mod likelihood;
pub mod model;
pub mod simulation;

pub use error::{Error, Result};
pub use estimation::{fit, FitOptions, FitResult};
pub use model::{build_design, ChoiceDataset, ChoiceRow, Design, ModelSpec, ParameterVector};
