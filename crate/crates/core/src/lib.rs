// index loops mirror the matrix formulas; negated comparisons also reject NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod boosting;
pub mod coxph;
pub mod data;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod nonparametric;
pub mod pipeline;
pub mod plots;
pub mod radiomics;
pub mod rsf;
pub mod temporal;

pub use error::{Result, SurvError};
pub use model::RiskModel;
