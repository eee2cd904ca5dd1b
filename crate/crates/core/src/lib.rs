//! Order selection and simultaneous inference for autoregressive models
//! based on the maximum of normalised Yule-Walker coefficient statistics.

// `!(x > 0.0)` is deliberate throughout: NaN must fail positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ar_model;
pub mod bands;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod selection;
pub mod special;

pub use ar_model::{simulate, ArModel, AutocovSequence, AutocovSource, InnovationLaw, TimeSeries};
pub use bands::{
    confidence_band, max_statistics, norm_constants, order_test, BnVariant, ConfidenceBand,
    MaxStatistics, NormalizationConstants, OrderTestResult, QuantileMode,
};
pub use error::{Error, Result};
pub use estimation::{
    fit, inverse_diagonal, levinson_durbin, sample_autocovariance, InverseDiagonal, SequentialFits,
    YwFit,
};
pub use harness::{
    emit_table, merge_reports, run_experiment, ExperimentConfig, ExperimentReport, TableFormat,
};
pub use selection::{CriterionSpec, SelectionResult};
