//! Probabilities and truncated moments of selection-elliptical distributions
//! with normal and Student-t kernels.

pub mod bounds;
pub mod censored;
pub mod elliptical;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod rectangle;
pub mod risk;
pub mod selection;
pub mod truncated;
pub mod univariate;

pub use bounds::{MomentOrder, TruncationBox};
pub use censored::{censored_factor, censored_factor_conditional, CensoredFactor, GSpec, GValue};
pub use elliptical::{EllipticalJoint, IndexPartition};
pub use error::{Error, Result};
pub use rectangle::{rectangle_prob, ProbEstimate, RectangleProbSettings};
pub use risk::{mtce, quantile_upper, tce, tce_sum_decomposed, RiskDecomposition, SumDistParams};
pub use selection::{
    build_selection, build_selection_with, limiting_t, se_box_prob, se_pdf, sut_existence, tse_mean_cov, tse_moment,
    LimitingTParams, SelectionSpec, SutParams,
};
pub use truncated::{
    existence_check, moments_direct, product_moment, tmvn_mean_cov, tmvn_product_moment, tmvt_mean_cov,
    truncated_moments, Method, MomentConfig, MomentReport, MomentValue,
};
pub use univariate::Family;
