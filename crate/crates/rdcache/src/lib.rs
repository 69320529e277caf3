//! # rdcache
//!
//! Rate-distortion-cache tradeoffs for libraries of correlated sources.
//!
//! A server holds `L` correlated discrete memoryless sources and a cache of
//! capacity `C` bits per symbol that must be filled *before* knowing which
//! source the user will request. This crate computes the information-
//! theoretic laws of that problem:
//!
//! * the tradeoff function `R(D, C)`, the least delivery rate meeting the
//!   distortion targets `D` with cache capacity `C`, via a multistart
//!   descent solver over auxiliary channels with an exhaustive-grid oracle,
//! * its structural bounds (genie, superuser, and the subset bound that
//!   dominates both) and the critical cache capacities where the bounds are
//!   tight,
//! * common information in both senses (the graph-based zero-distortion
//!   construction and closed-form values for the doubly symmetric binary
//!   and bivariate Gaussian pairs),
//! * exact closed forms: the iid identical-source line, the bivariate
//!   Gaussian regions, and the DSBS bounds,
//! * generalized-mean (quasi-arithmetic) distortion criteria by reduction
//!   to transformed instances,
//! * two-user bounds where only the first user has a cache.
//!
//! Everything is in bits. All solvers are deterministic given the seed in
//! [`SolverOpts`].
//!
//! ## Quick tour
//!
//! ```
//! use rdcache::{dsbs_library, DistortionTuple, SolverOpts};
//!
//! // A doubly symmetric binary source with 10% disagreement.
//! let lib = dsbs_library(0.1).unwrap();
//! let lossless = DistortionTuple(vec![0.0, 0.0]);
//!
//! // With no cache, the delivery rate is the worst marginal entropy: 1 bit.
//! let opts = SolverOpts { restarts: 4, ..Default::default() };
//! let point = rdcache::rdc_value(&lib, &lossless, 0.0, &opts).unwrap();
//! assert!((point.rate - 1.0).abs() < 1e-5);
//!
//! // The genie bound [max_l R_l(D_l) - C]^+ is met at C = 0.
//! let genie = rdcache::genie_bound(&lib, &lossless, 0.0).unwrap();
//! assert!((point.rate - genie).abs() < 1e-5);
//! ```
//!
//! The binary-entropy utilities back the closed forms:
//!
//! ```
//! use rdcache::{binary_entropy, binary_entropy_inverse};
//! let y = binary_entropy(0.1);
//! assert!((binary_entropy_inverse(y) - 0.1).abs() < 1e-9);
//! ```

pub mod closed_form;
pub mod common_info;
pub mod error;
pub mod f_separable;
pub mod info;
pub mod rd;
pub mod rdc;
pub mod source;
pub mod two_user;

pub use closed_form::{
    binary_entropy, binary_entropy_inverse, bivariate_gaussian_rdc, classify_gaussian_region,
    dsbs_rdc_bounds, gaussian_joint_rd, gaussian_superuser_lower, iid_identical_rdc, DsbsBounds,
    GaussianLowerBound, GaussianPair, RegionTag,
};
pub use common_info::{
    gacs_korner_lossy_check, gacs_korner_zero, kgk_vs_cg_check, wyner_ci_dsbs, wyner_ci_gaussian,
    CommonInfoResult, CommonPartGraph, KgkVsCgReport, LossyGkCandidate, LossyGkReport,
};
pub use error::{Error, Result};
pub use f_separable::{
    f_separable_eval, f_separable_rdc, transform_distortion_matrix, transform_library,
    DistortionTransform, TransformSpec,
};
pub use info::{conditional_mutual_information, entropy, mutual_information};
pub use rd::{
    conditional_rd_function, eval_conditional_channel, eval_joint_channel, joint_rd_function,
    rd_function, ContextKind, RdResult, TestChannel,
};
pub use rdc::{
    bound_context, critical_capacity_genie, critical_capacity_superuser, default_aux_size,
    eval_aux_channel, genie_bound, gray_wyner_min_max, grid_gap, joint_family_battery,
    rdc_brute_force, rdc_curve, rdc_value, rdc_value_with_starts, super_genie_bound,
    superuser_bound, AuxChannel, BoundContext, CurvePoint, Method, SolverOpts, TradeoffCurve,
    TradeoffPoint,
};
pub use source::{
    build_library, dsbs_library, dsbs_parameter, marginal, sub_library, validate_library,
    DistortionMatrix, DistortionSpec, DistortionTuple, SourceLibrary, SourceSpec,
};
pub use two_user::{
    lossless_lower_closed_form, lossless_upper_closed_form, two_user_avg_lower,
    two_user_dsbs_bounds, two_user_lower_genie, two_user_upper, GridOpts, TwoUserInstance,
};
