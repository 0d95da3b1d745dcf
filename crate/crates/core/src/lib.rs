//! Distortion-deviation premium principles, rank-dependent expected utility
//! and optimal indemnity design.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the usual double-precision instantiation.

// `!(a < b)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod contracts;
pub mod distortions;
pub mod error;
pub mod loss_models;
pub mod oracle;
pub mod quadrature;
pub mod rdeu;
pub mod riskmetrics;
pub mod scalar;
pub mod solver;
pub mod sweep;

pub use config::{ConfigError, RunConfig};
pub use contracts::{classify, ContractClass, DimlInterior, Indemnity, PiecewiseLinear};
pub use distortions::{check_order, BuyerDual, Distortion, Order, OrderCheck, PremiumPrinciple};
pub use error::{Error, Result};
pub use loss_models::LossModel;
pub use oracle::{
    brute_force_solve, exhaustive_tiny, gradient_check, DiscreteProblem, ExhaustiveResult,
    OracleSolution,
};
pub use quadrature::QuadratureConfig;
pub use rdeu::{rdeu_value, BuyerPreferences, Utility};
pub use riskmetrics::{premium, rho, PremiumBreakdown};
pub use scalar::Scalar;
pub use solver::{
    compute_l, solve_general, verify_optimality, ExponentialFamily, MarginalFunction, SolveReport,
    SolverConfig, SolverPath,
};
pub use sweep::{sweep, SweepRow, SweepTable};

pub type Distortion64 = Distortion<f64>;
pub type PremiumPrinciple64 = PremiumPrinciple<f64>;
pub type LossModel64 = LossModel<f64>;
pub type Indemnity64 = Indemnity<f64>;
pub type Utility64 = Utility<f64>;
pub type BuyerPreferences64 = BuyerPreferences<f64>;
pub type QuadratureConfig64 = QuadratureConfig<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type SolveReport64 = SolveReport<f64>;
pub type RunConfig64 = RunConfig<f64>;
