//! Buyer's superhedging price of an American option in a nonlinear incomplete
//! market with one default jump.
//!
//! The price is the value of a control/stopping game, computed as a
//! constrained reflected BSDE on a discrete default lattice. The solvers are
//! generic over the scalar type ([`Scalar`]: `f32` or `f64`); the aliases at
//! the crate root fix `f64`.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod drivers;
pub mod error;
pub mod field;
pub mod game;
pub mod hedging;
pub mod lattice;
pub mod rbsde;
pub mod scalar;

pub use bsde::{evaluate_expectation, implicit_step, represent_step, solve_bsde, BsdeSolution};
pub use drivers::{
    admissibility_check, controlled_driver, dual_driver, AdmissibilityReport, ControlProcess, Driver, SampleSpec,
};
pub use error::{Error, Result};
pub use field::{AdaptedField, BranchField, StopRule};
pub use game::{
    check_constraints, epsilon_stop, extract_decomposition, lower_value, lower_value_field, perturbed_subsolution,
    solve_buyer_price, ConstraintReport, GameSolution, NuGrid,
};
pub use hedging::{
    evaluate_hedge, hedge_strategy, simulate_wealth, verify_superhedge, wealth_expectation, HedgeReport, PathMode,
    PathRecord,
};
pub use lattice::{
    asset_price, branch_increments, build_lattice, Branch, Coefficient, DefaultLattice, DefaultTag, LatticeSummary,
    MarketParams, Move, NodeId, NodeState, StepContext,
};
pub use rbsde::{check_submartingale, solve_rbsde, solve_rbsde_full, RbsdeSolution, SubmartingaleReport, Window};
pub use scalar::Scalar;

pub type Params = MarketParams<f64>;
pub type Lattice = DefaultLattice<f64>;
pub type Field = AdaptedField<f64>;
pub type Grid = NuGrid<f64>;
pub type Game = GameSolution<f64>;
pub type Hedge = HedgeReport<f64>;
pub type DriverF64 = Driver<f64>;

pub type Params32 = MarketParams<f32>;
pub type Lattice32 = DefaultLattice<f32>;
pub type Field32 = AdaptedField<f32>;
pub type Game32 = GameSolution<f32>;
