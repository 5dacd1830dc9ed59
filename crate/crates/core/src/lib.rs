//! Chance-constrained two-stage unit commitment.
//!
//! The crate builds deterministic, stochastic and chance-constrained UC
//! models over a small solver-neutral LP/MIP representation, solves them
//! directly or with a bilinear Benders decomposition, and ships the studies
//! used to compare the approaches.
//!
//! ```no_run
//! use ccuc_core::{benders_solve, bundled};
//!
//! let instance = bundled::six_shape();
//! let scenarios = bundled::six_shape_scenarios();
//! let (schedule, state) = benders_solve(&instance, &scenarios).unwrap();
//! println!("cost {} after {} iterations", schedule.objective, state.iteration);
//! ```

pub mod benders;
pub mod bundled;
pub mod formulations;
pub mod harness;
pub mod instance;
pub mod model;
pub mod scenarios;

pub use benders::{
    benders_solve, benders_solve_with, build_master, make_cut, solve_fsp, upper_bound_step,
    BendersError, BendersOptions, BendersState, FeasibilityCut, FeasibilityResult, IterationRecord,
};
pub use formulations::{
    build_cc_bigm, build_cc_bilinear, build_first_stage, build_suc, FirstStageSolution,
    FormulationError, UcModel,
};
pub use harness::{
    benchmark, exhaustive_oracle, integrality_gap_study, run_benders, run_method, sweep,
    HarnessError, Method, RunReport, RunStatus, SweepGrid,
};
pub use instance::{load_instance, InstanceError, RelaxationMode, SolverConfig, UCInstance};
pub use model::{
    Backend, BackendKind, LinearModel, MipOptions, Solution, SolveStatus, SolverError,
};
pub use scenarios::{
    load_scenarios, sample_scenarios, MarginalForecast, Scenario, ScenarioError, ScenarioSet,
};
