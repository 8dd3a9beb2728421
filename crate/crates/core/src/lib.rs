//! Active disturbance rejection control: design, simulation and experiments.
//!
//! The crate is organized bottom-up: [`lti`] holds the small fixed-size
//! linear algebra, [`design`] turns tuning parameters into gains,
//! [`controllers`] implements the control laws, [`sim`] closes the loop
//! around a plant model, and [`experiments`] drives parameter sweeps.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controllers;
pub mod design;
pub mod equiv;
pub mod error;
pub mod experiments;
pub mod lti;
pub mod sim;

pub use controllers::{
    apply_saturation, latency_output, ContinuousAdrc, DelayLine, DiscreteAdrc, OptimizedAdrc,
    PiController, PidGains, PidT1Controller, SampledController, TransformedEso,
};
pub use design::{design, discretize_design, AdrcDesign, DiscreteEsoGains, Order};
pub use equiv::{verify_equivalence, AugmentedDesign, EquivalenceReport};
pub use error::{AdrcError, Result};
pub use experiments::{
    builtin_suite, compute_metrics, run_suite, suite_ids, Metrics, SuiteConfig, SuiteResult, Sweep,
};
pub use lti::{Matrix, Polynomial, StateSpaceModel, TimeDomain, Vector};
pub use sim::{
    run_closed_loop, AdrcParams, ControllerSpec, PlantKind, PlantSpec, Scenario, Schedule,
    Trajectory,
};
