//! Stationary vine copula models for multivariate time series.

pub mod backtest;
pub mod bicop;
pub mod bootstrap;
pub mod error;
pub mod estimation;
pub mod forecast;
pub mod margins;
pub mod optim;
pub mod special;
pub mod stats;
pub mod vine_graph;

pub use bicop::{BivariateCopula, Family, FamilyTag};
pub use error::{Error, Result};
pub use estimation::{fit_model, fit_sequential, select_structure, FitOptions, MarginMode, PseudoSample, SVineModel};
pub use forecast::{simulate_conditional, simulate_unconditional};
pub use margins::Margin;
pub use vine_graph::{build_svine, EdgeClass, SVineSpec, VineStructure};
