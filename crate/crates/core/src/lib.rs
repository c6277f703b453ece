//! Mean field equilibria for nomadic agents competing for time-varying
//! resources at a large number of locations.
//!
//! A single location is a continuous-time chain `(Z_t, N_t)`: an exogenous
//! resource level `Z_t` and the number of agents `N_t`. Agents arrive at rate
//! `kappa`, collect `F(z, n)` at each of their own Poisson(`lambda`)
//! decision epochs, and then either stay or switch to a fresh location, which
//! is worth `V_sw`. An equilibrium is a threshold strategy `x`, an arrival
//! rate and a switching payoff that are mutually consistent.
//!
//! * [`model`]: resource process, sharing functions, strategies
//! * [`ctmc`]: location generator, stationary law, arrival-rate bisection
//! * [`stopping`]: the tagged agent's optimal stopping problem
//! * [`equilibrium`]: the fixed-point residual and its multi-start minimization
//! * [`welfare`]: welfare metrics, parameter sweeps and the commission case study
//! * [`simulate`]: Monte-Carlo validators
//! * [`cli`]: configuration files, subcommands and output formats

pub mod cli;
pub mod ctmc;
pub mod equilibrium;
pub mod error;
pub mod linalg;
pub mod model;
pub mod nelder_mead;
pub mod par;
pub mod simulate;
pub mod stopping;
pub mod welfare;

pub use error::{Error, Result};
