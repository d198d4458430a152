//! Optimal feeder reconfiguration for radial distribution networks.
//!
//! This crate models distribution feeders on the branch-flow equations,
//! solves optimal power flow through a second-order cone relaxation with a
//! built-in interior-point solver, and reconfigures feeders by optimal
//! branch exchange: closing a tie switch and provably picking the best loop
//! line to re-open with at most three OPF solves, instead of one solve per
//! loop line.
//!
//! Module map:
//! - [`netmodel`]: buses, lines, switches, radiality, paths, splits.
//! - [`socp`]: a self-contained primal-dual interior-point solver for
//!   second-order cone programs, with infeasibility certificates.
//! - [`powerflow`]: branch-flow solution vectors, feasibility residuals,
//!   relaxation-exactness checks, and phase-angle recovery.
//! - [`opf`]: assembling and solving the relaxed OPF on a (forest) network.
//! - [`branch_exchange`]: the loop-classification rules and the bounded
//!   branch-exchange step, plus a brute-force oracle.
//! - [`reconfig`]: greedy multi-tie reconfiguration built on branch exchange.
//! - [`analysis`]: loss curves and the a-priori suboptimality bound.
//! - [`datasets`]: bundled benchmark feeders.
//! - [`io`]: JSON network interchange.
//! - [`testgen`]: seeded random feeder generators used by tests and the CLI.

pub mod cli;
pub mod datasets;
pub mod netmodel;
pub mod opf;
pub mod powerflow;
pub mod socp;
pub mod testgen;
