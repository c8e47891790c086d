//! Continuation and bifurcation toolkit for 1D PDE systems.
//!
//! The crate continues steady states and time-periodic orbits of semilinear
//! reaction-diffusion-advection systems discretized by P1 finite elements,
//! detects and localizes Hopf and branch points, computes Floquet multipliers,
//! switches branches at bifurcations (including from periodic orbits at
//! multipliers near +-1), and handles continuous symmetries through phase
//! conditions. A CLI (`pdecont`) drives the bundled demo problems from plain
//! text configs and writes branch CSVs, binary snapshots, and SVG plots.

pub mod lapack;
pub mod fem1d;
pub mod linsys;
pub mod problem;
pub mod demos;
pub mod steady;
pub mod hopf;
pub mod floquet;
pub mod branching;
pub mod specialpoints;
pub mod timeint;
pub mod appkit;

pub use num_complex::Complex64 as c64;
