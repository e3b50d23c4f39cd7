//! Congestion-aware optimal transport.
//!
//! * [`network`]: graphs, shortest paths and path enumeration.
//! * [`wardrop`]: traffic equilibria by Frank-Wolfe, with verification and
//!   brute-force oracles.
//! * [`kantorovich`]: discrete optimal transport by network simplex, dual
//!   potentials, Wasserstein costs and Hotelling prices.
//! * [`beckmann`]: minimal flows on a staggered grid, transport densities and
//!   trajectory reconstruction.
//! * [`urbanplan`]: the urban planning functional and its minimizers.

pub mod beckmann;
pub mod kantorovich;
pub mod network;
pub mod urbanplan;
pub mod wardrop;
