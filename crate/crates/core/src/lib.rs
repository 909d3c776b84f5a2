//! Radial numerics for the diffusion–aggregation equation
//! `rho_t = Δ rho^m + ∇·(rho ∇(rho * V))` with Newtonian or mollified
//! Newtonian interaction, plus a small three-dimensional Cartesian harness.
//!
//! The radial pieces work on cell-centred finite-volume grids
//! ([`grid::RadialGrid`]) and compare solutions through their mass functions
//! ([`mass::MassFunction`], [`mass::precedes`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cartesian;
pub mod envelopes;
pub mod error;
pub mod grid;
pub mod initial;
pub mod io;
pub mod mass;
pub mod model;
pub mod profile;
pub mod potentials;
pub mod quadrature;
pub mod solver;
pub mod stationary;

pub use error::{Error, Result};
pub use grid::RadialGrid;
pub use mass::{mass_function, precedes, MassFunction, OrderCheck};
pub use model::{classify_regime, Params, Regime};
pub use profile::{pressure, Dilation, RadialProfile, RadialShape, UniformBall};
pub use potentials::{Interaction, Kernel};

/// The mdbook guide under `book/`, compiled so that its snippets run as doctests.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../README.md")]
    pub mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/profiles.md")]
    pub mod profiles {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    pub mod kernels {}
    #[doc = include_str!("../../../book/src/stationary.md")]
    pub mod stationary {}
    #[doc = include_str!("../../../book/src/evolution.md")]
    pub mod evolution {}
    #[doc = include_str!("../../../book/src/envelopes.md")]
    pub mod envelopes {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    pub mod analysis {}
    #[doc = include_str!("../../../book/src/cartesian.md")]
    pub mod cartesian {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
