//! Two-electron momentum correlations after atomic double ionization.
//!
//! The released electrons are modelled as free Gaussian wavepackets of
//! width `sigma`, entangled either in a symmetric (singlet) or an
//! antisymmetric (triplet) spatial state; a fraction `f` of pairs ends up in
//! the triplet. The crate provides
//!
//! * [`model`]: amplitudes, overlap integral and pair densities,
//! * [`correlation`]: closed-form coincidence/accidental intensities and the
//!   correlation function `R(Δp)`,
//! * [`oracle`]: first-principles Monte-Carlo and quadrature integration of
//!   the same quantities, used to verify the closed forms,
//! * [`fitting`]: bounded least-squares estimation of `(σ, f, p̃)` from
//!   measured correlation curves,
//! * [`io`]: dataset CSV ingestion and result emission.
//!
//! All quantities are in Hartree atomic units.

pub mod correlation;
pub mod error;
pub mod exec;
pub mod fitting;
pub mod io;
pub mod model;
pub mod oracle;
pub mod special;

pub use correlation::{
    correlation_r, correlation_r0, correlation_r1, curve, intensity_cor, intensity_uncor,
    CorrelationCurve, IntensityPair,
};
pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{Momentum3, ModelParams, SpinChannel};
