//! Simulator and post-processing toolkit for the 6 state-4 state
//! reference-frame-independent QKD protocol.
//!
//! The crate models an entangled-photon experiment end to end:
//!
//! - [`source`] — phase-rotated Bell states, visibility and fiber walk-off
//!   noise, and time-dependent phase trajectories;
//! - [`detection`] — lossy analyzer POVMs (with an optional vacuum level),
//!   coincidence probabilities, and Poissonian count sampling on a 1 ns
//!   slot clock;
//! - [`protocol`] — the analytical pipeline: expectation values from
//!   coincidence counts, the phase-independent channel parameter C, QBERs,
//!   phase estimation, and the asymptotic analytic key rate;
//! - [`estimation`] — detector-efficiency fitting and iterative
//!   maximum-likelihood state reconstruction in the vacuum + single-photon
//!   subspaces;
//! - [`keyrate`] — a numerical key-rate lower bound via Frank-Wolfe descent
//!   on a quantum relative entropy objective with a certified linearized
//!   bound;
//! - [`qmath`] — the small dense complex linear algebra and
//!   quantum-information functionals everything else is built on;
//! - [`io`] / [`cli`] — run configuration, CSV interchange formats, and the
//!   command-line front end.

pub mod cli;
pub mod detection;
pub mod estimation;
pub mod io;
pub mod keyrate;
pub mod protocol;
pub mod qmath;
pub mod source;
