//! Rating collection under local differential privacy.
//!
//! Users privatize their own rating vectors before anything leaves their
//! machine, with one of two mechanisms:
//!
//! * a modified Laplace mechanism for ratings normalized into [-1, 1] that
//!   adds noise, randomly drops ratings and fabricates ratings for missing
//!   entries ([`mechanisms`]);
//! * a randomized response mechanism over the star alphabet {0, ..., d}
//!   ([`mechanisms`]).
//!
//! [`dp_verify`] certifies the per-entry and composed privacy ratio bounds,
//! exactly where closed forms exist and by seeded Monte Carlo elsewhere.
//! [`completion`] recovers the dense rating matrix from the privatized one
//! by constrained nuclear-norm minimization, and [`utility`] checks the
//! closed-form error bounds by coverage experiments over the full synthetic
//! pipeline. [`io`] pins the file formats and configuration so every run is
//! reproducible byte for byte.

pub mod completion;
pub mod dp_verify;
pub mod io;
pub mod matrix;
pub mod mechanisms;
pub mod rng;
pub mod utility;
