//! Non-homogeneous state-affine and linear reservoir computers.
//!
//! The crate is organised bottom-up:
//!
//! * [`seqspace`]: left-infinite input sequences seen through a finite
//!   window, weighting sequences and weighted norms;
//! * [`polymat`]: matrix-valued polynomials with certified sup norms on `[-1, 1]`;
//! * [`reservoir`]: SAS and linear systems, recursion and closed-form series;
//! * [`algebra`]: sums and products of systems, realised as new systems;
//! * [`approx`]: readout training, sup-norm errors, separation witnesses;
//! * [`stochastic`]: ensembles of bounded random input paths.

pub mod algebra;
pub mod approx;
pub mod error;
pub mod linalg;
pub mod polymat;
pub mod reservoir;
pub mod seqspace;
pub mod stochastic;
pub mod verify;

pub use error::{Error, Result};
pub use polymat::{MatrixPolynomial, NormCertificate, ScalarPolynomial};
pub use reservoir::{EspMargin, LinearSystem, SasSystem, System, Trajectory};
pub use seqspace::{BoundedSequence, Extension, WeightingSequence};
