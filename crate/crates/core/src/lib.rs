//! Control barrier certificate synthesis for polynomial control-affine
//! systems via sum-of-squares programming.
//!
//! Modules build on each other bottom-up: [`poly`] arithmetic, the [`sdp`]
//! interior-point solver, the [`sos`] modeling layer, [`cbc`] synthesis,
//! sampling-based [`verify`]ication and the [`qpfilter`] safety filter.

pub mod cbc;
pub mod poly;
pub mod qpfilter;
pub mod sdp;
pub mod sos;
pub mod verify;

pub use cbc::{
    certify, check_inclusion, complete_certificate, synthesize, synthesize_cbf, CbcError, Certificate, Degrees,
    Epsilons, Inclusion, IterationTrace, Mode, SynthesisOptions, SynthesisProblem,
};
pub use poly::{Monomial, PolyError, Polynomial, PolynomialMatrix, PolynomialVector};
pub use qpfilter::{FilterMode, QpError, QpFilter};
pub use sdp::{SdpError, SdpProblem, SdpSettings, SdpSolution, SdpStatus};
pub use sos::{check_sos, SosCheck, SosError, SosProgram, SosWitness};
pub use verify::{simulate, verify_certificate, Controller, Trajectory, VerificationReport, VerifySettings};
