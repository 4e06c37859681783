//! Simulation and minimum contrast estimation for stationary determinantal
//! point processes (DPPs).
//!
//! The crate covers the full inference pipeline for parametric stationary
//! DPPs observed on rectangular windows:
//!
//! * [`geometry`] — observation windows, point patterns, erosion and
//!   translation-overlap volumes used by the edge corrections;
//! * [`kernels`] — parametric kernel families `C = rho * R_theta`, their
//!   spectral densities and existence checks;
//! * [`moments`] — theoretical summary statistics `K` and `g`, cumulant
//!   densities, and the sandwich covariance `B^-1 Sigma B^-T` of the
//!   minimum contrast estimators;
//! * [`sampler`] — spectral simulation of DPPs plus a Poisson sampler used
//!   as a test oracle;
//! * [`estimators`] — border-corrected `K` and translation-corrected
//!   kernel `g` estimators from one observed pattern;
//! * [`contrast`] — the discrepancy measure and the minimum contrast fit;
//! * [`studio`] — Monte Carlo study harness and the command line front end.

pub mod contrast;
pub mod estimators;
pub mod geometry;
pub mod kernels;
pub mod moments;
pub mod quad;
pub mod sampler;
pub mod seeds;
pub mod studio;
