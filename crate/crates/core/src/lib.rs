//! Diffuse domain approximation of elliptic bulk, surface, and coupled
//! bulk-surface PDEs on complex domains.
//!
//! The original problem lives on a domain Ω* with boundary Γ embedded in a
//! simple box Ω. The box problem replaces the indicator of Ω* and the surface
//! measure of Γ by regularized weights ξ_ε and δ_ε built from the signed
//! distance to Γ, assembles the weighted weak forms with bilinear elements on
//! a uniform grid, and solves the resulting symmetric systems with CG.
//! Sharp-interface reference solutions on the disc (Fourier x radial
//! reduction) provide ground truth for convergence studies.

pub mod geometry;
pub mod profiles;
pub mod fields;
pub mod sparse;
pub mod assembly;
pub mod solve;
pub mod norms;
pub mod oracle;
pub mod harness;
pub mod config;
pub mod rng;
