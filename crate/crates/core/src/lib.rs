//! Numerical laboratory for the singular cones of the one-phase Bernoulli
//! free-boundary problem over latitudinal bands of the sphere.
//!
//! The crate builds the cone for a given dimension, computes the spectrum of
//! the second variation of the spherical Alt-Caffarelli functional, certifies
//! index, kernel and integrability, and checks the epiperimetric inequality
//! numerically through explicit competitors.

pub mod cheb;
pub mod cone;
pub mod decay;
pub mod energy;
pub mod epiflow;
pub mod error;
pub mod geometry;
pub mod harmonics;
pub mod integrability;
pub mod legendre;
pub mod ode;
pub mod profile;
pub mod quadrature;
pub mod roots;
pub mod secondvar;
pub mod sturm;

pub use cone::ConeModel;
pub use energy::{slice_energy, SliceEnergy, SphericalTrace};
pub use error::{Error, Result};
pub use geometry::{Band, Dim, SphereGeom};
pub use profile::Profile;
