//! Small-area ability estimation from item-response data with planned
//! missingness.
//!
//! The pipeline runs in four stages:
//! - [`irt`]: 3PL/2PL response model, marginal-maximum-likelihood EM
//!   calibration with a latent regression, Metropolis-Hastings plausible values
//! - [`pv`]: multiple-imputation combining of plausible values into direct
//!   domain estimates and their total variances
//! - [`fh`]: Fay-Herriot area-level model, EBLUP, and the g1/g2/g3 MSE
//!   decomposition under Prasad-Rao, ML or REML variance estimation
//! - [`survey`]: Horvitz-Thompson, GREG and composite comparison estimators
//!
//! [`sim`] wires all of it into the Monte Carlo protocol and [`io`] holds the
//! CSV schemas, the bundled PISA 2015 fixture and run manifests.

pub mod error;
pub mod fh;
pub mod io;
pub mod irt;
pub mod linalg;
pub mod pv;
pub mod rng;
pub mod sim;
pub mod survey;

pub use error::{Error, Result};
pub use fh::{AreaDesign, FhFit, MseComponents, VarianceMethod};
pub use irt::{
    ItemBank, ItemParams, LatentRegression, PlausibleValueSet, Response, ResponseMatrix,
};
pub use pv::AreaEstimate;
pub use sim::{CorrLevel, SimConfig, SimMetrics};
pub use survey::SampleDomain;
