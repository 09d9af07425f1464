//! Client-side prototype generation.
//!
//! For each local class the client fits a Gaussian mixture by EM, picks the
//! component count by BIC, takes the component means as prototypes and adds
//! isotropic Gaussian noise before upload.

mod em;
mod proto;

pub use em::{bic, em_fit, free_parameters, select_k_bic, BicSelection, CovarianceType, Covariances, EmConfig, GmmModel};
pub use proto::{extract_prototypes, perturb, Prototype, PrototypeSet};
