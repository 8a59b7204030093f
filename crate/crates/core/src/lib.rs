//! EM for three canonical latent-variable models with data-adaptive
//! estimation of the finite-sample contraction rate.

pub mod em;
pub mod experiments;
pub mod error;
pub mod io;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod rates;
pub mod rng;
pub mod search;

pub use error::{Error, Result};
pub use model::{Dataset, ModelKind, ModelSpec, Sample, SampleRef};
