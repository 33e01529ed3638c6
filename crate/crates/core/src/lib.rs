//! Typicality-sampled minibatch SGD on small feed-forward networks.
//!
//! The crate is split along the lines of the experiment:
//!
//! - [`nn`]: a fully connected network engine with exact backpropagation and
//!   per-sample gradients.
//! - [`data`]: the synthetic 12-bit task, IDX/CSV loaders and a compact binary
//!   dataset format.
//! - [`sampling`]: simple random sampling, typicality (stratified) sampling,
//!   H/L partition builders and closed-form / enumerated / Monte-Carlo batch
//!   gradient moments.
//! - [`gsnr`]: gradient signal-to-noise ratio, the SRS-vs-TS ordering check,
//!   stratum norm balance and growth-constant estimation.
//! - [`infoplane`]: binning and Gaussian-mixture mutual-information estimators
//!   for hidden layers.
//! - [`experiment`]: the config-driven runner that ties everything together and
//!   writes CSV/SVG/JSON artifacts.

pub mod data;
pub mod error;
pub mod experiment;
pub mod gsnr;
pub mod infoplane;
pub mod linalg;
pub mod nn;
pub mod plot;
pub mod sampling;

pub use error::{Error, Result};
